#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meansparse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of fp64 values with an optional gradient buffer of
// the same shape. Tensors are plain values: copying copies the data.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const double* data() const noexcept { return data_.data(); }
    double* data() noexcept { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // Value of a single-element tensor.
    double item() const;

    // Element of a 4-D tensor.
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    Tensor reshaped(Shape shape) const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    // Gradient buffer; throws if absent.
    std::span<const double> grad() const;
    // Gradient buffer, zero-allocated on first access.
    std::span<double> mutable_grad();
    Tensor grad_tensor() const;
    void clear_grad() noexcept { grad_.reset(); }

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_{0};
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

// Storage codes used by the MSTN serialization.
enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

// MSTN binary layout (all little-endian):
//   "MSTN" | u8 dtype | u8 rank | rank x u64 extents | raw values
void write_tensor(std::ostream& out, const Tensor& tensor, DType dtype = DType::F64);
Tensor read_tensor(std::istream& in);

}  // namespace meansparse
