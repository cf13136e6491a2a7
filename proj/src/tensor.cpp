#include "meansparse/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "meansparse/error.hpp"

namespace meansparse {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) + " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) { return vector(std::vector<double>(values)); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    return data_[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw Error("tensor has no gradient");
    return *grad_;
}

std::span<double> Tensor::mutable_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    return *grad_;
}

Tensor Tensor::grad_tensor() const {
    if (!grad_) return Tensor(shape_, 0.0);
    return Tensor(shape_, *grad_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

constexpr std::array<char, 4> kMagic{'M', 'S', 'T', 'N'};

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes;
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
        throw DataError("truncated MSTN stream");
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor, DType dtype) {
    if (tensor.rank() > 255) throw ShapeError("MSTN supports rank <= 255");
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t extent : tensor.shape()) put_le<std::uint64_t>(out, extent);
    for (double v : tensor.values()) {
        if (dtype == DType::F64) {
            put_le<double>(out, v);
        } else {
            put_le<float>(out, static_cast<float>(v));
        }
    }
    if (!out) throw DataError("failed writing MSTN tensor");
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw DataError("bad MSTN magic");
    }
    const auto code = get_le<std::uint8_t>(in);
    if (code > 1) throw DataError("unknown MSTN dtype code " + std::to_string(code));
    const auto rank = get_le<std::uint8_t>(in);
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
        v = code == 0 ? get_le<double>(in) : static_cast<double>(get_le<float>(in));
    }
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace meansparse
