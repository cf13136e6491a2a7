#include <doctest.h>

#include <sstream>

#include "gradcheck.hpp"
#include "meansparse/error.hpp"
#include "meansparse/kernels.hpp"
#include "meansparse/tensor.hpp"

using namespace meansparse;
using testing::random_tensor;

TEST_CASE("construction checks the value count") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS_AS(t.dim(2), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("MSTN round trip is exact in fp64") {
    Rng rng(1);
    const Tensor t = random_tensor({3, 1, 4}, rng, -1e3, 1e3);
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor back = read_tensor(ss);
    CHECK(back == t);
}

TEST_CASE("MSTN fp32 storage rounds to float") {
    Rng rng(2);
    const Tensor t = random_tensor({5}, rng);
    std::stringstream ss;
    write_tensor(ss, t, DType::F32);
    const Tensor back = read_tensor(ss);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
}

TEST_CASE("MSTN rejects corrupt streams") {
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_tensor(bad), DataError);
    std::stringstream ss;
    write_tensor(ss, Tensor({4}, 1.0));
    const std::string full = ss.str();
    std::stringstream truncated(full.substr(0, full.size() - 3));
    CHECK_THROWS_AS(read_tensor(truncated), DataError);
}

TEST_CASE("gemm kernels match a naive product") {
    Rng rng(3);
    for (auto [m, n, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {5, 7, 3}, {9, 300, 4}, {4, 2, 11}}) {
        const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
        std::vector<double> c(m * n, 0.0), ct(m * n, 0.0);
        kernels::gemm_nn(m, n, k, a.data(), b.data(), c.data());
        Tensor at({k, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
        kernels::gemm_tn(m, n, k, at.data(), b.data(), ct.data());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double ref = 0.0;
                for (std::size_t p = 0; p < k; ++p) ref += a[i * k + p] * b[p * n + j];
                CHECK(c[i * n + j] == ref);
                CHECK(ct[i * n + j] == ref);
            }
    }
}

TEST_CASE("gemm rows do not depend on the other rows") {
    Rng rng(4);
    const Tensor a = random_tensor({6, 9}, rng), b = random_tensor({9, 5}, rng);
    std::vector<double> full(30, 0.0);
    kernels::gemm_nn(6, 5, 9, a.data(), b.data(), full.data());
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> row(5, 0.0);
        kernels::gemm_nn(1, 5, 9, a.data() + i * 9, b.data(), row.data());
        for (std::size_t j = 0; j < 5; ++j) CHECK(row[j] == full[i * 5 + j]);
    }
}
