#pragma once

#include <cstddef>

// Dense kernels behind the tape ops. Every output element accumulates its
// reduction index in increasing order, so a sample's result never depends on
// how many other samples share the call.
namespace meansparse::kernels {

// C[M,N] += A[M,K] * B[K,N]   (row-major, contiguous)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t kernel_h, kernel_w, stride, pad;

    std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
    std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
    std::size_t patch() const { return channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h() * out_w(); }
};

// cols[patch, batch*positions]
void im2col(const ConvGeometry& g, const double* x, double* cols);
// cols_t[batch*positions, patch]
void im2col_transposed(const ConvGeometry& g, const double* x, double* cols_t);
// dx += scatter of dcols[patch, batch*positions]
void col2im_add(const ConvGeometry& g, const double* dcols, double* dx);

}  // namespace meansparse::kernels
