#include "meansparse/kernels.hpp"

#include <algorithm>

namespace meansparse::kernels {

namespace {
constexpr std::size_t kColumnBlock = 256;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
        const std::size_t jn = std::min(kColumnBlock, n - j0);
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            double* c0 = c + (i + 0) * n + j0;
            double* c1 = c + (i + 1) * n + j0;
            double* c2 = c + (i + 2) * n + j0;
            double* c3 = c + (i + 3) * n + j0;
            const double* a0 = a + (i + 0) * k;
            const double* a1 = a + (i + 1) * k;
            const double* a2 = a + (i + 2) * k;
            const double* a3 = a + (i + 3) * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * n + j0;
                const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                for (std::size_t j = 0; j < jn; ++j) {
                    const double bv = brow[j];
                    c0[j] += v0 * bv;
                    c1[j] += v1 * bv;
                    c2[j] += v2 * bv;
                    c3[j] += v3 * bv;
                }
            }
        }
        for (; i < m; ++i) {
            double* crow = c + i * n + j0;
            const double* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * n + j0;
                const double v = arow[p];
                for (std::size_t j = 0; j < jn; ++j) crow[j] += v * brow[j];
            }
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
        const std::size_t jn = std::min(kColumnBlock, n - j0);
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            double* c0 = c + (i + 0) * n + j0;
            double* c1 = c + (i + 1) * n + j0;
            double* c2 = c + (i + 2) * n + j0;
            double* c3 = c + (i + 3) * n + j0;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * n + j0;
                const double* acol = a + p * m + i;
                const double v0 = acol[0], v1 = acol[1], v2 = acol[2], v3 = acol[3];
                for (std::size_t j = 0; j < jn; ++j) {
                    const double bv = brow[j];
                    c0[j] += v0 * bv;
                    c1[j] += v1 * bv;
                    c2[j] += v2 * bv;
                    c3[j] += v3 * bv;
                }
            }
        }
        for (; i < m; ++i) {
            double* crow = c + i * n + j0;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * n + j0;
                const double v = a[p * m + i];
                for (std::size_t j = 0; j < jn; ++j) crow[j] += v * brow[j];
            }
        }
    }
}

void im2col(const ConvGeometry& g, const double* x, double* cols) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
    const std::size_t row_len = g.batch * positions;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                double* out = cols + row * row_len;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const double* plane = x + (n * g.channels + c) * g.height * g.width;
                    double* dst = out + n * positions;
                    for (std::size_t y = 0; y < oh; ++y) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * g.stride + kj) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                                ix < static_cast<std::ptrdiff_t>(g.width);
                            dst[y * ow + xx] = inside ? plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void im2col_transposed(const ConvGeometry& g, const double* x, double* cols_t) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
    const std::size_t patch = g.patch();
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                double* dst = cols_t + (n * positions + y * ow + xx) * patch;
                for (std::size_t c = 0; c < g.channels; ++c) {
                    const double* plane = x + (n * g.channels + c) * g.height * g.width;
                    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * g.stride + kj) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                                ix < static_cast<std::ptrdiff_t>(g.width);
                            *dst++ = inside ? plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* dcols, double* dx) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
    const std::size_t row_len = g.batch * positions;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                const double* src_row = dcols + row * row_len;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    double* plane = dx + (n * g.channels + c) * g.height * g.width;
                    const double* src = src_row + n * positions;
                    for (std::size_t y = 0; y < oh; ++y) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * g.stride + kj) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                            plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] += src[y * ow + xx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace meansparse::kernels
