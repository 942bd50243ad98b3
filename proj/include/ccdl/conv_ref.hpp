#pragma once

#include <cstddef>

#include "ccdl/tensor.hpp"

namespace ccdl {

// Direct-loop circular convolution and correlation references. These are the
// oracles the frequency-domain paths are tested against; they must never call
// into the FFT machinery.

// y(p) = sum_q x(q) h(p - q mod shape)
inline Tensor<double> conv_circ_ref(const Tensor<double>& x,
                                    const Tensor<double>& h, std::size_t rows,
                                    std::size_t cols) {
    Tensor<double> y({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t rr = (r + rows - i) % rows;
                    const std::size_t cc = (c + cols - j) % cols;
                    acc += x[i * cols + j] * h[rr * cols + cc];
                }
            y[r * cols + c] = acc;
        }
    return y;
}

// y(p) = sum_q h(q) x(q + p mod shape)  (matches IDFT(conj(h_hat) x_hat))
inline Tensor<double> corr_circ_ref(const Tensor<double>& h,
                                    const Tensor<double>& x, std::size_t rows,
                                    std::size_t cols) {
    Tensor<double> y({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t rr = (i + r) % rows;
                    const std::size_t cc = (j + c) % cols;
                    acc += h[i * cols + j] * x[rr * cols + cc];
                }
            y[r * cols + c] = acc;
        }
    return y;
}

} // namespace ccdl
