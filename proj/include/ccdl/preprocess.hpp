#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "ccdl/dft.hpp"
#include "ccdl/errors.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

struct PreprocessConfig {
    double tikhonov_lambda = 5.0;
    bool scale_to_unit = true;  // divide 8-bit samples by 255 at load time
};

struct HighpassSplit {
    Tensor<double> highpass;
    Tensor<double> lowpass;
};

// Tikhonov smoothing with periodic forward differences. The lowpass part
// solves min_l 0.5||l - s||^2 + 0.5*lambda*(||G_r l||^2 + ||G_c l||^2),
// which diagonalizes in frequency as
//   l_hat = s_hat / (1 + lambda*4*(sin^2(pi r/R) + sin^2(pi c/C))),
// so the DC gain is exactly 1. Accepts one plane or a stack of them.
inline HighpassSplit tikhonov_highpass(const Tensor<double>& S, double lambda_t) {
    if (lambda_t < 0.0) throw ParameterError("preprocess: negative smoothing weight");
    if (S.rank() < 2) throw DimensionError("preprocess: expected image planes");
    std::size_t rows = S.shape(S.rank() - 2);
    std::size_t cols = S.shape(S.rank() - 1);
    std::size_t n = rows * cols;
    std::size_t planes = S.size() / n;

    HighpassSplit out;
    out.lowpass = Tensor<double>(S.shape());
    out.highpass = Tensor<double>(S.shape());
    if (lambda_t == 0.0) {
        std::copy(S.data(), S.data() + S.size(), out.lowpass.data());
        out.highpass.fill(0.0);
        return out;
    }

    std::vector<double> gain(n);
    for (std::size_t r = 0; r < rows; ++r) {
        double sr = std::sin(std::numbers::pi * static_cast<double>(r) /
                             static_cast<double>(rows));
        for (std::size_t c = 0; c < cols; ++c) {
            double sc = std::sin(std::numbers::pi * static_cast<double>(c) /
                                 static_cast<double>(cols));
            gain[r * cols + c] = 1.0 / (1.0 + lambda_t * 4.0 * (sr * sr + sc * sc));
        }
    }

    const Dft& plan = dft2_for(rows, cols);
    std::vector<cplx> freq(n);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* s = S.data() + p * n;
        double* l = out.lowpass.data() + p * n;
        double* h = out.highpass.data() + p * n;
        fft_plane(plan, s, freq.data());
        for (std::size_t i = 0; i < n; ++i) freq[i] *= gain[i];
        ifft_plane_real(plan, freq.data(), l);
        for (std::size_t i = 0; i < n; ++i) h[i] = s[i] - l[i];
    }
    return out;
}

}  // namespace ccdl
