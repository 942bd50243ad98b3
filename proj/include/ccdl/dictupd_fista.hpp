#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dictupd.hpp"

namespace ccdl {

inline bool mask_is_identity(const Tensor<double>& W) {
    for (std::size_t i = 0; i < W.size(); ++i)
        if (W[i] != 1.0) return false;
    return true;
}

// Upper bound on the Lipschitz constant of the dictionary gradient:
// max over bins of sum_{k,m} |xhat_k(bin,m)|^2. A 0/1 mask only removes
// energy, so the bound also covers the masked gradient.
inline double lipschitz_bound(const Tensor<double>& X, std::size_t k_imgs,
                              std::size_t m, std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    const Dft& plan = dft2_for(rows, cols);
    std::vector<cplx> xhat(n * m);
    std::vector<double> acc(n, 0.0);
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_stack_binmajor(plan, X.data() + k * m * n, m, xhat.data());
        for (std::size_t i = 0; i < n * m; ++i) acc[i / m] += std::norm(xhat[i]);
    }
    double L = 0.0;
    for (std::size_t i = 0; i < n; ++i) L = std::max(L, acc[i]);
    return L;
}

// Gradient of (1/2) || W (X d - s) ||^2 with respect to the stacked filters,
// in the spatial domain. Unmasked: Xhat^H (Xhat dhat - shat) entirely in the
// frequency domain. Masked: the residual is brought to the spatial domain,
// multiplied by W^2, and transformed back. With identity_fastpath, an
// all-ones mask takes the unmasked route (bit-identical to W absent); the
// full route differs only by the transform roundtrip.
inline Tensor<double> grad_dict_fidelity(const Tensor<double>& X,
                                         const Tensor<double>& S,
                                         const Tensor<double>& d,
                                         std::size_t rows, std::size_t cols,
                                         const Tensor<double>* W = nullptr,
                                         bool identity_fastpath = true) {
    const std::size_t n = rows * cols;
    const std::size_t m = d.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const Dft& plan = dft2_for(rows, cols);

    const bool masked = W && !(identity_fastpath && mask_is_identity(*W));

    std::vector<cplx> dhat(n * m), xhat(n * m), shat(n), rhat(n), ghat(n * m);
    std::vector<double> r(n);
    fft_stack_binmajor(plan, d.data(), m, dhat.data());
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_stack_binmajor(plan, X.data() + k * m * n, m, xhat.data());
        fft_plane(plan, S.data() + k * n, shat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* xr = xhat.data() + bin * m;
            const cplx* dr = dhat.data() + bin * m;
            cplx acc(0.0, 0.0);
            for (std::size_t mm = 0; mm < m; ++mm) acc += xr[mm] * dr[mm];
            rhat[bin] = acc - shat[bin];
        }
        if (masked) {
            ifft_plane_real(plan, rhat.data(), r.data());
            const double* wk = mask_plane(*W, k, n);
            for (std::size_t i = 0; i < n; ++i) r[i] *= wk[i] * wk[i];
            fft_plane(plan, r.data(), rhat.data());
        }
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* xr = xhat.data() + bin * m;
            const cplx rb = rhat[bin];
            cplx* gr = ghat.data() + bin * m;
            if (k == 0)
                for (std::size_t mm = 0; mm < m; ++mm) gr[mm] = std::conj(xr[mm]) * rb;
            else
                for (std::size_t mm = 0; mm < m; ++mm) gr[mm] += std::conj(xr[mm]) * rb;
        }
    }
    Tensor<double> grad({m, rows, cols});
    ifft_stack_binmajor_real(plan, ghat.data(), m, grad.data());
    return grad;
}

// Accelerated proximal-gradient dictionary update with constant step 1/L.
// d is the gradient-evaluation point, y the feasible output of the last
// proximal step (this is what downstream consumers use).
struct FistaDictState {
    Tensor<double> d, y; // [M][rows][cols]
    double t = 1.0;
    double L = 1.0;
    ConstraintSet cset;
    ProjectStats proj_stats;
    bool identity_fastpath = true;
};

inline FistaDictState make_fista_state(const Dictionary& D, double L) {
    if (!(L > 0.0)) throw ParameterError("dictupd: L must be positive");
    FistaDictState st;
    st.d = D.filters;
    st.y = D.filters;
    st.L = L;
    st.cset = D.cset;
    return st;
}

inline DictStats dictupd_fista_step(const Tensor<double>& X,
                                    const Tensor<double>& S, FistaDictState& st,
                                    const Tensor<double>* W = nullptr) {
    auto grad = grad_dict_fidelity(X, S, st.d, st.cset.rows, st.cset.cols, W,
                                   st.identity_fastpath);
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw NumericalError("dictupd: non-finite gradient");

    Tensor<double> ynew = st.d;
    for (std::size_t i = 0; i < ynew.size(); ++i) ynew[i] -= grad[i] / st.L;
    auto ps = project_cpn(ynew, st.cset);
    st.proj_stats.zero_norm_fallbacks += ps.zero_norm_fallbacks;

    const double tnew = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * st.t * st.t));
    const double beta = (st.t - 1.0) / tnew;
    DictStats stats;
    double rp2 = 0.0;
    for (std::size_t i = 0; i < ynew.size(); ++i) {
        const double dp = ynew[i] - st.y[i];
        rp2 += dp * dp;
        st.d[i] = ynew[i] + beta * (ynew[i] - st.d[i]);
    }
    st.y = ynew;
    st.t = tnew;
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = 0.0;
    return stats;
}

} // namespace ccdl
