#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dictupd.hpp"
#include "ccdl/parallel.hpp"

namespace ccdl {

// ADMM consensus dictionary update: one filter copy d_k per image, coupled
// through the shared feasible dictionary g. The K per-image d-steps are
// rank-1 per bin and independent; parallel execution synchronizes only at
// the g-step average, which always runs as a serial ascending-k reduction so
// serial and parallel runs produce identical results.
struct ConsensusState {
    Tensor<double> d, h; // [K][M][rows][cols]
    Tensor<double> g;    // [M][rows][cols]
    double sigma = 1.0;
    ConstraintSet cset;
    ProjectStats proj_stats;
};

inline ConsensusState make_consensus_state(const Dictionary& D, std::size_t k_imgs,
                                           double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("dictupd: sigma must be positive");
    ConsensusState st;
    const std::size_t per_k = D.filters.size();
    st.d = Tensor<double>({k_imgs, per_k});
    for (std::size_t k = 0; k < k_imgs; ++k)
        for (std::size_t i = 0; i < per_k; ++i) st.d[k * per_k + i] = D.filters[i];
    st.h = Tensor<double>({k_imgs, per_k});
    st.g = D.filters;
    st.sigma = sigma;
    st.cset = D.cset;
    return st;
}

inline DictStats dictupd_consensus_step(const Tensor<double>& X,
                                        const Tensor<double>& S,
                                        ConsensusState& st,
                                        std::size_t threads = 1) {
    const std::size_t rows = st.cset.rows, cols = st.cset.cols;
    const std::size_t n = rows * cols;
    const std::size_t m = st.g.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const std::size_t per_k = m * n;
    const double sigma = st.sigma;
    const Dft& plan = dft2_for(rows, cols);

    parallel_for(0, k_imgs, threads, [&](std::size_t k) {
        std::vector<cplx> xhat(n * m), ghat(n * m), rhs(n * m);
        std::vector<double> v(per_k);
        IsmWorkspace ws;
        fft_stack_binmajor(plan, X.data() + k * per_k, m, xhat.data());
        std::vector<cplx> shat(n);
        fft_plane(plan, S.data() + k * n, shat.data());
        const double* hk = st.h.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) v[i] = st.g[i] - hk[i];
        fft_stack_binmajor(plan, v.data(), m, ghat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* xr = xhat.data() + bin * m;
            cplx* b = rhs.data() + bin * m;
            const cplx s = shat[bin];
            for (std::size_t mm = 0; mm < m; ++mm)
                b[mm] = std::conj(xr[mm]) * s + sigma * ghat[bin * m + mm];
            solve_rankK_ism(xr, 1, m, m, sigma, b, b, ws);
        }
        ifft_stack_binmajor_real(plan, rhs.data(), m, st.d.data() + k * per_k);
    });

    // consensus average: fixed ascending-k order, then project
    Tensor<double> gprev = st.g;
    for (std::size_t i = 0; i < per_k; ++i) st.g[i] = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* dk = st.d.data() + k * per_k;
        const double* hk = st.h.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) st.g[i] += dk[i] + hk[i];
    }
    const double inv_k = 1.0 / static_cast<double>(k_imgs);
    for (std::size_t i = 0; i < per_k; ++i) st.g[i] *= inv_k;
    auto ps = project_cpn(st.g, st.cset);
    st.proj_stats.zero_norm_fallbacks += ps.zero_norm_fallbacks;

    parallel_for(0, k_imgs, threads, [&](std::size_t k) {
        double* hk = st.h.data() + k * per_k;
        const double* dk = st.d.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) hk[i] += dk[i] - st.g[i];
    });

    DictStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* dk = st.d.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) {
            const double dp = dk[i] - st.g[i];
            rp2 += dp * dp;
        }
    }
    for (std::size_t i = 0; i < per_k; ++i) {
        const double dd = st.g[i] - gprev[i];
        rd2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = sigma * std::sqrt(static_cast<double>(k_imgs)) * std::sqrt(rd2);
    return stats;
}

} // namespace ccdl
