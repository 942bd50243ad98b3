#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dictupd.hpp"
#include "ccdl/parallel.hpp"

namespace ccdl {

// Block-constraint ADMM for the masked dictionary update: split g0 = d
// (feasible set) and g1 = Xd - s (signal space). Both penalty blocks share
// sigma, so the d-step system is (Xhat^H Xhat + I); sigma appears only in
// the elementwise g1-step (W^2 + sigma)^{-1} sigma (Xd - s + h1).
struct MaskedBlockState {
    Tensor<double> d, g0, h0; // [M][rows][cols]
    Tensor<double> g1, h1;    // [K][rows][cols]
    Tensor<cplx> dhat_warm;   // CG warm start
    double sigma = 1.0;
    DictSolver solver = DictSolver::ISM;
    ConstraintSet cset;
    ProjectStats proj_stats;
    CgAggregate last_cg;
};

inline MaskedBlockState make_masked_block_state(const Dictionary& D,
                                                std::size_t k_imgs, double sigma,
                                                DictSolver solver) {
    if (!(sigma > 0.0)) throw ParameterError("dictupd: sigma must be positive");
    MaskedBlockState st;
    st.d = D.filters;
    st.g0 = D.filters;
    st.h0 = Tensor<double>(D.filters.shape());
    st.g1 = Tensor<double>({k_imgs, D.cset.rows, D.cset.cols});
    st.h1 = Tensor<double>({k_imgs, D.cset.rows, D.cset.cols});
    st.sigma = sigma;
    st.solver = solver;
    st.cset = D.cset;
    return st;
}

inline DictStats dictupd_masked_blockadmm_step(const Tensor<double>& X,
                                               const Tensor<double>& S,
                                               const Tensor<double>& W,
                                               MaskedBlockState& st,
                                               const DictUpdCfg& cfg = {}) {
    const std::size_t rows = st.cset.rows, cols = st.cset.cols;
    const std::size_t n = rows * cols;
    const std::size_t m = st.d.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const double sigma = st.sigma;
    const Dft& plan = dft2_for(rows, cols);

    std::vector<cplx> xhat(k_imgs * n * m), that(k_imgs * n);
    detail::coeff_freq_stacks(plan, X, k_imgs, m, n, xhat.data());
    {
        // signal-block target T_k = s_k + (g1_k - h1_k)
        std::vector<double> t(n);
        for (std::size_t k = 0; k < k_imgs; ++k) {
            const double* sk = S.data() + k * n;
            const double* g1k = st.g1.data() + k * n;
            const double* h1k = st.h1.data() + k * n;
            for (std::size_t i = 0; i < n; ++i) t[i] = sk[i] + (g1k[i] - h1k[i]);
            fft_plane(plan, t.data(), that.data() + k * n);
        }
    }

    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m * n; ++i) v[i] = st.g0[i] - st.h0[i];
    std::vector<cplx> ghat(n * m), rhs(n * m), dhat(n * m);
    fft_stack_binmajor(plan, v.data(), m, ghat.data());
    for (std::size_t bin = 0; bin < n; ++bin) {
        cplx* b = rhs.data() + bin * m;
        for (std::size_t mm = 0; mm < m; ++mm) b[mm] = ghat[bin * m + mm];
        for (std::size_t k = 0; k < k_imgs; ++k) {
            const cplx* xr = xhat.data() + k * n * m + bin * m;
            const cplx t = that[k * n + bin];
            for (std::size_t mm = 0; mm < m; ++mm) b[mm] += std::conj(xr[mm]) * t;
        }
    }

    if (st.solver == DictSolver::ISM) {
        IsmWorkspace ws;
        for (std::size_t bin = 0; bin < n; ++bin)
            solve_rankK_ism(xhat.data() + bin * m, k_imgs, m, n * m, 1.0,
                            rhs.data() + bin * m, dhat.data() + bin * m, ws);
    } else {
        if (st.dhat_warm.size() != n * m) {
            st.dhat_warm = Tensor<cplx>({n, m});
            fft_stack_binmajor(plan, st.d.data(), m, st.dhat_warm.data());
        }
        st.last_cg = CgAggregate{};
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* A = xhat.data() + bin * m;
            cplx* x = st.dhat_warm.data() + bin * m;
            auto apply = [&](const cplx* in, cplx* out) {
                for (std::size_t mm = 0; mm < m; ++mm) out[mm] = in[mm];
                for (std::size_t k = 0; k < k_imgs; ++k) {
                    const cplx* row = A + k * n * m;
                    cplx acc(0.0, 0.0);
                    for (std::size_t mm = 0; mm < m; ++mm) acc += row[mm] * in[mm];
                    for (std::size_t mm = 0; mm < m; ++mm)
                        out[mm] += std::conj(row[mm]) * acc;
                }
            };
            auto res = solve_cg(apply, rhs.data() + bin * m, x, m, cfg.cg_tol,
                                cfg.cg_max_iter);
            st.last_cg.max_iters = std::max(st.last_cg.max_iters, res.iters);
            st.last_cg.max_rel_residual =
                std::max(st.last_cg.max_rel_residual, res.rel_residual);
            st.last_cg.all_converged = st.last_cg.all_converged && res.converged;
            for (std::size_t mm = 0; mm < m; ++mm) dhat[bin * m + mm] = x[mm];
        }
    }
    ifft_stack_binmajor_real(plan, dhat.data(), m, st.d.data());

    // g0/h0 block
    Tensor<double> g0prev = st.g0;
    for (std::size_t i = 0; i < st.g0.size(); ++i) st.g0[i] = st.d[i] + st.h0[i];
    auto ps = project_cpn(st.g0, st.cset);
    st.proj_stats.zero_norm_fallbacks += ps.zero_norm_fallbacks;
    for (std::size_t i = 0; i < st.h0.size(); ++i) st.h0[i] += st.d[i] - st.g0[i];

    // g1/h1 block needs Xd in the spatial domain
    DictStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    {
        std::vector<cplx> dxhat(n);
        std::vector<double> dx(n);
        for (std::size_t k = 0; k < k_imgs; ++k) {
            detail::apply_coeff_row(xhat.data() + k * n * m, dhat.data(), m, n,
                                    dxhat.data());
            ifft_plane_real(plan, dxhat.data(), dx.data());
            const double* sk = S.data() + k * n;
            const double* wk = mask_plane(W, k, n);
            double* g1k = st.g1.data() + k * n;
            double* h1k = st.h1.data() + k * n;
            for (std::size_t i = 0; i < n; ++i) {
                const double gprev = g1k[i];
                const double w2 = wk[i] * wk[i];
                const double res = dx[i] - sk[i] + h1k[i];
                const double gnew = sigma * res / (w2 + sigma);
                h1k[i] = res - gnew;
                g1k[i] = gnew;
                const double dp = dx[i] - sk[i] - gnew;
                const double dd = gnew - gprev;
                rp2 += dp * dp;
                rd2 += dd * dd;
            }
        }
    }
    for (std::size_t i = 0; i < st.d.size(); ++i) {
        const double dp = st.d[i] - st.g0[i];
        const double dd = st.g0[i] - g0prev[i];
        rp2 += dp * dp;
        rd2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = sigma * std::sqrt(rd2);
    return stats;
}

// Extended consensus: per-image filter copies as in the consensus update
// plus the masked signal split. The per-k d-step couples two penalty blocks
// with the same sigma, so each bin is a rank-1 solve with unit diagonal.
struct MaskedConsensusState {
    Tensor<double> d, h0; // [K][M][rows][cols]
    Tensor<double> g0;    // [M][rows][cols]
    Tensor<double> g1, h1; // [K][rows][cols]
    double sigma = 1.0;
    ConstraintSet cset;
    ProjectStats proj_stats;
};

inline MaskedConsensusState make_masked_consensus_state(const Dictionary& D,
                                                        std::size_t k_imgs,
                                                        double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("dictupd: sigma must be positive");
    MaskedConsensusState st;
    const std::size_t per_k = D.filters.size();
    st.d = Tensor<double>({k_imgs, per_k});
    for (std::size_t k = 0; k < k_imgs; ++k)
        for (std::size_t i = 0; i < per_k; ++i) st.d[k * per_k + i] = D.filters[i];
    st.h0 = Tensor<double>({k_imgs, per_k});
    st.g0 = D.filters;
    st.g1 = Tensor<double>({k_imgs, D.cset.rows, D.cset.cols});
    st.h1 = Tensor<double>({k_imgs, D.cset.rows, D.cset.cols});
    st.sigma = sigma;
    st.cset = D.cset;
    return st;
}

inline DictStats dictupd_masked_extcns_step(const Tensor<double>& X,
                                            const Tensor<double>& S,
                                            const Tensor<double>& W,
                                            MaskedConsensusState& st,
                                            std::size_t threads = 1) {
    const std::size_t rows = st.cset.rows, cols = st.cset.cols;
    const std::size_t n = rows * cols;
    const std::size_t m = st.g0.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const std::size_t per_k = m * n;
    const double sigma = st.sigma;
    const Dft& plan = dft2_for(rows, cols);

    // per-k d-step and the spatial products X_k d_k needed by the g1 block
    Tensor<double> dx({k_imgs, n});
    parallel_for(0, k_imgs, threads, [&](std::size_t k) {
        std::vector<cplx> xhat(n * m), ghat(n * m), rhs(n * m), that(n), dxhat(n);
        std::vector<double> v(per_k), t(n);
        IsmWorkspace ws;
        fft_stack_binmajor(plan, X.data() + k * per_k, m, xhat.data());
        const double* sk = S.data() + k * n;
        const double* g1k = st.g1.data() + k * n;
        const double* h1k = st.h1.data() + k * n;
        for (std::size_t i = 0; i < n; ++i) t[i] = sk[i] + (g1k[i] - h1k[i]);
        fft_plane(plan, t.data(), that.data());
        const double* h0k = st.h0.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) v[i] = st.g0[i] - h0k[i];
        fft_stack_binmajor(plan, v.data(), m, ghat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* xr = xhat.data() + bin * m;
            cplx* b = rhs.data() + bin * m;
            const cplx tt = that[bin];
            for (std::size_t mm = 0; mm < m; ++mm)
                b[mm] = std::conj(xr[mm]) * tt + ghat[bin * m + mm];
            solve_rankK_ism(xr, 1, m, m, 1.0, b, b, ws);
            cplx acc(0.0, 0.0);
            for (std::size_t mm = 0; mm < m; ++mm) acc += xr[mm] * b[mm];
            dxhat[bin] = acc;
        }
        ifft_stack_binmajor_real(plan, rhs.data(), m, st.d.data() + k * per_k);
        ifft_plane_real(plan, dxhat.data(), dx.data() + k * n);
    });

    // consensus average for g0: fixed ascending-k order, then project
    Tensor<double> g0prev = st.g0;
    for (std::size_t i = 0; i < per_k; ++i) st.g0[i] = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* dk = st.d.data() + k * per_k;
        const double* h0k = st.h0.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) st.g0[i] += dk[i] + h0k[i];
    }
    const double inv_k = 1.0 / static_cast<double>(k_imgs);
    for (std::size_t i = 0; i < per_k; ++i) st.g0[i] *= inv_k;
    auto ps = project_cpn(st.g0, st.cset);
    st.proj_stats.zero_norm_fallbacks += ps.zero_norm_fallbacks;

    std::vector<double> rp2_k(k_imgs, 0.0), rd2_k(k_imgs, 0.0);
    parallel_for(0, k_imgs, threads, [&](std::size_t k) {
        double* h0k = st.h0.data() + k * per_k;
        const double* dk = st.d.data() + k * per_k;
        double rp2 = 0.0, rd2 = 0.0;
        for (std::size_t i = 0; i < per_k; ++i) {
            h0k[i] += dk[i] - st.g0[i];
            const double dp = dk[i] - st.g0[i];
            rp2 += dp * dp;
        }
        const double* sk = S.data() + k * n;
        const double* wk = mask_plane(W, k, n);
        const double* dxk = dx.data() + k * n;
        double* g1k = st.g1.data() + k * n;
        double* h1k = st.h1.data() + k * n;
        for (std::size_t i = 0; i < n; ++i) {
            const double gprev = g1k[i];
            const double w2 = wk[i] * wk[i];
            const double res = dxk[i] - sk[i] + h1k[i];
            const double gnew = sigma * res / (w2 + sigma);
            h1k[i] = res - gnew;
            g1k[i] = gnew;
            const double dp = dxk[i] - sk[i] - gnew;
            const double dd = gnew - gprev;
            rp2 += dp * dp;
            rd2 += dd * dd;
        }
        rp2_k[k] = rp2;
        rd2_k[k] = rd2;
    });

    DictStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        rp2 += rp2_k[k];
        rd2 += rd2_k[k];
    }
    double g0d2 = 0.0;
    for (std::size_t i = 0; i < per_k; ++i) {
        const double dd = st.g0[i] - g0prev[i];
        g0d2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = sigma * std::sqrt(rd2 + static_cast<double>(k_imgs) * g0d2);
    return stats;
}

} // namespace ccdl
