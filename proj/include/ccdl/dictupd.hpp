#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dft.hpp"
#include "ccdl/linsolve.hpp"
#include "ccdl/prox.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

enum class DictSolver { CG, ISM };

struct DictUpdCfg {
    double cg_tol = 1e-3;
    std::size_t cg_max_iter = 100;
};

// Residuals of the most recent update step.
struct DictStats {
    double r_primal = 0.0;
    double r_dual = 0.0;
};

// Worst-case CG behaviour across the per-bin solves of one d-step.
struct CgAggregate {
    std::size_t max_iters = 0;
    double max_rel_residual = 0.0;
    bool all_converged = true;
};

namespace detail {

// X: [K][M][rows][cols] -> bin-major stacks [K][N][M].
inline void coeff_freq_stacks(const Dft& plan, const Tensor<double>& X,
                              std::size_t k_imgs, std::size_t m, std::size_t n,
                              cplx* xhat) {
    for (std::size_t k = 0; k < k_imgs; ++k)
        fft_stack_binmajor(plan, X.data() + k * m * n, m, xhat + k * n * m);
}

// dxhat_k(bin) = sum_m xhat_k(bin,m) dhat(bin,m), for one image.
inline void apply_coeff_row(const cplx* xhat_k, const cplx* dhat, std::size_t m,
                            std::size_t n, cplx* dxhat) {
    for (std::size_t bin = 0; bin < n; ++bin) {
        const cplx* xr = xhat_k + bin * m;
        const cplx* dr = dhat + bin * m;
        cplx acc(0.0, 0.0);
        for (std::size_t mm = 0; mm < m; ++mm) acc += xr[mm] * dr[mm];
        dxhat[bin] = acc;
    }
}

} // namespace detail

// Equality-constraint ADMM dictionary update. The d-step solves the
// frequency-domain normal equations (Xhat^H Xhat + sigma I) dhat = rhs per
// bin; rank K in the image index, handled by CG (warm-started from the
// previous solution) or iterated Sherman-Morrison.
struct EqAdmmState {
    Tensor<double> d, g, h; // [M][rows][cols]; g feasible after every step
    Tensor<cplx> dhat_warm; // [N][M] previous d-step solution (CG warm start)
    double sigma = 1.0;
    DictSolver solver = DictSolver::ISM;
    ConstraintSet cset;
    ProjectStats proj_stats;
    CgAggregate last_cg;
};

inline EqAdmmState make_eqadmm_state(const Dictionary& D, double sigma,
                                     DictSolver solver) {
    if (!(sigma > 0.0)) throw ParameterError("dictupd: sigma must be positive");
    EqAdmmState st;
    st.d = D.filters;
    st.g = D.filters;
    st.h = Tensor<double>(D.filters.shape());
    st.sigma = sigma;
    st.solver = solver;
    st.cset = D.cset;
    return st;
}

// X: [K][M][rows][cols] coefficient maps, S: [K][rows][cols].
inline DictStats dictupd_eqadmm_step(const Tensor<double>& X,
                                     const Tensor<double>& S, EqAdmmState& st,
                                     const DictUpdCfg& cfg = {}) {
    const std::size_t rows = st.cset.rows, cols = st.cset.cols;
    const std::size_t n = rows * cols;
    const std::size_t m = st.d.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const double sigma = st.sigma;
    const Dft& plan = dft2_for(rows, cols);

    std::vector<cplx> xhat(k_imgs * n * m), shat(k_imgs * n);
    detail::coeff_freq_stacks(plan, X, k_imgs, m, n, xhat.data());
    for (std::size_t k = 0; k < k_imgs; ++k)
        fft_plane(plan, S.data() + k * n, shat.data() + k * n);

    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m * n; ++i) v[i] = st.g[i] - st.h[i];
    std::vector<cplx> ghat(n * m), rhs(n * m), dhat(n * m);
    fft_stack_binmajor(plan, v.data(), m, ghat.data());
    for (std::size_t bin = 0; bin < n; ++bin) {
        cplx* b = rhs.data() + bin * m;
        for (std::size_t mm = 0; mm < m; ++mm)
            b[mm] = sigma * ghat[bin * m + mm];
        for (std::size_t k = 0; k < k_imgs; ++k) {
            const cplx* xr = xhat.data() + k * n * m + bin * m;
            const cplx s = shat[k * n + bin];
            for (std::size_t mm = 0; mm < m; ++mm) b[mm] += std::conj(xr[mm]) * s;
        }
    }

    if (st.solver == DictSolver::ISM) {
        IsmWorkspace ws;
        for (std::size_t bin = 0; bin < n; ++bin)
            solve_rankK_ism(xhat.data() + bin * m, k_imgs, m, n * m, sigma,
                            rhs.data() + bin * m, dhat.data() + bin * m, ws);
    } else {
        if (st.dhat_warm.size() != n * m) {
            st.dhat_warm = Tensor<cplx>({n, m});
            fft_stack_binmajor(plan, st.d.data(), m, st.dhat_warm.data());
        }
        st.last_cg = CgAggregate{};
        std::vector<cplx> t(m);
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* A = xhat.data() + bin * m;
            cplx* x = st.dhat_warm.data() + bin * m;
            auto apply = [&](const cplx* in, cplx* out) {
                for (std::size_t mm = 0; mm < m; ++mm) out[mm] = sigma * in[mm];
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

    Tensor<double> gprev = st.g;
    for (std::size_t i = 0; i < st.g.size(); ++i) st.g[i] = st.d[i] + st.h[i];
    auto ps = project_cpn(st.g, st.cset);
    st.proj_stats.zero_norm_fallbacks += ps.zero_norm_fallbacks;
    for (std::size_t i = 0; i < st.h.size(); ++i) st.h[i] += st.d[i] - st.g[i];

    DictStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    for (std::size_t i = 0; i < st.d.size(); ++i) {
        const double dp = st.d[i] - st.g[i];
        const double dd = st.g[i] - gprev[i];
        rp2 += dp * dp;
        rd2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = sigma * std::sqrt(rd2);
    return stats;
}

// --- spatial tiling -----------------------------------------------------------
// Arranges the K images (and their coefficient maps) in a row-major grid of
// ceil(sqrt(K)) columns, zero padding unused cells, so the dictionary update
// sees a single large image and its d-step is rank-1 per bin. Circular wrap
// across tile boundaries slightly changes the problem being solved relative
// to the untiled methods; convergence is correspondingly slower.
struct TiledProblem {
    Tensor<double> X; // [1][M][grid_rows*rows][grid_cols*cols]
    Tensor<double> S; // [1][grid_rows*rows][grid_cols*cols]
    std::size_t grid_rows = 1, grid_cols = 1;
};

inline TiledProblem tile_training_set(const Tensor<double>& X,
                                      const Tensor<double>& S, std::size_t rows,
                                      std::size_t cols) {
    const std::size_t n = rows * cols;
    const std::size_t k_imgs = S.size() / n;
    const std::size_t m = X.size() / (k_imgs * n);
    std::size_t gc = 1;
    while (gc * gc < k_imgs) ++gc;
    const std::size_t gr = (k_imgs + gc - 1) / gc;
    const std::size_t trows = gr * rows, tcols = gc * cols;

    TiledProblem out;
    out.grid_rows = gr;
    out.grid_cols = gc;
    out.X = Tensor<double>({1, m, trows, tcols});
    out.S = Tensor<double>({1, trows, tcols});
    for (std::size_t k = 0; k < k_imgs; ++k) {
        const std::size_t br = (k / gc) * rows, bc = (k % gc) * cols;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                out.S[(br + r) * tcols + (bc + c)] = S[k * n + r * cols + c];
                for (std::size_t mm = 0; mm < m; ++mm)
                    out.X[mm * trows * tcols + (br + r) * tcols + (bc + c)] =
                        X[(k * m + mm) * n + r * cols + c];
            }
        }
    }
    return out;
}

// Copies the support block of each filter onto a canvas of different size
// (tiled canvas <-> image canvas). Exact: filters are zero off support.
inline Tensor<double> repad_filters(const Tensor<double>& filters,
                                    const ConstraintSet& from,
                                    const ConstraintSet& to) {
    const std::size_t m = filters.size() / (from.rows * from.cols);
    Tensor<double> out({m, to.rows, to.cols});
    for (std::size_t mm = 0; mm < m; ++mm)
        for (std::size_t r = 0; r < to.filt_rows; ++r)
            for (std::size_t c = 0; c < to.filt_cols; ++c)
                out[(mm * to.rows + r) * to.cols + c] =
                    filters[(mm * from.rows + r) * from.cols + c];
    return out;
}

// --- multi-channel wrapper ------------------------------------------------------
// Channels are decoupled given shared coefficient maps: the configured update
// runs independently per channel. S: [C][K][rows][cols], one state per channel.
inline std::vector<EqAdmmState> make_multichannel_eqadmm_states(
    const Tensor<double>& filters /*[C][M][rows][cols]*/, std::size_t channels,
    const ConstraintSet& cs, double sigma, DictSolver solver) {
    std::vector<EqAdmmState> states;
    const std::size_t per_c = filters.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
        Dictionary dc;
        dc.cset = cs;
        dc.filters = Tensor<double>({per_c / (cs.rows * cs.cols), cs.rows, cs.cols});
        for (std::size_t i = 0; i < per_c; ++i) dc.filters[i] = filters[c * per_c + i];
        states.push_back(make_eqadmm_state(dc, sigma, solver));
    }
    return states;
}

inline std::vector<DictStats> dictupd_multichannel_eqadmm_step(
    const Tensor<double>& X, const Tensor<double>& S /*[C][K][rows][cols]*/,
    std::vector<EqAdmmState>& states, const DictUpdCfg& cfg = {}) {
    const std::size_t channels = states.size();
    const std::size_t per_c = S.size() / channels;
    std::vector<DictStats> stats;
    for (std::size_t c = 0; c < channels; ++c) {
        Tensor<double> sc({per_c});
        for (std::size_t i = 0; i < per_c; ++i) sc[i] = S[c * per_c + i];
        stats.push_back(dictupd_eqadmm_step(X, sc, states[c], cfg));
    }
    return stats;
}

} // namespace ccdl
