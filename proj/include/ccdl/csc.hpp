#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dft.hpp"
#include "ccdl/linsolve.hpp"
#include "ccdl/prox.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

// Dictionary in the frequency domain, bin-major: dhat[bin][m]. The per-bin
// X-step system (Dhat^H Dhat + rho I) is rank-1 in the filter index, so each
// bin costs O(M).
struct DictFreq {
    std::size_t rows = 0, cols = 0, m = 0;
    Tensor<cplx> dhat; // [N][M]
};

inline DictFreq make_dict_freq(const Tensor<double>& filters, std::size_t rows,
                               std::size_t cols) {
    DictFreq df;
    df.rows = rows;
    df.cols = cols;
    const std::size_t n = rows * cols;
    df.m = filters.size() / n;
    df.dhat = Tensor<cplx>({n, df.m});
    fft_stack_binmajor(dft2_for(rows, cols), filters.data(), df.m, df.dhat.data());
    return df;
}

inline DictFreq make_dict_freq(const Dictionary& d) {
    return make_dict_freq(d.filters, d.cset.rows, d.cset.cols);
}

inline Tensor<cplx> signal_freq(const Tensor<double>& S, std::size_t rows,
                                std::size_t cols) {
    const std::size_t n = rows * cols;
    const std::size_t k = S.size() / n;
    Tensor<cplx> shat({k, n});
    const Dft& plan = dft2_for(rows, cols);
    for (std::size_t i = 0; i < k; ++i)
        fft_plane(plan, S.data() + i * n, shat.data() + i * n);
    return shat;
}

struct CoeffState {
    Tensor<double> X, Y, U; // [K][M][rows][cols]
    double rho = 2.2;
};

inline CoeffState make_coeff_state(std::size_t k, std::size_t m, std::size_t rows,
                                   std::size_t cols, double rho) {
    if (!(rho > 0.0)) throw ParameterError("csc: rho must be positive");
    CoeffState st;
    st.X = Tensor<double>({k, m, rows, cols});
    st.Y = Tensor<double>({k, m, rows, cols});
    st.U = Tensor<double>({k, m, rows, cols});
    st.rho = rho;
    return st;
}

struct CscStats {
    double r_primal = 0.0;
    double r_dual = 0.0;
};

// One ADMM iteration of the MMV convolutional sparse coding problem:
//   X-step  (Dhat^H Dhat + rho I) Xhat_k = Dhat^H Shat_k + rho (Yhat_k - Uhat_k)
//   Y-step  Y = soft(Xr + U, lambda/rho)
//   U-step  U += Xr - Y
// with optional over-relaxation Xr = alpha X + (1-alpha) Y_prev.
inline CscStats csc_admm_step(const Tensor<cplx>& Shat, const DictFreq& df,
                              double lambda, CoeffState& st,
                              double relax_alpha = 1.0) {
    const std::size_t n = df.rows * df.cols;
    const std::size_t m = df.m;
    const std::size_t k_imgs = Shat.size() / n;
    const std::size_t per_k = m * n;
    const double rho = st.rho;
    const Dft& plan = dft2_for(df.rows, df.cols);

    std::vector<double> v(per_k);
    std::vector<cplx> vhat(per_k), xhat(per_k);
    IsmWorkspace ws;

    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* yk = st.Y.data() + k * per_k;
        const double* uk = st.U.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) v[i] = yk[i] - uk[i];
        fft_stack_binmajor(plan, v.data(), m, vhat.data());
        const cplx* sk = Shat.data() + k * n;
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* drow = df.dhat.data() + bin * m;
            cplx* row = xhat.data() + bin * m;
            const cplx s = sk[bin];
            for (std::size_t mm = 0; mm < m; ++mm)
                row[mm] = std::conj(drow[mm]) * s + rho * vhat[bin * m + mm];
            solve_rankK_ism(drow, 1, m, m, rho, row, row, ws);
        }
        ifft_stack_binmajor_real(plan, xhat.data(), m, st.X.data() + k * per_k);
    }

    CscStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    const double gamma = lambda / rho;
    const bool relax = relax_alpha != 1.0;
    for (std::size_t i = 0; i < st.X.size(); ++i) {
        const double yprev = st.Y[i];
        const double xr = relax ? relax_alpha * st.X[i] + (1.0 - relax_alpha) * yprev
                                : st.X[i];
        const double ynew = soft_threshold(xr + st.U[i], gamma);
        st.U[i] += xr - ynew;
        st.Y[i] = ynew;
        const double dp = st.X[i] - ynew;
        const double dd = ynew - yprev;
        rp2 += dp * dp;
        rd2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = rho * std::sqrt(rd2);
    return stats;
}

// Standalone driver: runs `iters` iterations from the current state.
inline std::vector<CscStats> csc_admm(const Tensor<double>& S, const Dictionary& D,
                                      double lambda, CoeffState& st,
                                      std::size_t iters,
                                      double relax_alpha = 1.0) {
    auto df = make_dict_freq(D);
    auto shat = signal_freq(S, D.cset.rows, D.cset.cols);
    std::vector<CscStats> out;
    out.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i)
        out.push_back(csc_admm_step(shat, df, lambda, st, relax_alpha));
    return out;
}

// --- masked variant (mask decoupling) ----------------------------------------
// Splitting Y0 = X (l1 block) and Y1 = D X - S (signal block) with a shared
// penalty rho; the X-step system is (Dhat^H Dhat + I), rho cancels.
struct MaskedCoeffState {
    Tensor<double> X, Y0, U0; // [K][M][rows][cols]
    Tensor<double> Y1, U1;    // [K][rows][cols]
    double rho = 2.2;
};

inline MaskedCoeffState make_masked_coeff_state(std::size_t k, std::size_t m,
                                                std::size_t rows, std::size_t cols,
                                                double rho) {
    if (!(rho > 0.0)) throw ParameterError("csc: rho must be positive");
    MaskedCoeffState st;
    st.X = Tensor<double>({k, m, rows, cols});
    st.Y0 = Tensor<double>({k, m, rows, cols});
    st.U0 = Tensor<double>({k, m, rows, cols});
    st.Y1 = Tensor<double>({k, rows, cols});
    st.U1 = Tensor<double>({k, rows, cols});
    st.rho = rho;
    return st;
}

inline CscStats csc_admm_masked_step(const Tensor<double>& S,
                                     const Tensor<double>& W, const DictFreq& df,
                                     double lambda, MaskedCoeffState& st,
                                     double relax_alpha = 1.0) {
    const std::size_t n = df.rows * df.cols;
    const std::size_t m = df.m;
    const std::size_t k_imgs = S.size() / n;
    const std::size_t per_k = m * n;
    const double rho = st.rho;
    const Dft& plan = dft2_for(df.rows, df.cols);
    const bool relax = relax_alpha != 1.0;

    std::vector<double> v(per_k), t(n), dx(n);
    std::vector<cplx> vhat(per_k), xhat(per_k), that(n), dxhat(n);
    IsmWorkspace ws;

    CscStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    const double gamma = lambda / rho;

    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* sk = S.data() + k * n;
        const double* wk = mask_plane(W, k, n);
        double* xk = st.X.data() + k * per_k;
        double* y0k = st.Y0.data() + k * per_k;
        double* u0k = st.U0.data() + k * per_k;
        double* y1k = st.Y1.data() + k * n;
        double* u1k = st.U1.data() + k * n;

        // X-step target for the signal block: S + (Y1 - U1). The grouping
        // keeps the W = I, rho = 1 trajectory exactly on the unmasked one.
        for (std::size_t i = 0; i < n; ++i) t[i] = sk[i] + (y1k[i] - u1k[i]);
        fft_plane(plan, t.data(), that.data());
        for (std::size_t i = 0; i < per_k; ++i) v[i] = y0k[i] - u0k[i];
        fft_stack_binmajor(plan, v.data(), m, vhat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* drow = df.dhat.data() + bin * m;
            cplx* row = xhat.data() + bin * m;
            const cplx tt = that[bin];
            for (std::size_t mm = 0; mm < m; ++mm)
                row[mm] = std::conj(drow[mm]) * tt + vhat[bin * m + mm];
            solve_rankK_ism(drow, 1, m, m, 1.0, row, row, ws);
            cplx acc(0.0, 0.0);
            for (std::size_t mm = 0; mm < m; ++mm) acc += drow[mm] * row[mm];
            dxhat[bin] = acc;
        }
        ifft_stack_binmajor_real(plan, xhat.data(), m, xk);
        ifft_plane_real(plan, dxhat.data(), dx.data());

        // Y0/U0 block
        for (std::size_t i = 0; i < per_k; ++i) {
            const double yprev = y0k[i];
            const double xr = relax ? relax_alpha * xk[i] + (1.0 - relax_alpha) * yprev
                                    : xk[i];
            const double ynew = soft_threshold(xr + u0k[i], gamma);
            u0k[i] += xr - ynew;
            y0k[i] = ynew;
            const double dp = xk[i] - ynew;
            const double dd = ynew - yprev;
            rp2 += dp * dp;
            rd2 += dd * dd;
        }
        // Y1/U1 block: Y1 = rho (DX - S + U1) / (W^2 + rho), elementwise
        for (std::size_t i = 0; i < n; ++i) {
            const double yprev = y1k[i];
            const double dxr = relax
                                   ? relax_alpha * dx[i] +
                                         (1.0 - relax_alpha) * (yprev + sk[i])
                                   : dx[i];
            const double w2 = wk[i] * wk[i];
            const double res = dxr - sk[i] + u1k[i];
            const double ynew = rho * res / (w2 + rho);
            u1k[i] = res - ynew;
            y1k[i] = ynew;
            const double dp = dx[i] - sk[i] - ynew;
            const double dd = ynew - yprev;
            rp2 += dp * dp;
            rd2 += dd * dd;
        }
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = rho * std::sqrt(rd2);
    return stats;
}

inline std::vector<CscStats> csc_admm_masked(const Tensor<double>& S,
                                             const Tensor<double>& W,
                                             const Dictionary& D, double lambda,
                                             MaskedCoeffState& st,
                                             std::size_t iters,
                                             double relax_alpha = 1.0) {
    auto df = make_dict_freq(D);
    std::vector<CscStats> out;
    out.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i)
        out.push_back(csc_admm_masked_step(S, W, df, lambda, st, relax_alpha));
    return out;
}

// --- multi-channel variant ----------------------------------------------------
// Shared coefficient maps across channels; the per-bin system is rank-C:
//   (sum_c dhat_c dhat_c^H + rho I), solved by iterated Sherman-Morrison.
struct MultiDictFreq {
    std::size_t rows = 0, cols = 0, m = 0, channels = 0;
    Tensor<cplx> dhat; // [C][N][M]
};

inline MultiDictFreq make_multi_dict_freq(const Tensor<double>& filters,
                                          std::size_t channels, std::size_t rows,
                                          std::size_t cols) {
    MultiDictFreq df;
    df.rows = rows;
    df.cols = cols;
    df.channels = channels;
    const std::size_t n = rows * cols;
    df.m = filters.size() / (n * channels);
    df.dhat = Tensor<cplx>({channels, n, df.m});
    const Dft& plan = dft2_for(rows, cols);
    for (std::size_t c = 0; c < channels; ++c)
        fft_stack_binmajor(plan, filters.data() + c * df.m * n, df.m,
                           df.dhat.data() + c * n * df.m);
    return df;
}

// Shat: [C][K][N]; coefficient state shared across channels.
inline CscStats csc_multichannel_step(const Tensor<cplx>& Shat,
                                      const MultiDictFreq& df, double lambda,
                                      CoeffState& st, double relax_alpha = 1.0) {
    const std::size_t n = df.rows * df.cols;
    const std::size_t m = df.m;
    const std::size_t C = df.channels;
    const std::size_t k_imgs = Shat.size() / (n * C);
    const std::size_t per_k = m * n;
    const double rho = st.rho;
    const Dft& plan = dft2_for(df.rows, df.cols);

    std::vector<double> v(per_k);
    std::vector<cplx> vhat(per_k), xhat(per_k), arows(C * m);
    IsmWorkspace ws;

    for (std::size_t k = 0; k < k_imgs; ++k) {
        const double* yk = st.Y.data() + k * per_k;
        const double* uk = st.U.data() + k * per_k;
        for (std::size_t i = 0; i < per_k; ++i) v[i] = yk[i] - uk[i];
        fft_stack_binmajor(plan, v.data(), m, vhat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            cplx* row = xhat.data() + bin * m;
            for (std::size_t mm = 0; mm < m; ++mm) {
                cplx acc(0.0, 0.0);
                for (std::size_t c = 0; c < C; ++c)
                    acc += std::conj(df.dhat[(c * n + bin) * m + mm]) *
                           Shat[(c * k_imgs + k) * n + bin];
                row[mm] = acc + rho * vhat[bin * m + mm];
            }
            // rows of the per-bin C x M matrix live at stride N*M in dhat
            solve_rankK_ism(df.dhat.data() + bin * m, C, m, n * m, rho, row, row,
                            ws);
        }
        ifft_stack_binmajor_real(plan, xhat.data(), m, st.X.data() + k * per_k);
    }

    CscStats stats;
    double rp2 = 0.0, rd2 = 0.0;
    const double gamma = lambda / rho;
    const bool relax = relax_alpha != 1.0;
    for (std::size_t i = 0; i < st.X.size(); ++i) {
        const double yprev = st.Y[i];
        const double xr = relax ? relax_alpha * st.X[i] + (1.0 - relax_alpha) * yprev
                                : st.X[i];
        const double ynew = soft_threshold(xr + st.U[i], gamma);
        st.U[i] += xr - ynew;
        st.Y[i] = ynew;
        const double dp = st.X[i] - ynew;
        const double dd = ynew - yprev;
        rp2 += dp * dp;
        rd2 += dd * dd;
    }
    stats.r_primal = std::sqrt(rp2);
    stats.r_dual = rho * std::sqrt(rd2);
    return stats;
}

// Correlation bound: the smallest lambda at which the zero solution is
// optimal is max_{k,m} || d_m (correlate) s_k ||_inf; anything above it must
// drive every coefficient map to zero.
inline double lambda_max(const Dictionary& D, const Tensor<double>& S) {
    const std::size_t rows = D.cset.rows, cols = D.cset.cols, n = rows * cols;
    const std::size_t m = D.num_filters();
    const std::size_t k_imgs = S.size() / n;
    const Dft& plan = dft2_for(rows, cols);
    std::vector<cplx> dhat(n * m), shat(n), ghat(n);
    std::vector<double> g(n);
    fft_stack_binmajor(plan, D.filters.data(), m, dhat.data());
    double lm = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_plane(plan, S.data() + k * n, shat.data());
        for (std::size_t mm = 0; mm < m; ++mm) {
            for (std::size_t bin = 0; bin < n; ++bin)
                ghat[bin] = std::conj(dhat[bin * m + mm]) * shat[bin];
            ifft_plane_real(plan, ghat.data(), g.data());
            for (std::size_t i = 0; i < n; ++i) lm = std::max(lm, std::abs(g[i]));
        }
    }
    return lm;
}

// --- objective ----------------------------------------------------------------

struct Objective {
    double total = 0.0;
    double fidelity = 0.0; // (1/2) sum_k || W (D y_k - s_k) ||_2^2
    double l1 = 0.0;       // sum |y| (unweighted; total = fidelity + lambda*l1)
};

// Evaluated at the auxiliary variable Y (feasible/sparse by construction).
// Fidelity goes through the frequency domain for the convolution, then the
// norm (and optional mask) in the spatial domain.
inline Objective cbpdn_objective(const Tensor<double>& S, const DictFreq& df,
                                 const Tensor<double>& Y, double lambda,
                                 const Tensor<double>* W = nullptr) {
    const std::size_t n = df.rows * df.cols;
    const std::size_t m = df.m;
    const std::size_t k_imgs = S.size() / n;
    const std::size_t per_k = m * n;
    const Dft& plan = dft2_for(df.rows, df.cols);

    Objective obj;
    std::vector<cplx> yhat(per_k), rhat(n);
    std::vector<double> r(n);
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_stack_binmajor(plan, Y.data() + k * per_k, m, yhat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* drow = df.dhat.data() + bin * m;
            const cplx* yrow = yhat.data() + bin * m;
            cplx acc(0.0, 0.0);
            for (std::size_t mm = 0; mm < m; ++mm) acc += drow[mm] * yrow[mm];
            rhat[bin] = acc;
        }
        ifft_plane_real(plan, rhat.data(), r.data());
        const double* sk = S.data() + k * n;
        const double* wk = W ? mask_plane(*W, k, n) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            double d = r[i] - sk[i];
            if (wk) d *= wk[i];
            obj.fidelity += d * d;
        }
    }
    obj.fidelity *= 0.5;
    for (std::size_t i = 0; i < Y.size(); ++i) obj.l1 += std::abs(Y[i]);
    obj.total = obj.fidelity + lambda * obj.l1;
    return obj;
}

// Multi-channel objective: S [C][K][N], fidelity summed over channels.
inline Objective cbpdn_objective_multichannel(const Tensor<double>& S,
                                              const MultiDictFreq& df,
                                              const Tensor<double>& Y,
                                              double lambda) {
    const std::size_t n = df.rows * df.cols;
    const std::size_t m = df.m;
    const std::size_t C = df.channels;
    const std::size_t k_imgs = S.size() / (n * C);
    const std::size_t per_k = m * n;
    const Dft& plan = dft2_for(df.rows, df.cols);

    Objective obj;
    std::vector<cplx> yhat(per_k), rhat(n);
    std::vector<double> r(n);
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_stack_binmajor(plan, Y.data() + k * per_k, m, yhat.data());
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t bin = 0; bin < n; ++bin) {
                const cplx* drow = df.dhat.data() + (c * n + bin) * m;
                const cplx* yrow = yhat.data() + bin * m;
                cplx acc(0.0, 0.0);
                for (std::size_t mm = 0; mm < m; ++mm) acc += drow[mm] * yrow[mm];
                rhat[bin] = acc;
            }
            ifft_plane_real(plan, rhat.data(), r.data());
            const double* sk = S.data() + (c * k_imgs + k) * n;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = r[i] - sk[i];
                obj.fidelity += d * d;
            }
        }
    }
    obj.fidelity *= 0.5;
    for (std::size_t i = 0; i < Y.size(); ++i) obj.l1 += std::abs(Y[i]);
    obj.total = obj.fidelity + lambda * obj.l1;
    return obj;
}

} // namespace ccdl
