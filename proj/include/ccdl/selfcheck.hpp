#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ccdl/cdl.hpp"
#include "ccdl/conv_ref.hpp"
#include "ccdl/csc.hpp"
#include "ccdl/dictupd.hpp"
#include "ccdl/dictupd_3d.hpp"
#include "ccdl/dictupd_consensus.hpp"
#include "ccdl/dictupd_fista.hpp"
#include "ccdl/dictupd_masked.hpp"
#include "ccdl/linsolve.hpp"
#include "ccdl/preprocess.hpp"
#include "ccdl/prox.hpp"
#include "ccdl/rng.hpp"
#include "ccdl/tensor.hpp"

// Built-in verification suite behind `selfcheck`: every check rebuilds its
// inputs from fixed seeds and compares a production code path against an
// independent oracle or an algebraic identity.

namespace ccdl::selfcheck {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

inline Tensor<double> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    Tensor<double> t(std::move(shape));
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

inline Tensor<double> random_sparse(std::vector<std::size_t> shape, double density,
                                    std::uint64_t seed) {
    Tensor<double> t(std::move(shape));
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = rng.normal();
        t[i] = rng.uniform() < density ? v : 0.0;
    }
    return t;
}

// Smooth synthetic training images: a few Gaussian bumps per image, mean
// removed, pixel rms scaled to a target so the penalty heuristics operate in
// their intended data range.
inline Tensor<double> bump_images(std::size_t k_imgs, std::size_t rows,
                                  std::size_t cols, std::uint64_t seed,
                                  double target_rms, std::size_t bumps = 12) {
    Tensor<double> S({k_imgs, rows, cols});
    Rng rng(seed);
    for (std::size_t k = 0; k < k_imgs; ++k) {
        double* img = S.data() + k * rows * cols;
        for (std::size_t b = 0; b < bumps; ++b) {
            const double cr = rng.uniform() * static_cast<double>(rows);
            const double cc = rng.uniform() * static_cast<double>(cols);
            const double w = 1.0 + 2.0 * rng.uniform();
            const double amp = rng.normal();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double dr = static_cast<double>(r) - cr;
                    const double dc = static_cast<double>(c) - cc;
                    img[r * cols + c] += amp * std::exp(-(dr * dr + dc * dc) / (2.0 * w * w));
                }
        }
        double mean = 0.0;
        for (std::size_t i = 0; i < rows * cols; ++i) mean += img[i];
        mean /= static_cast<double>(rows * cols);
        for (std::size_t i = 0; i < rows * cols; ++i) img[i] -= mean;
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i) ss += S[i] * S[i];
    const double rms = std::sqrt(ss / static_cast<double>(S.size()));
    if (rms > 0.0) {
        const double scale = target_rms / rms;
        for (std::size_t i = 0; i < S.size(); ++i) S[i] *= scale;
    }
    return S;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// 0.5 sum_k || W_k (sum_m d_m * x_km - s_k) ||^2 for the gradient probe.
inline double fid_objective(const Tensor<double>& X, const Tensor<double>& S,
                            const Tensor<double>& d, std::size_t rows,
                            std::size_t cols, const Tensor<double>* W) {
    const std::size_t n = rows * cols;
    const std::size_t m = d.size() / n;
    const std::size_t k_imgs = S.size() / n;
    const Dft& plan = dft2_for(rows, cols);
    std::vector<cplx> dhat(n * m), xhat(n * m), shat(n), rhat(n);
    std::vector<double> r(n);
    fft_stack_binmajor(plan, d.data(), m, dhat.data());
    double acc = 0.0;
    for (std::size_t k = 0; k < k_imgs; ++k) {
        fft_stack_binmajor(plan, X.data() + k * m * n, m, xhat.data());
        fft_plane(plan, S.data() + k * n, shat.data());
        for (std::size_t bin = 0; bin < n; ++bin) {
            const cplx* xr = xhat.data() + bin * m;
            const cplx* dr = dhat.data() + bin * m;
            cplx s(0.0, 0.0);
            for (std::size_t mm = 0; mm < m; ++mm) s += xr[mm] * dr[mm];
            rhat[bin] = s - shat[bin];
        }
        ifft_plane_real(plan, rhat.data(), r.data());
        const double* wk = W ? mask_plane(*W, k, n) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = wk ? wk[i] * r[i] : r[i];
            acc += 0.5 * v * v;
        }
    }
    return acc;
}

}  // namespace detail

// Per-bin solvers against an independent dense LU solve on 200 fixed-seed
// systems spanning M in 1..8 and K in 1..4.
inline CheckResult check_linsolve_oracle() {
    CheckResult res{"linear solvers vs dense oracle", false, ""};
    double worst = 0.0;
    IsmWorkspace ws;
    for (int s = 0; s < 200; ++s) {
        Rng rng(1000 + 7 * static_cast<std::uint64_t>(s));
        const std::size_t K = 1 + static_cast<std::size_t>(s) % 4;
        const std::size_t M = 1 + static_cast<std::size_t>(s) % 8;
        const double rho = 0.2 + rng.uniform();
        std::vector<cplx> A(K * M), b(M);
        for (auto& v : A) v = cplx(rng.normal(), rng.normal());
        for (auto& v : b) v = cplx(rng.normal(), rng.normal());
        // dense system: rho I + sum_k a_k a_k^H with a_k = conj(row_k)
        std::vector<cplx> F(M * M, cplx(0.0, 0.0));
        for (std::size_t i = 0; i < M; ++i) F[i * M + i] = rho;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < M; ++j)
                    F[i * M + j] += std::conj(A[k * M + i]) * A[k * M + j];
        const std::vector<cplx> ref = dense_oracle_solve(F, b);
        double refn = 0.0;
        for (const auto& v : ref) refn += std::norm(v);
        refn = std::sqrt(refn);

        auto rel = [&](const std::vector<cplx>& x) {
            double e = 0.0;
            for (std::size_t i = 0; i < M; ++i) e += std::norm(x[i] - ref[i]);
            return std::sqrt(e) / refn;
        };

        std::vector<cplx> x(M);
        solve_rankK_ism(A.data(), K, M, M, rho, b.data(), x.data(), ws);
        worst = std::max(worst, rel(x));

        std::fill(x.begin(), x.end(), cplx(0.0, 0.0));
        auto apply = [&](const cplx* in, cplx* out) {
            for (std::size_t i = 0; i < M; ++i) {
                cplx acc(0.0, 0.0);
                for (std::size_t j = 0; j < M; ++j) acc += F[i * M + j] * in[j];
                out[i] = acc;
            }
        };
        solve_cg(apply, b.data(), x.data(), M, 1e-12, 500);
        worst = std::max(worst, rel(x));

        if (K == 1) {
            std::vector<cplx> a(M);
            for (std::size_t i = 0; i < M; ++i) a[i] = std::conj(A[i]);
            solve_rank1(a.data(), rho, b.data(), x.data(), M);
            worst = std::max(worst, rel(x));
        }
    }
    res.pass = worst <= 1e-8;
    res.detail = detail::fmt("max rel err %.2e (tol %.0e), 200 systems", worst, 1e-8);
    return res;
}

// Frequency-domain products against direct-loop circular convolution and
// correlation on 8x8 planes.
inline CheckResult check_convolution_theorem() {
    CheckResult res{"convolution theorem vs direct loops", false, ""};
    const std::size_t rows = 8, cols = 8, n = 64;
    const Dft& plan = dft2_for(rows, cols);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        auto x = detail::random_tensor({rows, cols}, 2000 + 2 * trial);
        auto h = detail::random_tensor({rows, cols}, 2001 + 2 * trial);
        if (trial % 2 == 1) {
            // filter confined to a 3x3 corner support, as in production
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    if (r > 2 || c > 2) h(r, c) = 0.0;
        }
        std::vector<cplx> xh(n), hh(n), ph(n);
        fft_plane(plan, x.data(), xh.data());
        fft_plane(plan, h.data(), hh.data());
        Tensor<double> got({rows, cols});

        for (std::size_t i = 0; i < n; ++i) ph[i] = xh[i] * hh[i];
        ifft_plane_real(plan, ph.data(), got.data());
        worst = std::max(worst,
                         detail::max_abs_diff(got, conv_circ_ref(x, h, rows, cols)));

        for (std::size_t i = 0; i < n; ++i) ph[i] = std::conj(hh[i]) * xh[i];
        ifft_plane_real(plan, ph.data(), got.data());
        worst = std::max(worst,
                         detail::max_abs_diff(got, corr_circ_ref(h, x, rows, cols)));
    }
    res.pass = worst <= 1e-10;
    res.detail = detail::fmt("max abs diff %.2e (tol %.0e)", worst, 1e-10);
    return res;
}

// Analytic fidelity gradients (unmasked and masked) against central finite
// differences, 50 probes each at h = 1e-6.
inline CheckResult check_gradients() {
    CheckResult res{"fidelity gradients vs finite differences", false, ""};
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    auto X = detail::random_sparse({K, M, rows, cols}, 0.3, 91);
    auto S = detail::random_tensor({K, rows, cols}, 92);
    auto d = detail::random_tensor({M, rows, cols}, 93);
    Tensor<double> W({K, rows, cols});
    W.fill(1.0);
    Rng rng(94);
    for (std::size_t i = 0; i < W.size(); ++i)
        if (rng.uniform() < 0.3) W[i] = 0.0;

    const double h = 1e-6;
    double worst = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
        const Tensor<double>* w = pass == 0 ? nullptr : &W;
        Tensor<double> grad = grad_dict_fidelity(X, S, d, rows, cols, w);
        Rng probe(95 + pass);
        for (int p = 0; p < 50; ++p) {
            const std::size_t i = probe.below(d.size());
            Tensor<double> dp = d, dm = d;
            dp[i] += h;
            dm[i] -= h;
            const double fd = (detail::fid_objective(X, S, dp, rows, cols, w) -
                               detail::fid_objective(X, S, dm, rows, cols, w)) /
                              (2.0 * h);
            worst = std::max(worst,
                             std::abs(grad[i] - fd) / (1.0 + std::abs(fd)));
        }
    }
    res.pass = worst <= 1e-5;
    res.detail = detail::fmt("max rel err %.2e (tol %.0e), 2x50 probes", worst, 1e-5);
    return res;
}

// Consensus on transformed data must track the 3D update under the image-axis
// DFT pairing d0' = d0 + d1, d1' = d0 - d1 for K = 2.
inline CheckResult check_consensus_3d() {
    CheckResult res{"consensus vs 3d under axis transform", false, ""};
    const std::size_t rows = 8, cols = 8, n = 64, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 81);
    auto X = detail::random_sparse({K, M, rows, cols}, 0.25, 82);
    auto S = detail::random_tensor({K, rows, cols}, 83);
    const double sigma = 2.0;

    Tensor<double> Xt(X.shape()), St(S.shape());
    for (std::size_t i = 0; i < M * n; ++i) {
        Xt[i] = X[i] + X[M * n + i];
        Xt[M * n + i] = X[i] - X[M * n + i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        St[i] = S[i] + S[n + i];
        St[n + i] = S[i] - S[n + i];
    }

    auto td = make_3d_state(D, K, sigma);
    auto cns = make_consensus_state(D, K, sigma);
    const std::size_t per_k = M * n;
    double worst = 0.0;
    for (int it = 0; it < 50; ++it) {
        dictupd_3d_step(X, S, td);
        dictupd_consensus_step(Xt, St, cns);
        for (std::size_t mm = 0; mm < M; ++mm)
            for (std::size_t i = 0; i < n; ++i) {
                const double a = td.d[mm * K * n + i];
                const double b = td.d[mm * K * n + n + i];
                worst = std::max(worst,
                                 std::abs((a + b) - cns.d[0 * per_k + mm * n + i]));
                worst = std::max(worst,
                                 std::abs((a - b) - cns.d[1 * per_k + mm * n + i]));
            }
        worst = std::max(worst, detail::max_abs_diff(
                                    slice0_filters(td.g, K, rows, cols), cns.g));
    }
    res.pass = worst <= 1e-9;
    res.detail = detail::fmt("max abs diff %.2e (tol %.0e), 50 iterations", worst, 1e-9);
    return res;
}

// Duplicating the training image must reproduce the K=1 iterates under each
// algorithm's penalty-scaling law.
inline CheckResult check_replication_scaling() {
    CheckResult res{"replication scaling laws", false, ""};
    const std::size_t rows = 8, cols = 8, M = 3;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 61);
    auto X = detail::random_sparse({1, M, rows, cols}, 0.2, 62);
    auto S = detail::random_tensor({1, rows, cols}, 63);

    Tensor<double> X2({2, M, rows, cols}), S2({2, rows, cols});
    std::copy(X.data(), X.data() + X.size(), X2.data());
    std::copy(X.data(), X.data() + X.size(), X2.data() + X.size());
    std::copy(S.data(), S.data() + S.size(), S2.data());
    std::copy(S.data(), S.data() + S.size(), S2.data() + S.size());

    double worst = 0.0;
    {
        auto one = make_eqadmm_state(D, 2.0, DictSolver::ISM);
        auto two = make_eqadmm_state(D, 4.0, DictSolver::ISM);
        for (int it = 0; it < 50; ++it) {
            dictupd_eqadmm_step(X, S, one);
            dictupd_eqadmm_step(X2, S2, two);
            worst = std::max(worst, detail::max_abs_diff(one.g, two.g));
        }
    }
    {
        auto one = make_consensus_state(D, 1, 2.2);
        auto two = make_consensus_state(D, 2, 2.2);
        for (int it = 0; it < 50; ++it) {
            dictupd_consensus_step(X, S, one);
            dictupd_consensus_step(X2, S2, two);
            worst = std::max(worst, detail::max_abs_diff(one.g, two.g));
        }
    }
    {
        const double L = 1.05 * lipschitz_bound(X, 1, M, rows, cols);
        auto one = make_fista_state(D, L);
        auto two = make_fista_state(D, 2.0 * L);
        for (int it = 0; it < 50; ++it) {
            dictupd_fista_step(X, S, one);
            dictupd_fista_step(X2, S2, two);
            worst = std::max(worst, detail::max_abs_diff(one.y, two.y));
        }
    }
    {
        Tensor<double> W({rows, cols});
        W.fill(1.0);
        auto one = make_masked_consensus_state(D, 1, 2.7);
        auto two = make_masked_consensus_state(D, 2, 2.7);
        for (int it = 0; it < 50; ++it) {
            dictupd_masked_extcns_step(X, S, W, one);
            dictupd_masked_extcns_step(X2, S2, W, two);
            worst = std::max(worst, detail::max_abs_diff(one.g0, two.g0));
        }
    }
    {
        // sparse coding: per-image problems are independent, so the
        // duplicated run must carry two identical copies at fixed rho
        auto one = make_coeff_state(1, M, rows, cols, 2.2);
        auto two = make_coeff_state(2, M, rows, cols, 2.2);
        for (int it = 0; it < 50; ++it) {
            csc_admm(S, D, 0.1, one, 1);
            csc_admm(S2, D, 0.1, two, 1);
            const std::size_t half = one.Y.size();
            for (std::size_t i = 0; i < half; ++i) {
                worst = std::max(worst, std::abs(one.Y[i] - two.Y[i]));
                worst = std::max(worst, std::abs(one.Y[i] - two.Y[half + i]));
            }
        }
    }
    res.pass = worst <= 1e-10;
    res.detail = detail::fmt("max abs diff %.2e (tol %.0e), 5 laws", worst, 1e-10);
    return res;
}

// Identity-mask equivalences: masked FISTA must reproduce the unmasked
// objective trace per iteration; masked CG/consensus must reach the unmasked
// converged objectives.
inline CheckResult check_identity_mask() {
    CheckResult res{"identity-mask equivalence", false, ""};
    const std::size_t rows = 16, cols = 16, M = 4, K = 2;
    ConstraintSet cs{6, 6, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 671);
    auto S = detail::bump_images(K, rows, cols, 672, 0.30, 8);
    Tensor<double> W({rows, cols});
    W.fill(1.0);

    double worst_trace = 0.0;
    {
        CdlConfig cfg;
        cfg.lambda = 0.1;
        cfg.rho = 1.0;
        cfg.sigma_or_L = 14.0 * static_cast<double>(K);
        cfg.iters = 50;
        cfg.identity_fastpath = false;
        cfg.method = Method::FISTA;
        CdlResult plain = cdl_learn(S, D, cfg, nullptr, 0);
        cfg.method = Method::MFISTA;
        CdlResult masked = cdl_learn(S, D, cfg, &W, 0);
        for (std::size_t i = 0; i < cfg.iters; ++i)
            worst_trace = std::max(worst_trace,
                                   std::abs(plain.trace.rows[i].objective -
                                            masked.trace.rows[i].objective));
    }

    // Converged-objective comparison needs both members of a pair to flatten
    // out within the iteration budget; lambda and sigma are picked so the
    // pairs demonstrably reach their common fixed point by 1000 iterations.
    auto final_obj = [&](Method method, double sigma, const Tensor<double>* w) {
        CdlConfig cfg;
        cfg.lambda = 0.25;
        cfg.rho = 1.0;
        cfg.sigma_or_L = sigma;
        cfg.iters = 1000;
        cfg.method = method;
        cfg.cg.cg_tol = 1e-5;
        CdlResult r = cdl_learn(S, D, cfg, w, 0);
        return r.trace.rows.back().objective;
    };
    const double obj_cg = final_obj(Method::CG, 1.5, nullptr);
    const double obj_mcg = final_obj(Method::MCG, 1.5, &W);
    const double obj_cns = final_obj(Method::Cns, 1.5, nullptr);
    const double obj_mcns = final_obj(Method::MCns, 1.5, &W);
    const double rel_cg = std::abs(obj_mcg - obj_cg) / std::abs(obj_cg);
    const double rel_cns = std::abs(obj_mcns - obj_cns) / std::abs(obj_cns);

    res.pass = worst_trace <= 1e-10 && rel_cg <= 1e-6 && rel_cns <= 1e-6;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "fista trace diff %.2e (tol 1e-10); cg rel %.2e, cns rel %.2e "
                  "(tol 1e-06)",
                  worst_trace, rel_cg, rel_cns);
    res.detail = buf;
    return res;
}

// Penalty-parameter defaults against the frozen lookup table.
inline CheckResult check_default_params() {
    CheckResult res{"default penalty parameters", false, ""};
    bool ok = true;
    auto expect = [&](Method m, std::size_t K, double rho, double sl) {
        DefaultParams p = default_params(m, K);
        ok = ok && p.rho == rho && p.sigma_or_L == sl;
    };
    for (std::size_t K : {1ul, 5ul, 10ul, 20ul, 40ul}) {
        const double kd = static_cast<double>(K);
        expect(Method::CG, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::ISM, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::Tiled, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::ThreeD, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::Cns, K, 3.0, 2.2);
        expect(Method::CnsP, K, 3.0, 2.2);
        expect(Method::FISTA, K, 2.2, 14.0 * kd);
        expect(Method::MCG, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::MISM, K, 2.2, 0.5 * kd + 7.0);
        expect(Method::MCns, K, 2.7, 3.0);
        expect(Method::MCnsP, K, 2.7, 3.0);
        expect(Method::MFISTA, K, 2.2, 14.0 * kd);
    }
    ok = ok && default_params(Method::CG, 20).sigma_or_L == 17.0;
    ok = ok && default_params(Method::FISTA, 40).sigma_or_L == 560.0;
    ok = ok && default_params(Method::Cns, 3).rho == 3.0;
    res.pass = ok;
    res.detail = ok ? "all table entries exact" : "table entry mismatch";
    return res;
}

// Above the correlation bound the l1 term dominates every coefficient and
// sparse coding must return exactly zero maps.
inline CheckResult check_zero_solution() {
    CheckResult res{"supercritical lambda gives the zero solution", false, ""};
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 31);
    auto S = detail::random_tensor({K, rows, cols}, 32);
    const double lam = 1.01 * lambda_max(D, S);
    auto st = make_coeff_state(K, M, rows, cols, 2.2);
    csc_admm(S, D, lam, st, 500);
    double worst = 0.0;
    for (std::size_t i = 0; i < st.Y.size(); ++i)
        worst = std::max(worst, std::abs(st.Y[i]));
    res.pass = worst <= 1e-8;
    res.detail = detail::fmt("max |Y| %.2e (tol %.0e) after 500 iterations", worst, 1e-8);
    return res;
}

// Tikhonov split: pixel-domain normal equations of the lowpass problem and
// exact reassembly.
inline CheckResult check_preprocessing() {
    CheckResult res{"tikhonov split optimality", false, ""};
    const std::size_t rows = 16, cols = 16;
    auto S = detail::random_tensor({rows, cols}, 99);
    const double lt = 5.0;
    HighpassSplit hs = tikhonov_highpass(S, lt);
    const Tensor<double>& l = hs.lowpass;
    double worst_opt = 0.0, worst_sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t rp = (r + 1) % rows, rm = (r + rows - 1) % rows;
            const std::size_t cp = (c + 1) % cols, cm = (c + cols - 1) % cols;
            const double lap =
                4.0 * l(r, c) - l(rp, c) - l(rm, c) - l(r, cp) - l(r, cm);
            worst_opt = std::max(worst_opt,
                                 std::abs((l(r, c) - S(r, c)) + lt * lap));
            worst_sum = std::max(worst_sum, std::abs(hs.highpass(r, c) +
                                                     hs.lowpass(r, c) - S(r, c)));
        }
    res.pass = worst_opt <= 1e-8 && worst_sum <= 1e-12;
    res.detail = detail::fmt("optimality %.2e (tol 1e-08), reassembly %.2e (tol 1e-12)",
                             worst_opt, worst_sum);
    return res;
}

inline std::vector<CheckResult> run_all() {
    return {
        check_linsolve_oracle(),     check_convolution_theorem(),
        check_gradients(),           check_consensus_3d(),
        check_replication_scaling(), check_identity_mask(),
        check_default_params(),      check_zero_solution(),
        check_preprocessing(),
    };
}

}  // namespace ccdl::selfcheck
