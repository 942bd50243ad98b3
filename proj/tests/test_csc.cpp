#include <catch2/catch_amalgamated.hpp>

#include "ccdl/conv_ref.hpp"
#include "ccdl/csc.hpp"

#include "testutil.hpp"

using namespace ccdl;

namespace {

// Direct-loop reconstruction sum_m d_m (*) y_m, fully independent of the
// frequency path.
Tensor<double> reconstruct_ref(const Dictionary& D, const Tensor<double>& Y,
                               std::size_t k) {
    const std::size_t rows = D.cset.rows, cols = D.cset.cols, n = rows * cols;
    const std::size_t m = D.num_filters();
    Tensor<double> acc({rows, cols});
    for (std::size_t mm = 0; mm < m; ++mm) {
        Tensor<double> dm({rows, cols}), ym({rows, cols});
        for (std::size_t i = 0; i < n; ++i) {
            dm[i] = D.filters[mm * n + i];
            ym[i] = Y[(k * m + mm) * n + i];
        }
        auto c = conv_circ_ref(dm, ym, rows, cols);
        for (std::size_t i = 0; i < n; ++i) acc[i] += c[i];
    }
    return acc;
}

// max over (k,m,pixel) of the KKT violation for the CBPDN problem at Y,
// using direct-loop convolutions as the oracle. W2 is an optional squared
// mask applied to the residual.
double kkt_violation(const Dictionary& D, const Tensor<double>& S,
                     const Tensor<double>& Y, double lambda,
                     const Tensor<double>* W = nullptr) {
    const std::size_t rows = D.cset.rows, cols = D.cset.cols, n = rows * cols;
    const std::size_t m = D.num_filters();
    const std::size_t K = S.size() / n;
    double viol = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        auto rec = reconstruct_ref(D, Y, k);
        Tensor<double> r({rows, cols});
        const double* wk = W ? mask_plane(*W, k, n) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = rec[i] - S[k * n + i];
            if (wk) r[i] *= wk[i] * wk[i];
        }
        for (std::size_t mm = 0; mm < m; ++mm) {
            Tensor<double> dm({rows, cols});
            for (std::size_t i = 0; i < n; ++i) dm[i] = D.filters[mm * n + i];
            auto g = corr_circ_ref(dm, r, rows, cols);
            for (std::size_t i = 0; i < n; ++i) {
                const double y = Y[(k * m + mm) * n + i];
                if (y != 0.0)
                    viol = std::max(viol, std::abs(g[i] + lambda * (y > 0 ? 1.0 : -1.0)));
                else
                    viol = std::max(viol, std::max(0.0, std::abs(g[i]) - lambda));
            }
        }
    }
    return viol;
}

// direct-loop correlation bound, the oracle for ccdl::lambda_max
double lambda_max_ref(const Dictionary& D, const Tensor<double>& S) {
    const std::size_t rows = D.cset.rows, cols = D.cset.cols, n = rows * cols;
    const std::size_t m = D.num_filters();
    const std::size_t K = S.size() / n;
    double lm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        Tensor<double> sk({rows, cols});
        for (std::size_t i = 0; i < n; ++i) sk[i] = S[k * n + i];
        for (std::size_t mm = 0; mm < m; ++mm) {
            Tensor<double> dm({rows, cols});
            for (std::size_t i = 0; i < n; ++i) dm[i] = D.filters[mm * n + i];
            auto g = corr_circ_ref(dm, sk, rows, cols);
            lm = std::max(lm, max_abs(g));
        }
    }
    return lm;
}

} // namespace

TEST_CASE("objective at Y = 0 is half the signal energy") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 5);
    auto S = testutil::random_tensor({2, 8, 8}, 6);
    Tensor<double> Y({2, 3, 8, 8});
    auto df = make_dict_freq(D);
    auto obj = cbpdn_objective(S, df, Y, 0.1);
    double e = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i) e += S[i] * S[i];
    REQUIRE(obj.total == Catch::Approx(0.5 * e).epsilon(1e-13));
    REQUIRE(obj.l1 == 0.0);
}

TEST_CASE("first X-step matches dense per-bin oracle") {
    const std::size_t rows = 8, cols = 8, n = 64, M = 4;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 11);
    auto S = testutil::random_tensor({1, rows, cols}, 12);
    const double rho = 1.7;

    auto st = make_coeff_state(1, M, rows, cols, rho);
    auto df = make_dict_freq(D);
    auto shat = signal_freq(S, rows, cols);
    csc_admm_step(shat, df, 0.1, st);

    // Independent route: per-bin dense solve of (a a^H + rho I) x = a * shat,
    // a = conj(dhat row), then inverse transform.
    const Dft& plan = dft2_for(rows, cols);
    Tensor<cplx> xhat_ref({n, M});
    for (std::size_t bin = 0; bin < n; ++bin) {
        std::vector<cplx> a(M), b(M), A(M * M);
        for (std::size_t m = 0; m < M; ++m) {
            a[m] = std::conj(df.dhat(bin, m));
            b[m] = a[m] * shat[bin];
        }
        for (std::size_t r = 0; r < M; ++r) {
            for (std::size_t c = 0; c < M; ++c) A[r * M + c] = a[r] * std::conj(a[c]);
            A[r * M + r] += rho;
        }
        auto x = dense_oracle_solve(A, b);
        for (std::size_t m = 0; m < M; ++m) xhat_ref(bin, m) = x[m];
    }
    Tensor<double> x_ref({1, M, rows, cols});
    ifft_stack_binmajor_real(plan, xhat_ref.data(), M, x_ref.data());
    REQUIRE(max_abs_diff(st.X, x_ref) <= 1e-10);
}

TEST_CASE("csc converges to KKT optimality on a small problem") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 21);
    auto S = testutil::random_tensor({K, rows, cols}, 22);
    const double lam = 0.2 * lambda_max(D, S);
    auto st = make_coeff_state(K, M, rows, cols, 2.0);
    auto stats = csc_admm(S, D, lam, st, 3000);
    REQUIRE(kkt_violation(D, S, st.Y, lam) <= 1e-5 * lam);
    // residuals should have collapsed
    REQUIRE(stats.back().r_primal < 1e-7);
    REQUIRE(stats.back().r_dual < 1e-7);
}

TEST_CASE("correlation bound matches the direct-loop oracle") {
    const std::size_t rows = 8, cols = 8, M = 4, K = 3;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 71);
    auto S = testutil::random_tensor({K, rows, cols}, 72);
    REQUIRE(lambda_max(D, S) ==
            Catch::Approx(lambda_max_ref(D, S)).epsilon(0.0).margin(1e-12));
}

TEST_CASE("large lambda drives the solution to zero") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 31);
    auto S = testutil::random_tensor({K, rows, cols}, 32);
    const double lam = 1.01 * lambda_max(D, S);
    auto st = make_coeff_state(K, M, rows, cols, 2.2);
    csc_admm(S, D, lam, st, 500);
    REQUIRE(max_abs(st.Y) <= 1e-8);
}

TEST_CASE("relaxed iteration reaches the same optimum") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 1;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 41);
    auto S = testutil::random_tensor({K, rows, cols}, 42);
    const double lam = 0.3 * lambda_max(D, S);
    auto df = make_dict_freq(D);

    auto st1 = make_coeff_state(K, M, rows, cols, 2.0);
    csc_admm(S, D, lam, st1, 2000, 1.0);
    auto st2 = make_coeff_state(K, M, rows, cols, 2.0);
    csc_admm(S, D, lam, st2, 2000, 1.8);
    auto o1 = cbpdn_objective(S, df, st1.Y, lam);
    auto o2 = cbpdn_objective(S, df, st2.Y, lam);
    REQUIRE(o1.total == Catch::Approx(o2.total).epsilon(1e-6));
}

TEST_CASE("masked csc with identity mask and rho=1 tracks unmasked bitwise") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 51);
    auto S = testutil::random_tensor({K, rows, cols}, 52);
    Tensor<double> W({rows, cols});
    W.fill(1.0);
    const double lam = 0.11;
    auto df = make_dict_freq(D);
    auto shat = signal_freq(S, rows, cols);

    auto plain = make_coeff_state(K, M, rows, cols, 1.0);
    auto masked = make_masked_coeff_state(K, M, rows, cols, 1.0);
    for (int it = 0; it < 50; ++it) {
        csc_admm_step(shat, df, lam, plain);
        csc_admm_masked_step(S, W, df, lam, masked);
        REQUIRE(max_abs_diff(plain.X, masked.X) == 0.0);
        REQUIRE(max_abs_diff(plain.Y, masked.Y0) == 0.0);
        REQUIRE(max_abs_diff(plain.U, masked.U0) == 0.0);
    }
}

TEST_CASE("masked csc with identity mask reaches unmasked objective") {
    // 16x16, K=2, M=4 converged-equivalence suite.
    const std::size_t rows = 16, cols = 16, M = 4, K = 2;
    ConstraintSet cs{4, 4, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 61);
    auto S = testutil::random_tensor({K, rows, cols}, 62);
    Tensor<double> W({rows, cols});
    W.fill(1.0);
    const double lam = 0.15 * lambda_max(D, S);
    auto df = make_dict_freq(D);

    auto plain = make_coeff_state(K, M, rows, cols, 2.2);
    csc_admm(S, D, lam, plain, 1000);
    auto masked = make_masked_coeff_state(K, M, rows, cols, 2.2);
    csc_admm_masked(S, W, D, lam, masked, 1000);

    auto o1 = cbpdn_objective(S, df, plain.Y, lam);
    auto o2 = cbpdn_objective(S, df, masked.Y0, lam, &W);
    REQUIRE(std::abs(o1.total - o2.total) <= 1e-6 * o1.total);
}

TEST_CASE("masked csc satisfies masked KKT conditions") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 71);
    auto S = testutil::random_tensor({K, rows, cols}, 72);
    // 25% zeros, one mask per image
    Tensor<double> W({K, rows, cols});
    W.fill(1.0);
    Rng rng(73);
    for (std::size_t k = 0; k < K; ++k)
        for (int z = 0; z < 16; ++z) W[k * 64 + rng.below(64)] = 0.0;
    const double lam = 0.05;
    auto masked = make_masked_coeff_state(K, M, rows, cols, 1.5);
    csc_admm_masked(S, W, D, lam, masked, 16000);
    REQUIRE(kkt_violation(D, S, masked.Y0, lam, &W) <= 1e-5 * lam);
}

TEST_CASE("multichannel with C=1 reproduces single-channel exactly") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 81);
    auto S = testutil::random_tensor({K, rows, cols}, 82);
    const double lam = 0.08;

    auto df1 = make_dict_freq(D);
    auto shat1 = signal_freq(S, rows, cols);
    auto st1 = make_coeff_state(K, M, rows, cols, 1.9);

    auto dfm = make_multi_dict_freq(D.filters, 1, rows, cols);
    Tensor<double> Sm({1, K, rows, cols});
    for (std::size_t i = 0; i < S.size(); ++i) Sm[i] = S[i];
    auto shatm = signal_freq(Sm, rows, cols); // [C*K][N] == [C][K][N] flat
    auto stm = make_coeff_state(K, M, rows, cols, 1.9);

    for (int it = 0; it < 20; ++it) {
        csc_admm_step(shat1, df1, lam, st1);
        csc_multichannel_step(shatm, dfm, lam, stm);
        REQUIRE(max_abs_diff(st1.X, stm.X) == 0.0);
        REQUIRE(max_abs_diff(st1.Y, stm.Y) == 0.0);
    }
}

TEST_CASE("multichannel csc reaches multichannel KKT optimality") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 1, C = 3;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    // separate filters per channel: [C][M][rows][cols]
    auto filters = testutil::random_tensor({C, M, rows, cols}, 91);
    for (std::size_t c = 0; c < C; ++c) {
        Tensor<double> plane({M, rows, cols});
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = filters[c * plane.size() + i];
        project_cpn(plane, cs);
        for (std::size_t i = 0; i < plane.size(); ++i) filters[c * plane.size() + i] = plane[i];
    }
    auto S = testutil::random_tensor({C, K, rows, cols}, 92);
    const double lam = 0.1;
    auto df = make_multi_dict_freq(filters, C, rows, cols);
    auto shat = signal_freq(S, rows, cols);
    auto st = make_coeff_state(K, M, rows, cols, 2.0);
    for (int it = 0; it < 4000; ++it) csc_multichannel_step(shat, df, lam, st);

    // KKT via per-channel direct loops: grad = sum_c corr(d_c, r_c)
    const std::size_t n = rows * cols;
    double viol = 0.0;
    Tensor<double> grad({M, rows, cols});
    for (std::size_t c = 0; c < C; ++c) {
        Dictionary Dc;
        Dc.cset = cs;
        Dc.filters = Tensor<double>({M, rows, cols});
        for (std::size_t i = 0; i < Dc.filters.size(); ++i)
            Dc.filters[i] = filters[c * Dc.filters.size() + i];
        auto rec = reconstruct_ref(Dc, st.Y, 0);
        Tensor<double> r({rows, cols});
        for (std::size_t i = 0; i < n; ++i) r[i] = rec[i] - S[c * n + i];
        for (std::size_t mm = 0; mm < M; ++mm) {
            Tensor<double> dm({rows, cols});
            for (std::size_t i = 0; i < n; ++i) dm[i] = Dc.filters[mm * n + i];
            auto g = corr_circ_ref(dm, r, rows, cols);
            for (std::size_t i = 0; i < n; ++i) grad[mm * n + i] += g[i];
        }
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double y = st.Y[i];
        if (y != 0.0)
            viol = std::max(viol, std::abs(grad[i] + lam * (y > 0 ? 1.0 : -1.0)));
        else
            viol = std::max(viol, std::max(0.0, std::abs(grad[i]) - lam));
    }
    REQUIRE(viol <= 1e-5 * lam);
}
