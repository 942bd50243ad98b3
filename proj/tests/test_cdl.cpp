#include <catch2/catch_amalgamated.hpp>

#include "ccdl/cdl.hpp"

#include "testutil.hpp"

using namespace ccdl;

namespace {

// Bump images scaled to a target pixel rms. The fixed penalty guidelines
// assume data on the scale of [0,1] highpassed images, so tests that use
// auto_params feed data in that regime.
Tensor<double> bump_images(std::size_t k_imgs, std::size_t rows, std::size_t cols,
                           std::uint64_t seed, double target_rms,
                           std::size_t bumps = 12) {
    auto S = testutil::synthetic_images(k_imgs, rows, cols, seed, bumps);
    double nrm2 = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i) nrm2 += S[i] * S[i];
    const double scale = target_rms / std::sqrt(nrm2 / static_cast<double>(S.size()));
    for (std::size_t i = 0; i < S.size(); ++i) S[i] *= scale;
    return S;
}

void require_same_trace(const ConvergenceTrace& a, const ConvergenceTrace& b,
                        double tol) {
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        REQUIRE(a.rows[i].iter == b.rows[i].iter);
        REQUIRE(std::abs(a.rows[i].objective - b.rows[i].objective) <= tol);
        REQUIRE(std::abs(a.rows[i].fidelity - b.rows[i].fidelity) <= tol);
        REQUIRE(std::abs(a.rows[i].l1 - b.rows[i].l1) <= tol);
        REQUIRE(std::abs(a.rows[i].r_primal_x - b.rows[i].r_primal_x) <= tol);
        REQUIRE(std::abs(a.rows[i].r_dual_x - b.rows[i].r_dual_x) <= tol);
        REQUIRE(std::abs(a.rows[i].r_primal_d - b.rows[i].r_primal_d) <= tol);
        REQUIRE(std::abs(a.rows[i].r_dual_d - b.rows[i].r_dual_d) <= tol);
    }
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("zero training set keeps the dictionary and a zero objective") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 5);
    Tensor<double> S({2, 8, 8});
    for (Method m : {Method::ISM, Method::FISTA}) {
        CdlConfig cfg;
        cfg.method = m;
        cfg.iters = 10;
        cfg.rho = 2.2;
        cfg.sigma_or_L = m == Method::FISTA ? 28.0 : 9.0;
        auto res = cdl_learn(S, D, cfg, nullptr, 0);
        for (const TraceRow& row : res.trace.rows) REQUIRE(row.objective == 0.0);
        REQUIRE(max_abs_diff(res.dict.filters, D.filters) <= 1e-12);
    }
}

TEST_CASE("default penalty parameters match the frozen table") {
    REQUIRE(default_params(Method::CG, 20).rho == 2.2);
    REQUIRE(default_params(Method::CG, 20).sigma_or_L == 17.0);
    REQUIRE(default_params(Method::ISM, 4).sigma_or_L == 9.0);
    REQUIRE(default_params(Method::Cns, 5).rho == 3.0);
    REQUIRE(default_params(Method::Cns, 5).sigma_or_L == 2.2);
    REQUIRE(default_params(Method::CnsP, 9).rho == 3.0);
    REQUIRE(default_params(Method::CnsP, 9).sigma_or_L == 2.2);
    REQUIRE(default_params(Method::FISTA, 40).rho == 2.2);
    REQUIRE(default_params(Method::FISTA, 40).sigma_or_L == 560.0);
    REQUIRE(default_params(Method::MFISTA, 10).sigma_or_L == 140.0);
    REQUIRE(default_params(Method::MCns, 3).rho == 2.7);
    REQUIRE(default_params(Method::MCns, 3).sigma_or_L == 3.0);
    REQUIRE(default_params(Method::MCnsP, 3).rho == 2.7);
    REQUIRE(default_params(Method::MCnsP, 3).sigma_or_L == 3.0);
    // methods without an entry of their own reuse the CG rules
    for (Method m : {Method::Tiled, Method::ThreeD, Method::MCG, Method::MISM}) {
        REQUIRE(default_params(m, 6).rho == 2.2);
        REQUIRE(default_params(m, 6).sigma_or_L == 10.0);
    }
    REQUIRE_THROWS_AS(default_params(Method::CG, 0), ParameterError);
}

TEST_CASE("method names round-trip") {
    for (Method m : {Method::CG, Method::ISM, Method::Tiled, Method::Cns,
                     Method::CnsP, Method::ThreeD, Method::FISTA, Method::MCG,
                     Method::MISM, Method::MCns, Method::MCnsP, Method::MFISTA})
        REQUIRE(method_from_string(to_string(m)) == m);
    REQUIRE_THROWS_AS(method_from_string("ADMM"), ParameterError);
}

TEST_CASE("trace rows are ordered and snapshots follow the cadence") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 11);
    auto S = bump_images(2, 8, 8, 12, 0.2, 5);
    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.iters = 10;
    cfg.auto_params = true;
    auto res = cdl_learn(S, D, cfg, nullptr, 3);

    REQUIRE(res.trace.rows.size() == 10);
    for (std::size_t i = 0; i < res.trace.rows.size(); ++i) {
        const TraceRow& row = res.trace.rows[i];
        REQUIRE(row.iter == i + 1);
        REQUIRE(std::isfinite(row.objective));
        if (i > 0) REQUIRE(row.time_s >= res.trace.rows[i - 1].time_s);
    }
    REQUIRE(res.snapshots.size() == 3);
    REQUIRE(res.snapshots[0].iter == 3);
    REQUIRE(res.snapshots[1].iter == 6);
    REQUIRE(res.snapshots[2].iter == 9);
    for (const CdlSnapshot& snap : res.snapshots)
        REQUIRE(is_feasible(snap.filters, cs, 1e-10));
    REQUIRE(is_feasible(res.dict.filters, cs, 1e-10));

    auto none = cdl_learn(S, D, cfg, nullptr, 0);
    REQUIRE(none.snapshots.empty());
}

TEST_CASE("one outer step is exactly one CSC step plus one update step") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 21);
    auto S = bump_images(K, rows, cols, 22, 0.25, 6);
    const double lambda = 0.1, rho = 2.2, sigma = 8.0;

    auto cst = make_coeff_state(K, M, rows, cols, rho);
    auto shat = signal_freq(S, rows, cols);
    auto eq = make_eqadmm_state(D, sigma, DictSolver::ISM);
    for (int it = 0; it < 2; ++it) {
        csc_admm_step(shat, make_dict_freq(eq.g, rows, cols), lambda, cst);
        dictupd_eqadmm_step(cst.Y, S, eq);
    }

    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.lambda = lambda;
    cfg.rho = rho;
    cfg.sigma_or_L = sigma;
    cfg.iters = 2;
    auto res = cdl_learn(S, D, cfg, nullptr, 0);
    REQUIRE(max_abs_diff(res.dict.filters, eq.g) == 0.0);
}

TEST_CASE("identical config is bitwise reproducible, parallel within 1e-10") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 5;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 31);
    auto S = bump_images(K, rows, cols, 32, 0.25, 6);

    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.iters = 30;
    cfg.auto_params = true;
    auto a = cdl_learn(S, D, cfg, nullptr, 0);
    auto b = cdl_learn(S, D, cfg, nullptr, 0);
    require_same_trace(a.trace, b.trace, 0.0);
    REQUIRE(max_abs_diff(a.dict.filters, b.dict.filters) == 0.0);

    CdlConfig serial = cfg;
    serial.method = Method::Cns;
    CdlConfig par = serial;
    par.method = Method::CnsP;
    par.threads = 3;
    auto cs1 = cdl_learn(S, D, serial, nullptr, 0);
    auto cs4 = cdl_learn(S, D, par, nullptr, 0);
    require_same_trace(cs1.trace, cs4.trace, 1e-10);
    REQUIRE(max_abs_diff(cs1.dict.filters, cs4.dict.filters) <= 1e-10);
}

TEST_CASE("identity-mask masked FISTA reproduces the unmasked trace") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 41);
    auto S = bump_images(K, rows, cols, 42, 0.25, 6);
    Tensor<double> W({rows, cols});
    W.fill(1.0);

    // shared rho: the masked CSC stage coincides with the unmasked one at
    // rho = 1 from zero initialization
    CdlConfig plain;
    plain.method = Method::FISTA;
    plain.lambda = 0.1;
    plain.rho = 1.0;
    plain.sigma_or_L = 14.0 * K;
    plain.iters = 40;
    auto ref = cdl_learn(S, D, plain, nullptr, 0);

    CdlConfig masked = plain;
    masked.method = Method::MFISTA;
    auto got = cdl_learn(S, D, masked, &W, 0);

    REQUIRE(ref.trace.rows.size() == got.trace.rows.size());
    for (std::size_t i = 0; i < ref.trace.rows.size(); ++i)
        REQUIRE(std::abs(ref.trace.rows[i].objective -
                         got.trace.rows[i].objective) <= 1e-10);
    REQUIRE(max_abs_diff(ref.dict.filters, got.dict.filters) <= 1e-10);
}

TEST_CASE("config validation") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 51);
    auto S = bump_images(2, 8, 8, 52, 0.25, 5);
    Tensor<double> W({8, 8});
    W.fill(1.0);
    CdlConfig ok;
    ok.method = Method::ISM;
    ok.iters = 2;
    ok.auto_params = true;

    CdlConfig cfg = ok;
    cfg.method = Method::MISM;
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, nullptr, 0), ParameterError);
    REQUIRE_THROWS_AS(cdl_learn(S, D, ok, &W, 0), ParameterError);

    cfg = ok;
    cfg.lambda = 0.0;
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, nullptr, 0), ParameterError);
    cfg = ok;
    cfg.iters = 0;
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, nullptr, 0), ParameterError);
    cfg = ok;
    cfg.auto_params = false; // rho/sigma left at zero
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, nullptr, 0), ParameterError);
    cfg = ok;
    cfg.norm_mode = NormMode::UnitBall;
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, nullptr, 0), ParameterError);

    Dictionary bad = D;
    bad.filters[0] += 0.5; // support norm no longer 1
    REQUIRE_THROWS_AS(cdl_learn(S, bad, ok, nullptr, 0), ParameterError);

    cfg = ok;
    cfg.method = Method::MISM;
    Tensor<double> wrong({4, 4});
    wrong.fill(1.0);
    REQUIRE_THROWS_AS(cdl_learn(S, D, cfg, &wrong, 0), DimensionError);
}

TEST_CASE("non-finite data aborts with an iteration diagnostic") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 61);
    Tensor<double> S({2, 8, 8});
    S[5] = std::numeric_limits<double>::infinity();
    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.iters = 5;
    cfg.auto_params = true;
    try {
        cdl_learn(S, D, cfg, nullptr, 0);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        REQUIRE(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("every method runs and stays feasible") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 71);
    auto S = bump_images(K, rows, cols, 72, 0.25, 6);
    Tensor<double> W({K, rows, cols});
    Rng rng(73);
    for (std::size_t i = 0; i < W.size(); ++i)
        W[i] = rng.uniform() < 0.25 ? 0.0 : 1.0;

    for (Method m : {Method::CG, Method::ISM, Method::Tiled, Method::Cns,
                     Method::CnsP, Method::ThreeD, Method::FISTA, Method::MCG,
                     Method::MISM, Method::MCns, Method::MCnsP, Method::MFISTA}) {
        CAPTURE(to_string(m));
        CdlConfig cfg;
        cfg.method = m;
        cfg.iters = 10;
        cfg.auto_params = true;
        cfg.threads = 2;
        const bool masked = method_is_masked(m);
        auto res = cdl_learn(S, D, cfg, masked ? &W : nullptr, 0);
        for (const TraceRow& row : res.trace.rows)
            REQUIRE(std::isfinite(row.objective));
        REQUIRE(is_feasible(res.dict.filters, cs, 1e-10));
    }
}

TEST_CASE("tiled learning handles a ragged grid deterministically") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 3;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 81);
    auto S = bump_images(K, rows, cols, 82, 0.25, 6);
    CdlConfig cfg;
    cfg.method = Method::Tiled;
    cfg.iters = 20;
    cfg.auto_params = true;
    auto a = cdl_learn(S, D, cfg, nullptr, 0);
    auto b = cdl_learn(S, D, cfg, nullptr, 0);
    require_same_trace(a.trace, b.trace, 0.0);
    REQUIRE(is_feasible(a.dict.filters, cs, 1e-10));
}

TEST_CASE("log-spaced grids have exact endpoints") {
    auto g = logspace(1e-1, 1e4, 10);
    REQUIRE(g.size() == 10);
    REQUIRE(g.front() == 0.1);
    REQUIRE(g.back() == 10000.0);
    for (std::size_t i = 1; i < g.size(); ++i) {
        const double ratio = g[i] / g[i - 1];
        REQUIRE(std::abs(std::log10(ratio) - 5.0 / 9.0) <= 1e-12);
    }
    auto one = logspace(3.5, 99.0, 1);
    REQUIRE(one.size() == 1);
    REQUIRE(one.front() == 3.5);
    REQUIRE_THROWS_AS(logspace(0.0, 1.0, 4), ParameterError);
    REQUIRE_THROWS_AS(logspace(1.0, 2.0, 0), ParameterError);
}

TEST_CASE("single-point grid reproduces a direct run") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 91);
    auto S = bump_images(2, 8, 8, 92, 0.25, 6);
    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.lambda = 0.1;
    auto table = grid_search(S, D, cfg, {2.2}, {8.0}, 15);
    REQUIRE(table.points.size() == 1);
    REQUIRE(table.best == 0);

    CdlConfig direct = cfg;
    direct.rho = 2.2;
    direct.sigma_or_L = 8.0;
    direct.iters = 15;
    auto res = cdl_learn(S, D, direct, nullptr, 0);
    REQUIRE(table.points[0].final_objective ==
            res.trace.rows.back().objective);
}

TEST_CASE("grid search is deterministic across worker counts") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 101);
    auto S = bump_images(2, 8, 8, 102, 0.25, 6);
    CdlConfig cfg;
    cfg.method = Method::ISM;
    const std::vector<double> rg{1.0, 3.0}, sg{2.0, 8.0};
    auto t1 = grid_search(S, D, cfg, rg, sg, 12, nullptr, 1);
    auto t3 = grid_search(S, D, cfg, rg, sg, 12, nullptr, 3);
    REQUIRE(t1.points.size() == 4);
    REQUIRE(t3.points.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(t1.points[i].rho == t3.points[i].rho);
        REQUIRE(t1.points[i].sigma_or_L == t3.points[i].sigma_or_L);
        REQUIRE(t1.points[i].final_objective == t3.points[i].final_objective);
        REQUIRE(std::isfinite(t1.points[i].final_objective));
        REQUIRE(t1.points[i].final_objective >=
                t1.points[t1.best].final_objective);
    }
    REQUIRE(t1.best == t3.best);
}

TEST_CASE("grid search survives blow-ups by recording +inf") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 111);
    Tensor<double> S({2, 8, 8});
    S[0] = std::numeric_limits<double>::infinity();
    CdlConfig cfg;
    cfg.method = Method::ISM;
    auto table = grid_search(S, D, cfg, {1.0, 2.0}, {4.0}, 5);
    REQUIRE(table.points.size() == 2);
    for (const GridPoint& p : table.points)
        REQUIRE(p.final_objective == std::numeric_limits<double>::infinity());
}

TEST_CASE("two-stage refinement brackets the coarse argmin") {
    ConstraintSet cs{3, 3, 8, 8, NormMode::UnitEquality};
    auto D = init_dictionary(3, cs, 121);
    auto S = bump_images(2, 8, 8, 122, 0.25, 6);
    CdlConfig cfg;
    cfg.method = Method::ISM;
    auto two = grid_search_two_stage(S, D, cfg, {1.0, 4.0}, {2.0, 9.0}, 10,
                                     nullptr, 1, 3);
    REQUIRE(two.coarse.points.size() == 4);
    REQUIRE(two.fine.points.size() == 9);
    const GridPoint& c = two.coarse.argmin();
    REQUIRE(two.fine.points.front().rho == c.rho / 10.0);
    REQUIRE(two.fine.points.back().rho == c.rho * 10.0);
    REQUIRE(two.fine.points.front().sigma_or_L == c.sigma_or_L / 10.0);
    REQUIRE(two.fine.points.back().sigma_or_L == c.sigma_or_L * 10.0);
    REQUIRE(two.argmin().final_objective ==
            std::min(two.coarse.argmin().final_objective,
                     two.fine.argmin().final_objective));
}

TEST_CASE("test-set evaluation is deterministic and matches direct coding") {
    const std::size_t rows = 8, cols = 8, M = 3, K = 2;
    ConstraintSet cs{3, 3, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 131);
    auto S = bump_images(K, rows, cols, 132, 0.25, 6);
    CdlConfig cfg;
    cfg.method = Method::ISM;
    cfg.iters = 20;
    cfg.auto_params = true;
    auto res = cdl_learn(S, D, cfg, nullptr, 10);
    REQUIRE(res.snapshots.size() == 2);

    std::vector<CdlSnapshot> twice{res.snapshots[1], res.snapshots[1]};
    auto rows_out = evaluate_on_test_set(twice, cs, S, 0.1, 2.2, 50);
    REQUIRE(rows_out.size() == 2);
    REQUIRE(rows_out[0].test_objective == rows_out[1].test_objective);
    REQUIRE(rows_out[0].train_iteration == 20);

    // evaluating on the training set is the training sparse-coding objective
    Dictionary snap;
    snap.filters = res.snapshots[1].filters;
    snap.cset = cs;
    auto st = make_coeff_state(K, M, rows, cols, 2.2);
    csc_admm(S, snap, 0.1, st, 50);
    const double direct =
        cbpdn_objective(S, make_dict_freq(snap), st.Y, 0.1).total;
    REQUIRE(rows_out[0].test_objective == direct);

    REQUIRE_THROWS_AS(evaluate_on_test_set({}, cs, S, 0.1, 2.2, 10),
                      ParameterError);
}

TEST_CASE("held-out objective improves with training") {
    const std::size_t rows = 16, cols = 16, M = 4, K = 3;
    ConstraintSet cs{6, 6, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 201);
    auto S = bump_images(K, rows, cols, 202, 0.30, 10);
    auto T = bump_images(2, rows, cols, 203, 0.30, 10);

    CdlConfig cfg;
    cfg.lambda = 0.1;
    cfg.method = Method::Cns;
    cfg.iters = 200;
    cfg.auto_params = true;
    auto res = cdl_learn(S, D, cfg, nullptr, 50);
    auto table = evaluate_on_test_set(res.snapshots, cs, T, 0.1, 3.0, 200);

    REQUIRE(table.size() == 4);
    // decreasing within a 0.5% noise band, and lower overall by the end
    for (std::size_t i = 1; i < table.size(); ++i)
        REQUIRE(table[i].test_objective <= 1.005 * table[i - 1].test_objective);
    REQUIRE(table.back().test_objective < table.front().test_objective);
}

TEST_CASE("desk-scale methods approach a common objective") {
    const std::size_t rows = 32, cols = 32, M = 8, K = 4;
    ConstraintSet cs{6, 6, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 21);
    auto S = bump_images(K, rows, cols, 22, 0.22, 12);

    double lo = std::numeric_limits<double>::infinity(), hi = 0.0, tiled = 0.0;
    for (Method m : {Method::CG, Method::ISM, Method::Cns, Method::ThreeD,
                     Method::FISTA, Method::Tiled}) {
        CdlConfig cfg;
        cfg.lambda = 0.1;
        cfg.method = m;
        cfg.iters = 200;
        cfg.auto_params = true;
        cfg.cg.cg_tol = 1e-5;
        auto res = cdl_learn(S, D, cfg, nullptr, 0);
        const double obj = res.trace.rows.back().objective;
        if (m == Method::Tiled) {
            tiled = obj;
        } else {
            lo = std::min(lo, obj);
            hi = std::max(hi, obj);
        }
    }
    REQUIRE((hi - lo) / lo <= 0.01);
    REQUIRE(std::abs(tiled - lo) / lo <= 0.03);
}

TEST_CASE("penalty guidelines land near the grid optimum") {
    const std::size_t rows = 16, cols = 16, M = 8, K = 4;
    ConstraintSet cs{6, 6, rows, cols, NormMode::UnitEquality};
    auto D = init_dictionary(M, cs, 150);
    auto S = bump_images(K, rows, cols, 151, 0.35, 6);
    CdlConfig cfg;
    cfg.lambda = 0.1;
    cfg.method = Method::Cns;

    auto table = grid_search(S, D, cfg, logspace(1e-1, 1e4, 10),
                             logspace(1e-1, 1e4, 10), 600);
    const GridPoint& best = table.argmin();
    const auto heur = default_params(Method::Cns, K);

    CdlConfig hc = cfg;
    hc.rho = heur.rho;
    hc.sigma_or_L = heur.sigma_or_L;
    hc.iters = 600;
    const double hobj = cdl_learn(S, D, hc, nullptr, 0).trace.rows.back().objective;

    const double rr = heur.rho / best.rho;
    const double sr = heur.sigma_or_L / best.sigma_or_L;
    REQUIRE(rr <= 10.0);
    REQUIRE(rr >= 0.1);
    REQUIRE(sr <= 10.0);
    REQUIRE(sr >= 0.1);
    REQUIRE(hobj >= best.final_objective);
    REQUIRE((hobj - best.final_objective) / best.final_objective <= 0.02);
}
