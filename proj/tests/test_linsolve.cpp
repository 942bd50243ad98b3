#include <catch2/catch_amalgamated.hpp>

#include "ccdl/linsolve.hpp"
#include "ccdl/rng.hpp"

#include "testutil.hpp"

using namespace ccdl;

namespace {

std::vector<cplx> random_vec(std::size_t n, Rng& rng) {
    std::vector<cplx> v(n);
    for (auto& x : v) x = cplx(rng.normal(), rng.normal());
    return v;
}

// Dense (a a^H + rho I)
std::vector<cplx> rank1_matrix(const std::vector<cplx>& a, double rho) {
    const std::size_t m = a.size();
    std::vector<cplx> A(m * m, cplx(0, 0));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < m; ++c) A[r * m + c] = a[r] * std::conj(a[c]);
        A[r * m + r] += rho;
    }
    return A;
}

// Dense (A^H A + rho I) from row-major K x M rows.
std::vector<cplx> rankK_matrix(const std::vector<cplx>& rows, std::size_t K,
                               std::size_t M, double rho) {
    std::vector<cplx> G(M * M, cplx(0, 0));
    for (std::size_t r = 0; r < M; ++r) {
        for (std::size_t c = 0; c < M; ++c) {
            cplx acc(0, 0);
            for (std::size_t k = 0; k < K; ++k)
                acc += std::conj(rows[k * M + r]) * rows[k * M + c];
            G[r * M + c] = acc;
        }
        G[r * M + r] += rho;
    }
    return G;
}

double rel_err(const std::vector<cplx>& x, const std::vector<cplx>& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += std::norm(x[i] - ref[i]);
        den += std::norm(ref[i]);
    }
    return std::sqrt(num / (den > 0 ? den : 1.0));
}

} // namespace

TEST_CASE("solve_rank1 matches dense oracle and residual contract") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.below(8);
        const double rho = 0.05 + rng.uniform() * 5.0;
        auto a = random_vec(m, rng);
        auto b = random_vec(m, rng);
        std::vector<cplx> x(m);
        solve_rank1(a.data(), rho, b.data(), x.data(), m);

        auto A = rank1_matrix(a, rho);
        auto ref = dense_oracle_solve(A, b);
        REQUIRE(rel_err(x, ref) <= 1e-8);

        // residual <= 1e-10 * ||b||
        double rn = 0.0, bn = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            cplx acc(0, 0);
            for (std::size_t c = 0; c < m; ++c) acc += A[r * m + c] * x[c];
            rn += std::norm(acc - b[r]);
            bn += std::norm(b[r]);
        }
        REQUIRE(std::sqrt(rn) <= 1e-10 * std::sqrt(bn));
    }
}

TEST_CASE("solve_rank1 aliasing b == x is allowed") {
    Rng rng(7);
    auto a = random_vec(5, rng);
    auto b = random_vec(5, rng);
    auto b2 = b;
    std::vector<cplx> x(5);
    solve_rank1(a.data(), 2.0, b.data(), x.data(), 5);
    solve_rank1(a.data(), 2.0, b2.data(), b2.data(), 5);
    for (std::size_t i = 0; i < 5; ++i) REQUIRE(x[i] == b2[i]);
}

TEST_CASE("ISM matches dense oracle for K up to 4") {
    Rng rng(202);
    IsmWorkspace ws;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t K = 1 + rng.below(4);
        const std::size_t M = 1 + rng.below(8);
        const double rho = 0.05 + rng.uniform() * 5.0;
        auto rows = random_vec(K * M, rng);
        auto b = random_vec(M, rng);
        std::vector<cplx> x(M);
        solve_rankK_ism(rows.data(), K, M, M, rho, b.data(), x.data(), ws);
        auto ref = dense_oracle_solve(rankK_matrix(rows, K, M, rho), b);
        REQUIRE(rel_err(x, ref) <= 1e-8);
    }
}

TEST_CASE("ISM with K=1 is bitwise identical to solve_rank1") {
    Rng rng(303);
    IsmWorkspace ws;
    auto row = random_vec(6, rng);
    auto b = random_vec(6, rng);
    std::vector<cplx> x1(6), x2(6), a(6);
    for (std::size_t i = 0; i < 6; ++i) a[i] = std::conj(row[i]);
    solve_rank1(a.data(), 1.7, b.data(), x1.data(), 6);
    solve_rankK_ism(row.data(), 1, 6, 6, 1.7, b.data(), x2.data(), ws);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(x1[i] == x2[i]);
}

TEST_CASE("ISM respects row stride") {
    Rng rng(404);
    IsmWorkspace ws;
    const std::size_t K = 3, M = 4, stride = 11;
    auto packed = random_vec(K * M, rng);
    std::vector<cplx> strided(K * stride, cplx(9, 9));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < M; ++m) strided[k * stride + m] = packed[k * M + m];
    auto b = random_vec(M, rng);
    std::vector<cplx> x1(M), x2(M);
    solve_rankK_ism(packed.data(), K, M, M, 0.9, b.data(), x1.data(), ws);
    solve_rankK_ism(strided.data(), K, M, stride, 0.9, b.data(), x2.data(), ws);
    for (std::size_t i = 0; i < M; ++i) REQUIRE(x1[i] == x2[i]);
}

TEST_CASE("CG matches dense oracle at tight tolerance") {
    Rng rng(505);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t K = 1 + rng.below(4);
        const std::size_t M = 1 + rng.below(8);
        const double rho = 0.1 + rng.uniform() * 3.0;
        auto rows = random_vec(K * M, rng);
        auto b = random_vec(M, rng);
        auto apply = [&](const cplx* v, cplx* out) {
            for (std::size_t i = 0; i < M; ++i) out[i] = rho * v[i];
            for (std::size_t k = 0; k < K; ++k) {
                cplx dotp(0, 0);
                for (std::size_t i = 0; i < M; ++i) dotp += rows[k * M + i] * v[i];
                for (std::size_t i = 0; i < M; ++i)
                    out[i] += std::conj(rows[k * M + i]) * dotp;
            }
        };
        std::vector<cplx> x(M, cplx(0, 0));
        auto res = solve_cg(apply, b.data(), x.data(), M, 1e-12, 200);
        REQUIRE(res.converged);
        auto ref = dense_oracle_solve(rankK_matrix(rows, K, M, rho), b);
        REQUIRE(rel_err(x, ref) <= 1e-8);
    }
}

TEST_CASE("CG warm start short-circuits at zero iterations") {
    Rng rng(606);
    const std::size_t M = 5;
    auto rows = random_vec(2 * M, rng);
    auto b = random_vec(M, rng);
    auto apply = [&](const cplx* v, cplx* out) {
        for (std::size_t i = 0; i < M; ++i) out[i] = 1.3 * v[i];
        for (std::size_t k = 0; k < 2; ++k) {
            cplx dotp(0, 0);
            for (std::size_t i = 0; i < M; ++i) dotp += rows[k * M + i] * v[i];
            for (std::size_t i = 0; i < M; ++i)
                out[i] += std::conj(rows[k * M + i]) * dotp;
        }
    };
    std::vector<cplx> x(M, cplx(0, 0));
    auto r1 = solve_cg(apply, b.data(), x.data(), M, 1e-12, 200);
    REQUIRE(r1.converged);
    auto x_snapshot = x;
    auto r2 = solve_cg(apply, b.data(), x.data(), M, 1e-10, 200);
    REQUIRE(r2.converged);
    REQUIRE(r2.iters == 0);
    for (std::size_t i = 0; i < M; ++i) REQUIRE(x[i] == x_snapshot[i]);
}

TEST_CASE("CG reports non-convergence") {
    Rng rng(707);
    const std::size_t M = 8;
    auto rows = random_vec(4 * M, rng);
    auto b = random_vec(M, rng);
    auto apply = [&](const cplx* v, cplx* out) {
        for (std::size_t i = 0; i < M; ++i) out[i] = 1e-6 * v[i];
        for (std::size_t k = 0; k < 4; ++k) {
            cplx dotp(0, 0);
            for (std::size_t i = 0; i < M; ++i) dotp += rows[k * M + i] * v[i];
            for (std::size_t i = 0; i < M; ++i)
                out[i] += std::conj(rows[k * M + i]) * dotp;
        }
    };
    std::vector<cplx> x(M, cplx(0, 0));
    auto res = solve_cg(apply, b.data(), x.data(), M, 1e-14, 1);
    REQUIRE(!res.converged);
    REQUIRE(res.rel_residual > 1e-14);
}

TEST_CASE("CG zero rhs returns zero immediately") {
    const std::size_t M = 4;
    auto apply = [&](const cplx* v, cplx* out) {
        for (std::size_t i = 0; i < M; ++i) out[i] = 2.0 * v[i];
    };
    std::vector<cplx> b(M, cplx(0, 0)), x(M, cplx(1, 1));
    auto res = solve_cg(apply, b.data(), x.data(), M, 1e-3, 10);
    REQUIRE(res.converged);
    REQUIRE(res.iters == 0);
    for (auto& v : x) REQUIRE(v == cplx(0, 0));
}

TEST_CASE("dense oracle flags singular systems") {
    std::vector<cplx> A = {cplx(1, 0), cplx(2, 0), cplx(2, 0), cplx(4, 0)};
    std::vector<cplx> b = {cplx(1, 0), cplx(0, 0)}; // inconsistent
    REQUIRE_THROWS_AS(dense_oracle_solve(A, b), NumericalError);
}
