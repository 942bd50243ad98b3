#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "ccdl/errors.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

// Solves (a a^H + rho I) x = b by Sherman-Morrison:
//   x = (b - a * (a^H b) / (rho + a^H a)) / rho.
// b may alias x.
inline void solve_rank1(const cplx* a, double rho, const cplx* b, cplx* x,
                        std::size_t m) {
    double aha = 0.0;
    cplx ahb(0.0, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        aha += std::norm(a[i]);
        ahb += std::conj(a[i]) * b[i];
    }
    const cplx scale = ahb / (rho + aha);
    const double inv_rho = 1.0 / rho;
    for (std::size_t i = 0; i < m; ++i) x[i] = (b[i] - a[i] * scale) * inv_rho;
}

// Workspace for the iterated Sherman-Morrison solver; reuse across bins.
struct IsmWorkspace {
    std::vector<cplx> gamma; // K x M correction vectors
    std::vector<cplx> delta; // K denominators a_j^H gamma_j
    void resize(std::size_t k, std::size_t m) {
        gamma.resize(k * m);
        delta.resize(k);
    }
};

// Solves (A^H A + rho I) x = b where A is K x M with rows stored at
// A + k*row_stride. Writing B_j = rho I + sum_{i<=j} a_i a_i^H with
// a_i = conj(row_i), each correction applies
//   B_j^{-1} v = B_{j-1}^{-1} v - gamma_j (a_j^H B_{j-1}^{-1} v) / (1 + delta_j),
// gamma_j = B_{j-1}^{-1} a_j, delta_j = a_j^H gamma_j. Cost O(K^2 M).
// Since a_j = conj(row_j), the contraction a_j^H v is sum_m row_j[m] * v[m].
// K = 1 delegates to solve_rank1 so the two paths are bitwise identical.
inline void solve_rankK_ism(const cplx* A, std::size_t K, std::size_t M,
                            std::size_t row_stride, double rho, const cplx* b,
                            cplx* x, IsmWorkspace& ws) {
    assert(K >= 1);
    ws.resize(K, M);
    if (K == 1) {
        // a = conj(row_0)
        cplx* a = ws.gamma.data();
        for (std::size_t i = 0; i < M; ++i) a[i] = std::conj(A[i]);
        solve_rank1(a, rho, b, x, M);
        return;
    }
    const double inv_rho = 1.0 / rho;
    for (std::size_t j = 0; j < K; ++j) {
        cplx* g = ws.gamma.data() + j * M;
        const cplx* rowj = A + j * row_stride;
        for (std::size_t i = 0; i < M; ++i) g[i] = std::conj(rowj[i]) * inv_rho;
        for (std::size_t p = 0; p < j; ++p) {
            const cplx* rowp = A + p * row_stride;
            const cplx* gp = ws.gamma.data() + p * M;
            cplx c(0.0, 0.0);
            for (std::size_t i = 0; i < M; ++i) c += rowp[i] * g[i];
            const cplx f = c / (1.0 + ws.delta[p]);
            for (std::size_t i = 0; i < M; ++i) g[i] -= gp[i] * f;
        }
        cplx d(0.0, 0.0);
        for (std::size_t i = 0; i < M; ++i) d += rowj[i] * g[i];
        ws.delta[j] = d;
    }
    for (std::size_t i = 0; i < M; ++i) x[i] = b[i] * inv_rho;
    for (std::size_t p = 0; p < K; ++p) {
        const cplx* rowp = A + p * row_stride;
        const cplx* gp = ws.gamma.data() + p * M;
        cplx c(0.0, 0.0);
        for (std::size_t i = 0; i < M; ++i) c += rowp[i] * x[i];
        const cplx f = c / (1.0 + ws.delta[p]);
        for (std::size_t i = 0; i < M; ++i) x[i] -= gp[i] * f;
    }
}

struct CgResult {
    std::size_t iters = 0;
    double rel_residual = 0.0;
    bool converged = false;
};

// Conjugate gradient for Hermitian positive definite systems given as an
// operator. x holds the warm start on entry and the solution on exit; an
// already-converged warm start returns immediately with zero iterations.
template <class Apply>
CgResult solve_cg(Apply&& apply, const cplx* b, cplx* x, std::size_t m,
                  double rel_tol = 1e-3, std::size_t max_iter = 100) {
    std::vector<cplx> r(m), p(m), ap(m);
    double bnorm2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) bnorm2 += std::norm(b[i]);
    if (bnorm2 == 0.0) {
        for (std::size_t i = 0; i < m; ++i) x[i] = cplx(0.0, 0.0);
        return {0, 0.0, true};
    }
    apply(x, ap.data());
    double rr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        r[i] = b[i] - ap[i];
        rr += std::norm(r[i]);
    }
    const double stop2 = rel_tol * rel_tol * bnorm2;
    CgResult res;
    if (rr <= stop2) {
        res.converged = true;
        res.rel_residual = std::sqrt(rr / bnorm2);
        return res;
    }
    p = r;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        apply(p.data(), ap.data());
        double pap = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            pap += (std::conj(p[i]) * ap[i]).real();
        if (pap <= 0.0) break; // not PD (or p in null space); bail out
        const double alpha = rr / pap;
        double rr_new = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            rr_new += std::norm(r[i]);
        }
        res.iters = it;
        if (rr_new <= stop2) {
            res.converged = true;
            rr = rr_new;
            break;
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < m; ++i) p[i] = r[i] + beta * p[i];
    }
    res.rel_residual = std::sqrt(rr / bnorm2);
    return res;
}

// Independent dense oracle (LU with partial pivoting). Checks its own
// residual; a singular or badly solved system raises NumericalError.
inline std::vector<cplx> dense_oracle_solve(const std::vector<cplx>& A_full,
                                            const std::vector<cplx>& b) {
    const std::size_t m = b.size();
    if (A_full.size() != m * m) throw DimensionError("dense oracle: A must be MxM");
    Eigen::MatrixXcd A(m, m);
    Eigen::VectorXcd rhs(m);
    for (std::size_t r = 0; r < m; ++r) {
        rhs(static_cast<Eigen::Index>(r)) = b[r];
        for (std::size_t c = 0; c < m; ++c)
            A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                A_full[r * m + c];
    }
    Eigen::VectorXcd x = A.partialPivLu().solve(rhs);
    const double resid = (A * x - rhs).norm();
    const double bn = rhs.norm();
    if (!(resid <= 1e-8 * (bn > 0.0 ? bn : 1.0)))
        throw NumericalError("dense oracle: residual check failed (singular system?)");
    std::vector<cplx> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = x(static_cast<Eigen::Index>(i));
    return out;
}

} // namespace ccdl
