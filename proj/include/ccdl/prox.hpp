#pragma once

#include <cmath>
#include <cstdint>

#include "ccdl/dims.hpp"
#include "ccdl/rng.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

inline double soft_threshold(double x, double gamma) {
    if (x > gamma) return x - gamma;
    if (x < -gamma) return x + gamma;
    return 0.0;
}

inline void soft_threshold(const Tensor<double>& x, double gamma,
                           Tensor<double>& out) {
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = soft_threshold(x[i], gamma);
}

struct ProjectStats {
    std::size_t zero_norm_fallbacks = 0;
};

// Projection onto C_PN = {d : zero outside the corner support, norm
// constrained}: zero the off-support entries, then normalize per filter.
// UnitEquality with an exactly zero support norm falls back to a unit impulse
// at the support origin (flagged); UnitBall leaves a feasible point unchanged.
// `filt` is one filter plane [rows][cols]; in-place.
inline void project_cpn_plane(double* filt, const ConstraintSet& cs,
                              ProjectStats* stats) {
    const std::size_t rows = cs.rows, cols = cs.cols;
    double nrm2 = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double& v = filt[r * cols + c];
            if (!cs.in_support(r, c)) {
                v = 0.0;
            } else {
                nrm2 += v * v;
            }
        }
    }
    const double nrm = std::sqrt(nrm2);
    if (cs.mode == NormMode::UnitEquality) {
        if (nrm == 0.0) {
            filt[0] = 1.0;
            if (stats) ++stats->zero_norm_fallbacks;
            return;
        }
        const double inv = 1.0 / nrm;
        for (std::size_t r = 0; r < cs.filt_rows; ++r)
            for (std::size_t c = 0; c < cs.filt_cols; ++c) filt[r * cols + c] *= inv;
    } else {
        if (nrm > 1.0) {
            const double inv = 1.0 / nrm;
            for (std::size_t r = 0; r < cs.filt_rows; ++r)
                for (std::size_t c = 0; c < cs.filt_cols; ++c)
                    filt[r * cols + c] *= inv;
        }
        // norm <= 1 (including exactly zero): already feasible, untouched
    }
}

// filters: [M][rows][cols], in-place.
inline ProjectStats project_cpn(Tensor<double>& filters, const ConstraintSet& cs) {
    ProjectStats st;
    const std::size_t n = cs.rows * cs.cols;
    const std::size_t m = filters.size() / n;
    for (std::size_t f = 0; f < m; ++f)
        project_cpn_plane(filters.data() + f * n, cs, &st);
    return st;
}

// 3D variant used by the volume dictionary update: each filter is a
// [K][rows][cols] volume whose support is slice k=0 intersected with the
// corner support; the norm is taken over that support.
inline void project_cpn_volume_plane(double* filt, std::size_t k_slices,
                                     const ConstraintSet& cs,
                                     ProjectStats* stats) {
    const std::size_t n = cs.rows * cs.cols;
    for (std::size_t k = 1; k < k_slices; ++k)
        for (std::size_t i = 0; i < n; ++i) filt[k * n + i] = 0.0;
    project_cpn_plane(filt, cs, stats);
}

inline ProjectStats project_cpn_volume(Tensor<double>& filters, std::size_t k_slices,
                                       const ConstraintSet& cs) {
    ProjectStats st;
    const std::size_t vol = k_slices * cs.rows * cs.cols;
    const std::size_t m = filters.size() / vol;
    for (std::size_t f = 0; f < m; ++f)
        project_cpn_volume_plane(filters.data() + f * vol, k_slices, cs, &st);
    return st;
}

// C_PN membership check: exact zeros off support, norm within tol of the
// constraint (== 1 for UnitEquality, <= 1 for UnitBall).
inline bool is_feasible(const Tensor<double>& filters, const ConstraintSet& cs,
                        double tol) {
    const std::size_t n = cs.rows * cs.cols;
    const std::size_t m = filters.size() / n;
    for (std::size_t f = 0; f < m; ++f) {
        const double* filt = filters.data() + f * n;
        double nrm2 = 0.0;
        for (std::size_t r = 0; r < cs.rows; ++r) {
            for (std::size_t c = 0; c < cs.cols; ++c) {
                const double v = filt[r * cs.cols + c];
                if (!cs.in_support(r, c)) {
                    if (v != 0.0) return false;
                } else {
                    nrm2 += v * v;
                }
            }
        }
        const double nrm = std::sqrt(nrm2);
        if (!std::isfinite(nrm)) return false;
        if (cs.mode == NormMode::UnitEquality) {
            if (std::abs(nrm - 1.0) > tol) return false;
        } else {
            if (nrm > 1.0 + tol) return false;
        }
    }
    return true;
}

// Mask broadcast: W is either one plane [rows][cols] shared by all images or
// per-image [K][rows][cols].
inline const double* mask_plane(const Tensor<double>& W, std::size_t k,
                                std::size_t n) {
    return W.size() == n ? W.data() : W.data() + k * n;
}

struct Dictionary {
    Tensor<double> filters; // [M][rows][cols], zero outside support
    ConstraintSet cset;

    std::size_t num_filters() const {
        return filters.size() / (cset.rows * cset.cols);
    }
};

// Fixed-seed init: unit-variance Gaussian on the support, projected.
inline Dictionary init_dictionary(std::size_t m, const ConstraintSet& cs,
                                  std::uint64_t seed) {
    cs.validate();
    Dictionary d;
    d.cset = cs;
    d.filters = Tensor<double>({m, cs.rows, cs.cols});
    Rng rng(seed);
    for (std::size_t f = 0; f < m; ++f)
        for (std::size_t r = 0; r < cs.filt_rows; ++r)
            for (std::size_t c = 0; c < cs.filt_cols; ++c)
                d.filters(f, r, c) = rng.normal();
    project_cpn(d.filters, cs);
    return d;
}

} // namespace ccdl
