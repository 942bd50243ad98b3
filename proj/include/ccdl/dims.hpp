#pragma once

#include <cstddef>
#include <string>

#include "ccdl/errors.hpp"

namespace ccdl {

enum class NormMode {
    UnitEquality, // ||d_m||_2 = 1
    UnitBall,     // ||d_m||_2 <= 1
};

inline std::string to_string(NormMode m) {
    return m == NormMode::UnitEquality ? "eq" : "ball";
}

inline NormMode norm_mode_from_string(const std::string& s) {
    if (s == "eq") return NormMode::UnitEquality;
    if (s == "ball") return NormMode::UnitBall;
    throw ParameterError("unknown norm mode '" + s + "' (expected eq|ball)");
}

// Filters live zero-padded at full image size; the constraint set pins the
// n_r x n_c corner support and the norm mode.
struct ConstraintSet {
    std::size_t filt_rows = 0;
    std::size_t filt_cols = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    NormMode mode = NormMode::UnitEquality;

    void validate() const {
        if (filt_rows == 0 || filt_cols == 0 || rows == 0 || cols == 0)
            throw DimensionError("constraint set with zero-sized axis");
        if (filt_rows > rows || filt_cols > cols)
            throw DimensionError("filter support exceeds image size");
    }

    bool in_support(std::size_t r, std::size_t c) const {
        return r < filt_rows && c < filt_cols;
    }
};

struct ProblemDims {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t filters = 0;  // M
    std::size_t images = 0;   // K
    std::size_t channels = 1; // C
    std::size_t filt_rows = 0;
    std::size_t filt_cols = 0;

    std::size_t pixels() const { return rows * cols; }

    void validate() const {
        if (rows == 0 || cols == 0 || filters == 0 || images == 0 || channels == 0)
            throw DimensionError("problem dimensions must be positive");
        if (filt_rows == 0 || filt_cols == 0 || filt_rows > rows || filt_cols > cols)
            throw DimensionError("filter size must be positive and fit in the image");
    }
};

} // namespace ccdl
