#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ccdl/errors.hpp"
#include "ccdl/rng.hpp"
#include "ccdl/tensor.hpp"

namespace ccdl {

// 0/1 observation mask with exactly floor(zero_fraction * size) zeros, placed
// by a partial Fisher-Yates shuffle so the draw is uniform over index subsets.
inline Tensor<double> make_random_mask(const std::vector<std::size_t>& shape,
                                       double zero_fraction, std::uint64_t seed) {
    if (!(zero_fraction >= 0.0 && zero_fraction <= 1.0))
        throw ParameterError("mask: zero fraction must lie in [0, 1]");
    Tensor<double> W(shape);
    W.fill(1.0);
    std::size_t n = W.size();
    auto zeros = static_cast<std::size_t>(
        std::floor(zero_fraction * static_cast<double>(n)));
    if (zeros > n) zeros = n;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < zeros; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
        W[idx[i]] = 0.0;
    }
    return W;
}

}  // namespace ccdl
