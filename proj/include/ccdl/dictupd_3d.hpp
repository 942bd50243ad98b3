#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ccdl/dictupd.hpp"

namespace ccdl {

// "3D" dictionary update: the K training images form one 3D volume, the
// filters gain a third axis of length K constrained to the first slice, and
// the d-step becomes a single rank-1 frequency system per 3D bin. Under a
// DFT along the image axis this is exactly the consensus update, which is
// what the equivalence tests assert.
struct ThreeDState {
    Tensor<double> d, g, h; // [M][K][rows][cols]
    double sigma = 1.0;
    std::size_t k_slices = 1;
    ConstraintSet cset;
    ProjectStats proj_stats;
};

inline ThreeDState make_3d_state(const Dictionary& D, std::size_t k_imgs,
                                 double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("dictupd: sigma must be positive");
    ThreeDState st;
    const std::size_t n = D.cset.rows * D.cset.cols;
    const std::size_t m = D.filters.size() / n;
    st.d = Tensor<double>({m, k_imgs, D.cset.rows, D.cset.cols});
    for (std::size_t mm = 0; mm < m; ++mm)
        for (std::size_t i = 0; i < n; ++i)
            st.d[mm * k_imgs * n + i] = D.filters[mm * n + i]; // slice 0
    st.g = st.d;
    st.h = Tensor<double>({m, k_imgs, D.cset.rows, D.cset.cols});
    st.sigma = sigma;
    st.k_slices = k_imgs;
    st.cset = D.cset;
    return st;
}

// First slice of the (feasible) volume dictionary; exact because the volume
// constraint zeroes every other slice.
inline Tensor<double> slice0_filters(const Tensor<double>& vol, std::size_t k_slices,
                                     std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    const std::size_t m = vol.size() / (k_slices * n);
    Tensor<double> out({m, rows, cols});
    for (std::size_t mm = 0; mm < m; ++mm)
        for (std::size_t i = 0; i < n; ++i) out[mm * n + i] = vol[mm * k_slices * n + i];
    return out;
}

// X: [K][M][rows][cols], S: [K][rows][cols]; both reinterpreted as volumes
// along the image axis.
inline DictStats dictupd_3d_step(const Tensor<double>& X, const Tensor<double>& S,
                                 ThreeDState& st) {
    const std::size_t rows = st.cset.rows, cols = st.cset.cols;
    const std::size_t n = rows * cols;
    const std::size_t K = st.k_slices;
    const std::size_t nv = K * n; // 3D bins
    const std::size_t m = st.d.size() / nv;
    const double sigma = st.sigma;
    const Dft& plan = dft_for({K, rows, cols});

    // coefficient volumes per filter: gather x_{k,m} into [K][rows][cols]
    std::vector<cplx> xhat(m * nv), shat(nv), ghat(m * nv);
    {
        std::vector<double> vol(nv);
        for (std::size_t mm = 0; mm < m; ++mm) {
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t i = 0; i < n; ++i)
                    vol[k * n + i] = X[(k * m + mm) * n + i];
            fft_plane(plan, vol.data(), xhat.data() + mm * nv);
        }
        fft_plane(plan, S.data(), shat.data());
        for (std::size_t mm = 0; mm < m; ++mm) {
            for (std::size_t i = 0; i < nv; ++i)
                vol[i] = st.g[mm * nv + i] - st.h[mm * nv + i];
            fft_plane(plan, vol.data(), ghat.data() + mm * nv);
        }
    }

    // rank-1 solve per 3D bin; rows of the per-bin 1 x M system live at
    // stride nv in the [M][nv] transposed layout, so gather into a row first
    std::vector<cplx> dhat(m * nv);
    {
        IsmWorkspace ws;
        std::vector<cplx> xrow(m), b(m);
        for (std::size_t bin = 0; bin < nv; ++bin) {
            for (std::size_t mm = 0; mm < m; ++mm) {
                xrow[mm] = xhat[mm * nv + bin];
                b[mm] = std::conj(xrow[mm]) * shat[bin] + sigma * ghat[mm * nv + bin];
            }
            solve_rankK_ism(xrow.data(), 1, m, m, sigma, b.data(), b.data(), ws);
            for (std::size_t mm = 0; mm < m; ++mm) dhat[mm * nv + bin] = b[mm];
        }
    }
    for (std::size_t mm = 0; mm < m; ++mm)
        ifft_plane_real(plan, dhat.data() + mm * nv, st.d.data() + mm * nv);

    Tensor<double> gprev = st.g;
    for (std::size_t i = 0; i < st.g.size(); ++i) st.g[i] = st.d[i] + st.h[i];
    auto ps = project_cpn_volume(st.g, K, st.cset);
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

} // namespace ccdl
