#pragma once

#include <cassert>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "ccdl/tensor.hpp"

namespace ccdl {

namespace detail {
inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}
} // namespace detail

// c2c DFT plan pair for one fixed shape (rank 2 or 3). Forward is the
// unnormalized FFTW_FORWARD transform; backward applies 1/N. Plan creation is
// serialized (FFTW requirement); fftw_execute_dft on disjoint arrays is
// thread-safe, so one shared plan serves all worker threads. FFTW_UNALIGNED
// keeps the plans valid for arbitrary vector-backed buffers, and
// FFTW_ESTIMATE keeps plan choice deterministic.
class Dft {
  public:
    explicit Dft(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        n_ = 1;
        std::vector<int> di;
        for (std::size_t d : dims_) {
            n_ *= d;
            di.push_back(static_cast<int>(d));
        }
        std::vector<cplx> a(n_), b(n_);
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        fwd_ = fftw_plan_dft(static_cast<int>(di.size()), di.data(),
                             reinterpret_cast<fftw_complex*>(a.data()),
                             reinterpret_cast<fftw_complex*>(b.data()),
                             FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        bwd_ = fftw_plan_dft(static_cast<int>(di.size()), di.data(),
                             reinterpret_cast<fftw_complex*>(a.data()),
                             reinterpret_cast<fftw_complex*>(b.data()),
                             FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }

    ~Dft() {
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }

    Dft(const Dft&) = delete;
    Dft& operator=(const Dft&) = delete;

    std::size_t size() const { return n_; }
    const std::vector<std::size_t>& dims() const { return dims_; }

    // Out-of-place only (the plans are out-of-place).
    void forward(const cplx* in, cplx* out) const {
        assert(in != out);
        fftw_execute_dft(fwd_,
                         reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                         reinterpret_cast<fftw_complex*>(out));
    }

    void backward_scaled(const cplx* in, cplx* out) const {
        assert(in != out);
        fftw_execute_dft(bwd_,
                         reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                         reinterpret_cast<fftw_complex*>(out));
        const double s = 1.0 / static_cast<double>(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] *= s;
    }

  private:
    std::vector<std::size_t> dims_;
    std::size_t n_ = 0;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

// Process-lifetime plan cache; the handful of shapes used per run never get
// evicted.
inline const Dft& dft_for(std::vector<std::size_t> dims) {
    static std::map<std::vector<std::size_t>, std::unique_ptr<Dft>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(dims);
    if (it == cache.end())
        it = cache.emplace(dims, std::make_unique<Dft>(dims)).first;
    return *it->second;
}

inline const Dft& dft2_for(std::size_t rows, std::size_t cols) {
    return dft_for({rows, cols});
}

// --- single-plane helpers ---------------------------------------------------

inline void fft_plane(const Dft& plan, const double* src, cplx* dst) {
    const std::size_t n = plan.size();
    std::vector<cplx> in(n);
    for (std::size_t i = 0; i < n; ++i) in[i] = cplx(src[i], 0.0);
    plan.forward(in.data(), dst);
}

inline void ifft_plane_real(const Dft& plan, const cplx* src, double* dst) {
    const std::size_t n = plan.size();
    std::vector<cplx> out(n);
    plan.backward_scaled(src, out.data());
    for (std::size_t i = 0; i < n; ++i) dst[i] = out[i].real();
}

// --- batch helpers (leading axes = batch, trailing plan.dims() = plane) ------

inline Tensor<cplx> fft_planes(const Dft& plan, const Tensor<double>& x) {
    const std::size_t n = plan.size();
    assert(x.size() % n == 0);
    Tensor<cplx> out(x.shape());
    const std::size_t batch = x.size() / n;
    for (std::size_t b = 0; b < batch; ++b)
        fft_plane(plan, x.data() + b * n, out.data() + b * n);
    return out;
}

inline Tensor<double> ifft_planes_real(const Dft& plan, const Tensor<cplx>& x) {
    const std::size_t n = plan.size();
    assert(x.size() % n == 0);
    Tensor<double> out(x.shape());
    const std::size_t batch = x.size() / n;
    for (std::size_t b = 0; b < batch; ++b)
        ifft_plane_real(plan, x.data() + b * n, out.data() + b * n);
    return out;
}

// --- bin-major stack helpers -------------------------------------------------
// The per-frequency solvers want, for each bin, the length-B vector across the
// stack contiguous in memory: src [B][N] spatial real -> dst [N][B] complex.

inline void fft_stack_binmajor(const Dft& plan, const double* src,
                               std::size_t batch, cplx* dst) {
    const std::size_t n = plan.size();
    std::vector<cplx> in(n), out(n);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* s = src + b * n;
        for (std::size_t i = 0; i < n; ++i) in[i] = cplx(s[i], 0.0);
        plan.forward(in.data(), out.data());
        for (std::size_t i = 0; i < n; ++i) dst[i * batch + b] = out[i];
    }
}

// dst [N][B] complex -> spatial real [B][N].
inline void ifft_stack_binmajor_real(const Dft& plan, const cplx* src,
                                     std::size_t batch, double* dst) {
    const std::size_t n = plan.size();
    std::vector<cplx> in(n), out(n);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) in[i] = src[i * batch + b];
        plan.backward_scaled(in.data(), out.data());
        double* d = dst + b * n;
        for (std::size_t i = 0; i < n; ++i) d[i] = out[i].real();
    }
}

} // namespace ccdl
