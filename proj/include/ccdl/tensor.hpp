#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <utility>
#include <vector>

#include "ccdl/errors.hpp"

namespace ccdl {

using cplx = std::complex<double>;

// Dense row-major tensor with value semantics. Deliberately minimal: the
// solvers below index flat slices through raw pointers, this type mostly
// carries shape information and owns storage.
template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        init_storage();
    }

    Tensor(std::initializer_list<std::size_t> shape)
        : shape_(shape.begin(), shape.end()) {
        init_storage();
    }

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t shape(std::size_t axis) const {
        assert(axis < shape_.size());
        return shape_[axis];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t flat) {
        assert(flat < data_.size());
        return data_[flat];
    }
    const T& operator[](std::size_t flat) const {
        assert(flat < data_.size());
        return data_[flat];
    }

    template <class... Ix>
    T& operator()(Ix... ix) {
        return data_[offset(ix...)];
    }
    template <class... Ix>
    const T& operator()(Ix... ix) const {
        return data_[offset(ix...)];
    }

    void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Flat size of the trailing `n` axes (e.g. one image plane).
    std::size_t tail_size(std::size_t n) const {
        assert(n <= shape_.size());
        std::size_t s = 1;
        for (std::size_t i = shape_.size() - n; i < shape_.size(); ++i) s *= shape_[i];
        return s;
    }

  private:
    void init_storage() {
        std::size_t n = 1;
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor axis of size zero");
            n *= d;
        }
        data_.assign(n, T{});
    }

    template <class... Ix>
    std::size_t offset(Ix... ix) const {
        assert(sizeof...(Ix) == shape_.size());
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(Ix); ++a) {
            assert(idx[a] < shape_[a]);
            off = off * shape_[a] + idx[a];
        }
        return off;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

inline double max_abs(const Tensor<double>& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
double frob_norm(const Tensor<T>& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::norm(std::complex<double>(t[i]));
    return std::sqrt(s);
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace ccdl
