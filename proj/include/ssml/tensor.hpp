#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssml {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor over a flat buffer. Float is the working scalar for
// parameters and activations; the double instantiation backs the
// finite-difference oracle.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    static TensorT zeros(std::vector<int> s) {
        TensorT t;
        t.shape = std::move(s);
        t.data.assign(static_cast<size_t>(count(t.shape)), T(0));
        return t;
    }

    static TensorT full(std::vector<int> s, T v) {
        TensorT t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static TensorT from(std::vector<int> s, std::vector<T> d) {
        if (count(s) != static_cast<int64_t>(d.size()))
            throw ShapeError("tensor data length " + std::to_string(d.size()) +
                             " does not match shape " + shape_str(s));
        TensorT t;
        t.shape = std::move(s);
        t.data = std::move(d);
        return t;
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    T& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }
    std::string shape_str() const { return shape_str(shape); }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// FNV-1a over raw bytes; used for copy-adapt contracts and paired-design checks.
inline uint64_t bytes_hash(const void* p, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t tensor_hash(const Tensor& t, uint64_t h = 1469598103934665603ull) {
    h = bytes_hash(t.shape.data(), t.shape.size() * sizeof(int), h);
    return bytes_hash(t.data.data(), t.data.size() * sizeof(float), h);
}

}  // namespace ssml
