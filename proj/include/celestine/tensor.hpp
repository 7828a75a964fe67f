#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace celestine::nn {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

/// Dense row-major N-d array with an optional same-shape gradient buffer.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad()

    Tensor() = default;

    Tensor(std::vector<std::size_t> s, std::vector<T> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        const std::size_t n = numel(s);
        return Tensor(std::move(s), std::vector<T>(n, T(0)));
    }

    static Tensor full(std::vector<std::size_t> s, T value) {
        const std::size_t n = numel(s);
        return Tensor(std::move(s), std::vector<T>(n, value));
    }

    std::size_t size() const { return data.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw std::out_of_range("tensor dim index " + std::to_string(i));
        return shape[i];
    }

    bool has_grad() const { return !grad.empty(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), T(0));
    }

    // 4-d (N,C,H,W) and 2-d (N,K) flat offsets.
    std::size_t at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }
    std::size_t at2(std::size_t n, std::size_t k) const { return n * shape[1] + k; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

template <typename T>
inline void check_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
    if (t.shape.size() != rank)
        throw std::invalid_argument(std::string(what) + ": expected rank " +
                                    std::to_string(rank) + ", got " + shape_str(t.shape));
}

}  // namespace celestine::nn
