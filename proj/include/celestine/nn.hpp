#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "celestine/parallel.hpp"
#include "celestine/tensor.hpp"

namespace celestine::nn {

struct NnError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Convolution (valid, no padding)
// ---------------------------------------------------------------------------

template <typename T>
struct ConvState {
    Tensor<T> weight;  // C_out x C_in x k x k
    Tensor<T> bias;    // C_out
    std::size_t kernel = 1;
    std::size_t stride = 1;
};

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride) {
    return (in - k) / stride + 1;
}

}  // namespace detail

/// out[n,o,i,j] = bias[o] + sum_{c,u,v} x[n,c,i*s+u,j*s+v] * w[o,c,u,v].
/// Each output element accumulates in fixed (c,u,v) order, so results are
/// bit-identical for any thread budget.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvState<T>& s) {
    check_rank(x, 4, "conv2d input");
    check_rank(s.weight, 4, "conv2d weight");
    const std::size_t n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t c_out = s.weight.shape[0], k = s.kernel;
    if (s.weight.shape[1] != c_in || s.weight.shape[2] != k || s.weight.shape[3] != k)
        throw NnError("conv2d weight shape " + shape_str(s.weight.shape) +
                      " mismatches input channels/kernel");
    if (s.bias.size() != c_out) throw NnError("conv2d bias size mismatch");
    if (k == 0 || s.stride == 0) throw NnError("conv2d kernel and stride must be >= 1");
    if (h < k || w < k)
        throw NnError("conv2d kernel " + std::to_string(k) + " larger than input " +
                      shape_str(x.shape));

    const std::size_t stride = s.stride;
    const std::size_t h_out = detail::conv_out_dim(h, k, stride);
    const std::size_t w_out = detail::conv_out_dim(w, k, stride);
    Tensor<T> y = Tensor<T>::zeros({n_batch, c_out, h_out, w_out});

    parallel::parallel_for(n_batch * c_out * h_out, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t i = idx % h_out;
            const std::size_t o = (idx / h_out) % c_out;
            const std::size_t n = idx / (h_out * c_out);
            T* out_row = &y.data[((n * c_out + o) * h_out + i) * w_out];
            const T b = s.bias.data[o];
            for (std::size_t j = 0; j < w_out; ++j) out_row[j] = b;
            for (std::size_t c = 0; c < c_in; ++c) {
                for (std::size_t u = 0; u < k; ++u) {
                    const T* x_row = &x.data[((n * c_in + c) * h + i * stride + u) * w];
                    const T* w_row = &s.weight.data[((o * c_in + c) * k + u) * k];
                    for (std::size_t v = 0; v < k; ++v) {
                        const T wv = w_row[v];
                        if (stride == 1) {
                            const T* xp = x_row + v;
                            for (std::size_t j = 0; j < w_out; ++j) out_row[j] += wv * xp[j];
                        } else {
                            for (std::size_t j = 0; j < w_out; ++j)
                                out_row[j] += wv * x_row[j * stride + v];
                        }
                    }
                }
            }
        }
    });
    return y;
}

/// Accumulates weight/bias gradients into the state's grad buffers and
/// returns the input gradient.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, ConvState<T>& s, const Tensor<T>& gy) {
    const std::size_t n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t c_out = s.weight.shape[0], k = s.kernel, stride = s.stride;
    const std::size_t h_out = gy.shape[2], w_out = gy.shape[3];
    if (gy.shape[0] != n_batch || gy.shape[1] != c_out)
        throw NnError("conv2d upstream gradient shape mismatch");

    s.weight.ensure_grad();
    s.bias.ensure_grad();

    Tensor<T> gx = Tensor<T>::zeros(x.shape);
    parallel::parallel_for(n_batch * c_in, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t c = idx % c_in;
            const std::size_t n = idx / c_in;
            T* gx_plane = &gx.data[(n * c_in + c) * h * w];
            for (std::size_t o = 0; o < c_out; ++o) {
                for (std::size_t i = 0; i < h_out; ++i) {
                    const T* gy_row = &gy.data[((n * c_out + o) * h_out + i) * w_out];
                    for (std::size_t u = 0; u < k; ++u) {
                        T* gx_row = gx_plane + (i * stride + u) * w;
                        const T* w_row = &s.weight.data[((o * c_in + c) * k + u) * k];
                        for (std::size_t v = 0; v < k; ++v) {
                            const T wv = w_row[v];
                            if (stride == 1) {
                                T* gp = gx_row + v;
                                for (std::size_t j = 0; j < w_out; ++j) gp[j] += wv * gy_row[j];
                            } else {
                                for (std::size_t j = 0; j < w_out; ++j)
                                    gx_row[j * stride + v] += wv * gy_row[j];
                            }
                        }
                    }
                }
            }
        }
    });

    parallel::parallel_for(c_out * c_in, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t c = idx % c_in;
            const std::size_t o = idx / c_in;
            for (std::size_t u = 0; u < k; ++u) {
                for (std::size_t v = 0; v < k; ++v) {
                    T acc = T(0);
                    for (std::size_t n = 0; n < n_batch; ++n) {
                        for (std::size_t i = 0; i < h_out; ++i) {
                            const T* gy_row = &gy.data[((n * c_out + o) * h_out + i) * w_out];
                            const T* x_row =
                                &x.data[((n * c_in + c) * h + i * stride + u) * w + v];
                            if (stride == 1) {
                                for (std::size_t j = 0; j < w_out; ++j) acc += gy_row[j] * x_row[j];
                            } else {
                                for (std::size_t j = 0; j < w_out; ++j)
                                    acc += gy_row[j] * x_row[j * stride];
                            }
                        }
                    }
                    s.weight.grad[((o * c_in + c) * k + u) * k + v] += acc;
                }
            }
        }
    });

    parallel::parallel_for(c_out, [&](std::size_t begin, std::size_t end) {
        for (std::size_t o = begin; o < end; ++o) {
            T acc = T(0);
            for (std::size_t n = 0; n < n_batch; ++n) {
                const T* gy_plane = &gy.data[(n * c_out + o) * h_out * w_out];
                for (std::size_t i = 0; i < h_out * w_out; ++i) acc += gy_plane[i];
            }
            s.bias.grad[o] += acc;
        }
    });
    return gx;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResult {
    Tensor<T> out;
    std::vector<std::size_t> argmax;  // flat index into the input, per output element
};

/// Window maximum with first-occurrence tie-break in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    check_rank(x, 4, "maxpool input");
    const std::size_t n_batch = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (k == 0 || stride == 0) throw NnError("maxpool kernel and stride must be >= 1");
    if (h < k || w < k)
        throw NnError("maxpool window " + std::to_string(k) + " larger than input " +
                      shape_str(x.shape));
    const std::size_t h_out = (h - k) / stride + 1;
    const std::size_t w_out = (w - k) / stride + 1;

    MaxPoolResult<T> result{Tensor<T>::zeros({n_batch, c, h_out, w_out}),
                            std::vector<std::size_t>(n_batch * c * h_out * w_out, 0)};
    parallel::parallel_for(n_batch * c * h_out, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t i = idx % h_out;
            const std::size_t plane = idx / h_out;  // n * c + channel
            const T* x_plane = &x.data[plane * h * w];
            T* out_row = &result.out.data[idx * w_out];
            std::size_t* arg_row = &result.argmax[idx * w_out];
            for (std::size_t j = 0; j < w_out; ++j) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_at = 0;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::size_t row = i * stride + u;
                    for (std::size_t v = 0; v < k; ++v) {
                        const std::size_t col = j * stride + v;
                        const T val = x_plane[row * w + col];
                        if (val > best) {
                            best = val;
                            best_at = plane * h * w + row * w + col;
                        }
                    }
                }
                out_row[j] = best;
                arg_row[j] = best_at;
            }
        }
    });
    return result;
}

/// Routes each upstream gradient element to its recorded argmax position.
template <typename T>
Tensor<T> maxpool2d_backward(const std::vector<std::size_t>& x_shape,
                             const std::vector<std::size_t>& argmax, const Tensor<T>& gy) {
    if (argmax.size() != gy.size()) throw NnError("maxpool argmax/gradient size mismatch");
    Tensor<T> gx = Tensor<T>::zeros(x_shape);
    const std::size_t plane_elems = x_shape[2] * x_shape[3];
    const std::size_t out_plane = gy.shape[2] * gy.shape[3];
    parallel::parallel_for(x_shape[0] * x_shape[1], [&](std::size_t begin, std::size_t end) {
        for (std::size_t plane = begin; plane < end; ++plane) {
            const std::size_t lo = plane * plane_elems, hi = lo + plane_elems;
            for (std::size_t i = plane * out_plane; i < (plane + 1) * out_plane; ++i) {
                const std::size_t target = argmax[i];
                if (target < lo || target >= hi) throw NnError("maxpool argmax out of plane");
                gx.data[target] += gy.data[i];
            }
        }
    });
    return gx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    parallel::parallel_for(y.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            if (y.data[i] < T(0)) y.data[i] = T(0);
    });
    return y;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
    parallel::parallel_for(x.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            if (x.data[i] < T(0)) x.data[i] = T(0);
    });
}

/// Gradient is masked by x > 0 (defined as 0 at x == 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    if (x.size() != gy.size()) throw NnError("relu gradient size mismatch");
    Tensor<T> gx = Tensor<T>::zeros(x.shape);
    parallel::parallel_for(x.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            gx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
    });
    return gx;
}

// ---------------------------------------------------------------------------
// 2-d batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;         // C
    Tensor<T> beta;          // C
    Tensor<T> running_mean;  // C
    Tensor<T> running_var;   // C
    T eps = T(1e-5);
    T momentum = T(0.1);
    bool stats_initialized = false;
};

template <typename T>
BatchNormState<T> make_batchnorm_state(std::size_t channels) {
    BatchNormState<T> s;
    s.gamma = Tensor<T>::full({channels}, T(1));
    s.beta = Tensor<T>::zeros({channels});
    s.running_mean = Tensor<T>::zeros({channels});
    s.running_var = Tensor<T>::full({channels}, T(1));
    s.stats_initialized = true;
    return s;
}

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
};

/// Train mode normalizes by per-channel batch statistics (biased variance)
/// and updates running stats; eval mode uses the running statistics.
template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& x, BatchNormState<T>& s, Mode mode,
                              BatchNormCache<T>* cache = nullptr, bool update_running = true) {
    check_rank(x, 4, "batchnorm input");
    const std::size_t n_batch = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (s.gamma.size() != c) throw NnError("batchnorm channel mismatch");
    const std::size_t m = n_batch * h * w;

    Tensor<T> y = Tensor<T>::zeros(x.shape);
    if (cache) {
        cache->xhat = Tensor<T>::zeros(x.shape);
        cache->inv_std.assign(c, T(0));
    }

    if (mode == Mode::train) {
        if (m < 2) throw NnError("batchnorm train mode needs at least 2 values per channel");
        parallel::parallel_for(c, [&](std::size_t begin, std::size_t end) {
            for (std::size_t ch = begin; ch < end; ++ch) {
                T sum = T(0), sq_sum = T(0);
                for (std::size_t n = 0; n < n_batch; ++n) {
                    const T* plane = &x.data[(n * c + ch) * h * w];
                    for (std::size_t i = 0; i < h * w; ++i) {
                        sum += plane[i];
                        sq_sum += plane[i] * plane[i];
                    }
                }
                const T mean = sum / static_cast<T>(m);
                const T var = sq_sum / static_cast<T>(m) - mean * mean;
                const T inv_std = T(1) / std::sqrt(var + s.eps);
                if (cache) cache->inv_std[ch] = inv_std;
                const T g = s.gamma.data[ch], b = s.beta.data[ch];
                for (std::size_t n = 0; n < n_batch; ++n) {
                    const T* plane = &x.data[(n * c + ch) * h * w];
                    T* out_plane = &y.data[(n * c + ch) * h * w];
                    T* xhat_plane = cache ? &cache->xhat.data[(n * c + ch) * h * w] : nullptr;
                    for (std::size_t i = 0; i < h * w; ++i) {
                        const T xhat = (plane[i] - mean) * inv_std;
                        if (xhat_plane) xhat_plane[i] = xhat;
                        out_plane[i] = g * xhat + b;
                    }
                }
                if (update_running) {
                    const T unbiased = var * static_cast<T>(m) / static_cast<T>(m - 1);
                    s.running_mean.data[ch] =
                        (T(1) - s.momentum) * s.running_mean.data[ch] + s.momentum * mean;
                    s.running_var.data[ch] =
                        (T(1) - s.momentum) * s.running_var.data[ch] + s.momentum * unbiased;
                }
            }
        });
        if (update_running) s.stats_initialized = true;
    } else {
        if (!s.stats_initialized || s.running_mean.size() != c)
            throw NnError("batchnorm eval mode with uninitialized running statistics");
        parallel::parallel_for(c, [&](std::size_t begin, std::size_t end) {
            for (std::size_t ch = begin; ch < end; ++ch) {
                const T inv_std = T(1) / std::sqrt(s.running_var.data[ch] + s.eps);
                const T mean = s.running_mean.data[ch];
                const T g = s.gamma.data[ch], b = s.beta.data[ch];
                if (cache) cache->inv_std[ch] = inv_std;
                for (std::size_t n = 0; n < n_batch; ++n) {
                    const T* plane = &x.data[(n * c + ch) * h * w];
                    T* out_plane = &y.data[(n * c + ch) * h * w];
                    T* xhat_plane = cache ? &cache->xhat.data[(n * c + ch) * h * w] : nullptr;
                    for (std::size_t i = 0; i < h * w; ++i) {
                        const T xhat = (plane[i] - mean) * inv_std;
                        if (xhat_plane) xhat_plane[i] = xhat;
                        out_plane[i] = g * xhat + b;
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
void batchnorm2d_eval_inplace(Tensor<T>& x, const BatchNormState<T>& s) {
    check_rank(x, 4, "batchnorm input");
    const std::size_t n_batch = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    if (!s.stats_initialized || s.running_mean.size() != c)
        throw NnError("batchnorm eval mode with uninitialized running statistics");
    parallel::parallel_for(n_batch * c, [&](std::size_t begin, std::size_t end) {
        for (std::size_t plane = begin; plane < end; ++plane) {
            const std::size_t ch = plane % c;
            const T inv_std = T(1) / std::sqrt(s.running_var.data[ch] + s.eps);
            const T scale = s.gamma.data[ch] * inv_std;
            const T shift = s.beta.data[ch] - s.running_mean.data[ch] * scale;
            T* p = &x.data[plane * hw];
            for (std::size_t i = 0; i < hw; ++i) p[i] = scale * p[i] + shift;
        }
    });
}

/// Train-mode analytic gradients w.r.t. x, gamma, beta (batch statistics).
template <typename T>
Tensor<T> batchnorm2d_backward(BatchNormState<T>& s, const BatchNormCache<T>& cache,
                               const Tensor<T>& gy) {
    const std::size_t n_batch = gy.shape[0], c = gy.shape[1], h = gy.shape[2], w = gy.shape[3];
    const std::size_t m = n_batch * h * w;
    s.gamma.ensure_grad();
    s.beta.ensure_grad();
    Tensor<T> gx = Tensor<T>::zeros(gy.shape);
    parallel::parallel_for(c, [&](std::size_t begin, std::size_t end) {
        for (std::size_t ch = begin; ch < end; ++ch) {
            T sum_gy = T(0), sum_gy_xhat = T(0);
            for (std::size_t n = 0; n < n_batch; ++n) {
                const T* gy_plane = &gy.data[(n * c + ch) * h * w];
                const T* xh_plane = &cache.xhat.data[(n * c + ch) * h * w];
                for (std::size_t i = 0; i < h * w; ++i) {
                    sum_gy += gy_plane[i];
                    sum_gy_xhat += gy_plane[i] * xh_plane[i];
                }
            }
            s.beta.grad[ch] += sum_gy;
            s.gamma.grad[ch] += sum_gy_xhat;
            const T g = s.gamma.data[ch], inv_std = cache.inv_std[ch];
            const T mean_gy = sum_gy / static_cast<T>(m);
            const T mean_gy_xhat = sum_gy_xhat / static_cast<T>(m);
            for (std::size_t n = 0; n < n_batch; ++n) {
                const T* gy_plane = &gy.data[(n * c + ch) * h * w];
                const T* xh_plane = &cache.xhat.data[(n * c + ch) * h * w];
                T* gx_plane = &gx.data[(n * c + ch) * h * w];
                for (std::size_t i = 0; i < h * w; ++i)
                    gx_plane[i] =
                        g * inv_std * (gy_plane[i] - mean_gy - xh_plane[i] * mean_gy_xhat);
            }
        }
    });
    return gx;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <typename T>
struct LinearState {
    Tensor<T> weight;  // out x in
    Tensor<T> bias;    // out
};

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const LinearState<T>& s) {
    check_rank(x, 2, "linear input");
    const std::size_t n_batch = x.shape[0], in = x.shape[1];
    const std::size_t out = s.weight.shape[0];
    if (s.weight.shape[1] != in)
        throw NnError("linear weight expects " + std::to_string(s.weight.shape[1]) +
                      " inputs, got " + std::to_string(in));
    Tensor<T> y = Tensor<T>::zeros({n_batch, out});
    parallel::parallel_for(n_batch * out, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t o = idx % out;
            const std::size_t n = idx / out;
            const T* x_row = &x.data[n * in];
            const T* w_row = &s.weight.data[o * in];
            T acc = s.bias.data[o];
            for (std::size_t i = 0; i < in; ++i) acc += x_row[i] * w_row[i];
            y.data[idx] = acc;
        }
    });
    return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& x, LinearState<T>& s, const Tensor<T>& gy) {
    const std::size_t n_batch = x.shape[0], in = x.shape[1], out = s.weight.shape[0];
    if (gy.shape[0] != n_batch || gy.shape[1] != out)
        throw NnError("linear upstream gradient shape mismatch");
    s.weight.ensure_grad();
    s.bias.ensure_grad();

    Tensor<T> gx = Tensor<T>::zeros(x.shape);
    parallel::parallel_for(n_batch, [&](std::size_t begin, std::size_t end) {
        for (std::size_t n = begin; n < end; ++n) {
            const T* gy_row = &gy.data[n * out];
            T* gx_row = &gx.data[n * in];
            for (std::size_t o = 0; o < out; ++o) {
                const T g = gy_row[o];
                const T* w_row = &s.weight.data[o * in];
                for (std::size_t i = 0; i < in; ++i) gx_row[i] += g * w_row[i];
            }
        }
    });
    parallel::parallel_for(out, [&](std::size_t begin, std::size_t end) {
        for (std::size_t o = begin; o < end; ++o) {
            T* gw_row = &s.weight.grad[o * in];
            T gb = T(0);
            for (std::size_t n = 0; n < n_batch; ++n) {
                const T g = gy.data[n * out + o];
                gb += g;
                const T* x_row = &x.data[n * in];
                for (std::size_t i = 0; i < in; ++i) gw_row[i] += g * x_row[i];
            }
            s.bias.grad[o] += gb;
        }
    });
    return gx;
}

// ---------------------------------------------------------------------------
// Adaptive average pooling
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t aapl_begin(std::size_t i, std::size_t in, std::size_t out) {
    return i * in / out;
}
inline std::size_t aapl_end(std::size_t i, std::size_t in, std::size_t out) {
    return ((i + 1) * in + out - 1) / out;
}

}  // namespace detail

/// Output cell (i,j) averages input rows [floor(i*H/oh), ceil((i+1)*H/oh))
/// and the analogous column range.
template <typename T>
Tensor<T> adaptive_avg_pool2d_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    check_rank(x, 4, "adaptive_avg_pool input");
    const std::size_t n_batch = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (out_h == 0 || out_w == 0) throw NnError("adaptive_avg_pool output dims must be >= 1");
    if (out_h > h || out_w > w)
        throw NnError("adaptive_avg_pool target larger than input " + shape_str(x.shape));
    Tensor<T> y = Tensor<T>::zeros({n_batch, c, out_h, out_w});
    parallel::parallel_for(n_batch * c, [&](std::size_t begin, std::size_t end) {
        for (std::size_t plane = begin; plane < end; ++plane) {
            const T* x_plane = &x.data[plane * h * w];
            T* y_plane = &y.data[plane * out_h * out_w];
            for (std::size_t i = 0; i < out_h; ++i) {
                const std::size_t r0 = detail::aapl_begin(i, h, out_h);
                const std::size_t r1 = detail::aapl_end(i, h, out_h);
                for (std::size_t j = 0; j < out_w; ++j) {
                    const std::size_t c0 = detail::aapl_begin(j, w, out_w);
                    const std::size_t c1 = detail::aapl_end(j, w, out_w);
                    T acc = T(0);
                    for (std::size_t r = r0; r < r1; ++r)
                        for (std::size_t cc = c0; cc < c1; ++cc) acc += x_plane[r * w + cc];
                    y_plane[i * out_w + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
                }
            }
        }
    });
    return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d_backward(const std::vector<std::size_t>& x_shape,
                                       const Tensor<T>& gy) {
    const std::size_t h = x_shape[2], w = x_shape[3];
    const std::size_t out_h = gy.shape[2], out_w = gy.shape[3];
    Tensor<T> gx = Tensor<T>::zeros(x_shape);
    parallel::parallel_for(x_shape[0] * x_shape[1], [&](std::size_t begin, std::size_t end) {
        for (std::size_t plane = begin; plane < end; ++plane) {
            const T* gy_plane = &gy.data[plane * out_h * out_w];
            T* gx_plane = &gx.data[plane * h * w];
            for (std::size_t i = 0; i < out_h; ++i) {
                const std::size_t r0 = detail::aapl_begin(i, h, out_h);
                const std::size_t r1 = detail::aapl_end(i, h, out_h);
                for (std::size_t j = 0; j < out_w; ++j) {
                    const std::size_t c0 = detail::aapl_begin(j, w, out_w);
                    const std::size_t c1 = detail::aapl_end(j, w, out_w);
                    const T share =
                        gy_plane[i * out_w + j] / static_cast<T>((r1 - r0) * (c1 - c0));
                    for (std::size_t r = r0; r < r1; ++r)
                        for (std::size_t cc = c0; cc < c1; ++cc) gx_plane[r * w + cc] += share;
                }
            }
        }
    });
    return gx;
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy
// ---------------------------------------------------------------------------

/// Row-wise softmax, stabilized by subtracting the row maximum.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    check_rank(x, 2, "softmax input");
    const std::size_t n_batch = x.shape[0], k = x.shape[1];
    if (k < 2) throw NnError("softmax needs at least 2 classes");
    Tensor<T> y = Tensor<T>::zeros(x.shape);
    for (std::size_t n = 0; n < n_batch; ++n) {
        const T* row = &x.data[n * k];
        T* out = &y.data[n * k];
        T mx = row[0];
        for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        T denom = T(0);
        for (std::size_t i = 0; i < k; ++i) {
            out[i] = std::exp(row[i] - mx);
            denom += out[i];
        }
        for (std::size_t i = 0; i < k; ++i) out[i] /= denom;
    }
    return y;
}

/// dL/dx for y = softmax(x) given dL/dy: gx_i = y_i * (gy_i - sum_j gy_j y_j).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& gy) {
    const std::size_t n_batch = y.shape[0], k = y.shape[1];
    Tensor<T> gx = Tensor<T>::zeros(y.shape);
    for (std::size_t n = 0; n < n_batch; ++n) {
        const T* yr = &y.data[n * k];
        const T* gr = &gy.data[n * k];
        T dot = T(0);
        for (std::size_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
        for (std::size_t i = 0; i < k; ++i) gx.data[n * k + i] = yr[i] * (gr[i] - dot);
    }
    return gx;
}

template <typename T>
struct CrossEntropyResult {
    T loss = T(0);
    Tensor<T> probs;
};

/// Mean over the batch of -log softmax(logits)[label], computed in
/// log-space for stability.
template <typename T>
CrossEntropyResult<T> cross_entropy_forward(const Tensor<T>& logits,
                                            const std::vector<std::size_t>& labels) {
    check_rank(logits, 2, "cross_entropy logits");
    const std::size_t n_batch = logits.shape[0], k = logits.shape[1];
    if (labels.size() != n_batch) throw NnError("cross_entropy label count mismatch");
    CrossEntropyResult<T> result;
    result.probs = softmax(logits);
    T total = T(0);
    for (std::size_t n = 0; n < n_batch; ++n) {
        if (labels[n] >= k)
            throw NnError("label " + std::to_string(labels[n]) + " out of range [0, " +
                          std::to_string(k) + ")");
        const T* row = &logits.data[n * k];
        T mx = row[0];
        for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        T lse = T(0);
        for (std::size_t i = 0; i < k; ++i) lse += std::exp(row[i] - mx);
        total += -(row[labels[n]] - mx - std::log(lse));
    }
    result.loss = total / static_cast<T>(n_batch);
    return result;
}

/// dL/dlogits = (softmax - onehot) / N.
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& probs, const std::vector<std::size_t>& labels) {
    const std::size_t n_batch = probs.shape[0], k = probs.shape[1];
    Tensor<T> g = probs;
    for (std::size_t n = 0; n < n_batch; ++n) {
        g.data[n * k + labels[n]] -= T(1);
    }
    for (T& v : g.data) v /= static_cast<T>(n_batch);
    return g;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// p <- p - lr * grad for every parameter; gradients are zeroed afterwards.
template <typename T>
void sgd_step(const std::vector<Tensor<T>*>& params, T lr) {
    for (Tensor<T>* p : params) {
        if (!p->has_grad()) continue;  // parameter never touched by backward
        if (p->grad.size() != p->data.size()) throw NnError("sgd parameter/gradient size mismatch");
        for (std::size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
        p->zero_grad();
    }
}

}  // namespace celestine::nn
