#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "celestine/metrics.hpp"
#include "celestine/netspec.hpp"
#include "celestine/random.hpp"

namespace celestine::runtime {

struct RuntimeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t batch_size = 4;
    double lr = 1e-4;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const {
        if (batch_size < 1) throw RuntimeError("batch_size must be >= 1");
        if (!(lr > 0.0)) throw RuntimeError("learning rate must be > 0");
        if (epochs < 1) throw RuntimeError("epochs must be >= 1");
    }
};

template <typename T>
struct Network {
    netspec::NetSpec spec;
    std::vector<netspec::LayerParams<T>> params;
};

template <typename T>
Network<T> make_network(const netspec::NetSpec& spec, std::uint64_t seed) {
    return Network<T>{spec, netspec::init_params<T>(spec, seed)};
}

template <typename T>
std::vector<nn::Tensor<T>*> trainable_params(Network<T>& net) {
    std::vector<nn::Tensor<T>*> out;
    for (auto& layer : net.params) {
        if (auto* conv = std::get_if<nn::ConvState<T>>(&layer)) {
            out.push_back(&conv->weight);
            out.push_back(&conv->bias);
        } else if (auto* bn = std::get_if<nn::BatchNormState<T>>(&layer)) {
            out.push_back(&bn->gamma);
            out.push_back(&bn->beta);
        } else if (auto* lin = std::get_if<nn::LinearState<T>>(&layer)) {
            out.push_back(&lin->weight);
            out.push_back(&lin->bias);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / training passes
// ---------------------------------------------------------------------------

struct ForwardTrace {
    std::vector<std::size_t> pre_flatten_shape;  // (C,H,W) feeding the flatten layer
};

namespace detail {

template <typename T>
void check_input(const Network<T>& net, const nn::Tensor<T>& batch) {
    check_rank(batch, 4, "network input");
    if (batch.shape[1] != net.spec.input_c || batch.shape[2] != net.spec.input_h ||
        batch.shape[3] != net.spec.input_w)
        throw RuntimeError("input " + nn::shape_str(batch.shape) + " does not match spec input " +
                           std::to_string(net.spec.input_c) + "x" +
                           std::to_string(net.spec.input_h) + "x" +
                           std::to_string(net.spec.input_w));
}

}  // namespace detail

/// Eval-mode forward pass to class probabilities. BatchNorm uses running
/// statistics; elementwise layers run in place so the peak footprint stays
/// near the widest single activation.
template <typename T>
nn::Tensor<T> forward_pass(const Network<T>& net, const nn::Tensor<T>& batch,
                           ForwardTrace* trace = nullptr) {
    detail::check_input(net, batch);
    nn::Tensor<T> cur = batch;
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        const netspec::LayerSpec& layer = net.spec.layers[i];
        switch (layer.kind) {
            case netspec::LayerKind::conv:
                cur = nn::conv2d_forward(cur, std::get<nn::ConvState<T>>(net.params[i]));
                break;
            case netspec::LayerKind::batchnorm:
                nn::batchnorm2d_eval_inplace(cur, std::get<nn::BatchNormState<T>>(net.params[i]));
                break;
            case netspec::LayerKind::relu:
                nn::relu_inplace(cur);
                break;
            case netspec::LayerKind::maxpool:
                cur = nn::maxpool2d_forward(cur, layer.kernel, layer.stride).out;
                break;
            case netspec::LayerKind::adaptive_avg_pool:
                cur = nn::adaptive_avg_pool2d_forward(cur, layer.target_h, layer.target_w);
                break;
            case netspec::LayerKind::flatten: {
                if (trace)
                    trace->pre_flatten_shape = {cur.shape[1], cur.shape[2], cur.shape[3]};
                const std::size_t n = cur.shape[0];
                cur.shape = {n, cur.size() / n};
                break;
            }
            case netspec::LayerKind::linear:
                cur = nn::linear_forward(cur, std::get<nn::LinearState<T>>(net.params[i]));
                break;
            case netspec::LayerKind::softmax:
                cur = nn::softmax(cur);
                break;
        }
    }
    return cur;
}

template <typename T>
struct StepResult {
    T loss = T(0);
    std::size_t correct = 0;
};

/// One mini-batch update: train-mode forward, cross-entropy on the logits
/// feeding the softmax head, full backward, SGD step.
template <typename T>
StepResult<T> train_step(Network<T>& net, const nn::Tensor<T>& batch,
                         const std::vector<std::size_t>& labels, T lr) {
    detail::check_input(net, batch);
    const std::size_t n_layers = net.spec.layers.size();
    if (n_layers == 0 || net.spec.layers.back().kind != netspec::LayerKind::softmax)
        throw RuntimeError("training expects a trailing softmax head");

    std::vector<nn::Tensor<T>> inputs;  // input tensor of each layer
    inputs.reserve(n_layers);
    std::vector<std::vector<std::size_t>> pool_argmax(n_layers);
    std::vector<nn::BatchNormCache<T>> bn_caches(n_layers);

    nn::Tensor<T> cur = batch;
    for (std::size_t i = 0; i + 1 < n_layers; ++i) {
        const netspec::LayerSpec& layer = net.spec.layers[i];
        inputs.push_back(std::move(cur));
        const nn::Tensor<T>& x = inputs.back();
        switch (layer.kind) {
            case netspec::LayerKind::conv:
                cur = nn::conv2d_forward(x, std::get<nn::ConvState<T>>(net.params[i]));
                break;
            case netspec::LayerKind::batchnorm:
                cur = nn::batchnorm2d_forward(x, std::get<nn::BatchNormState<T>>(net.params[i]),
                                              nn::Mode::train, &bn_caches[i]);
                break;
            case netspec::LayerKind::relu:
                cur = nn::relu_forward(x);
                break;
            case netspec::LayerKind::maxpool: {
                auto pooled = nn::maxpool2d_forward(x, layer.kernel, layer.stride);
                pool_argmax[i] = std::move(pooled.argmax);
                cur = std::move(pooled.out);
                break;
            }
            case netspec::LayerKind::adaptive_avg_pool:
                cur = nn::adaptive_avg_pool2d_forward(x, layer.target_h, layer.target_w);
                break;
            case netspec::LayerKind::flatten:
                cur = x;
                cur.shape = {x.shape[0], x.size() / x.shape[0]};
                break;
            case netspec::LayerKind::linear:
                cur = nn::linear_forward(x, std::get<nn::LinearState<T>>(net.params[i]));
                break;
            case netspec::LayerKind::softmax:
                throw RuntimeError("softmax is only supported as the final layer");
        }
    }

    const nn::Tensor<T> logits = std::move(cur);
    auto ce = nn::cross_entropy_forward(logits, labels);
    StepResult<T> result;
    result.loss = ce.loss;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.shape[1]; ++k)
            if (logits.data[n * logits.shape[1] + k] > logits.data[n * logits.shape[1] + best])
                best = k;  // ties keep the lowest class index
        if (best == labels[n]) ++result.correct;
    }

    nn::Tensor<T> grad = nn::cross_entropy_backward(ce.probs, labels);
    for (std::size_t ri = n_layers - 1; ri-- > 0;) {
        const netspec::LayerSpec& layer = net.spec.layers[ri];
        const nn::Tensor<T>& x = inputs[ri];
        switch (layer.kind) {
            case netspec::LayerKind::conv:
                grad = nn::conv2d_backward(x, std::get<nn::ConvState<T>>(net.params[ri]), grad);
                break;
            case netspec::LayerKind::batchnorm:
                grad = nn::batchnorm2d_backward(std::get<nn::BatchNormState<T>>(net.params[ri]),
                                                bn_caches[ri], grad);
                break;
            case netspec::LayerKind::relu:
                grad = nn::relu_backward(x, grad);
                break;
            case netspec::LayerKind::maxpool:
                grad = nn::maxpool2d_backward(x.shape, pool_argmax[ri], grad);
                break;
            case netspec::LayerKind::adaptive_avg_pool:
                grad = nn::adaptive_avg_pool2d_backward(x.shape, grad);
                break;
            case netspec::LayerKind::flatten:
                grad.shape = x.shape;
                break;
            case netspec::LayerKind::linear:
                grad = nn::linear_backward(x, std::get<nn::LinearState<T>>(net.params[ri]), grad);
                break;
            case netspec::LayerKind::softmax:
                break;  // unreachable
        }
    }

    auto params = trainable_params(net);
    nn::sgd_step(params, lr);
    return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <typename T>
struct LabeledImage {
    nn::Tensor<T> image;      // C x H x W
    std::size_t label = 0;    // 0 = galaxy, 1 = nsc
    std::string id;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainLog {
    TrainConfig config;
    std::vector<EpochLog> epochs;

    /// Line-oriented log: header comments followed by epoch,loss,train_acc.
    std::string text() const {
        std::ostringstream out;
        out << "# batch_size=" << config.batch_size << " lr=" << config.lr
            << " epochs=" << config.epochs << " seed=" << config.seed
            << " shuffle=" << (config.shuffle ? "seeded" : "off") << " remainder=keep\n";
        out << "epoch,loss,train_acc\n";
        for (const EpochLog& e : epochs)
            out << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
        return out.str();
    }
};

namespace detail {

template <typename T>
nn::Tensor<T> gather_batch(const std::vector<LabeledImage<T>>& samples,
                           const std::vector<std::size_t>& order, std::size_t begin,
                           std::size_t end, std::vector<std::size_t>& labels) {
    const auto& first = samples[order[begin]].image;
    nn::Tensor<T> batch =
        nn::Tensor<T>::zeros({end - begin, first.shape[0], first.shape[1], first.shape[2]});
    labels.clear();
    const std::size_t stride = first.size();
    for (std::size_t i = begin; i < end; ++i) {
        const LabeledImage<T>& s = samples[order[i]];
        if (s.image.shape != first.shape)
            throw RuntimeError("sample '" + s.id + "' shape " + nn::shape_str(s.image.shape) +
                               " differs from the batch shape");
        std::copy(s.image.data.begin(), s.image.data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>((i - begin) * stride));
        labels.push_back(s.label);
    }
    return batch;
}

}  // namespace detail

/// Epochs of seeded-shuffle mini-batches (the final short batch is kept).
/// Aborts with a diagnostic if the loss stops being finite.
template <typename T>
TrainLog train(Network<T>& net, const std::vector<LabeledImage<T>>& samples,
               const TrainConfig& config) {
    config.validate();
    if (samples.empty()) throw RuntimeError("training set is empty");
    for (const auto& s : samples) {
        check_rank(s.image, 3, "training sample");
        if (s.label > 1) throw RuntimeError("labels must be 0 (galaxy) or 1 (nsc)");
    }

    TrainLog log;
    log.config = config;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) rnd::shuffle_deterministic(order, rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, batches = 0;
        std::vector<std::size_t> labels;
        for (std::size_t begin = 0; begin < samples.size(); begin += config.batch_size) {
            const std::size_t end = std::min(samples.size(), begin + config.batch_size);
            nn::Tensor<T> batch = detail::gather_batch(samples, order, begin, end, labels);
            const StepResult<T> step =
                train_step(net, batch, labels, static_cast<T>(config.lr));
            if (!std::isfinite(static_cast<double>(step.loss)))
                throw RuntimeError("non-finite loss " + std::to_string(step.loss) + " at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batches));
            loss_sum += static_cast<double>(step.loss);
            correct += step.correct;
            ++batches;
        }
        log.epochs.push_back({epoch, loss_sum / static_cast<double>(batches),
                              static_cast<double>(correct) / static_cast<double>(samples.size())});
    }
    return log;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename T>
struct EvalResult {
    std::vector<int> predictions;  // aligned with the sample order
    metrics::ConfusionMatrix cm;
};

/// Argmax over class probabilities (ties resolve to class 0), confusion
/// matrix accumulated with galaxy as the positive class.
template <typename T>
EvalResult<T> evaluate(const Network<T>& net, const std::vector<LabeledImage<T>>& samples,
                       std::size_t batch_size = 4) {
    if (samples.empty()) throw RuntimeError("evaluation set is empty");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    EvalResult<T> result;
    std::vector<std::size_t> labels;
    std::vector<int> label_values;
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
        const std::size_t end = std::min(samples.size(), begin + batch_size);
        nn::Tensor<T> batch = detail::gather_batch(samples, order, begin, end, labels);
        const nn::Tensor<T> probs = forward_pass(net, batch);
        for (std::size_t n = 0; n < end - begin; ++n) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < probs.shape[1]; ++k)
                if (probs.data[n * probs.shape[1] + k] > probs.data[n * probs.shape[1] + best])
                    best = k;
            result.predictions.push_back(static_cast<int>(best));
            label_values.push_back(static_cast<int>(labels[n]));
        }
    }
    result.cm = metrics::confusion_matrix(result.predictions, label_values);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'H', 'R', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4))
        throw RuntimeError("checkpoint truncated while reading " + what);
    return static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
           static_cast<std::uint32_t>(bytes[2]) << 16 | static_cast<std::uint32_t>(bytes[3]) << 24;
}

template <typename T>
std::vector<nn::Tensor<T>*> layer_tensors(netspec::LayerParams<T>& layer) {
    if (auto* conv = std::get_if<nn::ConvState<T>>(&layer))
        return {&conv->weight, &conv->bias};
    if (auto* bn = std::get_if<nn::BatchNormState<T>>(&layer))
        return {&bn->gamma, &bn->beta, &bn->running_mean, &bn->running_var};
    if (auto* lin = std::get_if<nn::LinearState<T>>(&layer))
        return {&lin->weight, &lin->bias};
    return {};
}

}  // namespace detail

/// Format: magic "HRCN", u32 version, 32-byte architecture hash, then per
/// layer a u32 index, u32 tensor count, and per tensor a shape header
/// (u32 rank + u32 dims) followed by little-endian f32 data.
template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    const digest::Sha256 hash = netspec::spec_hash(net.spec);
    out.write(reinterpret_cast<const char*>(hash.data()),
              static_cast<std::streamsize>(hash.size()));
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        auto tensors = detail::layer_tensors(net.params[i]);
        detail::put_u32(out, static_cast<std::uint32_t>(i));
        detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
        for (nn::Tensor<T>* t : tensors) {
            detail::put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
            for (std::size_t d : t->shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
            for (T v : t->data) detail::put_f32(out, static_cast<float>(v));
        }
    }
    if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
}

/// Restores a network for `spec`. The stored architecture hash must match.
template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path, const netspec::NetSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kCheckpointMagic, 4))
        throw RuntimeError("checkpoint has wrong magic bytes");
    const std::uint32_t version = detail::get_u32(in, "version");
    if (version != kCheckpointVersion)
        throw RuntimeError("unsupported checkpoint version " + std::to_string(version));
    digest::Sha256 stored_hash;
    if (!in.read(reinterpret_cast<char*>(stored_hash.data()),
                 static_cast<std::streamsize>(stored_hash.size())))
        throw RuntimeError("checkpoint truncated while reading architecture hash");
    if (stored_hash != netspec::spec_hash(spec))
        throw RuntimeError("checkpoint architecture hash does not match the given spec");

    Network<T> net = make_network<T>(spec, 0);
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        const std::string at = "layer " + std::to_string(i);
        const std::uint32_t index = detail::get_u32(in, at + " index");
        if (index != i)
            throw RuntimeError("checkpoint layer index " + std::to_string(index) +
                               " where " + std::to_string(i) + " was expected");
        auto tensors = detail::layer_tensors(net.params[i]);
        const std::uint32_t count = detail::get_u32(in, at + " tensor count");
        if (count != tensors.size())
            throw RuntimeError("checkpoint " + at + " has " + std::to_string(count) +
                               " tensors, expected " + std::to_string(tensors.size()));
        for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
            const std::string twhat = at + " tensor " + std::to_string(ti);
            const std::uint32_t rank = detail::get_u32(in, twhat + " rank");
            if (rank != tensors[ti]->shape.size())
                throw RuntimeError("checkpoint " + twhat + " rank mismatch");
            for (std::size_t d = 0; d < rank; ++d) {
                const std::uint32_t dim = detail::get_u32(in, twhat + " shape");
                if (dim != tensors[ti]->shape[d])
                    throw RuntimeError("checkpoint " + twhat + " dimension mismatch");
            }
            for (T& v : tensors[ti]->data)
                v = static_cast<T>(std::bit_cast<float>(detail::get_u32(in, twhat + " data")));
        }
        if (auto* bn = std::get_if<nn::BatchNormState<T>>(&net.params[i]))
            bn->stats_initialized = true;
    }
    return net;
}

// ---------------------------------------------------------------------------
// Timing harness
// ---------------------------------------------------------------------------

struct TimingReport {
    double preprocessing_ms_per_sample = 0.0;
    double classification_ms_per_sample = 0.0;
    double total_ms_per_sample = 0.0;  // preprocessing + classification
    std::size_t sample_count = 0;
    std::size_t repetitions = 0;
};

// Published per-sample times (ms) on the reference hardware; shown for
// comparison only, never asserted.
struct Table4Reference {
    double preprocessing_lcid = 60.6;
    double preprocessing_resize = 120.6;
    double classification_hr_celestialnet = 55.9;
    double total_hr_celestialnet = 116.5;
};

/// Runs preprocess_fn/classify_fn per sample index with a monotonic clock;
/// warm-up repetitions are excluded from the averages.
inline TimingReport bench_timing(const std::function<void(std::size_t)>& preprocess_fn,
                                 const std::function<void(std::size_t)>& classify_fn,
                                 std::size_t sample_count, std::size_t repetitions,
                                 std::size_t warmup = 1) {
    if (sample_count == 0) throw RuntimeError("bench_timing needs at least one sample");
    if (repetitions == 0) throw RuntimeError("bench_timing needs at least one repetition");
    using clock = std::chrono::steady_clock;

    for (std::size_t r = 0; r < warmup; ++r) {
        for (std::size_t s = 0; s < sample_count; ++s) {
            preprocess_fn(s);
            classify_fn(s);
        }
    }

    double pre_ms = 0.0, cls_ms = 0.0;
    for (std::size_t r = 0; r < repetitions; ++r) {
        for (std::size_t s = 0; s < sample_count; ++s) {
            const auto t0 = clock::now();
            preprocess_fn(s);
            const auto t1 = clock::now();
            classify_fn(s);
            const auto t2 = clock::now();
            pre_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
            cls_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();
        }
    }

    TimingReport report;
    report.sample_count = sample_count;
    report.repetitions = repetitions;
    const double n = static_cast<double>(sample_count * repetitions);
    report.preprocessing_ms_per_sample = pre_ms / n;
    report.classification_ms_per_sample = cls_ms / n;
    report.total_ms_per_sample =
        report.preprocessing_ms_per_sample + report.classification_ms_per_sample;
    return report;
}

/// Table-style rendering with the published reference row.
inline std::string format_timing_report(const TimingReport& report, const std::string& label) {
    const Table4Reference ref;
    std::ostringstream out;
    out << "Time consumption (ms/sample)\n";
    out << "  model                          preprocessing  classification  total\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-30s %13.1f %15.1f %6.1f\n", label.c_str(),
                  report.preprocessing_ms_per_sample, report.classification_ms_per_sample,
                  report.total_ms_per_sample);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  %-30s %13.1f %15.1f %6.1f\n",
                  "published reference (LCID)", ref.preprocessing_lcid,
                  ref.classification_hr_celestialnet, ref.total_hr_celestialnet);
    out << buf;
    out << "  (reference row is hardware-dependent and shown for comparison only)\n";
    return out.str();
}

}  // namespace celestine::runtime
