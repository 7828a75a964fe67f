#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace celestine::metrics {

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Binary confusion counts with galaxy (class 0) fixed as the positive class.
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    /// Swaps the positive class: tp<->tn, fp<->fn.
    ConfusionMatrix transposed() const { return {tn, fn, fp, tp}; }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& predictions,
                                        const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw MetricsError("predictions and labels differ in length");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], l = labels[i];
        if ((p != 0 && p != 1) || (l != 0 && l != 1))
            throw MetricsError("class values must be 0 (galaxy) or 1 (nsc)");
        if (l == 0)
            (p == 0 ? cm.tp : cm.fn) += 1;
        else
            (p == 0 ? cm.fp : cm.tn) += 1;
    }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw MetricsError("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

/// Precision/recall/F1 where an all-zero denominator makes the value
/// undefined (reported as an empty optional, never silently 0).
struct PrecisionRecallF1 {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm) {
    PrecisionRecallF1 out;
    if (cm.tp + cm.fp > 0)
        out.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0)
        out.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    if (out.precision && out.recall && (*out.precision + *out.recall) > 0.0)
        out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
    return out;
}

/// (f1_galaxy, f1_nsc): galaxy from the matrix as-is, nsc from the
/// transposed matrix.
inline std::pair<std::optional<double>, std::optional<double>> per_class_f1(
    const ConfusionMatrix& cm) {
    return {precision_recall_f1(cm).f1, precision_recall_f1(cm.transposed()).f1};
}

struct MetricsReport {
    ConfusionMatrix cm;
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1_galaxy;
    std::optional<double> f1_nsc;
    std::vector<std::string> flags;  // names of undefined metrics
};

inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    MetricsReport report;
    report.cm = cm;
    report.accuracy = accuracy(cm);
    const PrecisionRecallF1 galaxy = precision_recall_f1(cm);
    report.precision = galaxy.precision;
    report.recall = galaxy.recall;
    report.f1_galaxy = galaxy.f1;
    report.f1_nsc = precision_recall_f1(cm.transposed()).f1;
    if (!report.precision) report.flags.push_back("precision_undefined");
    if (!report.recall) report.flags.push_back("recall_undefined");
    if (!report.f1_galaxy) report.flags.push_back("f1_galaxy_undefined");
    if (!report.f1_nsc) report.flags.push_back("f1_nsc_undefined");
    return report;
}

inline nlohmann::json to_json(const MetricsReport& report) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {
        {"accuracy", report.accuracy},
        {"f1_galaxy", opt(report.f1_galaxy)},
        {"f1_nsc", opt(report.f1_nsc)},
        {"confusion_matrix",
         {{"tp", report.cm.tp}, {"fp", report.cm.fp}, {"fn", report.cm.fn}, {"tn", report.cm.tn}}},
        {"flags", report.flags},
    };
}

/// Blurry-set confusion matrices reconstructed from the published
/// per-model misclassification counts (73 galaxy / 43 NSC samples).
struct BlurryFixture {
    const char* model;
    ConfusionMatrix cm;
    double reported_accuracy;  // percent
};

inline const std::vector<BlurryFixture>& lcid_blurry_fixtures() {
    static const std::vector<BlurryFixture> fixtures = {
        {"hr_celestialnet", {72, 17, 1, 26}, 84.48},
        {"vggnet", {72, 24, 1, 19}, 78.45},
        {"alexnet", {69, 24, 4, 19}, 75.86},
        {"resnet", {55, 11, 18, 32}, 75.00},
    };
    return fixtures;
}

}  // namespace celestine::metrics
