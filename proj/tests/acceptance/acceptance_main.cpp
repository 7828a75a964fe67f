// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <sys/resource.h>
#include <vector>

#include "celestine/cli.hpp"
#include "celestine/dataset.hpp"
#include "celestine/fits.hpp"
#include "celestine/fixtures.hpp"
#include "celestine/metrics.hpp"
#include "celestine/netspec.hpp"
#include "celestine/preprocess.hpp"
#include "celestine/runtime.hpp"
#include "celestine/synth.hpp"
#include "../support/gradient_check.hpp"

using namespace celestine;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool condition, const std::string& what) {
        if (!condition) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::size_t read_proc_status_kb(const char* key) {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(key, 0) == 0) {
            std::size_t kb = 0;
            std::sscanf(line.c_str() + std::string(key).size(), " %zu", &kb);
            return kb;
        }
    }
    return 0;
}

std::size_t peak_rss_kb() {
    rusage usage{};
    getrusage(RUSAGE_SELF, &usage);
    return static_cast<std::size_t>(usage.ru_maxrss);
}

// --- criterion 1: published architecture table fidelity --------------------

Check criterion_table2() {
    Check c;
    const auto start = Clock::now();
    const auto spec = netspec::hr_celestialnet_spec();
    const auto entries = netspec::compare_table2(spec);
    (void)netspec::count_params(spec, true);
    (void)netspec::estimate_memory(spec, 4);
    const double elapsed = ms_since(start);

    c.require(entries.size() == 22, "expected 22 rows");
    for (const auto& e : entries) {
        if (e.published.row == 7) {
            c.require(e.out_w == 249, "row 7 computed width must be 249");
            c.require(e.erratum, "row 7 must carry the erratum flag");
            c.require(e.out_c == 128 && e.out_h == 121, "row 7 channel/height mismatch");
        } else {
            c.require(e.shape_match, "row " + std::to_string(e.published.row) + " shape mismatch");
        }
        c.require(e.params_match,
                  "row " + std::to_string(e.published.row) + " parameter mismatch");
    }
    c.require(elapsed < 1000.0, "analysis exceeded 1 s");
    c.note("22 rows, row-7 erratum flagged, " + std::to_string(elapsed) + " ms");
    return c;
}

// --- criterion 2: model size ------------------------------------------------

Check criterion_model_size() {
    Check c;
    const auto spec = netspec::hr_celestialnet_spec();
    const auto without_bn = netspec::count_params(spec, false).total;
    const auto with_bn = netspec::count_params(spec, true).total;
    const auto report = netspec::estimate_memory(spec, 4);
    c.require(without_bn == 97041282ull,
              "params w/o batchnorm = " + std::to_string(without_bn));
    c.require(with_bn == 97048130ull, "params w/ batchnorm = " + std::to_string(with_bn));
    c.require(std::abs(report.param_mb() - 370.21) < 0.01,
              "param MB = " + std::to_string(report.param_mb()));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "97,041,282 / 97,048,130 params, %.4f MB", report.param_mb());
    c.note(buf);
    return c;
}

// --- criterion 3: input-size accounting -------------------------------------

Check criterion_input_size() {
    Check c;
    const auto full = netspec::input_bytes(1, 2048, 4096, 4);
    const auto resize = netspec::input_bytes(1, 224, 448, 4);
    const double full_mb = static_cast<double>(full) / (1024.0 * 1024.0);
    const double resize_mb = static_cast<double>(resize) / (1024.0 * 1024.0);
    c.require(full == 134217728ull, "full input bytes = " + std::to_string(full));
    c.require(full_mb == 128.0, "full input MB must be exactly 128");
    c.require(std::abs(resize_mb - 1.53) < 0.005, "resize input MB = " + std::to_string(resize_mb));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.0f MB full, %.5f MB resized", full_mb, resize_mb);
    c.note(buf);
    return c;
}

// --- criterion 4: estimated total size --------------------------------------

Check criterion_total_size() {
    Check c;
    const auto report = netspec::estimate_memory(netspec::hr_celestialnet_spec(), 4);
    const double rel = std::abs(report.total_gb() - 32.79) / 32.79;
    c.require(rel < 0.15, "relative deviation " + std::to_string(rel));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f GB vs published 32.79 (%.2f%% off)", report.total_gb(),
                  rel * 100.0);
    c.note(buf);
    return c;
}

// --- criterion 5: crop geometry ---------------------------------------------

fits::ImageHdu build_raw(preprocess::Chip chip,
                         const std::function<float(std::size_t, std::size_t, bool)>& pix) {
    using preprocess::Chip;
    const bool acs = chip == Chip::wfc1 || chip == Chip::wfc2;
    const std::size_t w = acs ? 4144 : 4206, h = acs ? 2068 : 2070;
    std::vector<float> values(w * h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            bool science;
            if (acs) {
                const std::size_t row0 = chip == Chip::wfc1 ? 0 : 20;
                science = col >= 24 && col < 4120 && r >= row0 && r < row0 + 2048;
            } else {
                const std::size_t row0 = chip == Chip::uvis1 ? 0 : 19;
                const bool sci_col = (col >= 25 && col < 2073) || (col >= 2133 && col < 4181);
                science = sci_col && r >= row0 && r < row0 + 2051;
            }
            values[r * w + col] = pix(r, col, science);
        }
    }
    return fits::make_image_hdu(w, h, std::move(values), 0.0, 1.0);
}

Check criterion_geometry() {
    Check c;
    using preprocess::Chip;
    const auto start = Clock::now();

    for (Chip chip : {Chip::wfc1, Chip::wfc2, Chip::uvis1, Chip::uvis2}) {
        const auto sentinel = build_raw(
            chip, [](std::size_t, std::size_t, bool sci) { return sci ? 7.0f : -999.0f; });
        const auto cropped = preprocess::crop_raw(sentinel, chip);
        c.require(cropped.height == 2048 && cropped.width == 4096,
                  std::string(preprocess::chip_name(chip)) + " crop dims wrong");
        bool clean = true;
        for (float v : cropped.values)
            if (v != 7.0f) clean = false;
        c.require(clean, std::string(preprocess::chip_name(chip)) +
                             " crop leaked an overscan/prescan pixel");
    }

    const auto row_ramp = [](std::size_t r, std::size_t, bool) { return static_cast<float>(r); };
    const auto col_ramp = [](std::size_t, std::size_t col, bool) {
        return static_cast<float>(col);
    };
    c.require(preprocess::crop_raw(build_raw(Chip::wfc1, row_ramp), Chip::wfc1).at(0, 0) == 0.0f,
              "WFC1 row offset");
    c.require(preprocess::crop_raw(build_raw(Chip::wfc2, row_ramp), Chip::wfc2).at(0, 0) == 20.0f,
              "WFC2 row offset");
    c.require(preprocess::crop_raw(build_raw(Chip::uvis1, row_ramp), Chip::uvis1).at(0, 0) == 0.0f,
              "UVIS1 row offset");
    c.require(preprocess::crop_raw(build_raw(Chip::uvis2, row_ramp), Chip::uvis2).at(0, 0) ==
                  22.0f,
              "UVIS2 row offset");
    const auto uvis_cols = preprocess::crop_raw(build_raw(Chip::uvis1, col_ramp), Chip::uvis1);
    c.require(uvis_cols.at(0, 2047) == 2072.0f, "UVIS half boundary left");
    c.require(uvis_cols.at(0, 2048) == 2133.0f, "UVIS half boundary right");
    const auto acs_cols = preprocess::crop_raw(build_raw(Chip::wfc1, col_ramp), Chip::wfc1);
    c.require(acs_cols.at(0, 0) == 24.0f && acs_cols.at(0, 4095) == 4119.0f, "ACS column window");

    const double elapsed = ms_since(start);
    c.require(elapsed < 5000.0, "geometry checks exceeded 5 s");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "4 chips, sentinel + ramps, %.0f ms", elapsed);
    c.note(buf);
    return c;
}

// --- criterion 6: gradient correctness ---------------------------------------

Check criterion_gradients() {
    Check c;
    const auto start = Clock::now();
    const int trials = 100;

    struct Op {
        const char* name;
        double (*trial)(std::mt19937_64&);
    };
    const Op ops[] = {
        {"conv2d", testing::check_conv_trial},
        {"maxpool2d", testing::check_maxpool_trial},
        {"relu", testing::check_relu_trial},
        {"batchnorm2d", testing::check_batchnorm_trial},
        {"linear", testing::check_linear_trial},
        {"adaptive_avg_pool2d", testing::check_adaptive_avg_pool_trial},
        {"softmax", testing::check_softmax_trial},
        {"cross_entropy", testing::check_cross_entropy_trial},
    };

    double worst = 0.0;
    for (const Op& op : ops) {
        std::mt19937_64 rng(0xC0FFEEull);
        double op_worst = 0.0;
        for (int t = 0; t < trials; ++t) op_worst = std::max(op_worst, op.trial(rng));
        worst = std::max(worst, op_worst);
        c.require(op_worst < 1e-4,
                  std::string(op.name) + " worst rel err " + std::to_string(op_worst));
    }
    const double elapsed = ms_since(start);
    c.require(elapsed < 120000.0, "gradient checks exceeded 2 min");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "8 ops x %d trials, worst rel err %.2e, %.1f s", trials, worst,
                  elapsed / 1000.0);
    c.note(buf);
    return c;
}

// --- criterion 7: tiny-variant training sanity --------------------------------

std::vector<runtime::LabeledImage<float>> tiny_training_set(const netspec::NetSpec& spec) {
    const auto model = cli::detail::flat_model(1e-8, 0.6);
    dataset::ExposureConfig exposure;
    exposure.t = 60.0;
    exposure.a_eff = 4.52;
    exposure.gain = 1.5;
    exposure.read_noise_sigma = 3.0;
    exposure.sky_level = 20.0;

    std::vector<runtime::LabeledImage<float>> set;
    for (int i = 0; i < 8; ++i) {
        dataset::SceneSpec scene;
        scene.kind = i < 4 ? dataset::SceneSpec::Kind::galaxy_blob
                           : dataset::SceneSpec::Kind::point_field;
        scene.height = spec.input_h;
        scene.width = spec.input_w;
        scene.num_points = 25;
        const auto sample =
            dataset::synthesize_sample(scene, exposure, model, 1000 + i, "T" + std::to_string(i));
        const auto norm = preprocess::to_float_normalized(sample.pixels);
        runtime::LabeledImage<float> img;
        img.image = nn::Tensor<float>({1, norm.height, norm.width}, norm.values);
        img.label = static_cast<std::size_t>(sample.label);
        img.id = sample.body_id;
        set.push_back(std::move(img));
    }
    return set;
}

Check criterion_training() {
    Check c;
    const auto start = Clock::now();
    const auto spec = netspec::tiny_celestialnet_spec();
    auto net = runtime::make_network<float>(spec, 2024);
    const auto set = tiny_training_set(spec);

    runtime::TrainConfig config;
    config.batch_size = 4;
    config.lr = 1e-3;  // the published 1e-4, scaled x10
    config.epochs = 200;
    config.seed = 7;

    const auto log = runtime::train(net, set, config);
    std::size_t first_perfect = 0;
    for (const auto& e : log.epochs) {
        if (e.accuracy == 1.0) {
            first_perfect = e.epoch;
            break;
        }
    }
    const double elapsed = ms_since(start);
    c.require(first_perfect > 0, "never reached 100% training accuracy in 200 epochs");
    c.require(elapsed < 300000.0, "training exceeded 5 min");
    for (const auto& e : log.epochs)
        c.require(std::isfinite(e.loss), "non-finite loss at epoch " + std::to_string(e.epoch));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "100%% train acc first reached at epoch %zu, %.1f s",
                  first_perfect, elapsed / 1000.0);
    c.note(buf);
    return c;
}

// --- criterion 8: full-size forward smoke -------------------------------------

Check criterion_full_forward() {
    Check c;
    const auto spec = netspec::hr_celestialnet_spec();
    const auto budget = netspec::estimate_memory(spec, 1);

    const std::size_t rss_before_kb = read_proc_status_kb("VmRSS:");
    auto net = runtime::make_network<float>(spec, 5);

    nn::Tensor<float> input = nn::Tensor<float>::zeros({1, 1, 2048, 4096});
    std::mt19937_64 rng(17);
    for (auto& v : input.data) v = static_cast<float>(rnd::uniform(rng, 0.0, 1.0));

    const auto start = Clock::now();
    runtime::ForwardTrace trace;
    const auto probs = runtime::forward_pass(net, input, &trace);
    const double elapsed = ms_since(start);

    const std::size_t peak_after_kb = peak_rss_kb();
    const double additional_bytes =
        peak_after_kb > rss_before_kb ? (peak_after_kb - rss_before_kb) * 1024.0 : 0.0;

    c.require(std::abs(probs.data[0] + probs.data[1] - 1.0f) < 1e-5, "probabilities must sum to 1");
    c.require(trace.pre_flatten_shape == std::vector<std::size_t>{512, 3, 11},
              "pre-flatten feature map is not 512x3x11");
    c.require(elapsed < 120000.0, "forward pass exceeded 2 min");
    // The forward materializes at least the parameters plus the widest
    // activation, so a reading this small means the measurement is broken.
    c.require(additional_bytes > 256.0 * 1024.0 * 1024.0,
              "peak-memory measurement implausibly small");
    c.require(additional_bytes < static_cast<double>(budget.estimated_total_bytes),
              "peak additional memory above the resource estimate");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.1f s, peak +%.2f GB vs %.2f GB estimate", elapsed / 1000.0,
                  additional_bytes / (1024.0 * 1024.0 * 1024.0),
                  static_cast<double>(budget.estimated_total_bytes) /
                      (1024.0 * 1024.0 * 1024.0));
    c.note(buf);
    return c;
}

// --- criterion 9: blurry-set metric fixtures ----------------------------------

Check criterion_metrics_fixtures() {
    Check c;
    const struct {
        metrics::ConfusionMatrix cm;
        double percent;
    } expected[] = {
        {{72, 17, 1, 26}, 84.48},
        {{72, 24, 1, 19}, 78.45},
        {{69, 24, 4, 19}, 75.86},
        {{55, 11, 18, 32}, 75.00},
    };
    for (const auto& e : expected) {
        const double acc = metrics::accuracy(e.cm) * 100.0;
        c.require(std::abs(acc - e.percent) < 0.01,
                  "CM yields " + std::to_string(acc) + "%, expected " + std::to_string(e.percent));
    }
    const auto& shipped = metrics::lcid_blurry_fixtures();
    c.require(shipped.size() == 4, "expected 4 shipped fixtures");
    for (std::size_t i = 0; i < shipped.size(); ++i) {
        c.require(shipped[i].cm.tp == expected[i].cm.tp && shipped[i].cm.fp == expected[i].cm.fp &&
                      shipped[i].cm.fn == expected[i].cm.fn &&
                      shipped[i].cm.tn == expected[i].cm.tn,
                  "shipped fixture " + std::to_string(i) + " differs");
    }
    c.note("84.48 / 78.45 / 75.86 / 75.00 within 0.01 pp");
    return c;
}

// --- criterion 10: electron-flux quadrature -----------------------------------

Check criterion_flux() {
    Check c;
    const double l1 = 370e-9, l2 = 1100e-9, s0 = 2e-9, t = 90.0, a = 4.52;
    dataset::ThroughputModel model;
    const std::size_t points = 10001;
    model.lambda_grid.resize(points);
    model.sed.assign(points, s0);
    model.throughput.assign(points, 1.0);
    for (std::size_t i = 0; i < points; ++i)
        model.lambda_grid[i] =
            l1 + (l2 - l1) * static_cast<double>(i) / static_cast<double>(points - 1);

    const double computed = dataset::electron_flux(model, t, a);
    const double closed =
        t * a * s0 * (l2 * l2 - l1 * l1) / (2.0 * dataset::kPlanck * dataset::kSpeedOfLight);
    const double rel = std::abs(computed - closed) / closed;
    c.require(rel < 1e-6, "quadrature rel err " + std::to_string(rel));

    const double base = dataset::electron_flux(model, t, a);
    c.require(dataset::electron_flux(model, 2.0 * t, a) == 2.0 * base, "not linear in t");
    c.require(dataset::electron_flux(model, t, 2.0 * a) == 2.0 * base, "not linear in A_eff");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "rel err %.2e on 10,001 points; doubling exact", rel);
    c.note(buf);
    return c;
}

// --- criterion 11: leakage property --------------------------------------------

Check criterion_leakage() {
    Check c;
    std::mt19937_64 rng(31337);
    std::size_t trials_run = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<dataset::ManifestEntry> manifest;
        std::size_t bodies[2] = {3 + rng() % 23, 3 + rng() % 23};
        for (int cat = 0; cat < 2; ++cat) {
            for (std::size_t b = 0; b < bodies[cat]; ++b) {
                dataset::ManifestEntry e;
                e.body_id = std::string(cat == 0 ? "G" : "N") + std::to_string(b);
                e.category = cat == 0 ? dataset::Category::galaxy : dataset::Category::nsc;
                e.obsid = "o";
                e.filter = "F";
                e.hdu_index = 1;
                e.path = e.body_id;
                const std::size_t copies = 1 + rng() % 4;
                for (std::size_t i = 0; i < copies; ++i) manifest.push_back(e);
            }
        }
        rnd::shuffle_deterministic(manifest, rng);

        const auto split = dataset::split_by_body(manifest, 0.8, rng());
        ++trials_run;

        std::set<std::string> train_bodies;
        for (const auto& e : split.train) train_bodies.insert(e.body_id);
        for (const auto& e : split.test)
            if (train_bodies.count(e.body_id)) {
                c.require(false, "body leak in trial " + std::to_string(trial));
                return c;
            }
        c.require(split.train.size() + split.test.size() == manifest.size(),
                  "split dropped or duplicated entries");

        const auto counts = dataset::count_split_side(split.train);
        for (int cat = 0; cat < 2; ++cat) {
            const double want = std::floor(0.8 * static_cast<double>(bodies[cat]) + 0.5);
            const double got = static_cast<double>(counts.bodies_per_category[cat]);
            c.require(std::abs(got - want) <= 1.0,
                      "train bodies " + std::to_string(got) + " vs round " +
                          std::to_string(want));
        }
        if (!c.ok) return c;
    }
    c.note(std::to_string(trials_run) + " randomized trials, zero leaks");
    return c;
}

// --- criterion 12: published results labeled reference-only --------------------

Check criterion_reference_only() {
    Check c;
    const fs::path report_path =
        fs::temp_directory_path() / "celestine_acceptance_eval_report.json";
    cli::EvalOptions opt;
    opt.cm_fixture = "hr_celestialnet";
    opt.report = report_path.string();
    std::ostringstream sink;
    c.require(cli::cmd_eval(opt, sink) == 0, "eval command failed");

    std::ifstream in(report_path);
    const auto report = nlohmann::json::parse(in);
    c.require(report.contains("published_reference"), "missing published_reference block");
    const auto& ref = report["published_reference"];
    c.require(ref["accuracy_percent"] == 89.09, "published accuracy must be echoed verbatim");
    c.require(ref["f1_galaxy_percent"] == 90.20, "published galaxy F1 must be echoed verbatim");
    c.require(ref["f1_nsc_percent"] == 87.69, "published NSC F1 must be echoed verbatim");
    const std::string note = ref["note"].get<std::string>();
    c.require(note.find("reference-only") != std::string::npos,
              "reference block must be labeled reference-only");
    c.require(note.find("not reproducible") != std::string::npos,
              "reference block must state non-reproducibility");
    fs::remove(report_path);
    c.note("eval report labels published results reference-only");
    return c;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        Check (*run)();
    };
    const Criterion criteria[] = {
        {1, "Table 2 fidelity (shapes, parameters, row-7 erratum)", criterion_table2},
        {2, "Model size (parameter counts, 370.21 MB)", criterion_model_size},
        {3, "Input-size accounting (128 MB / 1.53 MB)", criterion_input_size},
        {4, "Estimated total size (32.79 GB +/- 15%)", criterion_total_size},
        {5, "Crop geometry (sentinel and ramp fixtures)", criterion_geometry},
        {6, "Gradient correctness (central differences)", criterion_gradients},
        {7, "Training sanity (tiny variant overfits 8 samples)", criterion_training},
        {8, "Full-size forward smoke (time and memory)", criterion_full_forward},
        {9, "Blurry-set metric fixtures", criterion_metrics_fixtures},
        {10, "Electron-flux quadrature and linearity", criterion_flux},
        {11, "Leakage-free splitting (1000 trials)", criterion_leakage},
        {12, "Published results labeled reference-only", criterion_reference_only},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        Check result;
        try {
            result = criterion.run();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("exception: ") + e.what();
        }
        std::printf("criterion %2d [%s] %s%s%s\n", criterion.id, result.ok ? "PASS" : "FAIL",
                    criterion.name, result.detail.empty() ? "" : " -- ",
                    result.detail.c_str());
        std::fflush(stdout);
        if (!result.ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
