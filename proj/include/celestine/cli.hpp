#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "celestine/dataset.hpp"
#include "celestine/fits.hpp"
#include "celestine/fixtures.hpp"
#include "celestine/metrics.hpp"
#include "celestine/netspec.hpp"
#include "celestine/parallel.hpp"
#include "celestine/preprocess.hpp"
#include "celestine/runtime.hpp"
#include "celestine/synth.hpp"

namespace celestine::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_report(const std::string& path, const nlohmann::json& report) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report " + path);
    out << report.dump(2) << "\n";
}

inline netspec::NetSpec resolve_spec(const std::string& name_or_path) {
    if (name_or_path.empty() || name_or_path == "hr_celestialnet")
        return netspec::hr_celestialnet_spec();
    if (name_or_path == "tiny_celestialnet") return netspec::tiny_celestialnet_spec();
    return netspec::parse_netspec(read_file(name_or_path));
}

inline void save_grid_fits(const preprocess::Grid& grid, const fs::path& path) {
    fits::FitsFile file;
    file.primary_header = fits::primary_header_only();
    file.extensions.emplace_back(
        fits::make_image_hdu(grid.width, grid.height, grid.values));
    const auto bytes = fits::write_fits(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

inline preprocess::Grid load_grid_fits(const fs::path& path, std::size_t hdu_index) {
    const fits::FitsFile file = fits::parse_fits(read_file(path));
    const fits::ImageHdu& hdu = fits::extract_image(file, hdu_index);
    preprocess::Grid grid(hdu.height, hdu.width);
    grid.values = hdu.pixels;
    return grid;
}

/// Loads manifest entries as normalized single-channel tensors, checking
/// them against the spec's input dimensions.
inline std::vector<runtime::LabeledImage<float>> load_labeled_images(
    const std::vector<dataset::ManifestEntry>& entries, const netspec::NetSpec& spec) {
    std::vector<runtime::LabeledImage<float>> images(entries.size());
    parallel::parallel_for(entries.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& e = entries[i];
            preprocess::Grid grid = load_grid_fits(e.path, e.hdu_index);
            if (grid.height != spec.input_h || grid.width != spec.input_w)
                throw std::runtime_error("sample " + e.path + " is " +
                                         std::to_string(grid.height) + "x" +
                                         std::to_string(grid.width) + " but the spec expects " +
                                         std::to_string(spec.input_h) + "x" +
                                         std::to_string(spec.input_w));
            const preprocess::Grid norm = preprocess::to_float_normalized(grid);
            images[i].image = nn::Tensor<float>({1, norm.height, norm.width}, norm.values);
            images[i].label = static_cast<std::size_t>(e.category);
            images[i].id = e.body_id + "/" + e.obsid + "#" + std::to_string(e.hdu_index);
        }
    });
    return images;
}

inline dataset::ThroughputModel flat_model(double sed_level, double throughput,
                                           std::size_t points = 401) {
    dataset::ThroughputModel model;
    const double lo = 370e-9, hi = 1100e-9;
    model.lambda_grid.resize(points);
    model.sed.assign(points, sed_level);
    model.throughput.assign(points, throughput);
    for (std::size_t i = 0; i < points; ++i)
        model.lambda_grid[i] =
            lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return model;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
    std::string spec = "hr_celestialnet";
    std::size_t batch = 4;
    std::string report;
};

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out = std::cout) {
    const netspec::NetSpec spec = detail::resolve_spec(opt.spec);
    const netspec::ShapeReport shapes = netspec::propagate_shapes(spec);
    const netspec::ParamReport params_no_bn = netspec::count_params(spec, false);
    const netspec::ParamReport params_bn = netspec::count_params(spec, true);
    const netspec::ResourceReport resources = netspec::estimate_memory(spec, opt.batch);
    const netspec::Table3Reference table3 = netspec::table3_reference();

    nlohmann::json report;
    report["spec"] = opt.spec;
    report["batch"] = opt.batch;

    out << "Architecture analysis (" << opt.spec << "), input " << spec.input_c << "x"
        << spec.input_h << "x" << spec.input_w << "\n\n";

    // Published-table comparison is only defined for the canonical layout.
    bool all_match = true;
    std::optional<std::vector<netspec::Table2Entry>> table2;
    try {
        table2 = netspec::compare_table2(spec);
    } catch (const netspec::SpecError&) {
        table2.reset();
    }

    char buf[200];
    if (table2) {
        out << "  row  type             kernel stride  output (computed)   paras      "
               "published           status\n";
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& e : *table2) {
            std::string computed = e.out_h == 0 ? std::to_string(e.out_c)
                                                : std::to_string(e.out_c) + "x" +
                                                      std::to_string(e.out_h) + "x" +
                                                      std::to_string(e.out_w);
            std::string published = e.published.out_h == 0
                                        ? std::to_string(e.published.out_c)
                                        : std::to_string(e.published.out_c) + "x" +
                                              std::to_string(e.published.out_h) + "x" +
                                              std::to_string(e.published.out_w);
            const bool ok = e.shape_match && e.params_match;
            const char* status = ok ? "match" : (e.erratum ? "ERRATUM" : "MISMATCH");
            if (!ok && !e.erratum) all_match = false;
            std::snprintf(buf, sizeof(buf), "  %3d  %-16s %6zu %6zu  %-18s %-10llu %-18s  %s\n",
                          e.published.row, e.published.type, e.published.kernel,
                          e.published.stride, computed.c_str(), e.params, published.c_str(),
                          status);
            out << buf;
            rows.push_back({{"row", e.published.row},
                            {"type", e.published.type},
                            {"computed", {{"c", e.out_c}, {"h", e.out_h}, {"w", e.out_w}}},
                            {"computed_params", e.params},
                            {"published",
                             {{"c", e.published.out_c},
                              {"h", e.published.out_h},
                              {"w", e.published.out_w},
                              {"params", e.published.params}}},
                            {"shape_match", e.shape_match},
                            {"params_match", e.params_match},
                            {"erratum", e.erratum}});
        }
        report["table2"] = rows;
        report["table2_matches_except_erratum"] = all_match;
        for (const auto& e : *table2)
            if (e.erratum)
                out << "\n  note: published row " << e.published.row << " width "
                    << e.published.out_w << " is inconsistent with its neighbouring rows; "
                    << "the propagated value is " << e.out_w << ".\n";
    } else {
        out << "  layer  kind               output\n";
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "  %5zu  %-18s %s\n", i,
                          netspec::kind_name(spec.layers[i].kind),
                          shapes.after_layer[i].str().c_str());
            out << buf;
        }
        out << "  (layout does not line up with the published table; no comparison)\n";
    }

    out << "\nTrainable parameters\n";
    std::snprintf(buf, sizeof(buf), "  without batchnorm : %llu\n", params_no_bn.total);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  with batchnorm    : %llu\n", params_bn.total);
    out << buf;
    report["params"] = {{"without_batchnorm", params_no_bn.total},
                        {"with_batchnorm", params_bn.total}};

    out << "\nResource estimate (batch " << opt.batch << ", " << resources.bytes_per_element
        << " B per element)\n";
    std::snprintf(buf, sizeof(buf), "  input size        : %.2f MB\n", resources.input_mb());
    out << buf;
    std::snprintf(buf, sizeof(buf), "  model size        : %.2f MB (published %.2f)\n",
                  resources.param_mb(), table3.model_mb);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  estimated total   : %.2f GB (published %.2f)\n",
                  resources.total_gb(), table3.total_gb);
    out << buf;
    const double resize_mb = static_cast<double>(netspec::input_bytes(
                                 1, preprocess::kResizeHeight, preprocess::kResizeWidth,
                                 opt.batch)) /
                             (1024.0 * 1024.0);
    std::snprintf(buf, sizeof(buf),
                  "  input reference   : %.2f MB at 2048x4096, %.2f MB at 224x448 (published "
                  "%.0f / %.2f)\n",
                  static_cast<double>(netspec::input_bytes(1, 2048, 4096, opt.batch)) /
                      (1024.0 * 1024.0),
                  resize_mb, table3.input_mb_full, table3.input_mb_resize);
    out << buf;

    report["resource"] = {{"input_bytes", resources.input_bytes},
                          {"input_mb", resources.input_mb()},
                          {"param_bytes", resources.param_bytes},
                          {"param_mb", resources.param_mb()},
                          {"activation_bytes", resources.activation_bytes},
                          {"estimated_total_bytes", resources.estimated_total_bytes},
                          {"estimated_total_gb", resources.total_gb()}};
    report["input_reference_mb"] = {
        {"full", static_cast<double>(netspec::input_bytes(1, 2048, 4096, opt.batch)) /
                     (1024.0 * 1024.0)},
        {"resize", resize_mb}};
    detail::write_report(opt.report, report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessOptions {
    std::string manifest;
    std::string out_dir;
    std::string cache_dir;  // defaults to <out_dir>/raw-cache
    bool resize = false;
    std::string report;
};

inline int cmd_preprocess(const PreprocessOptions& opt, std::ostream& out = std::cout) {
    const auto entries = dataset::load_manifest(fs::path(opt.manifest));
    const fs::path out_dir(opt.out_dir);
    const fs::path cache_dir =
        opt.cache_dir.empty() ? out_dir / "raw-cache" : fs::path(opt.cache_dir);
    fs::create_directories(out_dir);
    if (opt.resize) fs::create_directories(out_dir / "resize");

    const dataset::FetchReport fetch = dataset::fetch_manifest_files(entries, cache_dir);

    struct ItemResult {
        bool ok = false;
        std::string error;
        dataset::ManifestEntry cropped;
        dataset::ManifestEntry resized;
    };
    std::vector<ItemResult> items(entries.size());

    parallel::parallel_for(entries.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            ItemResult& item = items[i];
            const dataset::ManifestEntry& e = entries[i];
            try {
                if (fetch.results[i].status == dataset::FetchStatus::failed)
                    throw std::runtime_error("fetch failed: " + fetch.results[i].reason);
                const fits::FitsFile file =
                    fits::parse_fits(detail::read_file(fetch.results[i].dest));
                const fits::ImageHdu& hdu = fits::extract_image(file, e.hdu_index);
                const preprocess::Chip chip =
                    preprocess::chip_for_hdu(hdu, e.instrument, e.hdu_index);
                const preprocess::Grid cropped = preprocess::crop_raw(hdu, chip);

                const std::string stem =
                    e.body_id + "_" + e.obsid + "_h" + std::to_string(e.hdu_index);
                const fs::path cropped_path = out_dir / (stem + ".fits");
                detail::save_grid_fits(cropped, cropped_path);
                item.cropped = e;
                item.cropped.path = cropped_path.string();
                item.cropped.hdu_index = 1;
                item.cropped.sha256.clear();

                if (opt.resize) {
                    const preprocess::Grid small = preprocess::resize_bilinear(
                        cropped, preprocess::kResizeHeight, preprocess::kResizeWidth);
                    const fs::path resized_path = out_dir / "resize" / (stem + ".fits");
                    detail::save_grid_fits(small, resized_path);
                    item.resized = item.cropped;
                    item.resized.path = resized_path.string();
                }
                item.ok = true;
            } catch (const std::exception& ex) {
                item.error = ex.what();
            }
        }
    });

    std::vector<dataset::ManifestEntry> cropped_manifest, resized_manifest;
    std::size_t per_category[2] = {0, 0};
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].ok) {
            cropped_manifest.push_back(items[i].cropped);
            if (opt.resize) resized_manifest.push_back(items[i].resized);
            ++per_category[static_cast<int>(entries[i].category)];
        } else {
            failures.push_back({{"path", entries[i].path}, {"error", items[i].error}});
        }
    }
    dataset::save_manifest(cropped_manifest, out_dir / "manifest.csv");
    if (opt.resize) dataset::save_manifest(resized_manifest, out_dir / "resize" / "manifest.csv");

    out << "preprocessed " << cropped_manifest.size() << "/" << entries.size() << " samples ("
        << per_category[0] << " galaxy, " << per_category[1] << " nsc)";
    if (opt.resize) out << ", resize variants in " << (out_dir / "resize").string();
    out << "\n";
    for (const auto& f : failures)
        out << "  failed: " << f["path"].get<std::string>() << ": "
            << f["error"].get<std::string>() << "\n";

    nlohmann::json report = {
        {"total", entries.size()},
        {"preprocessed", cropped_manifest.size()},
        {"galaxy", per_category[0]},
        {"nsc", per_category[1]},
        {"resize", opt.resize},
        {"fetched", fetch.fetched},
        {"skipped", fetch.skipped},
        {"failures", failures},
        {"manifest", (out_dir / "manifest.csv").string()},
    };
    detail::write_report(opt.report, report);
    return failures.empty() ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitOptions {
    std::string manifest;
    double ratio = 0.8;
    std::uint64_t seed = 0;
    std::string out_train = "train.csv";
    std::string out_test = "test.csv";
    std::string report;
};

inline int cmd_split(const SplitOptions& opt, std::ostream& out = std::cout) {
    const auto entries = dataset::load_manifest(fs::path(opt.manifest));
    const dataset::SplitResult split = dataset::split_by_body(entries, opt.ratio, opt.seed);
    dataset::save_manifest(split.train, fs::path(opt.out_train));
    dataset::save_manifest(split.test, fs::path(opt.out_test));
    const nlohmann::json summary = dataset::format_split_summary(split, opt.ratio);
    out << summary.dump(2) << "\n";
    detail::write_report(opt.report, summary);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string out_dir;
    std::size_t per_class = 1;  // raw files per class (two samples per file)
    std::uint64_t seed = 0;
    double t = 60.0;
    double a_eff = 4.52;
    double gain = 1.5;
    double read_noise = 3.0;
    double sky = 30.0;
    double sed_level = 1e-6;
    double throughput = 0.6;
    bool small = false;  // emit bare tiny-spec samples instead of raw frames
    std::string report;
};

inline int cmd_synth(const SynthOptions& opt, std::ostream& out = std::cout) {
    const fs::path out_dir(opt.out_dir);
    fs::create_directories(out_dir);
    const dataset::ThroughputModel model = detail::flat_model(opt.sed_level, opt.throughput);
    dataset::ExposureConfig exposure;
    exposure.t = opt.t;
    exposure.a_eff = opt.a_eff;
    exposure.gain = opt.gain;
    exposure.read_noise_sigma = opt.read_noise;
    exposure.sky_level = opt.sky;

    const netspec::NetSpec tiny = netspec::tiny_celestialnet_spec();
    std::vector<dataset::ManifestEntry> manifest;
    std::uint64_t draw = 0;
    for (int cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < opt.per_class; ++i) {
            dataset::SceneSpec scene;
            scene.kind = cls == 0 ? dataset::SceneSpec::Kind::galaxy_blob
                                  : dataset::SceneSpec::Kind::point_field;
            char body[32];
            std::snprintf(body, sizeof(body), "SYN%s%03zu", cls == 0 ? "GAL" : "NSC", i + 1);
            char obsid[32];
            std::snprintf(obsid, sizeof(obsid), "syn%05llu",
                          static_cast<unsigned long long>(opt.seed * 1000 + draw));

            dataset::ManifestEntry entry;
            entry.body_id = body;
            entry.category = cls == 0 ? dataset::Category::galaxy : dataset::Category::nsc;
            entry.instrument = dataset::Instrument::acs_wfc;
            entry.obsid = obsid;
            entry.filter = "F555W";
            entry.ra_deg = 10.0 + static_cast<double>(draw);
            entry.dec_deg = -5.0 - static_cast<double>(draw);

            if (opt.small) {
                scene.height = tiny.input_h;
                scene.width = tiny.input_w;
                const auto sample = dataset::synthesize_sample(scene, exposure, model,
                                                               opt.seed + draw, body);
                const fs::path path = out_dir / (std::string(body) + ".fits");
                detail::save_grid_fits(sample.pixels, path);
                entry.hdu_index = 1;
                entry.path = path.string();
                manifest.push_back(entry);
                ++draw;
            } else {
                const auto sample1 = dataset::synthesize_sample(scene, exposure, model,
                                                                opt.seed + draw, body);
                const auto sample2 = dataset::synthesize_sample(scene, exposure, model,
                                                                opt.seed + draw + 1, body);
                draw += 2;
                const fits::FitsFile file = fixtures::make_raw_fits(
                    sample1.pixels, preprocess::Chip::wfc2, sample2.pixels,
                    preprocess::Chip::wfc1, 2500.0f, obsid);
                const fs::path path = out_dir / (std::string(obsid) + "_raw.fits");
                const auto bytes = fits::write_fits(file);
                detail::write_file(path, std::string(bytes.begin(), bytes.end()));
                for (std::size_t hdu : {std::size_t(1), std::size_t(4)}) {
                    entry.hdu_index = hdu;
                    entry.path = path.string();
                    manifest.push_back(entry);
                }
            }
        }
    }
    dataset::save_manifest(manifest, out_dir / "manifest.csv");
    out << "synthesized " << manifest.size() << " samples ("
        << (opt.small ? "bare tiny-size images" : "raw-frame files") << ") into "
        << out_dir.string() << "\n";
    nlohmann::json report = {{"samples", manifest.size()},
                             {"manifest", (out_dir / "manifest.csv").string()},
                             {"small", opt.small},
                             {"seed", opt.seed}};
    detail::write_report(opt.report, report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string manifest;
    std::string spec = "hr_celestialnet";
    runtime::TrainConfig config;
    std::string checkpoint = "model.ckpt";
    std::string log;
    std::string report;
};

inline int cmd_train(const TrainOptions& opt, std::ostream& out = std::cout) {
    const netspec::NetSpec spec = detail::resolve_spec(opt.spec);
    const auto entries = dataset::load_manifest(fs::path(opt.manifest));
    const auto samples = detail::load_labeled_images(entries, spec);

    runtime::Network<float> net = runtime::make_network<float>(spec, opt.config.seed);
    const runtime::TrainLog log = runtime::train(net, samples, opt.config);
    out << log.text();
    if (!opt.log.empty()) detail::write_file(opt.log, log.text());
    runtime::save_checkpoint(net, fs::path(opt.checkpoint));

    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : log.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_acc", e.accuracy}});
    nlohmann::json report = {{"samples", samples.size()},
                             {"epochs", epochs},
                             {"final_loss", log.epochs.back().loss},
                             {"final_train_acc", log.epochs.back().accuracy},
                             {"checkpoint", opt.checkpoint}};
    detail::write_report(opt.report, report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string manifest;
    std::string spec = "hr_celestialnet";
    std::string checkpoint;
    std::string cm;          // "tp,fp,fn,tn" to evaluate a fixed confusion matrix
    std::string cm_fixture;  // named blurry-set fixture
    std::string report;
};

inline nlohmann::json published_reference_block() {
    return {{"note",
             "published full-dataset results; reference-only, not reproducible at desk scale"},
            {"accuracy_percent", 89.09},
            {"f1_galaxy_percent", 90.20},
            {"f1_nsc_percent", 87.69}};
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out = std::cout) {
    metrics::ConfusionMatrix cm;
    nlohmann::json source;
    if (!opt.cm_fixture.empty()) {
        const auto& fixtures = metrics::lcid_blurry_fixtures();
        const auto it = std::find_if(fixtures.begin(), fixtures.end(), [&](const auto& f) {
            return opt.cm_fixture == f.model;
        });
        if (it == fixtures.end()) {
            std::string names;
            for (const auto& f : fixtures) names += std::string(" ") + f.model;
            throw netspec::SpecError("unknown fixture '" + opt.cm_fixture + "'; available:" +
                                     names);
        }
        cm = it->cm;
        source = {{"cm_fixture", opt.cm_fixture}, {"reported_accuracy_percent", it->reported_accuracy}};
    } else if (!opt.cm.empty()) {
        unsigned long long tp, fp, fn, tn;
        if (std::sscanf(opt.cm.c_str(), "%llu,%llu,%llu,%llu", &tp, &fp, &fn, &tn) != 4)
            throw netspec::SpecError("--cm expects tp,fp,fn,tn");
        cm = {tp, fp, fn, tn};
        source = {{"cm", opt.cm}};
    } else {
        if (opt.checkpoint.empty())
            throw netspec::SpecError("eval needs --checkpoint (or --cm / --cm-fixture)");
        const netspec::NetSpec spec = detail::resolve_spec(opt.spec);
        runtime::Network<float> net =
            runtime::load_checkpoint<float>(fs::path(opt.checkpoint), spec);
        const auto entries = dataset::load_manifest(fs::path(opt.manifest));
        const auto samples = detail::load_labeled_images(entries, spec);
        cm = runtime::evaluate(net, samples).cm;
        source = {{"manifest", opt.manifest}, {"checkpoint", opt.checkpoint}};
    }

    const metrics::MetricsReport metrics_report = metrics::compute_metrics(cm);
    nlohmann::json report = metrics::to_json(metrics_report);
    report["source"] = source;
    report["published_reference"] = published_reference_block();
    out << report.dump(2) << "\n";
    detail::write_report(opt.report, report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOptions {
    std::string manifest;  // raw-frame manifest; empty -> synthetic frame
    std::string spec = "tiny_celestialnet";
    std::string checkpoint;
    std::size_t repetitions = 3;
    std::uint64_t seed = 0;
    std::string report;
};

inline int cmd_bench(const BenchOptions& opt, std::ostream& out = std::cout) {
    const netspec::NetSpec spec = detail::resolve_spec(opt.spec);

    // Raw bytes per benchmark sample, parsed and cropped per iteration.
    std::vector<std::string> raw_bytes;
    std::vector<std::size_t> hdu_indices;
    std::vector<dataset::Instrument> instruments;
    if (!opt.manifest.empty()) {
        const auto entries = dataset::load_manifest(fs::path(opt.manifest));
        if (entries.empty()) throw runtime::RuntimeError("bench manifest is empty");
        for (const auto& e : entries) {
            raw_bytes.push_back(detail::read_file(e.path));
            hdu_indices.push_back(e.hdu_index);
            instruments.push_back(e.instrument);
        }
    } else {
        dataset::SceneSpec scene;
        scene.kind = dataset::SceneSpec::Kind::galaxy_blob;
        const auto sample = dataset::synthesize_sample(
            scene, dataset::ExposureConfig{60.0, 4.52, 1.5, 3.0, 30.0},
            detail::flat_model(1e-6, 0.6), opt.seed, "bench");
        const fits::FitsFile file =
            fixtures::make_raw_fits(sample.pixels, preprocess::Chip::wfc2, sample.pixels,
                                    preprocess::Chip::wfc1, 2500.0f, "bench");
        const auto bytes = fits::write_fits(file);
        raw_bytes.emplace_back(bytes.begin(), bytes.end());
        hdu_indices.push_back(1);
        instruments.push_back(dataset::Instrument::acs_wfc);
    }

    runtime::Network<float> net =
        opt.checkpoint.empty()
            ? runtime::make_network<float>(spec, opt.seed)
            : runtime::load_checkpoint<float>(fs::path(opt.checkpoint), spec);

    std::vector<nn::Tensor<float>> prepared(raw_bytes.size());
    auto preprocess_fn = [&](std::size_t i) {
        const fits::FitsFile file = fits::parse_fits(raw_bytes[i]);
        const fits::ImageHdu& hdu = fits::extract_image(file, hdu_indices[i]);
        const preprocess::Chip chip =
            preprocess::chip_for_hdu(hdu, instruments[i], hdu_indices[i]);
        preprocess::Grid grid = preprocess::crop_raw(hdu, chip);
        if (grid.height != spec.input_h || grid.width != spec.input_w)
            grid = preprocess::resize_bilinear(grid, spec.input_h, spec.input_w);
        const preprocess::Grid norm = preprocess::to_float_normalized(grid);
        prepared[i] = nn::Tensor<float>({1, 1, norm.height, norm.width}, norm.values);
    };
    auto classify_fn = [&](std::size_t i) { (void)runtime::forward_pass(net, prepared[i]); };

    const runtime::TimingReport timing =
        runtime::bench_timing(preprocess_fn, classify_fn, raw_bytes.size(), opt.repetitions);
    out << runtime::format_timing_report(timing, opt.spec);

    nlohmann::json report = {
        {"preprocessing_ms_per_sample", timing.preprocessing_ms_per_sample},
        {"classification_ms_per_sample", timing.classification_ms_per_sample},
        {"total_ms_per_sample", timing.total_ms_per_sample},
        {"samples", timing.sample_count},
        {"repetitions", timing.repetitions},
        {"published_reference",
         {{"note", "hardware-dependent; shown for comparison only"},
          {"preprocessing_lcid_ms", runtime::Table4Reference{}.preprocessing_lcid},
          {"classification_hr_celestialnet_ms",
           runtime::Table4Reference{}.classification_hr_celestialnet},
          {"total_hr_celestialnet_ms", runtime::Table4Reference{}.total_hr_celestialnet}}},
    };
    detail::write_report(opt.report, report);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Galaxy vs nebula/star-cluster classification toolchain"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (default: CELESTINE_THREADS or hardware)")
        ->envname("CELESTINE_THREADS");

    AnalyzeOptions analyze_opt;
    auto* analyze = app.add_subcommand("analyze", "architecture shapes, parameters and memory");
    analyze->add_option("--spec", analyze_opt.spec, "spec file or builtin name");
    analyze->add_option("--batch", analyze_opt.batch, "batch size for the memory estimate");
    analyze->add_option("--report", analyze_opt.report, "write a JSON report");

    PreprocessOptions pre_opt;
    auto* preprocess_cmd = app.add_subcommand("preprocess", "crop raw frames to 2048x4096 samples");
    preprocess_cmd->add_option("--manifest", pre_opt.manifest, "input manifest CSV")->required();
    preprocess_cmd->add_option("--out", pre_opt.out_dir, "output directory")->required();
    preprocess_cmd->add_option("--cache", pre_opt.cache_dir, "raw-file cache directory");
    preprocess_cmd->add_flag("--resize", pre_opt.resize, "also emit 224x448 variants");
    preprocess_cmd->add_option("--report", pre_opt.report, "write a JSON report");

    SplitOptions split_opt;
    auto* split = app.add_subcommand("split", "leakage-free body-level train/test split");
    split->add_option("--manifest", split_opt.manifest, "input manifest CSV")->required();
    split->add_option("--ratio", split_opt.ratio, "train fraction (default 0.8)");
    split->add_option("--seed", split_opt.seed, "shuffle seed");
    split->add_option("--out-train", split_opt.out_train, "train manifest path");
    split->add_option("--out-test", split_opt.out_test, "test manifest path");
    split->add_option("--report", split_opt.report, "write the JSON summary");

    SynthOptions synth_opt;
    auto* synth = app.add_subcommand("synth", "generate synthetic exposures");
    synth->add_option("--out", synth_opt.out_dir, "output directory")->required();
    synth->add_option("--per-class", synth_opt.per_class, "files per class");
    synth->add_option("--seed", synth_opt.seed, "generator seed");
    synth->add_option("--t", synth_opt.t, "exposure time (s)");
    synth->add_option("--a-eff", synth_opt.a_eff, "effective aperture area (m^2)");
    synth->add_option("--gain", synth_opt.gain, "electrons per data number");
    synth->add_option("--read-noise", synth_opt.read_noise, "read noise sigma (electrons)");
    synth->add_option("--sky", synth_opt.sky, "sky level (electrons/pixel)");
    synth->add_option("--sed-level", synth_opt.sed_level, "flat SED level (W m^-2 m^-1)");
    synth->add_option("--throughput", synth_opt.throughput, "flat system throughput");
    synth->add_flag("--small", synth_opt.small, "emit tiny-spec samples instead of raw frames");
    synth->add_option("--report", synth_opt.report, "write a JSON report");

    TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "train a network on preprocessed samples");
    train->add_option("--manifest", train_opt.manifest, "preprocessed manifest CSV")->required();
    train->add_option("--spec", train_opt.spec, "spec file or builtin name");
    train->add_option("--epochs", train_opt.config.epochs, "training epochs");
    train->add_option("--batch", train_opt.config.batch_size, "mini-batch size");
    train->add_option("--lr", train_opt.config.lr, "learning rate");
    train->add_option("--seed", train_opt.config.seed, "init/shuffle seed");
    train->add_option("--checkpoint", train_opt.checkpoint, "checkpoint output path");
    train->add_option("--log", train_opt.log, "write the epoch log");
    train->add_option("--report", train_opt.report, "write a JSON report");

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a confusion matrix");
    eval->add_option("--manifest", eval_opt.manifest, "test manifest CSV");
    eval->add_option("--spec", eval_opt.spec, "spec file or builtin name");
    eval->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint to evaluate");
    eval->add_option("--cm", eval_opt.cm, "evaluate a fixed matrix tp,fp,fn,tn");
    eval->add_option("--cm-fixture", eval_opt.cm_fixture,
                     "named blurry-set fixture (hr_celestialnet, vggnet, alexnet, resnet)");
    eval->add_option("--report", eval_opt.report, "write the metrics JSON");

    BenchOptions bench_opt;
    auto* bench = app.add_subcommand("bench", "per-sample preprocessing/classification timing");
    bench->add_option("--manifest", bench_opt.manifest, "raw-frame manifest (default: synthetic)");
    bench->add_option("--spec", bench_opt.spec, "spec file or builtin name");
    bench->add_option("--checkpoint", bench_opt.checkpoint, "checkpoint (default: seeded init)");
    bench->add_option("--reps", bench_opt.repetitions, "measured repetitions");
    bench->add_option("--seed", bench_opt.seed, "seed for the synthetic frame / init");
    bench->add_option("--report", bench_opt.report, "write a JSON report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (threads > 0) parallel::set_max_threads(threads);
        if (analyze->parsed()) return cmd_analyze(analyze_opt);
        if (preprocess_cmd->parsed()) return cmd_preprocess(pre_opt);
        if (split->parsed()) return cmd_split(split_opt);
        if (synth->parsed()) return cmd_synth(synth_opt);
        if (train->parsed()) return cmd_train(train_opt);
        if (eval->parsed()) return cmd_eval(eval_opt);
        if (bench->parsed()) return cmd_bench(bench_opt);
    } catch (const netspec::SpecError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const dataset::DatasetError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace celestine::cli
