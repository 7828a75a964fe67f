#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "celestine/digest.hpp"
#include "celestine/parallel.hpp"
#include "celestine/preprocess.hpp"
#include "celestine/random.hpp"

namespace celestine::dataset {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using preprocess::Category;
using preprocess::Instrument;

inline Category parse_category(const std::string& s) {
    if (s == "galaxy") return Category::galaxy;
    if (s == "nsc") return Category::nsc;
    throw DatasetError("unknown category '" + s + "' (expected galaxy or nsc)");
}

inline const char* category_name(Category c) {
    return c == Category::galaxy ? "galaxy" : "nsc";
}

inline Instrument parse_instrument(const std::string& s) {
    if (s == "ACS_WFC") return Instrument::acs_wfc;
    if (s == "WFC3_UVIS") return Instrument::wfc3_uvis;
    throw DatasetError("unknown instrument '" + s + "' (expected ACS_WFC or WFC3_UVIS)");
}

struct ManifestEntry {
    std::string body_id;
    Category category = Category::galaxy;
    Instrument instrument = Instrument::acs_wfc;
    std::string obsid;
    std::string filter;
    double ra_deg = 0.0;
    double dec_deg = 0.0;
    std::size_t hdu_index = 1;
    std::string path;
    std::string sha256;  // optional column, empty when absent
};

inline constexpr const char* kManifestHeader =
    "body_id,category,instrument,obsid,filter,ra_deg,dec_deg,hdu_index,path";

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace detail

/// Parses the manifest CSV. Entries come back in file order; a body that
/// appears under two categories is a schema violation.
inline std::vector<ManifestEntry> load_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DatasetError("manifest is empty (missing header)");
    {
        auto header = detail::split_csv(detail::trim(line));
        if (header.size() < 9 || header.size() > 10)
            throw DatasetError("manifest header has " + std::to_string(header.size()) +
                               " columns, expected 9 or 10");
        const std::vector<std::string> expected = {"body_id", "category", "instrument",
                                                   "obsid",   "filter",   "ra_deg",
                                                   "dec_deg", "hdu_index", "path"};
        for (std::size_t i = 0; i < expected.size(); ++i)
            if (detail::trim(header[i]) != expected[i])
                throw DatasetError("manifest header column " + std::to_string(i + 1) +
                                   " is '" + header[i] + "', expected '" + expected[i] + "'");
        if (header.size() == 10 && detail::trim(header[9]) != "sha256")
            throw DatasetError("manifest column 10 must be 'sha256'");
    }

    std::vector<ManifestEntry> entries;
    std::map<std::string, Category> body_category;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty()) continue;
        auto fields = detail::split_csv(trimmed);
        if (fields.size() < 9 || fields.size() > 10)
            throw DatasetError("manifest line " + std::to_string(line_no) + " has " +
                               std::to_string(fields.size()) + " fields, expected 9 or 10");
        ManifestEntry e;
        e.body_id = detail::trim(fields[0]);
        if (e.body_id.empty())
            throw DatasetError("manifest line " + std::to_string(line_no) + ": empty body_id");
        e.category = parse_category(detail::trim(fields[1]));
        e.instrument = parse_instrument(detail::trim(fields[2]));
        e.obsid = detail::trim(fields[3]);
        e.filter = detail::trim(fields[4]);
        try {
            e.ra_deg = std::stod(detail::trim(fields[5]));
            e.dec_deg = std::stod(detail::trim(fields[6]));
            const long long hdu = std::stoll(detail::trim(fields[7]));
            if (hdu < 1) throw std::out_of_range("hdu_index");
            e.hdu_index = static_cast<std::size_t>(hdu);
        } catch (const std::exception&) {
            throw DatasetError("manifest line " + std::to_string(line_no) +
                               ": malformed numeric field");
        }
        e.path = detail::trim(fields[8]);
        if (fields.size() == 10) e.sha256 = detail::trim(fields[9]);

        auto [it, inserted] = body_category.emplace(e.body_id, e.category);
        if (!inserted && it->second != e.category)
            throw DatasetError("body '" + e.body_id + "' appears as both " +
                               category_name(it->second) + " and " + category_name(e.category));
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open manifest " + path.string());
    return load_manifest(in);
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out) {
    bool any_sha = false;
    for (const auto& e : entries)
        if (!e.sha256.empty()) any_sha = true;
    out << kManifestHeader << (any_sha ? ",sha256" : "") << "\n";
    for (const auto& e : entries) {
        out << e.body_id << ',' << category_name(e.category) << ','
            << preprocess::instrument_name(e.instrument) << ',' << e.obsid << ',' << e.filter
            << ',' << e.ra_deg << ',' << e.dec_deg << ',' << e.hdu_index << ',' << e.path;
        if (any_sha) out << ',' << e.sha256;
        out << "\n";
    }
}

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write manifest " + path.string());
    save_manifest(entries, out);
}

// ---------------------------------------------------------------------------
// Body-level splitting
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> test;
    std::uint64_t seed = 0;
};

/// Randomly assigns whole celestial bodies to train/test at the given ratio,
/// independently per category. Ties in round(ratio * n) resolve toward
/// train. All of a body's samples follow the body, so the two sides never
/// share a body_id.
inline SplitResult split_by_body(const std::vector<ManifestEntry>& manifest, double ratio,
                                 std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw DatasetError("split ratio must lie in (0, 1)");

    // Body lists per category, in first-appearance order.
    std::vector<std::string> bodies[2];
    std::set<std::string> seen;
    for (const auto& e : manifest) {
        if (seen.insert(e.body_id).second)
            bodies[static_cast<int>(e.category)].push_back(e.body_id);
    }

    std::mt19937_64 rng(seed);
    std::set<std::string> train_bodies;
    for (auto& list : bodies) {
        if (list.empty()) continue;
        if (list.size() < 2)
            throw DatasetError("category with a single body cannot honor a nonempty test set");
        rnd::shuffle_deterministic(list, rng);
        const std::size_t n_train =
            static_cast<std::size_t>(std::floor(ratio * static_cast<double>(list.size()) + 0.5));
        if (n_train >= list.size())
            throw DatasetError("too few bodies to honor a nonempty test set at ratio " +
                               std::to_string(ratio));
        for (std::size_t i = 0; i < n_train; ++i) train_bodies.insert(list[i]);
    }

    SplitResult result;
    result.seed = seed;
    for (const auto& e : manifest) {
        if (train_bodies.count(e.body_id))
            result.train.push_back(e);
        else
            result.test.push_back(e);
    }
    return result;
}

// Published dataset bookkeeping, echoed in split summaries for comparison.
struct LcidReference {
    int bodies_galaxy = 48, bodies_nsc = 23;
    int train_galaxy = 3310, train_nsc = 2908;
    int test_galaxy = 852, test_nsc = 743;

    int bodies_total() const { return bodies_galaxy + bodies_nsc; }
    int train_total() const { return train_galaxy + train_nsc; }
    int test_total() const { return test_galaxy + test_nsc; }
    int samples_total() const { return train_total() + test_total(); }
};

struct SplitCounts {
    std::size_t bodies = 0;                // distinct bodies
    std::size_t samples = 0;               // entries
    std::size_t bodies_per_category[2]{};  // [galaxy, nsc]
    std::size_t samples_per_category[2]{};
};

inline SplitCounts count_split_side(const std::vector<ManifestEntry>& entries) {
    SplitCounts c;
    std::set<std::string> bodies;
    std::set<std::string> bodies_by_cat[2];
    for (const auto& e : entries) {
        ++c.samples;
        ++c.samples_per_category[static_cast<int>(e.category)];
        bodies.insert(e.body_id);
        bodies_by_cat[static_cast<int>(e.category)].insert(e.body_id);
    }
    c.bodies = bodies.size();
    c.bodies_per_category[0] = bodies_by_cat[0].size();
    c.bodies_per_category[1] = bodies_by_cat[1].size();
    return c;
}

inline nlohmann::json split_side_json(const SplitCounts& c) {
    return {
        {"bodies", c.bodies},
        {"samples", c.samples},
        {"galaxy", {{"bodies", c.bodies_per_category[0]}, {"samples", c.samples_per_category[0]}}},
        {"nsc", {{"bodies", c.bodies_per_category[1]}, {"samples", c.samples_per_category[1]}}},
    };
}

/// JSON summary of a split; the published dataset statistics ride along as
/// a fixed reference block.
inline nlohmann::json format_split_summary(const SplitCounts& train, const SplitCounts& test,
                                           double ratio, std::uint64_t seed) {
    const LcidReference ref;
    return {
        {"seed", seed},
        {"ratio", ratio},
        {"train", split_side_json(train)},
        {"test", split_side_json(test)},
        {"reference_lcid",
         {{"note", "published dataset statistics, for comparison only"},
          {"bodies", {{"galaxy", ref.bodies_galaxy}, {"nsc", ref.bodies_nsc}, {"total", ref.bodies_total()}}},
          {"samples_training",
           {{"galaxy", ref.train_galaxy}, {"nsc", ref.train_nsc}, {"total", ref.train_total()}}},
          {"samples_testing",
           {{"galaxy", ref.test_galaxy}, {"nsc", ref.test_nsc}, {"total", ref.test_total()}}},
          {"samples_total", ref.samples_total()}}},
    };
}

inline nlohmann::json format_split_summary(const SplitResult& split, double ratio) {
    return format_split_summary(count_split_side(split.train), count_split_side(split.test),
                                ratio, split.seed);
}

// ---------------------------------------------------------------------------
// Fetching manifest files
// ---------------------------------------------------------------------------

enum class FetchStatus { fetched, skipped, failed };

struct FetchResult {
    std::string source;
    std::string dest;
    FetchStatus status = FetchStatus::failed;
    std::string reason;
};

struct FetchReport {
    std::vector<FetchResult> results;  // one per entry, in manifest order
    std::size_t fetched = 0, skipped = 0, failed = 0;
};

namespace detail {

inline std::string file_sha256_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return digest::hex(digest::sha256(bytes));
}

inline bool http_fetch(const std::string& url, const std::filesystem::path& dest,
                       std::string& reason) {
    const std::size_t scheme = url.find("://");
    const std::size_t path_at = url.find('/', scheme + 3);
    const std::string origin = path_at == std::string::npos ? url : url.substr(0, path_at);
    const std::string resource = path_at == std::string::npos ? "/" : url.substr(path_at);

    httplib::Client client(origin);
    client.set_follow_location(true);
    auto res = client.Get(resource);
    if (!res) {
        reason = "request failed: " + httplib::to_string(res.error());
        return false;
    }
    if (res->status != 200) {
        reason = "HTTP status " + std::to_string(res->status);
        return false;
    }
    std::ofstream out(dest, std::ios::binary);
    if (!out) {
        reason = "cannot write " + dest.string();
        return false;
    }
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    return out.good();
}

}  // namespace detail

/// Materializes every manifest path into dest_dir. Existing files with a
/// matching checksum (or any existing file when no checksum is given) are
/// skipped. Local paths are copied; http(s) URLs are downloaded.
inline FetchReport fetch_manifest_files(const std::vector<ManifestEntry>& entries,
                                        const std::filesystem::path& dest_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dest_dir);

    FetchReport report;
    report.results.resize(entries.size());
    parallel::parallel_for(entries.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const ManifestEntry& e = entries[i];
            FetchResult& r = report.results[i];
            r.source = e.path;
            const fs::path dest = dest_dir / fs::path(e.path).filename();
            r.dest = dest.string();
            try {
                if (fs::exists(dest)) {
                    if (e.sha256.empty() || detail::file_sha256_hex(dest) == e.sha256) {
                        r.status = FetchStatus::skipped;
                        continue;
                    }
                    fs::remove(dest);  // stale cache entry
                }
                const bool is_url =
                    e.path.rfind("http://", 0) == 0 || e.path.rfind("https://", 0) == 0;
                if (is_url) {
                    std::string reason;
                    if (!detail::http_fetch(e.path, dest, reason)) {
                        r.status = FetchStatus::failed;
                        r.reason = reason;
                        continue;
                    }
                } else {
                    if (!fs::exists(e.path)) {
                        r.status = FetchStatus::failed;
                        r.reason = "source file not found";
                        continue;
                    }
                    fs::copy_file(e.path, dest, fs::copy_options::overwrite_existing);
                }
                if (!e.sha256.empty()) {
                    const std::string got = detail::file_sha256_hex(dest);
                    if (got != e.sha256) {
                        fs::remove(dest);
                        r.status = FetchStatus::failed;
                        r.reason = "checksum mismatch (got " + got + ")";
                        continue;
                    }
                }
                r.status = FetchStatus::fetched;
            } catch (const std::exception& ex) {
                r.status = FetchStatus::failed;
                r.reason = ex.what();
            }
        }
    });
    for (const auto& r : report.results) {
        if (r.status == FetchStatus::fetched) ++report.fetched;
        else if (r.status == FetchStatus::skipped) ++report.skipped;
        else ++report.failed;
    }
    return report;
}

}  // namespace celestine::dataset
