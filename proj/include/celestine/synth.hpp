#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "celestine/parallel.hpp"
#include "celestine/preprocess.hpp"
#include "celestine/random.hpp"

namespace celestine::dataset {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// CODATA values.
inline constexpr double kPlanck = 6.62607015e-34;      // J s
inline constexpr double kSpeedOfLight = 2.99792458e8;  // m / s

/// Tabulated source spectrum S(lambda) and system throughput
/// tau(lambda) = mirror efficiency x filter transmission, on a shared
/// strictly increasing wavelength grid in meters.
struct ThroughputModel {
    std::vector<double> lambda_grid;  // m, ascending
    std::vector<double> sed;          // W m^-2 m^-1
    std::vector<double> throughput;   // dimensionless, in [0, 1]

    void validate() const {
        if (lambda_grid.size() < 2) throw SynthError("wavelength grid needs at least 2 samples");
        if (sed.size() != lambda_grid.size() || throughput.size() != lambda_grid.size())
            throw SynthError("SED/throughput grids must match the wavelength grid length");
        for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
            if (lambda_grid[i] <= 0.0) throw SynthError("wavelengths must be positive");
            if (i > 0 && lambda_grid[i] <= lambda_grid[i - 1])
                throw SynthError("wavelength grid must be strictly increasing");
            if (sed[i] < 0.0) throw SynthError("SED values must be non-negative");
            if (throughput[i] < 0.0 || throughput[i] > 1.0)
                throw SynthError("throughput must lie in [0, 1]");
        }
    }
};

struct ExposureConfig {
    double t = 1.0;                // s
    double a_eff = 1.0;            // m^2
    double gain = 1.0;             // electrons per data number
    double read_noise_sigma = 0.0; // electrons
    double sky_level = 0.0;        // electrons per pixel

    void validate() const {
        if (t < 0.0) throw SynthError("exposure time must be >= 0");
        if (a_eff <= 0.0) throw SynthError("effective aperture area must be > 0");
        if (gain <= 0.0) throw SynthError("gain must be > 0");
        if (read_noise_sigma < 0.0) throw SynthError("read noise sigma must be >= 0");
        if (sky_level < 0.0) throw SynthError("sky level must be >= 0");
    }
};

/// C = t * A_eff * integral S(lambda) tau(lambda) lambda / (h c) dlambda,
/// evaluated by trapezoidal quadrature on the model's wavelength grid.
inline double electron_flux(const ThroughputModel& model, double t, double a_eff) {
    model.validate();
    if (t < 0.0) throw SynthError("exposure time must be >= 0");
    double integral = 0.0;
    const double hc = kPlanck * kSpeedOfLight;
    for (std::size_t i = 0; i + 1 < model.lambda_grid.size(); ++i) {
        const double f0 = model.sed[i] * model.throughput[i] * model.lambda_grid[i] / hc;
        const double f1 =
            model.sed[i + 1] * model.throughput[i + 1] * model.lambda_grid[i + 1] / hc;
        integral += 0.5 * (f0 + f1) * (model.lambda_grid[i + 1] - model.lambda_grid[i]);
    }
    return t * a_eff * integral;
}

// ---------------------------------------------------------------------------
// Procedural scenes
// ---------------------------------------------------------------------------

/// Procedural scene template. Galaxy samples are a single elliptical
/// exponential-profile blob; NSC samples are a point-source field with an
/// optional diffuse component. Parameters beyond these knobs are drawn
/// deterministically from the seed.
struct SceneSpec {
    enum class Kind { galaxy_blob, point_field };

    Kind kind = Kind::galaxy_blob;
    std::size_t height = 2048;
    std::size_t width = 4096;
    int num_points = 140;           // point_field
    double diffuse_fraction = 0.25; // point_field: fraction of flux in the diffuse component
    double psf_sigma = 2.0;         // point_field: PSF sigma in pixels
};

/// Renders the unnormalized relative-intensity image for a scene.
inline preprocess::Grid render_scene(const SceneSpec& scene, std::uint64_t seed) {
    if (scene.height == 0 || scene.width == 0) throw SynthError("scene dimensions must be >= 1");
    const std::size_t h = scene.height, w = scene.width;
    preprocess::Grid img(h, w);

    std::mt19937_64 rng(rnd::splitmix64(seed));
    if (scene.kind == SceneSpec::Kind::galaxy_blob) {
        const double cx = rnd::uniform(rng, 0.35, 0.65) * static_cast<double>(w);
        const double cy = rnd::uniform(rng, 0.35, 0.65) * static_cast<double>(h);
        const double axis_ratio = rnd::uniform(rng, 0.45, 0.9);
        const double angle = rnd::uniform(rng, 0.0, 3.14159265358979323846);
        const double scale_radius =
            rnd::uniform(rng, 0.05, 0.12) * static_cast<double>(std::min(h, w));
        const double cos_a = std::cos(angle), sin_a = std::sin(angle);
        parallel::parallel_for(h, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) {
                const double dy = static_cast<double>(r) - cy;
                float* row = &img.values[r * w];
                for (std::size_t c = 0; c < w; ++c) {
                    const double dx = static_cast<double>(c) - cx;
                    const double major = dx * cos_a + dy * sin_a;
                    const double minor = (-dx * sin_a + dy * cos_a) / axis_ratio;
                    const double radius = std::sqrt(major * major + minor * minor) / scale_radius;
                    row[c] = static_cast<float>(std::exp(-radius));
                }
            }
        });
        return img;
    }

    // Point-source field: Gaussian PSF stamps plus a broad diffuse blob.
    if (scene.num_points < 1) throw SynthError("point field needs at least one source");
    if (scene.diffuse_fraction < 0.0 || scene.diffuse_fraction >= 1.0)
        throw SynthError("diffuse fraction must lie in [0, 1)");
    const double sigma = scene.psf_sigma;
    if (sigma <= 0.0) throw SynthError("psf sigma must be > 0");
    struct Point {
        double x, y, flux;
    };
    std::vector<Point> points(static_cast<std::size_t>(scene.num_points));
    for (auto& p : points) {
        p.x = rnd::uniform(rng, 0.03, 0.97) * static_cast<double>(w);
        p.y = rnd::uniform(rng, 0.03, 0.97) * static_cast<double>(h);
        p.flux = std::pow(rnd::uniform(rng, 0.02, 1.0), -0.8);
    }
    const double diffuse_cx = rnd::uniform(rng, 0.3, 0.7) * static_cast<double>(w);
    const double diffuse_cy = rnd::uniform(rng, 0.3, 0.7) * static_cast<double>(h);
    const double diffuse_sigma = rnd::uniform(rng, 0.15, 0.3) * static_cast<double>(std::min(h, w));

    double point_sum = 0.0;
    const int reach = static_cast<int>(std::ceil(4.0 * sigma));
    for (const auto& p : points) {
        const int cx = static_cast<int>(std::llround(p.x));
        const int cy = static_cast<int>(std::llround(p.y));
        for (int dy = -reach; dy <= reach; ++dy) {
            const int r = cy + dy;
            if (r < 0 || r >= static_cast<int>(h)) continue;
            for (int dx = -reach; dx <= reach; ++dx) {
                const int c = cx + dx;
                if (c < 0 || c >= static_cast<int>(w)) continue;
                const double ddx = static_cast<double>(c) - p.x;
                const double ddy = static_cast<double>(r) - p.y;
                const double value =
                    p.flux * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sigma * sigma));
                img.values[static_cast<std::size_t>(r) * w + c] += static_cast<float>(value);
                point_sum += value;
            }
        }
    }

    if (scene.diffuse_fraction > 0.0 && point_sum > 0.0) {
        // Scale the diffuse blob so it carries the requested flux share.
        std::vector<double> row_sums(h, 0.0);
        std::vector<std::vector<float>> diffuse(h);
        parallel::parallel_for(h, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) {
                diffuse[r].resize(w);
                double sum = 0.0;
                const double dy = static_cast<double>(r) - diffuse_cy;
                for (std::size_t c = 0; c < w; ++c) {
                    const double dx = static_cast<double>(c) - diffuse_cx;
                    const double value =
                        std::exp(-(dx * dx + dy * dy) / (2.0 * diffuse_sigma * diffuse_sigma));
                    diffuse[r][c] = static_cast<float>(value);
                    sum += value;
                }
                row_sums[r] = sum;
            }
        });
        double diffuse_sum = 0.0;
        for (double s : row_sums) diffuse_sum += s;
        const double target =
            point_sum * scene.diffuse_fraction / (1.0 - scene.diffuse_fraction);
        const float k = static_cast<float>(target / diffuse_sum);
        parallel::parallel_for(h, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r)
                for (std::size_t c = 0; c < w; ++c) img.values[r * w + c] += k * diffuse[r][c];
        });
    }
    return img;
}

/// Renders and scales a scene so its total equals the electron budget C.
inline preprocess::Grid render_scaled_scene(const SceneSpec& scene, double electron_budget,
                                            std::uint64_t seed) {
    preprocess::Grid img = render_scene(scene, seed);
    double sum = 0.0;
    for (float v : img.values) sum += v;
    if (electron_budget <= 0.0 || sum <= 0.0) {
        std::fill(img.values.begin(), img.values.end(), 0.0f);
        return img;
    }
    const float k = static_cast<float>(electron_budget / sum);
    for (float& v : img.values) v *= k;
    return img;
}

/// Renders the scene at the electron budget from the flux model, then
/// applies per-pixel Poisson shot noise, Gaussian read noise and the
/// electrons -> data-number conversion. Deterministic for a given seed,
/// independent of the thread budget.
inline preprocess::Sample synthesize_sample(const SceneSpec& scene, const ExposureConfig& exposure,
                                            const ThroughputModel& model, std::uint64_t seed,
                                            std::string body_id = {}) {
    exposure.validate();
    const double budget = electron_flux(model, exposure.t, exposure.a_eff);
    preprocess::Grid electrons = render_scaled_scene(scene, budget, seed);

    const std::size_t h = electrons.height, w = electrons.width;
    // A fixture that mostly saturates carries no usable structure.
    std::size_t saturated = 0;
    for (float v : electrons.values)
        if ((static_cast<double>(v) + exposure.sky_level) / exposure.gain > 65535.0) ++saturated;
    if (saturated * 2 > electrons.size())
        throw SynthError("electron budget saturates " + std::to_string(saturated) + " of " +
                         std::to_string(electrons.size()) + " pixels");

    preprocess::Sample sample;
    sample.pixels = preprocess::Grid(h, w);
    sample.label = scene.kind == SceneSpec::Kind::galaxy_blob ? preprocess::Category::galaxy
                                                              : preprocess::Category::nsc;
    sample.body_id = std::move(body_id);

    // One RNG stream per row keeps the draws deterministic under row-level
    // parallelism.
    parallel::parallel_for(h, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            std::mt19937_64 rng(rnd::splitmix64(rnd::splitmix64(seed) + r));
            std::normal_distribution<double> read_noise(0.0, exposure.read_noise_sigma);
            const float* in_row = &electrons.values[r * w];
            float* out_row = &sample.pixels.values[r * w];
            for (std::size_t c = 0; c < w; ++c) {
                const double mean = static_cast<double>(in_row[c]) + exposure.sky_level;
                double collected = 0.0;
                if (mean > 0.0) {
                    std::poisson_distribution<long long> shot(mean);
                    collected = static_cast<double>(shot(rng));
                }
                if (exposure.read_noise_sigma > 0.0) collected += read_noise(rng);
                double dn = std::floor(std::max(0.0, collected) / exposure.gain + 0.5);
                if (dn > 65535.0) dn = 65535.0;
                out_row[c] = static_cast<float>(dn);
            }
        }
    });
    return sample;
}

}  // namespace celestine::dataset
