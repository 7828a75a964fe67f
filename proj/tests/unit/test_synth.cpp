#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "celestine/synth.hpp"

using namespace celestine;
using dataset::ExposureConfig;
using dataset::SceneSpec;
using dataset::ThroughputModel;

namespace {

ThroughputModel flat_model(double s0, double tau, double lambda_lo, double lambda_hi,
                           std::size_t points) {
    ThroughputModel m;
    m.lambda_grid.resize(points);
    m.sed.assign(points, s0);
    m.throughput.assign(points, tau);
    for (std::size_t i = 0; i < points; ++i)
        m.lambda_grid[i] = lambda_lo + (lambda_hi - lambda_lo) * static_cast<double>(i) /
                                           static_cast<double>(points - 1);
    return m;
}

// C = t * A * S0 * (l2^2 - l1^2) / (2 h c) for a flat SED with tau == 1.
double closed_form(double t, double a, double s0, double l1, double l2) {
    return t * a * s0 * (l2 * l2 - l1 * l1) /
           (2.0 * dataset::kPlanck * dataset::kSpeedOfLight);
}

}  // namespace

TEST_CASE("electron flux is zero for zero exposure time", "[synth]") {
    const auto model = flat_model(1e-9, 0.5, 400e-9, 900e-9, 101);
    CHECK(dataset::electron_flux(model, 0.0, 4.5) == 0.0);
}

TEST_CASE("electron flux is exactly linear in t and aperture area", "[synth]") {
    const auto model = flat_model(2.5e-9, 0.7, 370e-9, 1100e-9, 257);
    const double base = dataset::electron_flux(model, 30.0, 2.25);
    CHECK(dataset::electron_flux(model, 60.0, 2.25) == 2.0 * base);
    CHECK(dataset::electron_flux(model, 30.0, 4.5) == 2.0 * base);
}

TEST_CASE("trapezoidal quadrature matches the flat-SED closed form", "[synth]") {
    const double l1 = 370e-9, l2 = 1100e-9, s0 = 3e-9, t = 120.0, a = 4.52;
    const auto model = flat_model(s0, 1.0, l1, l2, 10001);
    const double computed = dataset::electron_flux(model, t, a);
    const double expected = closed_form(t, a, s0, l1, l2);
    CHECK(std::abs(computed - expected) / expected < 1e-6);
}

TEST_CASE("flux is monotone in the SED and throughput", "[synth]") {
    auto model = flat_model(1e-9, 0.5, 400e-9, 900e-9, 101);
    const double base = dataset::electron_flux(model, 10.0, 1.0);
    model.sed[50] *= 2.0;
    const double more_sed = dataset::electron_flux(model, 10.0, 1.0);
    CHECK(more_sed > base);
    model.throughput.assign(101, 0.9);
    CHECK(dataset::electron_flux(model, 10.0, 1.0) > more_sed);
}

TEST_CASE("flux model validation", "[synth]") {
    auto model = flat_model(1e-9, 0.5, 400e-9, 900e-9, 11);
    SECTION("grid too short") {
        model.lambda_grid.resize(1);
        model.sed.resize(1);
        model.throughput.resize(1);
        CHECK_THROWS_AS(dataset::electron_flux(model, 1.0, 1.0), dataset::SynthError);
    }
    SECTION("negative SED") {
        model.sed[3] = -1.0;
        CHECK_THROWS_AS(dataset::electron_flux(model, 1.0, 1.0), dataset::SynthError);
    }
    SECTION("non-increasing wavelengths") {
        model.lambda_grid[4] = model.lambda_grid[3];
        CHECK_THROWS_AS(dataset::electron_flux(model, 1.0, 1.0), dataset::SynthError);
    }
    SECTION("throughput above 1") {
        model.throughput[2] = 1.5;
        CHECK_THROWS_AS(dataset::electron_flux(model, 1.0, 1.0), dataset::SynthError);
    }
}

TEST_CASE("scaled scenes carry exactly the electron budget", "[synth]") {
    for (auto kind : {SceneSpec::Kind::galaxy_blob, SceneSpec::Kind::point_field}) {
        SceneSpec scene;
        scene.kind = kind;
        scene.height = 128;
        scene.width = 256;
        const double budget = 5e6;
        const auto img = dataset::render_scaled_scene(scene, budget, 7);
        double sum = 0.0;
        for (float v : img.values) sum += v;
        CHECK(std::abs(sum - budget) / budget < 1e-3);
    }
}

TEST_CASE("zero exposure with no noise yields an all-zero sample", "[synth]") {
    SceneSpec scene;
    scene.height = 32;
    scene.width = 64;
    ExposureConfig exposure;
    exposure.t = 0.0;
    exposure.read_noise_sigma = 0.0;
    exposure.sky_level = 0.0;
    const auto model = flat_model(1e-9, 0.5, 400e-9, 900e-9, 51);
    const auto sample = dataset::synthesize_sample(scene, exposure, model, 3, "Z");
    for (float v : sample.pixels.values) REQUIRE(v == 0.0f);
}

TEST_CASE("synthesis is deterministic per seed", "[synth]") {
    SceneSpec scene;
    scene.kind = SceneSpec::Kind::point_field;
    scene.height = 64;
    scene.width = 96;
    ExposureConfig exposure;
    exposure.t = 30.0;
    exposure.read_noise_sigma = 3.0;
    exposure.sky_level = 20.0;
    const auto model = flat_model(1e-7, 0.6, 400e-9, 900e-9, 101);

    const auto a = dataset::synthesize_sample(scene, exposure, model, 99, "A");
    const auto b = dataset::synthesize_sample(scene, exposure, model, 99, "A");
    REQUIRE(a.pixels.values == b.pixels.values);

    const auto c = dataset::synthesize_sample(scene, exposure, model, 100, "A");
    CHECK(a.pixels.values != c.pixels.values);
}

TEST_CASE("sample pixels always lie in the data-number range", "[synth]") {
    SceneSpec scene;
    scene.height = 48;
    scene.width = 48;
    ExposureConfig exposure;
    exposure.t = 500.0;
    exposure.read_noise_sigma = 50.0;
    exposure.sky_level = 100.0;
    exposure.gain = 0.7;
    const auto model = flat_model(5e-8, 0.8, 400e-9, 900e-9, 101);
    const auto sample = dataset::synthesize_sample(scene, exposure, model, 12, "R");
    for (float v : sample.pixels.values) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 65535.0f);
    }
}

TEST_CASE("saturating budgets are rejected", "[synth]") {
    SceneSpec scene;
    scene.height = 16;
    scene.width = 16;
    ExposureConfig exposure;
    exposure.t = 1e9;
    exposure.gain = 1.0;
    const auto model = flat_model(1e-3, 1.0, 400e-9, 900e-9, 51);
    CHECK_THROWS_AS(dataset::synthesize_sample(scene, exposure, model, 1, "S"),
                    dataset::SynthError);
}

TEST_CASE("scene kind fixes the sample label", "[synth]") {
    SceneSpec scene;
    scene.height = 16;
    scene.width = 16;
    ExposureConfig exposure;
    const auto model = flat_model(1e-9, 0.5, 400e-9, 900e-9, 51);
    scene.kind = SceneSpec::Kind::galaxy_blob;
    CHECK(dataset::synthesize_sample(scene, exposure, model, 1).label ==
          preprocess::Category::galaxy);
    scene.kind = SceneSpec::Kind::point_field;
    CHECK(dataset::synthesize_sample(scene, exposure, model, 1).label ==
          preprocess::Category::nsc);
}
