#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "celestine/netspec.hpp"

using namespace celestine;
using netspec::LayerKind;
using netspec::NetSpec;

namespace {

std::string read_asset(const char* name) {
    const std::string path = std::string(CELESTINE_SOURCE_DIR) + "/assets/" + name;
    std::ifstream in(path);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("canonical architecture has 12 conv, 7 pool and 3 linear layers", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();
    std::size_t conv = 0, pool = 0, linear = 0, bn = 0;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::conv) ++conv;
        if (l.kind == LayerKind::maxpool) ++pool;
        if (l.kind == LayerKind::linear) ++linear;
        if (l.kind == LayerKind::batchnorm) ++bn;
    }
    CHECK(conv == 12);
    CHECK(pool == 7);
    CHECK(linear == 3);
    CHECK(bn == 12);

    CHECK(spec.layers.front().kind == LayerKind::conv);
    CHECK(spec.layers.front().kernel == 7);
    CHECK(spec.layers.front().out_channels == 32);
    CHECK(spec.layers.back().kind == LayerKind::softmax);
    const auto& last_linear = spec.layers[spec.layers.size() - 2];
    CHECK(last_linear.kind == LayerKind::linear);
    CHECK(last_linear.units == 2);
}

TEST_CASE("shape propagation reproduces the published output sizes", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();
    const auto entries = netspec::compare_table2(spec);
    REQUIRE(entries.size() == 22);

    for (const auto& e : entries) {
        if (e.published.row == 7) {
            CHECK(e.out_w == 249);  // forced by rows 6 and 8
            CHECK(e.published.out_w == 248);
            CHECK(!e.shape_match);
            CHECK(e.erratum);
        } else {
            CHECK(e.shape_match);
        }
        CHECK(e.params_match);
    }

    // Row 5 and row 19 spot checks.
    CHECK(entries[4].out_c == 128);
    CHECK(entries[4].out_h == 246);
    CHECK(entries[4].out_w == 502);
    CHECK(entries[18].out_c == 512);
    CHECK(entries[18].out_h == 3);
    CHECK(entries[18].out_w == 11);

    const auto shapes = netspec::propagate_shapes(spec);
    CHECK(shapes.flatten_size == 16896);
}

TEST_CASE("parameter counting matches the published column", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();
    const auto entries = netspec::compare_table2(spec);
    CHECK(entries[0].params == 1600);
    CHECK(entries[2].params == 100416);
    CHECK(entries[19].params == 69210112);
    CHECK(entries[21].params == 8194);

    CHECK(netspec::count_params(spec, false).total == 97041282ull);
    CHECK(netspec::count_params(spec, true).total == 97048130ull);
}

TEST_CASE("memory estimate reproduces the published hardware table", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();
    const auto report = netspec::estimate_memory(spec, 4);

    CHECK(report.input_bytes == 134217728ull);  // exactly 128 MB
    CHECK(report.input_mb() == 128.0);
    CHECK(std::abs(report.param_mb() - 370.21) < 0.01);
    CHECK(std::abs(report.total_gb() - 32.79) / 32.79 < 0.15);
    CHECK(report.estimated_total_bytes ==
          report.input_bytes + report.param_bytes + 2 * report.activation_bytes);

    // 224x448 input accounting (the resize-variant table row).
    const double resize_mb =
        static_cast<double>(netspec::input_bytes(1, 224, 448, 4)) / (1024.0 * 1024.0);
    CHECK(std::abs(resize_mb - 1.53) < 0.005);
}

TEST_CASE("memory estimate scales linearly in batch except parameters", "[netspec]") {
    const NetSpec spec = netspec::tiny_celestialnet_spec();
    const auto one = netspec::estimate_memory(spec, 1);
    const auto four = netspec::estimate_memory(spec, 4);
    CHECK(four.input_bytes == 4 * one.input_bytes);
    CHECK(four.activation_bytes == 4 * one.activation_bytes);
    CHECK(four.param_bytes == one.param_bytes);
}

TEST_CASE("shipped spec assets parse to the built-in architectures", "[netspec]") {
    const NetSpec from_asset = netspec::parse_netspec(read_asset("hr_celestialnet.netspec"));
    const NetSpec builtin = netspec::hr_celestialnet_spec();
    CHECK(netspec::serialize_netspec(from_asset) == netspec::serialize_netspec(builtin));
    CHECK(netspec::spec_hash(from_asset) == netspec::spec_hash(builtin));

    const NetSpec tiny_asset = netspec::parse_netspec(read_asset("tiny_celestialnet.netspec"));
    CHECK(netspec::serialize_netspec(tiny_asset) ==
          netspec::serialize_netspec(netspec::tiny_celestialnet_spec()));
}

TEST_CASE("serialization round trips through the parser", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();
    const NetSpec back = netspec::parse_netspec(netspec::serialize_netspec(spec));
    CHECK(netspec::serialize_netspec(back) == netspec::serialize_netspec(spec));
}

TEST_CASE("spec text validation is eager", "[netspec]") {
    const char* preamble = "input_c=1\ninput_h=64\ninput_w=64\n";
    SECTION("unknown key") {
        CHECK_THROWS_WITH(netspec::parse_netspec(std::string(preamble) +
                                                 "layer kind=conv kernel=3 stride=1 "
                                                 "out_channels=4 paddding=1\n"),
                          Catch::Matchers::ContainsSubstring("unknown key"));
    }
    SECTION("missing required key") {
        CHECK_THROWS_WITH(
            netspec::parse_netspec(std::string(preamble) + "layer kind=conv kernel=3 stride=1\n"),
            Catch::Matchers::ContainsSubstring("out_channels"));
    }
    SECTION("field not valid for the kind") {
        CHECK_THROWS_WITH(netspec::parse_netspec(std::string(preamble) +
                                                 "layer kind=maxpool kernel=2 stride=2 units=4\n"),
                          Catch::Matchers::ContainsSubstring("not valid"));
    }
    SECTION("unknown kind") {
        CHECK_THROWS_WITH(
            netspec::parse_netspec(std::string(preamble) + "layer kind=dropout\n"),
            Catch::Matchers::ContainsSubstring("unknown layer kind"));
    }
    SECTION("missing input dims") {
        CHECK_THROWS_AS(netspec::parse_netspec("input_c=1\nlayer kind=relu\n"),
                        netspec::SpecError);
    }
    SECTION("line numbers appear in diagnostics") {
        try {
            netspec::parse_netspec(std::string(preamble) + "layer kind=wat\n");
            FAIL("expected a parse error");
        } catch (const netspec::SpecError& e) {
            CHECK(std::string(e.what()).find("line 4") != std::string::npos);
        }
    }
    SECTION("shape collapse is rejected at parse time") {
        CHECK_THROWS_AS(
            netspec::parse_netspec(std::string(preamble) +
                                   "layer kind=conv kernel=65 stride=1 out_channels=4\n"),
            netspec::SpecError);
    }
    SECTION("linear before flatten is rejected") {
        CHECK_THROWS_AS(
            netspec::parse_netspec(std::string(preamble) + "layer kind=linear units=4\n"),
            netspec::SpecError);
    }
}

TEST_CASE("parameter init is deterministic and He-scaled", "[netspec]") {
    const NetSpec spec = netspec::hr_celestialnet_spec();

    auto a = netspec::init_params<float>(spec, 7);
    auto b = netspec::init_params<float>(spec, 7);
    const auto& conv_a = std::get<nn::ConvState<float>>(a[0]);
    const auto& conv_b = std::get<nn::ConvState<float>>(b[0]);
    REQUIRE(conv_a.weight.data == conv_b.weight.data);

    auto c = netspec::init_params<float>(spec, 8);
    CHECK(std::get<nn::ConvState<float>>(c[0]).weight.data != conv_a.weight.data);

    // Layer 1: fan_in = 7*7*1 = 49, 1568 weights; std should be near
    // sqrt(2/49) = 0.2020.
    double sum = 0.0, sq = 0.0;
    for (float v : conv_a.weight.data) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(conv_a.weight.size());
    REQUIRE(n == 1568.0);
    const double std_dev = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(std::abs(std_dev - std::sqrt(2.0 / 49.0)) / std::sqrt(2.0 / 49.0) < 0.05);

    for (float v : conv_a.bias.data) CHECK(v == 0.0f);
    const auto& bn = std::get<nn::BatchNormState<float>>(a[1]);
    for (float v : bn.gamma.data) CHECK(v == 1.0f);
    for (float v : bn.beta.data) CHECK(v == 0.0f);
    for (float v : bn.running_mean.data) CHECK(v == 0.0f);
    for (float v : bn.running_var.data) CHECK(v == 1.0f);
}

TEST_CASE("spec hashes separate different architectures", "[netspec]") {
    CHECK(netspec::spec_hash(netspec::hr_celestialnet_spec()) !=
          netspec::spec_hash(netspec::tiny_celestialnet_spec()));
}
