#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "celestine/fits.hpp"
#include "celestine/fixtures.hpp"
#include "celestine/preprocess.hpp"

using namespace celestine;
using fits::FitsCard;
using fits::FitsFile;
using fits::ImageHdu;

namespace {

FitsFile small_file(std::size_t width, std::size_t height, float fill = 100.0f) {
    FitsFile file;
    file.primary_header = fits::primary_header_only();
    file.extensions.emplace_back(
        fits::make_image_hdu(width, height, std::vector<float>(width * height, fill)));
    return file;
}

}  // namespace

TEST_CASE("cards serialize to exactly 80 bytes", "[fits]") {
    CHECK(FitsCard::logical("SIMPLE", true, "conforms").raw.size() == 80);
    CHECK(FitsCard::integer("BITPIX", 16).raw.size() == 80);
    CHECK(FitsCard::real("BZERO", 32768.0).raw.size() == 80);
    CHECK(FitsCard::text("XTENSION", "IMAGE").raw.size() == 80);
    CHECK(FitsCard::commentary("COMMENT", "a note").raw.size() == 80);

    CHECK_THROWS_AS(FitsCard::integer("lower", 1), fits::FitsError);
    CHECK_THROWS_AS(FitsCard::integer("WAY_TOO_LONG", 1), fits::FitsError);
    CHECK_THROWS_AS(FitsCard::integer("BAD KEY", 1), fits::FitsError);
}

TEST_CASE("card values parse back from their serialized form", "[fits]") {
    auto round = [](const FitsCard& card) { return FitsCard::from_raw(card.raw); };

    CHECK(std::get<bool>(round(FitsCard::logical("EXTEND", true)).value) == true);
    CHECK(std::get<std::int64_t>(round(FitsCard::integer("NAXIS1", 4144)).value) == 4144);
    CHECK(std::get<double>(round(FitsCard::real("BSCALE", 1.0)).value) == 1.0);
    CHECK(std::get<double>(round(FitsCard::real("BZERO", 32768.0)).value) == 32768.0);
    CHECK(std::get<std::string>(round(FitsCard::text("XTENSION", "IMAGE")).value) == "IMAGE");
    CHECK(std::get<std::string>(round(FitsCard::text("ROOT", "it's")).value) == "it's");

    const FitsCard with_comment = round(FitsCard::integer("EXTVER", 2, "version"));
    REQUIRE(with_comment.comment.has_value());
    CHECK(*with_comment.comment == "version");
}

TEST_CASE("big-endian 0x80 0x00 decodes to stored -32768", "[fits]") {
    FitsFile file = small_file(1, 1, 0.0f);
    auto bytes = fits::write_fits(file);
    // Physical 0 under BZERO=32768 must be stored as -32768 = 0x8000.
    const std::size_t data_at = 2 * fits::kBlockSize;  // primary + ext header blocks
    REQUIRE(bytes.size() >= data_at + 2);
    CHECK(bytes[data_at] == 0x80);
    CHECK(bytes[data_at + 1] == 0x00);

    const FitsFile parsed = fits::parse_fits(bytes);
    CHECK(fits::extract_image(parsed, 1).pixels[0] == 0.0f);
}

TEST_CASE("empty primary plus one 4x4 image occupies three blocks", "[fits]") {
    const auto bytes = fits::write_fits(small_file(4, 4));
    CHECK(bytes.size() == 3 * 2880);  // primary header, ext header, ext data
}

TEST_CASE("write then parse then write is byte-identical", "[fits]") {
    std::mt19937_64 rng(7);
    std::vector<float> pixels(6 * 5);
    for (auto& p : pixels) p = static_cast<float>(rng() % 65536);
    FitsFile file;
    file.primary_header = fits::primary_header_only();
    file.primary_header.push_back(FitsCard::text("ROOTNAME", "roundtrip"));
    file.extensions.emplace_back(fits::make_image_hdu(6, 5, pixels));

    const auto first = fits::write_fits(file);
    const FitsFile parsed = fits::parse_fits(first);
    const auto second = fits::write_fits(parsed);
    REQUIRE(first.size() == second.size());
    CHECK(first == second);
}

TEST_CASE("parse of a written file restores the structural model", "[fits]") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t w = 1 + rng() % 12, h = 1 + rng() % 12;
        std::vector<float> pixels(w * h);
        for (auto& p : pixels) p = static_cast<float>(rng() % 65536);
        FitsFile file;
        file.primary_header = fits::primary_header_only();
        file.extensions.emplace_back(fits::make_image_hdu(w, h, pixels));

        const FitsFile parsed = fits::parse_fits(fits::write_fits(file));
        const ImageHdu& img = fits::extract_image(parsed, 1);
        REQUIRE(img.width == w);
        REQUIRE(img.height == h);
        CHECK(img.pixels == pixels);
        REQUIRE(parsed.primary_header.size() == file.primary_header.size());
        for (std::size_t i = 0; i < file.primary_header.size(); ++i) {
            CHECK(parsed.primary_header[i].keyword == file.primary_header[i].keyword);
            CHECK(parsed.primary_header[i].value == file.primary_header[i].value);
        }
    }
}

TEST_CASE("raw-style fixture exposes science images at HDU indices 1 and 4", "[fits]") {
    preprocess::Grid science(preprocess::kCcdHeight, preprocess::kCcdWidth, 7.0f);
    const FitsFile raw = fixtures::make_raw_fits(science, preprocess::Chip::wfc2, science,
                                                 preprocess::Chip::wfc1, 2500.0f);
    const auto bytes = fits::write_fits(raw);
    const FitsFile parsed = fits::parse_fits(bytes);

    REQUIRE(parsed.extensions.size() == 6);
    const ImageHdu& sci1 = fits::extract_image(parsed, 1);
    const ImageHdu& sci4 = fits::extract_image(parsed, 4);
    CHECK(sci1.width == 4144);
    CHECK(sci1.height == 2068);
    CHECK(sci4.width == 4144);
    CHECK(sci4.height == 2068);
    CHECK(sci1.int_value("CCDCHIP") == 2);
    CHECK(sci4.int_value("CCDCHIP") == 1);

    CHECK_THROWS_WITH(fits::extract_image(parsed, 0),
                      Catch::Matchers::ContainsSubstring("primary"));
    CHECK_THROWS_AS(fits::extract_image(parsed, 2), fits::FitsError);  // opaque ERR
    CHECK_THROWS_AS(fits::extract_image(parsed, 7), fits::FitsError);  // out of range

    // The raw fixture round-trips byte-identically through the opaque path.
    CHECK(fits::write_fits(parsed) == bytes);
}

TEST_CASE("unrepresentable physical values are write errors", "[fits]") {
    FitsFile file = small_file(1, 1, 70000.0f);  // stored would be 37232 > 32767
    CHECK_THROWS_AS(fits::write_fits(file), fits::FitsError);

    FitsFile ok = small_file(1, 1, 65535.0f);
    CHECK_NOTHROW(fits::write_fits(ok));
}

TEST_CASE("malformed inputs are parse errors", "[fits]") {
    const auto good = fits::write_fits(small_file(4, 4));

    SECTION("length not a multiple of 2880") {
        auto bad = good;
        bad.pop_back();
        CHECK_THROWS_AS(fits::parse_fits(bad), fits::FitsError);
    }
    SECTION("first card is not SIMPLE") {
        auto bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(fits::parse_fits(bad), fits::FitsError);
    }
    SECTION("missing END card") {
        // A single header block with END blanked out: the parser runs out of
        // blocks while still scanning for END.
        auto bad = good;
        bad.resize(fits::kBlockSize);
        for (std::size_t c = 0; c < fits::kBlockSize; c += fits::kCardSize) {
            if (std::string_view(reinterpret_cast<const char*>(bad.data()) + c, 8) == "END     ")
                for (std::size_t i = 0; i < 8; ++i) bad[c + i] = ' ';
        }
        CHECK_THROWS_WITH(fits::parse_fits(bad), Catch::Matchers::ContainsSubstring("END"));
    }
    SECTION("truncated data block") {
        auto bad = good;
        bad.resize(bad.size() - fits::kBlockSize);  // drop the data block
        CHECK_THROWS_WITH(fits::parse_fits(bad),
                          Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("corrupted headers never escape as anything but parse errors", "[fits]") {
    const auto good = fits::write_fits(small_file(8, 6, 1234.0f));
    std::mt19937_64 rng(2025);
    std::size_t parsed = 0, rejected = 0;
    for (int trial = 0; trial < 400; ++trial) {
        auto bad = good;
        // Corrupt a few bytes anywhere in the first two (header) blocks.
        const int flips = 1 + static_cast<int>(rng() % 4);
        for (int f = 0; f < flips; ++f)
            bad[rng() % (2 * fits::kBlockSize)] = static_cast<std::uint8_t>(rng() % 256);
        try {
            const auto file = fits::parse_fits(bad);
            (void)fits::write_fits(file);
            ++parsed;
        } catch (const fits::FitsError&) {
            ++rejected;
        }
    }
    CHECK(parsed + rejected == 400);
    CHECK(rejected > 0);  // at least some corruptions must be caught
}
