#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace celestine::fits {

inline constexpr std::size_t kBlockSize = 2880;
inline constexpr std::size_t kCardSize = 80;

struct FitsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Card values: undefined, logical, integer, real, or character string.
using CardValue = std::variant<std::monostate, bool, std::int64_t, double, std::string>;

namespace detail {

inline std::string rstrip(std::string_view s) {
    std::size_t end = s.size();
    while (end > 0 && s[end - 1] == ' ') --end;
    return std::string(s.substr(0, end));
}

inline std::string strip(std::string_view s) {
    std::size_t begin = 0;
    while (begin < s.size() && s[begin] == ' ') ++begin;
    return rstrip(s.substr(begin));
}

inline bool valid_keyword(std::string_view kw) {
    if (kw.size() > 8) return false;
    for (char c : kw) {
        if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_'))
            return false;
    }
    return true;
}

// Shortest exact decimal form, forced to read back as a real (contains . or E).
inline std::string format_real(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw FitsError("cannot format real card value");
    std::string s(buf, end);
    for (char& c : s)
        if (c == 'e') c = 'E';
    if (s.find('.') == std::string::npos && s.find('E') == std::string::npos)
        s += ".0";
    return s;
}

}  // namespace detail

/// One 80-byte header record. `raw` is the exact serialized form: parsed
/// cards keep their input bytes verbatim, constructed cards are formatted
/// canonically (fixed-format value fields).
struct FitsCard {
    std::string keyword;
    CardValue value;
    std::optional<std::string> comment;
    std::string raw;

    static FitsCard from_raw(std::string_view bytes);

    static FitsCard logical(std::string keyword, bool v, std::string comment = {}) {
        return make(std::move(keyword), CardValue(v), std::move(comment));
    }
    static FitsCard integer(std::string keyword, std::int64_t v, std::string comment = {}) {
        return make(std::move(keyword), CardValue(v), std::move(comment));
    }
    static FitsCard real(std::string keyword, double v, std::string comment = {}) {
        return make(std::move(keyword), CardValue(v), std::move(comment));
    }
    static FitsCard text(std::string keyword, std::string v, std::string comment = {}) {
        return make(std::move(keyword), CardValue(std::move(v)), std::move(comment));
    }
    static FitsCard commentary(std::string keyword, std::string text) {
        FitsCard card;
        card.keyword = std::move(keyword);
        if (!detail::valid_keyword(card.keyword))
            throw FitsError("invalid card keyword '" + card.keyword + "'");
        card.comment = std::move(text);
        card.raw = card.keyword;
        card.raw.resize(8, ' ');
        card.raw += *card.comment;
        if (card.raw.size() > kCardSize)
            throw FitsError("commentary card for '" + card.keyword + "' exceeds 80 bytes");
        card.raw.resize(kCardSize, ' ');
        return card;
    }

    bool is_value_card() const { return !std::holds_alternative<std::monostate>(value); }

private:
    static FitsCard make(std::string keyword, CardValue v, std::string comment);
};

inline FitsCard FitsCard::make(std::string keyword, CardValue v, std::string comment) {
    FitsCard card;
    card.keyword = std::move(keyword);
    if (!detail::valid_keyword(card.keyword))
        throw FitsError("invalid card keyword '" + card.keyword + "'");
    card.value = std::move(v);
    if (!comment.empty()) card.comment = std::move(comment);

    std::string body;
    if (const bool* b = std::get_if<bool>(&card.value)) {
        body = std::string(19, ' ') + (*b ? 'T' : 'F');
    } else if (const std::int64_t* i = std::get_if<std::int64_t>(&card.value)) {
        std::string s = std::to_string(*i);
        body = std::string(s.size() < 20 ? 20 - s.size() : 0, ' ') + s;
    } else if (const double* d = std::get_if<double>(&card.value)) {
        std::string s = detail::format_real(*d);
        body = std::string(s.size() < 20 ? 20 - s.size() : 0, ' ') + s;
    } else if (const std::string* s = std::get_if<std::string>(&card.value)) {
        std::string quoted;
        for (char c : *s) {
            quoted += c;
            if (c == '\'') quoted += '\'';
        }
        if (quoted.size() < 8) quoted.resize(8, ' ');  // minimum string field width
        body = "'" + quoted + "'";
        if (body.size() < 20) body.resize(20, ' ');
    }

    card.raw = card.keyword;
    card.raw.resize(8, ' ');
    card.raw += "= ";
    card.raw += body;
    if (card.comment) {
        card.raw += " / ";
        card.raw += *card.comment;
    }
    if (card.raw.size() > kCardSize)
        throw FitsError("card '" + card.keyword + "' does not fit in 80 bytes");
    card.raw.resize(kCardSize, ' ');
    return card;
}

inline FitsCard FitsCard::from_raw(std::string_view bytes) {
    if (bytes.size() != kCardSize)
        throw FitsError("header card is not 80 bytes");
    FitsCard card;
    card.raw = std::string(bytes);
    card.keyword = detail::rstrip(bytes.substr(0, 8));
    if (!detail::valid_keyword(card.keyword))
        throw FitsError("malformed card keyword '" + card.keyword + "'");

    const bool has_value = bytes.substr(8, 2) == "= " && card.keyword != "COMMENT" &&
                           card.keyword != "HISTORY" && !card.keyword.empty();
    if (!has_value) {
        std::string text = detail::rstrip(bytes.substr(8));
        if (!text.empty()) card.comment = std::move(text);
        return card;
    }

    std::string_view field = bytes.substr(10);
    std::size_t pos = 0;
    while (pos < field.size() && field[pos] == ' ') ++pos;

    if (pos < field.size() && field[pos] == '\'') {
        std::string text;
        ++pos;
        bool closed = false;
        while (pos < field.size()) {
            if (field[pos] == '\'') {
                if (pos + 1 < field.size() && field[pos + 1] == '\'') {
                    text += '\'';
                    pos += 2;
                    continue;
                }
                ++pos;
                closed = true;
                break;
            }
            text += field[pos++];
        }
        if (!closed)
            throw FitsError("unterminated string value in card '" + card.keyword + "'");
        card.value = detail::rstrip(text);
    } else {
        std::size_t end = pos;
        while (end < field.size() && field[end] != '/') ++end;
        std::string token = detail::strip(field.substr(pos, end - pos));
        pos = end;
        if (!token.empty()) {
            if (token == "T" || token == "F") {
                card.value = (token == "T");
            } else if (token.find_first_of(".EDed") != std::string::npos) {
                for (char& c : token)
                    if (c == 'D' || c == 'd') c = 'E';
                try {
                    card.value = std::stod(token);
                } catch (const std::exception&) {
                    throw FitsError("malformed real value in card '" + card.keyword + "'");
                }
            } else {
                std::int64_t v = 0;
                auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
                if (ec != std::errc() || p != token.data() + token.size())
                    throw FitsError("malformed value in card '" + card.keyword + "'");
                card.value = v;
            }
        }
    }

    // Comment: text after the first '/' past the value field.
    while (pos < field.size() && field[pos] == ' ') ++pos;
    if (pos < field.size() && field[pos] == '/') {
        ++pos;
        if (pos < field.size() && field[pos] == ' ') ++pos;
        std::string text = detail::rstrip(field.substr(pos));
        card.comment = std::move(text);
    }
    return card;
}

/// Decoded 2-d 16-bit image HDU. Pixels hold physical values,
/// physical = bzero + bscale * stored, in row-major order.
struct ImageHdu {
    std::vector<FitsCard> header;  // all cards except END, in file order
    std::size_t width = 0;         // NAXIS1
    std::size_t height = 0;        // NAXIS2
    int bitpix = 16;
    double bzero = 0.0;
    double bscale = 1.0;
    std::vector<float> pixels;

    float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }

    const FitsCard* find(std::string_view keyword) const {
        for (const auto& c : header)
            if (c.keyword == keyword) return &c;
        return nullptr;
    }

    std::optional<std::int64_t> int_value(std::string_view keyword) const {
        const FitsCard* c = find(keyword);
        if (!c) return std::nullopt;
        if (const auto* i = std::get_if<std::int64_t>(&c->value)) return *i;
        if (const auto* d = std::get_if<double>(&c->value))
            return static_cast<std::int64_t>(*d);
        return std::nullopt;
    }
};

/// Extension that is not a decodable 2-d 16-bit image; header and padded
/// data blocks are carried verbatim so the file survives a round trip.
struct OpaqueHdu {
    std::vector<FitsCard> header;
    std::vector<std::uint8_t> data_blocks;
};

struct FitsFile {
    std::vector<FitsCard> primary_header;        // without END
    std::vector<std::uint8_t> primary_data;      // padded blocks; empty for raw-style files
    std::vector<std::variant<ImageHdu, OpaqueHdu>> extensions;  // HDU index = position + 1

    std::size_t hdu_count() const { return extensions.size() + 1; }
};

namespace detail {

struct HeaderInfo {
    std::vector<FitsCard> cards;
    std::size_t end_offset = 0;  // offset just past the padded header blocks
};

inline const FitsCard* find_card(const std::vector<FitsCard>& cards, std::string_view kw) {
    for (const auto& c : cards)
        if (c.keyword == kw) return &c;
    return nullptr;
}

inline std::int64_t require_int(const std::vector<FitsCard>& cards, std::string_view kw) {
    const FitsCard* c = find_card(cards, kw);
    if (!c) throw FitsError("missing required card " + std::string(kw));
    if (const auto* i = std::get_if<std::int64_t>(&c->value)) return *i;
    if (const auto* d = std::get_if<double>(&c->value)) return static_cast<std::int64_t>(*d);
    throw FitsError("card " + std::string(kw) + " is not numeric");
}

inline double numeric_or(const std::vector<FitsCard>& cards, std::string_view kw, double fallback) {
    const FitsCard* c = find_card(cards, kw);
    if (!c) return fallback;
    if (const auto* i = std::get_if<std::int64_t>(&c->value)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&c->value)) return *d;
    throw FitsError("card " + std::string(kw) + " is not numeric");
}

inline HeaderInfo read_header(std::string_view bytes, std::size_t offset) {
    HeaderInfo info;
    std::size_t pos = offset;
    bool saw_end = false;
    while (!saw_end) {
        if (pos + kBlockSize > bytes.size())
            throw FitsError("header missing END card (truncated at byte " +
                            std::to_string(pos) + ")");
        for (std::size_t c = 0; c < kBlockSize / kCardSize; ++c) {
            std::string_view raw = bytes.substr(pos + c * kCardSize, kCardSize);
            if (raw.substr(0, 8) == "END     ") {
                saw_end = true;
                break;
            }
            if (!saw_end && raw != std::string(kCardSize, ' '))
                info.cards.push_back(FitsCard::from_raw(raw));
        }
        pos += kBlockSize;
    }
    info.end_offset = pos;
    return info;
}

inline std::size_t padded(std::size_t n) {
    return (n + kBlockSize - 1) / kBlockSize * kBlockSize;
}

// Data size in bytes per the standard: |BITPIX|/8 * GCOUNT * (PCOUNT + prod NAXISi).
// Axis lengths and the running product are bounded so corrupt headers
// cannot wrap the arithmetic or demand absurd allocations.
inline std::size_t data_bytes(const std::vector<FitsCard>& cards) {
    constexpr std::int64_t kMaxAxis = 1'000'000'000;
    constexpr std::uint64_t kMaxDataBytes = 1ull << 40;

    const std::int64_t bitpix = require_int(cards, "BITPIX");
    const std::int64_t naxis = require_int(cards, "NAXIS");
    if (naxis < 0 || naxis > 999) throw FitsError("NAXIS value " + std::to_string(naxis));
    if (naxis == 0) return 0;
    std::uint64_t elems = 1;
    for (std::int64_t i = 1; i <= naxis; ++i) {
        const std::int64_t axis = require_int(cards, "NAXIS" + std::to_string(i));
        if (axis < 0 || axis > kMaxAxis)
            throw FitsError("NAXIS" + std::to_string(i) + " value " + std::to_string(axis) +
                            " out of range");
        elems *= static_cast<std::uint64_t>(axis);
        if (elems > kMaxDataBytes) throw FitsError("implausible data size in header");
    }
    const FitsCard* pc = find_card(cards, "PCOUNT");
    const FitsCard* gc = find_card(cards, "GCOUNT");
    const std::int64_t pcount = pc ? require_int(cards, "PCOUNT") : 0;
    const std::int64_t gcount = gc ? require_int(cards, "GCOUNT") : 1;
    if (pcount < 0 || gcount < 1)
        throw FitsError("PCOUNT/GCOUNT values out of range");
    const std::uint64_t total = static_cast<std::uint64_t>(std::llabs(bitpix)) / 8 *
                                static_cast<std::uint64_t>(gcount) *
                                (static_cast<std::uint64_t>(pcount) + elems);
    if (total > kMaxDataBytes) throw FitsError("implausible data size in header");
    return static_cast<std::size_t>(total);
}

inline bool is_image_2d_i16(const std::vector<FitsCard>& cards) {
    const FitsCard* xt = find_card(cards, "XTENSION");
    const auto* name = xt ? std::get_if<std::string>(&xt->value) : nullptr;
    if (!name || *name != "IMAGE") return false;
    return require_int(cards, "NAXIS") == 2 && require_int(cards, "BITPIX") == 16;
}

inline ImageHdu decode_image(std::vector<FitsCard> cards, std::string_view data) {
    ImageHdu hdu;
    hdu.header = std::move(cards);
    hdu.bitpix = 16;
    hdu.width = static_cast<std::size_t>(require_int(hdu.header, "NAXIS1"));
    hdu.height = static_cast<std::size_t>(require_int(hdu.header, "NAXIS2"));
    hdu.bzero = numeric_or(hdu.header, "BZERO", 0.0);
    hdu.bscale = numeric_or(hdu.header, "BSCALE", 1.0);
    const std::size_t n = hdu.width * hdu.height;
    hdu.pixels.resize(n);
    const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
    for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t stored =
            static_cast<std::int16_t>(static_cast<std::uint16_t>(p[2 * i]) << 8 |
                                      static_cast<std::uint16_t>(p[2 * i + 1]));
        hdu.pixels[i] = static_cast<float>(hdu.bzero + hdu.bscale * stored);
    }
    return hdu;
}

}  // namespace detail

/// Parses a full FITS byte stream. 2-d 16-bit IMAGE extensions are decoded
/// to physical values; every other extension passes through opaquely.
inline FitsFile parse_fits(std::string_view bytes) {
    if (bytes.size() % kBlockSize != 0)
        throw FitsError("file length " + std::to_string(bytes.size()) +
                        " is not a multiple of 2880 bytes");
    if (bytes.size() < kBlockSize)
        throw FitsError("file shorter than one FITS block");
    if (bytes.substr(0, 8) != "SIMPLE  ")
        throw FitsError("first card is not SIMPLE");

    FitsFile file;
    detail::HeaderInfo primary = detail::read_header(bytes, 0);
    const FitsCard* simple = detail::find_card(primary.cards, "SIMPLE");
    if (!simple || !std::holds_alternative<bool>(simple->value) || !std::get<bool>(simple->value))
        throw FitsError("SIMPLE card is not T");
    file.primary_header = std::move(primary.cards);

    std::size_t pos = primary.end_offset;
    const std::size_t primary_bytes = detail::data_bytes(file.primary_header);
    if (primary_bytes > 0) {
        const std::size_t stored = detail::padded(primary_bytes);
        if (pos + stored > bytes.size())
            throw FitsError("truncated primary data block");
        file.primary_data.assign(bytes.begin() + pos, bytes.begin() + pos + stored);
        pos += stored;
    }

    while (pos < bytes.size()) {
        detail::HeaderInfo ext = detail::read_header(bytes, pos);
        const std::size_t nbytes = detail::data_bytes(ext.cards);
        const std::size_t stored = detail::padded(nbytes);
        if (ext.end_offset + stored > bytes.size())
            throw FitsError("truncated data block in HDU " +
                            std::to_string(file.extensions.size() + 1));
        if (detail::is_image_2d_i16(ext.cards)) {
            file.extensions.emplace_back(detail::decode_image(
                std::move(ext.cards), bytes.substr(ext.end_offset, nbytes)));
        } else {
            OpaqueHdu opaque;
            opaque.header = std::move(ext.cards);
            opaque.data_blocks.assign(bytes.begin() + ext.end_offset,
                                      bytes.begin() + ext.end_offset + stored);
            file.extensions.emplace_back(std::move(opaque));
        }
        pos = ext.end_offset + stored;
    }
    return file;
}

inline FitsFile parse_fits(const std::vector<std::uint8_t>& bytes) {
    return parse_fits(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

/// HDU index 0 is the primary; extensions start at index 1 in file order.
inline const ImageHdu& extract_image(const FitsFile& file, std::size_t hdu_index) {
    if (hdu_index == 0)
        throw FitsError("HDU 0 is the primary header and carries no image data");
    if (hdu_index > file.extensions.size())
        throw FitsError("HDU index " + std::to_string(hdu_index) + " out of range (file has " +
                        std::to_string(file.hdu_count()) + " HDUs)");
    const auto& ext = file.extensions[hdu_index - 1];
    if (const ImageHdu* img = std::get_if<ImageHdu>(&ext)) return *img;
    throw FitsError("HDU " + std::to_string(hdu_index) + " is not a 2-d 16-bit image");
}

namespace detail {

inline void append_header(std::vector<std::uint8_t>& out, const std::vector<FitsCard>& cards) {
    for (const auto& c : cards) {
        if (c.raw.size() != kCardSize)
            throw FitsError("card '" + c.keyword + "' is not 80 bytes");
        out.insert(out.end(), c.raw.begin(), c.raw.end());
    }
    static const std::string end_card = [] {
        std::string s = "END";
        s.resize(kCardSize, ' ');
        return s;
    }();
    out.insert(out.end(), end_card.begin(), end_card.end());
    while (out.size() % kBlockSize != 0) out.push_back(' ');
}

inline void append_image_data(std::vector<std::uint8_t>& out, const ImageHdu& hdu) {
    if (hdu.pixels.size() != hdu.width * hdu.height)
        throw FitsError("image pixel count does not match dimensions");
    if (hdu.bscale == 0.0) throw FitsError("BSCALE of 0 cannot be inverted");
    for (std::size_t i = 0; i < hdu.pixels.size(); ++i) {
        const double scaled = (static_cast<double>(hdu.pixels[i]) - hdu.bzero) / hdu.bscale;
        // Rejects NaN/inf as well as out-of-range values.
        if (!(scaled > -32768.5 && scaled < 32767.5))
            throw FitsError("physical value " + std::to_string(hdu.pixels[i]) +
                            " is unrepresentable as a stored 16-bit integer");
        const auto v = static_cast<std::int16_t>(std::llround(scaled));
        out.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(v) >> 8));
        out.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(v) & 0xff));
    }
    while (out.size() % kBlockSize != 0) out.push_back(0);
}

}  // namespace detail

/// Serializes to standard-conformant 2880-byte blocks. Image pixels are
/// re-encoded through the HDU's bzero/bscale.
inline std::vector<std::uint8_t> write_fits(const FitsFile& file) {
    std::vector<std::uint8_t> out;
    detail::append_header(out, file.primary_header);
    if (!file.primary_data.empty()) {
        if (file.primary_data.size() % kBlockSize != 0)
            throw FitsError("primary data is not block padded");
        out.insert(out.end(), file.primary_data.begin(), file.primary_data.end());
    }
    for (const auto& ext : file.extensions) {
        if (const ImageHdu* img = std::get_if<ImageHdu>(&ext)) {
            const std::int64_t n1 = detail::require_int(img->header, "NAXIS1");
            const std::int64_t n2 = detail::require_int(img->header, "NAXIS2");
            if (static_cast<std::size_t>(n1) != img->width ||
                static_cast<std::size_t>(n2) != img->height)
                throw FitsError("image dimensions disagree with NAXIS1/NAXIS2 cards");
            detail::append_header(out, img->header);
            detail::append_image_data(out, *img);
        } else {
            const OpaqueHdu& opaque = std::get<OpaqueHdu>(ext);
            detail::append_header(out, opaque.header);
            if (opaque.data_blocks.size() % kBlockSize != 0)
                throw FitsError("opaque HDU data is not block padded");
            out.insert(out.end(), opaque.data_blocks.begin(), opaque.data_blocks.end());
        }
    }
    return out;
}

/// Builds the canonical header for a 2-d 16-bit image extension.
inline std::vector<FitsCard> image_extension_header(std::size_t width, std::size_t height,
                                                    double bzero = 32768.0, double bscale = 1.0) {
    std::vector<FitsCard> h;
    h.push_back(FitsCard::text("XTENSION", "IMAGE", "image extension"));
    h.push_back(FitsCard::integer("BITPIX", 16));
    h.push_back(FitsCard::integer("NAXIS", 2));
    h.push_back(FitsCard::integer("NAXIS1", static_cast<std::int64_t>(width)));
    h.push_back(FitsCard::integer("NAXIS2", static_cast<std::int64_t>(height)));
    h.push_back(FitsCard::integer("PCOUNT", 0));
    h.push_back(FitsCard::integer("GCOUNT", 1));
    h.push_back(FitsCard::real("BSCALE", bscale));
    h.push_back(FitsCard::real("BZERO", bzero));
    return h;
}

inline std::vector<FitsCard> primary_header_only() {
    std::vector<FitsCard> h;
    h.push_back(FitsCard::logical("SIMPLE", true, "conforms to FITS standard"));
    h.push_back(FitsCard::integer("BITPIX", 16));
    h.push_back(FitsCard::integer("NAXIS", 0));
    h.push_back(FitsCard::logical("EXTEND", true));
    return h;
}

/// Convenience constructor for a decoded image extension; NAXIS cards are
/// derived from the pixel grid.
inline ImageHdu make_image_hdu(std::size_t width, std::size_t height, std::vector<float> pixels,
                               double bzero = 32768.0, double bscale = 1.0) {
    if (pixels.size() != width * height)
        throw FitsError("pixel count does not match dimensions");
    ImageHdu hdu;
    hdu.header = image_extension_header(width, height, bzero, bscale);
    hdu.width = width;
    hdu.height = height;
    hdu.bzero = bzero;
    hdu.bscale = bscale;
    hdu.pixels = std::move(pixels);
    return hdu;
}

}  // namespace celestine::fits
