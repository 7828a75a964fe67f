#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "celestine/fits.hpp"

namespace celestine::preprocess {

struct PreprocessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Instrument { acs_wfc, wfc3_uvis };
enum class Chip { wfc1, wfc2, uvis1, uvis2 };
enum class Category : int { galaxy = 0, nsc = 1 };

inline constexpr std::size_t kCcdHeight = 2048;   // science rows per CCD image
inline constexpr std::size_t kCcdWidth = 4096;    // science columns per CCD image
inline constexpr std::size_t kResizeHeight = 224;
inline constexpr std::size_t kResizeWidth = 448;

enum class OverscanPosition { top, bottom };

/// Raw-frame layout of one CCD readout: physical prescan columns on both
/// sides, a virtual-overscan row band on one side, and (WFC3 only) a
/// central virtual-overscan column band between the two 2048-wide halves
/// plus extra science rows that are trimmed to reach 2048.
struct DetectorGeometry {
    Instrument instrument;
    Chip chip;
    std::size_t raw_width;
    std::size_t raw_height;
    std::size_t prescan_cols;           // per side
    std::size_t virtual_overscan_rows;
    OverscanPosition virtual_overscan_position;
    std::size_t mid_overscan_cols;      // 0 for ACS
    std::size_t trim_rows;              // 0 for ACS
};

inline DetectorGeometry geometry_for(Chip chip) {
    switch (chip) {
        case Chip::wfc1:
            return {Instrument::acs_wfc, chip, 4144, 2068, 24, 20, OverscanPosition::bottom, 0, 0};
        case Chip::wfc2:
            return {Instrument::acs_wfc, chip, 4144, 2068, 24, 20, OverscanPosition::top, 0, 0};
        case Chip::uvis1:
            return {Instrument::wfc3_uvis, chip, 4206, 2070, 25, 19, OverscanPosition::bottom, 60, 3};
        case Chip::uvis2:
            return {Instrument::wfc3_uvis, chip, 4206, 2070, 25, 19, OverscanPosition::top, 60, 3};
    }
    throw PreprocessError("unknown chip");
}

inline const char* chip_name(Chip chip) {
    switch (chip) {
        case Chip::wfc1: return "WFC1";
        case Chip::wfc2: return "WFC2";
        case Chip::uvis1: return "UVIS1";
        case Chip::uvis2: return "UVIS2";
    }
    return "?";
}

inline const char* instrument_name(Instrument inst) {
    return inst == Instrument::acs_wfc ? "ACS_WFC" : "WFC3_UVIS";
}

/// Single-channel real-valued image, row-major.
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    Grid() = default;
    Grid(std::size_t h, std::size_t w, float fill = 0.0f)
        : height(h), width(w), values(h * w, fill) {}

    float at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
    float& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
    std::size_t size() const { return values.size(); }
};

struct SampleSource {
    std::string obsid;
    std::string filter;
    std::size_t hdu_index = 0;
};

struct Sample {
    Grid pixels;
    Category label = Category::galaxy;
    std::string body_id;
    SampleSource source;
};

namespace detail {

// Copies the science rows/columns selected by the geometry. Column ranges
// are half-open [begin, end) pairs; rows keep the side opposite the
// virtual overscan band (plus trim rows on the same side as the band).
inline Grid crop(const fits::ImageHdu& raw, const DetectorGeometry& g) {
    if (raw.width != g.raw_width || raw.height != g.raw_height)
        throw PreprocessError(std::string("raw frame is ") + std::to_string(raw.width) + "x" +
                              std::to_string(raw.height) + " but " + chip_name(g.chip) +
                              " expects " + std::to_string(g.raw_width) + "x" +
                              std::to_string(g.raw_height));

    const std::size_t removed_rows = g.virtual_overscan_rows + g.trim_rows;
    const std::size_t row_begin =
        g.virtual_overscan_position == OverscanPosition::top ? removed_rows : 0;
    const std::size_t row_end =
        g.virtual_overscan_position == OverscanPosition::top ? g.raw_height
                                                             : g.raw_height - removed_rows;

    std::vector<std::pair<std::size_t, std::size_t>> col_ranges;
    if (g.mid_overscan_cols == 0) {
        col_ranges.push_back({g.prescan_cols, g.raw_width - g.prescan_cols});
    } else {
        const std::size_t half = (g.raw_width - 2 * g.prescan_cols - g.mid_overscan_cols) / 2;
        col_ranges.push_back({g.prescan_cols, g.prescan_cols + half});
        col_ranges.push_back(
            {g.prescan_cols + half + g.mid_overscan_cols,
             g.prescan_cols + half + g.mid_overscan_cols + half});
    }

    Grid out(row_end - row_begin, kCcdWidth);
    for (std::size_t r = row_begin; r < row_end; ++r) {
        std::size_t out_c = 0;
        for (const auto& [begin, end] : col_ranges)
            for (std::size_t c = begin; c < end; ++c)
                out.at(r - row_begin, out_c++) = raw.at(r, c);
    }
    if (out.height != kCcdHeight || out.width != kCcdWidth)
        throw PreprocessError("crop produced unexpected dimensions");
    return out;
}

}  // namespace detail

/// ACS/WFC raw frame (4144x2068) -> 2048x4096 CCD image. WFC1 carries its
/// virtual overscan rows at the bottom of the frame, WFC2 at the top.
inline Grid crop_acs_wfc(const fits::ImageHdu& raw, Chip chip) {
    if (chip != Chip::wfc1 && chip != Chip::wfc2)
        throw PreprocessError("crop_acs_wfc expects WFC1 or WFC2");
    return detail::crop(raw, geometry_for(chip));
}

/// WFC3/UVIS raw frame (4206x2070) -> 2048x4096 CCD image. Drops the side
/// physical overscans and the central 60-column band, merges the halves,
/// then removes the 19 virtual-overscan rows plus 3 trim rows (bottom for
/// UVIS1, top for UVIS2).
inline Grid crop_wfc3_uvis(const fits::ImageHdu& raw, Chip chip) {
    if (chip != Chip::uvis1 && chip != Chip::uvis2)
        throw PreprocessError("crop_wfc3_uvis expects UVIS1 or UVIS2");
    return detail::crop(raw, geometry_for(chip));
}

inline Grid crop_raw(const fits::ImageHdu& raw, Chip chip) {
    return detail::crop(raw, geometry_for(chip));
}

/// Bilinear resize with half-pixel-center source mapping:
/// src = (dst + 0.5) * in/out - 0.5, clamped to the image bounds.
inline Grid resize_bilinear(const Grid& img, std::size_t out_h, std::size_t out_w) {
    if (img.height == 0 || img.width == 0)
        throw PreprocessError("resize_bilinear: empty input image");
    if (out_h == 0 || out_w == 0)
        throw PreprocessError("resize_bilinear: empty output requested");

    const double scale_h = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double scale_w = static_cast<double>(img.width) / static_cast<double>(out_w);

    Grid out(out_h, out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        double sy = (static_cast<double>(r) + 0.5) * scale_h - 0.5;
        sy = std::min(std::max(sy, 0.0), static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < out_w; ++c) {
            double sx = (static_cast<double>(c) + 0.5) * scale_w - 0.5;
            sx = std::min(std::max(sx, 0.0), static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
            const double bottom = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
            out.at(r, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
        }
    }
    return out;
}

/// Resolves which chip produced an image HDU: the CCDCHIP header card when
/// present, else the raw-file convention that the first science HDU (index 1)
/// is chip 2 and the second (index 4) is chip 1.
inline Chip chip_for_hdu(const fits::ImageHdu& hdu, Instrument instrument,
                         std::size_t hdu_index) {
    int chip_no = 0;
    if (auto card = hdu.int_value("CCDCHIP")) {
        chip_no = static_cast<int>(*card);
    } else if (hdu_index == 1) {
        chip_no = 2;
    } else if (hdu_index == 4) {
        chip_no = 1;
    } else {
        throw PreprocessError("cannot infer chip: no CCDCHIP card and HDU index " +
                              std::to_string(hdu_index) + " has no conventional assignment");
    }
    if (chip_no != 1 && chip_no != 2)
        throw PreprocessError("CCDCHIP value " + std::to_string(chip_no) + " is not 1 or 2");
    if (instrument == Instrument::acs_wfc)
        return chip_no == 1 ? Chip::wfc1 : Chip::wfc2;
    return chip_no == 1 ? Chip::uvis1 : Chip::uvis2;
}

/// Maps data numbers in [0, 65535] to [0, 1]. Values outside the range are
/// an error; callers clip beforehand when that is the intent.
inline Grid to_float_normalized(const Grid& img) {
    Grid out(img.height, img.width);
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const float v = img.values[i];
        if (!(v >= 0.0f && v <= 65535.0f))
            throw PreprocessError("pixel value " + std::to_string(v) +
                                  " outside [0, 65535]; clip before normalizing");
        out.values[i] = v / 65535.0f;
    }
    return out;
}

}  // namespace celestine::preprocess
