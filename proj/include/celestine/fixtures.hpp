#pragma once

#include <string>

#include "celestine/fits.hpp"
#include "celestine/preprocess.hpp"

namespace celestine::fixtures {

/// Embeds a 2048x4096 science image into the chip's raw-frame layout; the
/// prescan/overscan (and WFC3 trim) regions take the fill value. Inverse of
/// the crop up to the discarded regions.
inline fits::ImageHdu make_raw_frame(const preprocess::Grid& science, preprocess::Chip chip,
                                     float fill, int extver = 1, double bzero = 32768.0) {
    using preprocess::OverscanPosition;
    const preprocess::DetectorGeometry g = preprocess::geometry_for(chip);
    if (science.height != preprocess::kCcdHeight || science.width != preprocess::kCcdWidth)
        throw fits::FitsError("science image must be 2048x4096");

    preprocess::Grid raw(g.raw_height, g.raw_width, fill);
    const std::size_t removed_rows = g.virtual_overscan_rows + g.trim_rows;
    const std::size_t row_begin =
        g.virtual_overscan_position == OverscanPosition::top ? removed_rows : 0;

    if (g.mid_overscan_cols == 0) {
        for (std::size_t r = 0; r < science.height; ++r)
            for (std::size_t c = 0; c < science.width; ++c)
                raw.at(row_begin + r, g.prescan_cols + c) = science.at(r, c);
    } else {
        const std::size_t half = (g.raw_width - 2 * g.prescan_cols - g.mid_overscan_cols) / 2;
        const std::size_t right_begin = g.prescan_cols + half + g.mid_overscan_cols;
        for (std::size_t r = 0; r < science.height; ++r) {
            for (std::size_t c = 0; c < half; ++c)
                raw.at(row_begin + r, g.prescan_cols + c) = science.at(r, c);
            for (std::size_t c = 0; c < half; ++c)
                raw.at(row_begin + r, right_begin + c) = science.at(r, half + c);
        }
    }

    fits::ImageHdu hdu =
        fits::make_image_hdu(raw.width, raw.height, std::move(raw.values), bzero, 1.0);
    hdu.header.push_back(fits::FitsCard::text("EXTNAME", "SCI", "science image"));
    hdu.header.push_back(fits::FitsCard::integer("EXTVER", extver));
    hdu.header.push_back(fits::FitsCard::integer(
        "CCDCHIP", chip == preprocess::Chip::wfc1 || chip == preprocess::Chip::uvis1 ? 1 : 2));
    return hdu;
}

namespace detail {

inline fits::OpaqueHdu dataless_extension(const std::string& extname, int extver, int bitpix) {
    fits::OpaqueHdu hdu;
    hdu.header.push_back(fits::FitsCard::text("XTENSION", "IMAGE", "image extension"));
    hdu.header.push_back(fits::FitsCard::integer("BITPIX", bitpix));
    hdu.header.push_back(fits::FitsCard::integer("NAXIS", 0));
    hdu.header.push_back(fits::FitsCard::integer("PCOUNT", 0));
    hdu.header.push_back(fits::FitsCard::integer("GCOUNT", 1));
    hdu.header.push_back(fits::FitsCard::text("EXTNAME", extname));
    hdu.header.push_back(fits::FitsCard::integer("EXTVER", extver));
    return hdu;
}

}  // namespace detail

/// Raw-style file with the HST extension layout: a header-only primary and
/// two science images at HDU indices 1 and 4, each followed by data-less
/// ERR/DQ extensions that exercise the opaque pass-through.
inline fits::FitsFile make_raw_fits(const preprocess::Grid& sci_hdu1, preprocess::Chip chip_hdu1,
                                    const preprocess::Grid& sci_hdu4, preprocess::Chip chip_hdu4,
                                    float fill, const std::string& obsid = "synthetic",
                                    double bzero = 32768.0) {
    const preprocess::Instrument inst = preprocess::geometry_for(chip_hdu1).instrument;
    fits::FitsFile file;
    file.primary_header = fits::primary_header_only();
    file.primary_header.push_back(fits::FitsCard::text("TELESCOP", "HST"));
    file.primary_header.push_back(fits::FitsCard::text(
        "INSTRUME", inst == preprocess::Instrument::acs_wfc ? "ACS" : "WFC3"));
    file.primary_header.push_back(fits::FitsCard::text("ROOTNAME", obsid));

    file.extensions.emplace_back(make_raw_frame(sci_hdu1, chip_hdu1, fill, 1, bzero));
    file.extensions.emplace_back(detail::dataless_extension("ERR", 1, -32));
    file.extensions.emplace_back(detail::dataless_extension("DQ", 1, 16));
    file.extensions.emplace_back(make_raw_frame(sci_hdu4, chip_hdu4, fill, 2, bzero));
    file.extensions.emplace_back(detail::dataless_extension("ERR", 2, -32));
    file.extensions.emplace_back(detail::dataless_extension("DQ", 2, 16));
    return file;
}

}  // namespace celestine::fixtures
