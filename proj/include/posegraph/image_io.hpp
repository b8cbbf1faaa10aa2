#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "posegraph/error.hpp"
#include "posegraph/image_plane.hpp"

namespace posegraph {

// 8-bit RGB images (binary PPM or PNG) read into [0,1] planes with 3 channels.

namespace detail {

inline bool has_suffix(const std::string& s, std::string_view suffix)
{
    if (s.size() < suffix.size())
        return false;
    return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                      [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); });
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path)
{
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n')
                ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    std::size_t value = 0;
    bool any = false;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + static_cast<std::size_t>(ch - '0');
        any = true;
        ch = in.get();
    }
    if (!any)
        throw DataError("'" + path + "': malformed PPM header");
    return value;
}

struct PpmHeader {
    bool gray = false;
    std::size_t width = 0, height = 0;
};

inline PpmHeader read_ppm_header(std::istream& in, const std::string& path)
{
    char magic[2] = {};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5'))
        throw DataError("'" + path + "': not a binary PPM/PGM file");
    PpmHeader h;
    h.gray = magic[1] == '5';
    h.width = read_pnm_int(in, path);
    h.height = read_pnm_int(in, path);
    const std::size_t maxval = read_pnm_int(in, path);
    if (maxval != 255 || h.width == 0 || h.height == 0)
        throw DataError("'" + path + "': only non-empty 8-bit PPM/PGM images are supported");
    return h;
}

struct PngHandle {
    png_image image{};
    PngHandle() { image.version = PNG_IMAGE_VERSION; }
    ~PngHandle() { png_image_free(&image); }
    PngHandle(const PngHandle&) = delete;
    PngHandle& operator=(const PngHandle&) = delete;
};

} // namespace detail

struct ImageSize {
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Dimensions from the file header only.
inline ImageSize probe_image_size(const std::string& path)
{
    if (detail::has_suffix(path, ".png")) {
        detail::PngHandle png;
        if (!png_image_begin_read_from_file(&png.image, path.c_str()))
            throw DataError("'" + path + "': cannot read PNG (" + png.image.message + ")");
        return {png.image.height, png.image.width};
    }
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open image '" + path + "'");
    const auto h = detail::read_ppm_header(in, path);
    return {h.height, h.width};
}

inline ImagePlane read_image(const std::string& path)
{
    if (detail::has_suffix(path, ".png")) {
        detail::PngHandle png;
        if (!png_image_begin_read_from_file(&png.image, path.c_str()))
            throw DataError("'" + path + "': cannot read PNG (" + png.image.message + ")");
        png.image.format = PNG_FORMAT_RGB;
        std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
        if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr))
            throw DataError("'" + path + "': PNG decode failed (" + png.image.message + ")");
        const std::size_t H = png.image.height, W = png.image.width;
        ImagePlane out(H, W, 3);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    out(c, y, x) = buffer[(y * W + x) * 3 + c] / 255.0;
        return out;
    }

    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open image '" + path + "'");
    const auto h = detail::read_ppm_header(in, path);
    const std::size_t srcChannels = h.gray ? 1 : 3;
    std::vector<std::uint8_t> buffer(h.width * h.height * srcChannels);
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    if (!in)
        throw DataError("'" + path + "': truncated pixel data");
    ImagePlane out(h.height, h.width, 3);
    for (std::size_t y = 0; y < h.height; ++y)
        for (std::size_t x = 0; x < h.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out(c, y, x) = buffer[(y * h.width + x) * srcChannels + (h.gray ? 0 : c)] / 255.0;
    return out;
}

/// Writes channels 0..2 (or channel 0 replicated) as binary PPM, clamping to [0,1].
inline void write_ppm(const std::string& path, const ImagePlane& img)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot open '" + path + "' for writing");
    out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<std::uint8_t> buffer(img.width() * img.height() * 3);
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = img(img.channels() >= 3 ? c : 0, y, x);
                buffer[(y * img.width() + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    if (!out)
        throw DataError("failed writing '" + path + "'");
}

} // namespace posegraph
