#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "diffsigma/prng.hpp"

namespace diffsigma {

namespace detail {

// Nearest integer, ties to even, independent of the fenv rounding mode.
inline double round_half_even(double x) { return x - std::remainder(x, 1.0); }

// Intensities live on a fixed binary grid of 2^-20 below the integer scale.
// Byte data is integral, gray conversion snaps to the grid, and noise
// synthesis emits grid values, so sums image+noise stay exactly
// representable in a double and frame subtraction cancels scene content
// bit for bit (see noise.hpp).
constexpr double kIntensityGridScale = 1048576.0;  // 2^20

inline double snap_to_grid(double x) {
    return round_half_even(x * kIntensityGridScale) / kIntensityGridScale;
}

}  // namespace detail

// Dense pixel raster. Row-major, channel-interleaved, nominal 0-255 scale;
// values outside that range are legal after unclipped noise addition.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;  // 1 = gray, 3 = RGB
    std::vector<double> data;
    std::string tag;  // free-form source identifier

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0, std::string source_tag = {})
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill), tag(std::move(source_tag)) {
        validate();
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * height;
    }
    std::size_t size() const { return pixel_count() * channels; }

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    void validate() const {
        if (channels != 1 && channels != 3)
            throw Error("Image: channels must be 1 or 3");
        if (width <= 0 || height <= 0)
            throw Error("Image: dimensions must be positive");
        if (data.size() != size())
            throw Error("Image: data length does not match width*height*channels");
        for (double v : data)
            if (!std::isfinite(v)) throw Error("Image: non-finite intensity");
    }
};

// ITU-R BT.601 luma conversion; result snapped to the intensity grid.
inline Image to_gray(const Image& img) {
    if (img.channels == 1) return img;
    Image out(img.width, img.height, 1, 0.0, img.tag);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const double* px = &img.data[p * 3];
        out.data[p] = detail::snap_to_grid(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PGM (P5) / PPM (P6), binary, maxval 255 only.
// ---------------------------------------------------------------------------

namespace detail {

inline int pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments, returns a non-negative integer.
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF) throw Error("PNM: truncated header");
    long value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1000000000L) throw Error("PNM: header value out of range");
        any = true;
        c = in.get();
    }
    if (!any) throw Error("PNM: malformed header token");
    return static_cast<int>(value);
}

inline Image load_pnm(std::istream& in, int channels, const std::string& tag) {
    int w = pnm_token(in);
    int h = pnm_token(in);
    int maxval = pnm_token(in);
    if (maxval != 255)
        throw Error("PNM: unsupported maxval " + std::to_string(maxval) +
                    " (only 8-bit images are supported)");
    // pnm_token consumed exactly one whitespace byte after maxval.
    if (w <= 0 || h <= 0) throw Error("PNM: bad dimensions");
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw Error("PNM: truncated payload");
    Image img(w, h, channels, 0.0, tag);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i];
    return img;
}

inline void byte_quantize(const Image& img, bool clamp, std::vector<unsigned char>& out) {
    out.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = img.data[i];
        if (clamp) {
            v = std::clamp(v, 0.0, 255.0);
        } else if (v < 0.0 || v > 255.0) {
            throw Error("save_image: value " + std::to_string(v) +
                        " outside [0,255]; pass clamp=true to clip");
        }
        out[i] = static_cast<unsigned char>(round_half_even(v));
    }
}

// ---------------------------------------------------------------------------
// PNG, 8-bit gray / RGB only. Palette, alpha and 16-bit files are rejected.
// ---------------------------------------------------------------------------

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngHeader {
    int width, height, channels;
};

inline PngHeader read_png_info(PngReader& r, const std::string& path) {
    r.fp = std::fopen(path.c_str(), "rb");
    if (!r.fp) throw Error("PNG: cannot open " + path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw Error("PNG: out of memory");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw Error("PNG: out of memory");
    if (setjmp(png_jmpbuf(r.png))) throw Error("PNG: failed to decode " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    int bit_depth = png_get_bit_depth(r.png, r.info);
    int color_type = png_get_color_type(r.png, r.info);
    if (bit_depth != 8)
        throw Error("PNG: only 8-bit depth is supported (" + path + " has " +
                    std::to_string(bit_depth) + "-bit)");
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA || color_type == PNG_COLOR_TYPE_RGB_ALPHA)
        throw Error("PNG: alpha channels are not supported (" + path + ")");
    if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB)
        throw Error("PNG: unsupported color type (" + path + ")");
    return {static_cast<int>(png_get_image_width(r.png, r.info)),
            static_cast<int>(png_get_image_height(r.png, r.info)),
            color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3};
}

inline Image load_png(const std::string& path, const std::string& tag) {
    PngReader r;
    PngHeader hdr = read_png_info(r, path);
    if (setjmp(png_jmpbuf(r.png))) throw Error("PNG: failed to decode " + path);
    std::vector<unsigned char> raw(static_cast<std::size_t>(hdr.width) * hdr.height * hdr.channels);
    std::vector<png_bytep> rows(hdr.height);
    std::size_t stride = static_cast<std::size_t>(hdr.width) * hdr.channels;
    for (int y = 0; y < hdr.height; ++y) rows[y] = raw.data() + y * stride;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    Image img(hdr.width, hdr.height, hdr.channels, 0.0, tag);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i];
    return img;
}

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

inline void save_png(const Image& img, const std::string& path, bool clamp) {
    std::vector<unsigned char> raw;
    byte_quantize(img, clamp, raw);
    PngWriter w;
    w.fp = std::fopen(path.c_str(), "wb");
    if (!w.fp) throw Error("PNG: cannot write " + path);
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) throw Error("PNG: out of memory");
    w.info = png_create_info_struct(w.png);
    if (!w.info) throw Error("PNG: out of memory");
    if (setjmp(png_jmpbuf(w.png))) throw Error("PNG: failed to encode " + path);
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, img.width, img.height, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        png_write_row(w.png, const_cast<png_bytep>(raw.data() + y * stride));
    png_write_end(w.png, nullptr);
}

}  // namespace detail

// Loads a PGM (P5), PPM (P6) or PNG (8-bit gray/RGB) image. The format is
// detected from the file's magic bytes, not its extension.
inline Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_image: cannot open " + path);
    char magic[8] = {};
    in.read(magic, 8);
    if (in.gcount() < 2) throw Error("load_image: file too short: " + path);
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        in.seekg(2);
        return detail::load_pnm(in, magic[1] == '5' ? 1 : 3, path);
    }
    static const unsigned char png_sig[4] = {0x89, 'P', 'N', 'G'};
    if (in.gcount() >= 4 && std::memcmp(magic, png_sig, 4) == 0) {
        in.close();
        return detail::load_png(path, path);
    }
    throw Error("load_image: unsupported format (magic '" +
                std::string(magic, 2) + "') in " + path);
}

// Writes PGM for 1-channel, PPM for 3-channel data, or PNG when the path
// ends in .png. clamp=true clips to [0,255] before rounding (half to even);
// clamp=false requires all values to already be in range.
inline void save_image(const Image& img, const std::string& path, bool clamp = false) {
    img.validate();
    std::string ext = std::filesystem::path(path).extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
    if (ext == ".png") {
        detail::save_png(img, path, clamp);
        return;
    }
    if (ext == ".pgm" && img.channels != 1)
        throw Error("save_image: .pgm requires a 1-channel image");
    if (ext == ".ppm" && img.channels != 3)
        throw Error("save_image: .ppm requires a 3-channel image");
    std::vector<unsigned char> raw;
    detail::byte_quantize(img, clamp, raw);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_image: cannot write " + path);
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw Error("save_image: I/O failure writing " + path);
}

// Reads only enough of a file to report (width, height, channels).
inline void read_image_header(const std::string& path, int& w, int& h, int& c) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("read_image_header: cannot open " + path);
    char magic[8] = {};
    in.read(magic, 8);
    if (in.gcount() >= 2 && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        in.seekg(2);
        w = detail::pnm_token(in);
        h = detail::pnm_token(in);
        c = magic[1] == '5' ? 1 : 3;
        return;
    }
    static const unsigned char png_sig[4] = {0x89, 'P', 'N', 'G'};
    if (in.gcount() >= 4 && std::memcmp(magic, png_sig, 4) == 0) {
        in.close();
        detail::PngReader r;
        detail::PngHeader hdr = detail::read_png_info(r, path);
        w = hdr.width;
        h = hdr.height;
        c = hdr.channels;
        return;
    }
    throw Error("read_image_header: unsupported format in " + path);
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    int width = 0;
    int height = 0;
    int channels = 1;
};

struct DatasetManifest {
    std::string name;
    std::vector<ManifestEntry> entries;  // sorted lexicographically by path

    std::size_t count() const { return entries.size(); }

    void validate() const {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (i > 0 && !(entries[i - 1].path < entries[i].path))
                throw Error("DatasetManifest: entries not sorted by path");
            if (!seen.insert(entries[i].path).second)
                throw Error("DatasetManifest: duplicate path " + entries[i].path);
        }
    }
};

// Enumerates supported image files (by extension) directly inside `dir`,
// sorted by path so the manifest is independent of filesystem order.
inline DatasetManifest scan_dataset(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("scan_dataset: not a directory: " + dir);
    DatasetManifest manifest;
    manifest.name = name;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
        if (ext != ".pgm" && ext != ".ppm" && ext != ".png") continue;
        ManifestEntry e;
        e.path = entry.path().string();
        read_image_header(e.path, e.width, e.height, e.channels);
        manifest.entries.push_back(std::move(e));
    }
    if (ec) throw Error("scan_dataset: cannot read directory " + dir + ": " + ec.message());
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    manifest.validate();
    return manifest;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : manifest.entries)
        arr.push_back({{"path", e.path},
                       {"width", e.width},
                       {"height", e.height},
                       {"channels", e.channels}});
    return arr;
}

}  // namespace diffsigma
