#include "wearmil/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace wearmil {

std::string_view view_name(ViewKind v) {
    switch (v) {
        case ViewKind::Recurrence: return "recurrence";
        case ViewKind::Spectrogram: return "spectrogram";
        case ViewKind::Scalogram: return "scalogram";
        case ViewKind::Poincare: return "poincare";
        case ViewKind::ActivityHeatmap: return "activity_heatmap";
        case ViewKind::SleepHeatmap: return "sleep_heatmap";
        case ViewKind::Hypnogram: return "hypnogram";
    }
    return "?";
}

ViewKind parse_view(std::string_view s) {
    for (ViewKind v : {ViewKind::Recurrence, ViewKind::Spectrogram, ViewKind::Scalogram,
                       ViewKind::Poincare, ViewKind::ActivityHeatmap, ViewKind::SleepHeatmap,
                       ViewKind::Hypnogram}) {
        if (view_name(v) == s) return v;
    }
    throw DataError("unknown view kind '" + std::string(s) + "'");
}

Modality modality_of(ViewKind v) {
    switch (v) {
        case ViewKind::ActivityHeatmap: return Modality::Activity;
        case ViewKind::SleepHeatmap:
        case ViewKind::Hypnogram: return Modality::Sleep;
        default: return Modality::Ecg;
    }
}

void minmax_rescale(std::span<double> v) {
    if (v.empty()) return;
    auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(v.begin(), v.end(), 0.5);
        return;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& x : v) x = std::clamp((x - lo) * inv, 0.0, 1.0);
}

Raster resample_bilinear(const Raster& src, std::size_t rows, std::size_t cols) {
    if (src.rows() == 0 || src.cols() == 0) throw ArgumentError("resample of empty raster");
    Raster out(rows, cols);
    auto coord = [](std::size_t i, std::size_t n_dst, std::size_t n_src) {
        if (n_dst <= 1 || n_src <= 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(n_src - 1) /
               static_cast<double>(n_dst - 1);
    };
    for (std::size_t r = 0; r < rows; ++r) {
        const double y = coord(r, rows, src.rows());
        const std::size_t y0 = std::min(static_cast<std::size_t>(y), src.rows() - 1);
        const std::size_t y1 = std::min(y0 + 1, src.rows() - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = coord(c, cols, src.cols());
            const std::size_t x0 = std::min(static_cast<std::size_t>(x), src.cols() - 1);
            const std::size_t x1 = std::min(x0 + 1, src.cols() - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = src(y0, x0) * (1.0 - fx) + src(y0, x1) * fx;
            const double bot = src(y1, x0) * (1.0 - fx) + src(y1, x1) * fx;
            out(r, c) = top * (1.0 - fy) + bot * fy;
        }
    }
    return out;
}

Raster upsample_nearest(const Raster& src, std::size_t rows, std::size_t cols) {
    if (src.rows() == 0 || src.cols() == 0) throw ArgumentError("upsample of empty raster");
    Raster out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t sr = r * src.rows() / rows;
        for (std::size_t c = 0; c < cols; ++c) out(r, c) = src(sr, c * src.cols() / cols);
    }
    return out;
}

bool is_valid_instance_raster(const Raster& r) {
    if (r.rows() != kRasterSide || r.cols() != kRasterSide) return false;
    return std::all_of(r.values().begin(), r.values().end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    return f;
}

struct ReadResult {
    Raster raster;
    std::map<std::string, std::string> text;
};

ReadResult read_png_impl(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    ReadResult result;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_strip_alpha(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, info);
    png_textp texts = nullptr;
    int n_text = png_get_text(png, info, &texts, nullptr);
    for (int i = 0; i < n_text; ++i) result.text[texts[i].key] = texts[i].text ? texts[i].text : "";
    png_destroy_read_struct(&png, &info, nullptr);

    result.raster = Raster(h, w);
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x) result.raster(y, x) = buffer[y * stride + x] / 255.0;
    return result;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Raster& r,
               const std::map<std::string, std::string>& text) {
    if (r.rows() == 0 || r.cols() == 0) throw ArgumentError("cannot write empty raster");
    std::vector<png_byte> pixels(r.size());
    for (std::size_t i = 0; i < r.size(); ++i)
        pixels[i] = static_cast<png_byte>(std::lround(std::clamp(r.values()[i], 0.0, 1.0) * 255.0));
    std::vector<png_bytep> rows(r.rows());
    for (std::size_t y = 0; y < r.rows(); ++y) rows[y] = pixels.data() + y * r.cols();

    // tEXt keys/values must outlive png_write_info.
    std::vector<std::string> keys, values;
    for (const auto& [k, v] : text) {
        keys.push_back(k);
        values.push_back(v);
    }
    std::vector<png_text> chunks(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        chunks[i] = png_text{};
        chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
        chunks[i].key = keys[i].data();
        chunks[i].text = values[i].data();
        chunks[i].text_length = values[i].size();
    }

    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(r.cols()), static_cast<png_uint_32>(r.rows()),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Raster read_png(const std::filesystem::path& path) { return read_png_impl(path).raster; }

std::map<std::string, std::string> read_png_text(const std::filesystem::path& path) {
    return read_png_impl(path).text;
}

}  // namespace wearmil
