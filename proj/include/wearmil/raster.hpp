#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wearmil/common.hpp"

namespace wearmil {

inline constexpr std::size_t kRasterSide = 224;

/// Row-major single-channel real matrix. Row 0 is the top of the image.
class Raster {
public:
    Raster() = default;
    Raster(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool operator==(const Raster&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

enum class ViewKind {
    Recurrence,
    Spectrogram,
    Scalogram,
    Poincare,
    ActivityHeatmap,
    SleepHeatmap,
    Hypnogram,
};
std::string_view view_name(ViewKind v);
ViewKind parse_view(std::string_view s);
Modality modality_of(ViewKind v);

/// One visual instance. `instant` is the nominal time of the view (window
/// start, week start, first epoch). `span_end` is the latest moment of data
/// the raster encodes; label eligibility is decided on it.
struct InstanceImage {
    Raster pixels;
    Modality modality = Modality::Ecg;
    ViewKind view = ViewKind::Recurrence;
    Timestamp instant{};
    Timestamp span_end{};
    std::string patient_id;
};

// Maps [min, max] onto [0, 1] in place; a degenerate range yields all 0.5.
void minmax_rescale(std::span<double> v);

/// Bilinear resampling with corner alignment (source corners map to
/// destination corners).
Raster resample_bilinear(const Raster& src, std::size_t rows, std::size_t cols);

/// Nearest-neighbour upsampling: destination row r reads source row
/// floor(r * src_rows / rows), likewise for columns.
Raster upsample_nearest(const Raster& src, std::size_t rows, std::size_t cols);

// True when every pixel lies in [0, 1] and the raster is 224x224.
bool is_valid_instance_raster(const Raster& r);

/// 8-bit grayscale PNG. `text` entries become tEXt chunks.
void write_png(const std::filesystem::path& path, const Raster& r,
               const std::map<std::string, std::string>& text = {});
/// Grey levels are mapped back to v/255.
Raster read_png(const std::filesystem::path& path);
std::map<std::string, std::string> read_png_text(const std::filesystem::path& path);

}  // namespace wearmil
