#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wearmil/common.hpp"
#include "wearmil/raster.hpp"

namespace wearmil::ecg {

inline constexpr double kPolarFs = 130.0;
inline constexpr double kWindowSeconds = 300.0;

struct EcgRecording {
    std::string patient_id;
    Timestamp start_time{};
    double fs = kPolarFs;
    std::vector<double> samples;  // millivolts
};

struct EcgWindow {
    std::string patient_id;
    Timestamp window_start{};
    double fs = kPolarFs;
    std::vector<double> samples;  // exactly 300 * fs values
    double quality = 0.0;
};

struct RrSeries {
    std::vector<double> intervals_ms;
};

struct RpeakDetection {
    std::vector<double> peak_positions;  // fractional sample indices within the window
    RrSeries rr;
};

/// Transform parameters. Defaults are the documented pipeline settings.
struct EcgConfig {
    double quality_threshold = 0.4;
    std::size_t stft_window = 256;
    std::size_t stft_hop = 128;
    double stft_max_hz = 40.0;
    double cwt_w0 = 6.0;
    std::size_t cwt_scales = 64;
    double cwt_min_hz = 0.5;
    double cwt_max_hz = 40.0;
    double poincare_min_ms = 300.0;
    double poincare_max_ms = 1500.0;
};

// Samples per 5-minute window at `fs`.
std::size_t window_length(double fs);

/// Consecutive non-overlapping 5-minute windows from the recording start; a
/// trailing remainder shorter than 5 minutes is discarded.
std::vector<EcgWindow> segment_ecg(const EcgRecording& rec);

struct QualityBreakdown {
    double qrs_band_ratio = 0.0;    // power 5-15 Hz / power 0.5-40 Hz
    double flatline_fraction = 0.0; // samples in identical runs >= 0.5 s
    double clipping_fraction = 0.0; // samples at the window min or max
    double index() const;           // mean of the three clamped components
};

QualityBreakdown quality_components(std::span<const double> samples, double fs);
double assess_quality(const EcgWindow& w);

/// Pan-Tompkins-style detector: moving-sum band-pass (5-15 Hz), five-point
/// derivative, squaring, 150 ms integration, adaptive thresholds with
/// search-back, 250 ms refractory. Rejects with "sparse beats" below 10 beats.
Outcome<RpeakDetection> detect_rpeaks(const EcgWindow& w);

double sdnn_ms(const RrSeries& rr);

// Block-mean decimation to exactly n samples.
std::vector<double> decimate_mean(std::span<const double> x, std::size_t n);

InstanceImage recurrence_plot(const EcgWindow& w);
InstanceImage spectrogram(const EcgWindow& w, const EcgConfig& cfg = {});
InstanceImage scalogram(const EcgWindow& w, const EcgConfig& cfg = {});
Outcome<InstanceImage> poincare_plot(const RrSeries& rr, const EcgConfig& cfg = {});

// Number of STFT frequency rows kept below cfg.stft_max_hz.
std::size_t spectrogram_bins(const EcgConfig& cfg, double fs);
/// Fractional STFT bin shown at an output raster row (row 0 = highest bin).
double spectrogram_bin_at_row(std::size_t row, const EcgConfig& cfg, double fs);
/// Centre frequency of each CWT scale row, top (highest) to bottom.
std::vector<double> scalogram_frequencies(const EcgConfig& cfg);
std::size_t poincare_bin(double rr_ms, const EcgConfig& cfg = {});

/// Everything the pipeline derives from one window.
struct WindowViews {
    double quality = 0.0;
    std::vector<InstanceImage> images;  // empty when gated out
    std::string rejection;              // "" when accepted
};

/// Quality gate, then the four views (Poincare only when beats suffice).
/// A window passing the gate with sparse beats still yields the three
/// waveform views.
WindowViews transform_window(const EcgWindow& w, const EcgConfig& cfg);

/// ECG input: raw little-endian float32 (".f32") or CSV with `t_s,mv`
/// columns (".csv"), each with a JSON sidecar of the same stem holding
/// {patient_id, start_time, fs}. For CSV the sidecar fs may be omitted and is
/// inferred from the time column.
EcgRecording read_ecg(const std::filesystem::path& path);
void write_ecg_f32(const std::filesystem::path& path, const EcgRecording& rec);
void write_ecg_csv(const std::filesystem::path& path, const EcgRecording& rec);

}  // namespace wearmil::ecg
