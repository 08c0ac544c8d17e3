#include "wearmil/ecg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fft.hpp"

namespace wearmil::ecg {

namespace {

using nlohmann::json;

std::size_t odd(std::size_t k) { return k | 1u; }

// Mean over [i - h, i + h], truncated at the edges.
std::vector<double> centered_mean(std::span<const double> x, std::size_t len) {
    const std::size_t n = x.size();
    const std::size_t h = len / 2;
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= h ? i - h : 0;
        const std::size_t hi = std::min(n, i + h + 1);
        out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
    return out;
}

InstanceImage ecg_image(Raster pixels, ViewKind view, const EcgWindow& w) {
    InstanceImage img;
    img.pixels = std::move(pixels);
    img.modality = Modality::Ecg;
    img.view = view;
    img.instant = w.window_start;
    img.span_end = w.window_start + std::chrono::seconds{static_cast<long long>(kWindowSeconds)};
    img.patient_id = w.patient_id;
    return img;
}

// Sub-sample refinement of a local maximum by a parabola through 3 points.
double refine_peak(std::span<const double> x, std::size_t i) {
    if (i == 0 || i + 1 >= x.size()) return static_cast<double>(i);
    const double a = x[i - 1], b = x[i], c = x[i + 1];
    const double denom = a - 2.0 * b + c;
    if (denom >= 0.0) return static_cast<double>(i);
    const double offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    return static_cast<double>(i) + offset;
}

}  // namespace

std::size_t window_length(double fs) {
    return static_cast<std::size_t>(std::llround(kWindowSeconds * fs));
}

std::vector<EcgWindow> segment_ecg(const EcgRecording& rec) {
    if (!(rec.fs > 0.0)) throw ArgumentError("ECG sampling rate must be positive");
    std::vector<EcgWindow> windows;
    const std::size_t len = window_length(rec.fs);
    for (std::size_t k = 0; (k + 1) * len <= rec.samples.size(); ++k) {
        EcgWindow w;
        w.patient_id = rec.patient_id;
        w.window_start = rec.start_time +
                         std::chrono::seconds{static_cast<long long>(k * kWindowSeconds)};
        w.fs = rec.fs;
        w.samples.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(k * len),
                         rec.samples.begin() + static_cast<std::ptrdiff_t>((k + 1) * len));
        windows.push_back(std::move(w));
    }
    return windows;
}

double QualityBreakdown::index() const {
    const double a = std::clamp(qrs_band_ratio, 0.0, 1.0);
    const double b = std::clamp(1.0 - flatline_fraction, 0.0, 1.0);
    const double c = std::clamp(1.0 - clipping_fraction, 0.0, 1.0);
    return (a + b + c) / 3.0;
}

QualityBreakdown quality_components(std::span<const double> x, double fs) {
    QualityBreakdown q;
    const std::size_t n = x.size();
    if (n == 0) {
        q.flatline_fraction = 1.0;
        q.clipping_fraction = 1.0;
        return q;
    }

    // Welch band powers: Hann segments of 512 samples, 50% overlap.
    const std::size_t seg = std::min<std::size_t>(512, n);
    const std::size_t hop = std::max<std::size_t>(1, seg / 2);
    const auto window = detail::hann_periodic(seg);
    std::vector<double> psd(seg / 2 + 1, 0.0);
    std::vector<double> buf(seg);
    for (std::size_t start = 0; start + seg <= n; start += hop) {
        double mean = 0.0;
        for (std::size_t i = 0; i < seg; ++i) mean += x[start + i];
        mean /= static_cast<double>(seg);
        for (std::size_t i = 0; i < seg; ++i) buf[i] = (x[start + i] - mean) * window[i];
        const auto spec = detail::rfft(buf);
        for (std::size_t k = 0; k < psd.size(); ++k) psd[k] += std::norm(spec[k]);
    }
    double qrs = 0.0, total = 0.0;
    for (std::size_t k = 0; k < psd.size(); ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(seg);
        if (f >= 0.5 && f <= 40.0) total += psd[k];
        if (f >= 5.0 && f <= 15.0) qrs += psd[k];
    }
    q.qrs_band_ratio = total > 0.0 ? qrs / total : 0.0;

    const std::size_t min_run = static_cast<std::size_t>(std::ceil(0.5 * fs));
    std::size_t flat = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && x[j] == x[i]) ++j;
        if (j - i >= min_run) flat += j - i;
        i = j;
    }
    q.flatline_fraction = static_cast<double>(flat) / static_cast<double>(n);

    auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double vmin = *lo, vmax = *hi;
    const auto clipped = std::count_if(x.begin(), x.end(),
                                       [&](double v) { return v == vmin || v == vmax; });
    q.clipping_fraction = static_cast<double>(clipped) / static_cast<double>(n);
    return q;
}

double assess_quality(const EcgWindow& w) { return quality_components(w.samples, w.fs).index(); }

Outcome<RpeakDetection> detect_rpeaks(const EcgWindow& w) {
    const std::span<const double> x = w.samples;
    const double fs = w.fs;
    const std::size_t n = x.size();
    if (n < static_cast<std::size_t>(4.0 * fs)) return Outcome<RpeakDetection>::reject("sparse beats");

    // Band-pass as difference of two moving averages (low-pass ~15 Hz minus
    // its ~5 Hz smooth), both centred so no delay compensation is needed.
    const auto lp = centered_mean(x, odd(static_cast<std::size_t>(std::lround(fs / 15.0))));
    const auto base = centered_mean(lp, odd(static_cast<std::size_t>(std::lround(fs / 5.0))));
    std::vector<double> bp(n);
    for (std::size_t i = 0; i < n; ++i) bp[i] = lp[i] - base[i];

    std::vector<double> sq(n, 0.0);
    for (std::size_t i = 2; i + 2 < n; ++i) {
        const double d = (2.0 * bp[i + 2] + bp[i + 1] - bp[i - 1] - 2.0 * bp[i - 2]) * fs / 8.0;
        sq[i] = d * d;
    }
    const auto mwi = centered_mean(sq, odd(static_cast<std::size_t>(std::lround(0.15 * fs))));

    std::vector<std::size_t> candidates;
    for (std::size_t i = 1; i + 1 < n; ++i)
        if (mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1]) candidates.push_back(i);

    const std::size_t learn = std::min(n, static_cast<std::size_t>(2.0 * fs));
    const double learn_max = *std::max_element(mwi.begin(), mwi.begin() + learn);
    double spki = 0.25 * learn_max;
    double npki = 0.5 * std::accumulate(mwi.begin(), mwi.begin() + learn, 0.0) /
                  static_cast<double>(learn);
    auto threshold = [&] { return npki + 0.25 * (spki - npki); };

    const auto refractory = static_cast<std::size_t>(std::lround(0.25 * fs));
    std::vector<std::size_t> beats;
    std::vector<std::size_t> pending;  // rejected candidates since the last beat
    auto rr_average = [&]() -> double {
        if (beats.size() < 2) return 0.0;
        const std::size_t k = std::min<std::size_t>(8, beats.size() - 1);
        return static_cast<double>(beats.back() - beats[beats.size() - 1 - k]) /
               static_cast<double>(k);
    };

    for (std::size_t c : candidates) {
        const double v = mwi[c];
        if (!beats.empty() && c - beats.back() < refractory) {
            if (v > mwi[beats.back()]) beats.back() = c;
            continue;
        }
        const double rr_avg = rr_average();
        if (rr_avg > 0.0 && static_cast<double>(c - beats.back()) > 1.66 * rr_avg) {
            std::size_t best = 0;
            double best_v = 0.5 * threshold();
            for (std::size_t p : pending) {
                if (p - beats.back() >= refractory && c - p >= refractory && mwi[p] > best_v) {
                    best = p;
                    best_v = mwi[p];
                }
            }
            if (best != 0) {
                beats.push_back(best);
                spki = 0.25 * best_v + 0.75 * spki;
            }
            pending.clear();
        }
        if (v > threshold() && (beats.empty() || c - beats.back() >= refractory)) {
            beats.push_back(c);
            spki = 0.125 * v + 0.875 * spki;
            pending.clear();
        } else {
            npki = 0.125 * v + 0.875 * npki;
            pending.push_back(c);
        }
    }

    // Locate the R apex in the raw trace around each integrated-energy peak.
    const auto half = static_cast<std::size_t>(std::lround(0.075 * fs));
    RpeakDetection det;
    for (std::size_t b : beats) {
        const std::size_t lo = b >= half ? b - half : 0;
        const std::size_t hi = std::min(n - 1, b + half);
        std::size_t arg = lo;
        for (std::size_t i = lo; i <= hi; ++i)
            if (x[i] > x[arg]) arg = i;
        const double pos = refine_peak(x, arg);
        if (!det.peak_positions.empty() &&
            pos - det.peak_positions.back() < static_cast<double>(refractory)) {
            if (x[arg] > x[static_cast<std::size_t>(std::lround(det.peak_positions.back()))])
                det.peak_positions.back() = pos;
            continue;
        }
        det.peak_positions.push_back(pos);
    }
    if (det.peak_positions.size() < 10) return Outcome<RpeakDetection>::reject("sparse beats");

    for (std::size_t i = 1; i < det.peak_positions.size(); ++i) {
        const double rr = (det.peak_positions[i] - det.peak_positions[i - 1]) * 1000.0 / fs;
        if (rr > 200.0 && rr < 3000.0) det.rr.intervals_ms.push_back(rr);
    }
    return det;
}

double sdnn_ms(const RrSeries& rr) {
    const auto& v = rr.intervals_ms;
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double r : v) ss += (r - mean) * (r - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<double> decimate_mean(std::span<const double> x, std::size_t n) {
    if (n == 0 || x.size() < n) throw ArgumentError("decimation target exceeds input length");
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = k * x.size() / n;
        const std::size_t hi = (k + 1) * x.size() / n;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += x[i];
        out[k] = s / static_cast<double>(hi - lo);
    }
    return out;
}

InstanceImage recurrence_plot(const EcgWindow& w) {
    const auto d = decimate_mean(w.samples, kRasterSide);
    Raster r(kRasterSide, kRasterSide);
    double vmax = 0.0;
    for (std::size_t i = 0; i < kRasterSide; ++i)
        for (std::size_t j = 0; j < kRasterSide; ++j) {
            r(i, j) = std::abs(d[i] - d[j]);
            vmax = std::max(vmax, r(i, j));
        }
    if (vmax > 0.0)
        for (double& v : r.values()) v /= vmax;
    return ecg_image(std::move(r), ViewKind::Recurrence, w);
}

std::size_t spectrogram_bins(const EcgConfig& cfg, double fs) {
    const double df = fs / static_cast<double>(cfg.stft_window);
    const auto k_max = static_cast<std::size_t>(std::floor(cfg.stft_max_hz / df));
    return std::min(k_max, cfg.stft_window / 2) + 1;
}

double spectrogram_bin_at_row(std::size_t row, const EcgConfig& cfg, double fs) {
    const std::size_t bins = spectrogram_bins(cfg, fs);
    const double src = static_cast<double>(row) * static_cast<double>(bins - 1) /
                       static_cast<double>(kRasterSide - 1);
    return static_cast<double>(bins - 1) - src;
}

InstanceImage spectrogram(const EcgWindow& w, const EcgConfig& cfg) {
    const std::size_t win = cfg.stft_window, hop = cfg.stft_hop;
    if (win < 2 || hop == 0 || w.samples.size() < win)
        throw ArgumentError("STFT window does not fit the ECG window");
    const std::size_t frames = 1 + (w.samples.size() - win) / hop;
    const std::size_t bins = spectrogram_bins(cfg, w.fs);
    const auto hann = detail::hann_periodic(win);
    Raster tf(bins, frames);
    std::vector<double> buf(win);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t i = 0; i < win; ++i) buf[i] = w.samples[f * hop + i] * hann[i];
        const auto spec = detail::rfft(buf);
        // Highest kept frequency on the top row.
        for (std::size_t k = 0; k < bins; ++k) tf(bins - 1 - k, f) = std::log1p(std::abs(spec[k]));
    }
    Raster out = resample_bilinear(tf, kRasterSide, kRasterSide);
    minmax_rescale(out.values());
    return ecg_image(std::move(out), ViewKind::Spectrogram, w);
}

std::vector<double> scalogram_frequencies(const EcgConfig& cfg) {
    std::vector<double> f(cfg.cwt_scales);
    const double ratio = cfg.cwt_min_hz / cfg.cwt_max_hz;
    for (std::size_t j = 0; j < cfg.cwt_scales; ++j) {
        const double t = cfg.cwt_scales > 1
                             ? static_cast<double>(j) / static_cast<double>(cfg.cwt_scales - 1)
                             : 0.0;
        f[j] = cfg.cwt_max_hz * std::pow(ratio, t);
    }
    return f;
}

InstanceImage scalogram(const EcgWindow& w, const EcgConfig& cfg) {
    if (cfg.cwt_scales == 0 || !(cfg.cwt_min_hz > 0.0) || !(cfg.cwt_max_hz > cfg.cwt_min_hz))
        throw ArgumentError("invalid CWT scale range");
    const auto freqs = scalogram_frequencies(cfg);
    const std::span<const double> x = w.samples;
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    const double fs = w.fs;
    const double norm = std::pow(std::numbers::pi, -0.25);

    // Morlet with L1 normalisation (1/s) so a unit sinusoid peaks at equal
    // height on the scale matching its frequency. Evaluated at 224 evenly
    // spaced centres; the kernel is truncated at |t/s| <= 4.
    Raster tf(cfg.cwt_scales, kRasterSide);
    for (std::size_t j = 0; j < freqs.size(); ++j) {
        const double s = cfg.cwt_w0 / (2.0 * std::numbers::pi * freqs[j]);
        const auto half = static_cast<std::ptrdiff_t>(std::ceil(4.0 * s * fs));
        std::vector<std::complex<double>> kernel(static_cast<std::size_t>(2 * half + 1));
        for (std::ptrdiff_t m = -half; m <= half; ++m) {
            const double tau = static_cast<double>(m) / (fs * s);
            const double env = norm * std::exp(-0.5 * tau * tau) / (s * fs);
            // conjugate of exp(i w0 tau)
            kernel[static_cast<std::size_t>(m + half)] =
                env * std::complex<double>(std::cos(cfg.cwt_w0 * tau), -std::sin(cfg.cwt_w0 * tau));
        }
        for (std::size_t col = 0; col < kRasterSide; ++col) {
            const auto centre = static_cast<std::ptrdiff_t>(
                (2 * col + 1) * x.size() / (2 * kRasterSide));
            std::complex<double> acc = 0.0;
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, centre - half);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, centre + half);
            for (std::ptrdiff_t i = lo; i <= hi; ++i)
                acc += x[static_cast<std::size_t>(i)] *
                       kernel[static_cast<std::size_t>(i - centre + half)];
            tf(j, col) = std::log1p(std::abs(acc));
        }
    }
    Raster out = resample_bilinear(tf, kRasterSide, kRasterSide);
    minmax_rescale(out.values());
    return ecg_image(std::move(out), ViewKind::Scalogram, w);
}

std::size_t poincare_bin(double rr_ms, const EcgConfig& cfg) {
    const double t = (rr_ms - cfg.poincare_min_ms) / (cfg.poincare_max_ms - cfg.poincare_min_ms);
    const double b = std::floor(t * static_cast<double>(kRasterSide));
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(kRasterSide - 1)));
}

Outcome<InstanceImage> poincare_plot(const RrSeries& rr, const EcgConfig& cfg) {
    const auto& v = rr.intervals_ms;
    if (v.size() < 10) return Outcome<InstanceImage>::reject("fewer than 10 RR intervals");
    // Row = bin(RR_{n+1}), column = bin(RR_n): the identity line is the main diagonal.
    Raster counts(kRasterSide, kRasterSide);
    for (std::size_t i = 0; i + 1 < v.size(); ++i)
        counts(poincare_bin(v[i + 1], cfg), poincare_bin(v[i], cfg)) += 1.0;
    double vmax = 0.0;
    for (double& c : counts.values()) {
        c = std::log1p(c);
        vmax = std::max(vmax, c);
    }
    for (double& c : counts.values()) c /= vmax;
    InstanceImage img;
    img.pixels = std::move(counts);
    img.modality = Modality::Ecg;
    img.view = ViewKind::Poincare;
    return img;
}

WindowViews transform_window(const EcgWindow& w, const EcgConfig& cfg) {
    WindowViews out;
    out.quality = assess_quality(w);
    if (out.quality < cfg.quality_threshold) {
        out.rejection = "low quality";
        return out;
    }
    out.images.push_back(recurrence_plot(w));
    out.images.push_back(spectrogram(w, cfg));
    out.images.push_back(scalogram(w, cfg));
    auto peaks = detect_rpeaks(w);
    if (!peaks) {
        out.rejection = peaks.reason();
        return out;
    }
    auto poincare = poincare_plot(peaks.value().rr, cfg);
    if (!poincare) {
        out.rejection = poincare.reason();
        return out;
    }
    InstanceImage img = std::move(poincare.value());
    const auto proto = ecg_image(Raster{}, ViewKind::Poincare, w);
    img.instant = proto.instant;
    img.span_end = proto.span_end;
    img.patient_id = w.patient_id;
    out.images.push_back(std::move(img));
    return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::filesystem::path sidecar_of(const std::filesystem::path& p) {
    auto s = p;
    s.replace_extension(".json");
    return s;
}

json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("missing ECG sidecar '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed sidecar '" + p.string() + "': " + e.what());
    }
}

void write_sidecar(const std::filesystem::path& p, const EcgRecording& rec) {
    json j = {{"patient_id", rec.patient_id},
              {"start_time", format_timestamp(rec.start_time)},
              {"fs", rec.fs}};
    std::ofstream out(sidecar_of(p));
    out << j.dump(2) << "\n";
    if (!out) throw DataError("cannot write sidecar for '" + p.string() + "'");
}

void check_finite(const EcgRecording& rec, const std::filesystem::path& p) {
    for (double v : rec.samples)
        if (!std::isfinite(v)) throw DataError("non-finite ECG sample in '" + p.string() + "'");
}

}  // namespace

EcgRecording read_ecg(const std::filesystem::path& path) {
    const json meta = read_json_file(sidecar_of(path));
    EcgRecording rec;
    try {
        rec.patient_id = meta.at("patient_id").get<std::string>();
        rec.start_time = parse_timestamp(meta.at("start_time").get<std::string>());
        rec.fs = meta.value("fs", 0.0);
    } catch (const json::exception& e) {
        throw DataError("sidecar for '" + path.string() + "' lacks fields: " + e.what());
    }

    if (path.extension() == ".f32") {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open '" + path.string() + "'");
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (bytes.size() % 4 != 0)
            throw FormatError("float32 ECG length not a multiple of 4", bytes.size());
        rec.samples.resize(bytes.size() / 4);
        for (std::size_t i = 0; i < rec.samples.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            rec.samples[i] = f;
        }
    } else if (path.extension() == ".csv") {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open '" + path.string() + "'");
        std::string line;
        std::getline(in, line);
        if (line.rfind("t_s,mv", 0) != 0) throw DataError("ECG CSV must start with header t_s,mv");
        std::vector<double> t;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw DataError("malformed ECG CSV row '" + line + "'");
            t.push_back(std::stod(line.substr(0, comma)));
            rec.samples.push_back(std::stod(line.substr(comma + 1)));
        }
        if (!(rec.fs > 0.0)) {
            if (t.size() < 2 || !(t.back() > t.front()))
                throw DataError("cannot infer sampling rate of '" + path.string() + "'");
            rec.fs = static_cast<double>(t.size() - 1) / (t.back() - t.front());
        }
    } else {
        throw DataError("unsupported ECG file '" + path.string() + "'");
    }
    if (!(rec.fs > 0.0)) throw DataError("sampling rate must be positive in '" + path.string() + "'");
    check_finite(rec, path);
    return rec;
}

void write_ecg_f32(const std::filesystem::path& path, const EcgRecording& rec) {
    std::vector<char> bytes(rec.samples.size() * 4);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const auto f = static_cast<float>(rec.samples[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    write_sidecar(path, rec);
}

void write_ecg_csv(const std::filesystem::path& path, const EcgRecording& rec) {
    std::ofstream out(path);
    out << "t_s,mv\n";
    for (std::size_t i = 0; i < rec.samples.size(); ++i)
        out << format_double(static_cast<double>(i) / rec.fs) << ',' << format_double(rec.samples[i])
            << '\n';
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    write_sidecar(path, rec);
}

}  // namespace wearmil::ecg
