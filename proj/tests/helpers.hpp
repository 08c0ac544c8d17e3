#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/common.hpp"
#include "wearmil/ecg.hpp"

namespace testutil {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("wearmil_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

inline wearmil::ecg::EcgWindow window(std::vector<double> samples, double fs = wearmil::ecg::kPolarFs) {
    wearmil::ecg::EcgWindow w;
    w.patient_id = "T";
    w.window_start = wearmil::at_midnight(wearmil::make_date(2024, 1, 1));
    w.fs = fs;
    w.samples = std::move(samples);
    return w;
}

inline std::vector<double> sine(double hz, std::size_t n, double fs = wearmil::ecg::kPolarFs) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * M_PI * hz * static_cast<double>(i) / fs);
    return x;
}

inline wearmil::bags::Bag random_bag(wearmil::Rng& rng, std::size_t n, std::size_t dim = 192,
                                     const std::string& pid = "P1") {
    wearmil::bags::Bag b;
    b.patient_id = pid;
    b.horizon = wearmil::Horizon::M3;
    b.dim = dim;
    b.target = 20.0;
    const auto t0 = wearmil::at_midnight(wearmil::make_date(2024, 1, 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dim; ++d) b.embeddings.push_back(static_cast<float>(rng.normal()));
        b.modality_ids.push_back(static_cast<std::uint8_t>(rng.below(3)));
        b.instants.push_back(t0 + std::chrono::hours{static_cast<long>(i)});
        b.span_ends.push_back(b.instants.back() + std::chrono::minutes{5});
        b.views.push_back(wearmil::ViewKind::Recurrence);
    }
    return b;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double pop_sd(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace testutil
