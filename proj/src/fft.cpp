#include "fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace wearmil::detail {

namespace {

std::mutex plan_mutex;

// FFTW's planner is not thread-safe; executing an existing plan on new arrays is.
fftw_plan plan_for(std::size_t n) {
    static std::map<std::size_t, fftw_plan> plans;
    std::lock_guard lock(plan_mutex);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans.emplace(n, p);
    return p;
}

}  // namespace

std::vector<std::complex<double>> rfft(std::span<const double> x) {
    const std::size_t n = x.size();
    fftw_plan p = plan_for(n);
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    std::copy(x.begin(), x.end(), in);
    fftw_execute_dft_r2c(p, in, out);
    std::vector<std::complex<double>> result(n / 2 + 1);
    for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out[k][0], out[k][1]};
    fftw_free(in);
    fftw_free(out);
    return result;
}

std::vector<double> hann_periodic(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(n));
    return w;
}

}  // namespace wearmil::detail
