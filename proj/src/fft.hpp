#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace wearmil::detail {

/// Real-input forward DFT of length n (FFTW r2c). Returns n/2+1 bins.
/// Plans are cached per length; execution is safe from multiple threads.
std::vector<std::complex<double>> rfft(std::span<const double> x);

// Periodic Hann window of length n.
std::vector<double> hann_periodic(std::size_t n);

}  // namespace wearmil::detail
