#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace echoset {

using cdouble = std::complex<double>;

/// In-place complex DFT of length data.size(). The forward transform uses the
/// e^{-i 2 pi k n / N} kernel; the inverse is normalized by 1/N.
/// Thread-safe: plans are created under a lock and cached per length.
void fft_inplace(std::vector<cdouble>& data, bool inverse);

/// Smallest length >= n whose only prime factors are 2, 3 and 5.
std::size_t fast_fft_length(std::size_t n);

/// Frequency in Hz of DFT bin k for length n at sampling rate fs
/// (negative for the upper half).
double bin_frequency(std::size_t k, std::size_t n, double fs);

} // namespace echoset
