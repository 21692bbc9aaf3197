#ifndef SEPKIT_FFT_HPP
#define SEPKIT_FFT_HPP

#include <vector>

#include "sepkit/types.hpp"

namespace sepkit {

bool is_power_of_two(long n);
long next_power_of_two(long n);

// In-place radix-2 Cooley-Tukey. Size must be a power of two.
// The inverse applies the 1/n factor.
void fft_inplace(std::vector<Complex>& a, bool inverse);

// Real-input forward transform, returns n/2+1 bins.
std::vector<Complex> rfft(const double* x, long n);

// Inverse of rfft: n/2+1 bins back to n real samples.
std::vector<double> irfft(const Complex* spectrum, long n);

// Full linear convolution via zero-padded FFT, length a+b-1.
Signal fft_convolve(const Signal& a, const Signal& b);

}  // namespace sepkit

#endif
