#include "sepkit/fft.hpp"

#include <cmath>

namespace sepkit {

bool is_power_of_two(long n) { return n > 0 && (n & (n - 1)) == 0; }

long next_power_of_two(long n) {
  long p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<Complex>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0) return;
  if (!is_power_of_two(static_cast<long>(n)))
    throw std::invalid_argument("fft size must be a power of two");

  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const Complex wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        Complex u = a[i + k];
        Complex v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

std::vector<Complex> rfft(const double* x, long n) {
  std::vector<Complex> buf(n);
  for (long i = 0; i < n; ++i) buf[i] = Complex(x[i], 0.0);
  fft_inplace(buf, false);
  buf.resize(n / 2 + 1);
  return buf;
}

std::vector<double> irfft(const Complex* spectrum, long n) {
  std::vector<Complex> buf(n);
  const long bins = n / 2 + 1;
  for (long f = 0; f < bins; ++f) buf[f] = spectrum[f];
  for (long f = bins; f < n; ++f) buf[f] = std::conj(spectrum[n - f]);
  fft_inplace(buf, true);
  std::vector<double> out(n);
  for (long i = 0; i < n; ++i) out[i] = buf[i].real();
  return out;
}

Signal fft_convolve(const Signal& a, const Signal& b) {
  if (a.empty() || b.empty()) return {};
  const long out_len = static_cast<long>(a.size() + b.size()) - 1;
  const long n = next_power_of_two(out_len);
  std::vector<Complex> fa(n, Complex(0, 0)), fb(n, Complex(0, 0));
  for (size_t i = 0; i < a.size(); ++i) fa[i] = Complex(a[i], 0.0);
  for (size_t i = 0; i < b.size(); ++i) fb[i] = Complex(b[i], 0.0);
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (long i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  Signal out(out_len);
  for (long i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace sepkit
