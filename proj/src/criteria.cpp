#include "sepkit/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sepkit {

namespace {

double dot(const Signal& a, const Signal& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double energy(const Signal& a) { return dot(a, a); }

double capped_log_ratio(double num, double den, double eps) {
  const double v = 10.0 * std::log10((num + eps) / (den + eps));
  return std::clamp(v, -kDbCap, kDbCap);
}

void check_pair(const Signal& ref, const Signal& est, const char* op) {
  if (ref.size() != est.size())
    throw std::invalid_argument(std::string(op) + ": length mismatch");
  if (ref.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
  if (energy(ref) == 0.0)
    throw std::invalid_argument(std::string(op) + ": all-zero reference");
}

// Solves T x = b for symmetric Toeplitz T given by its first column,
// Levinson-Durbin with a general right-hand side.
std::vector<double> levinson_solve(const std::vector<double>& t,
                                   const std::vector<double>& b) {
  const int n = static_cast<int>(t.size());
  std::vector<double> x(n, 0.0), f(n, 0.0);
  if (t[0] == 0.0) throw std::invalid_argument("levinson: singular system");
  f[0] = 1.0 / t[0];
  x[0] = b[0] / t[0];
  // f is the forward vector solving T f = e_0 at each order
  for (int k = 1; k < n; ++k) {
    double ef = 0.0, ex = 0.0;
    for (int j = 0; j < k; ++j) {
      ef += t[k - j] * f[j];
      ex += t[k - j] * x[j];
    }
    const double denom = 1.0 - ef * ef;
    if (denom == 0.0) throw std::invalid_argument("levinson: singular system");
    // new forward vector from [f,0] and its reverse
    std::vector<double> fk(k + 1, 0.0);
    const double a = 1.0 / denom, c = -ef / denom;
    for (int j = 0; j <= k; ++j) {
      const double ff = j < k ? f[j] : 0.0;
      const double fr = j >= 1 ? f[k - j] : 0.0;
      fk[j] = a * ff + c * fr;
    }
    const double scale = b[k] - ex;
    for (int j = 0; j <= k; ++j) {
      const double fr = j >= 1 ? fk[k - j] : fk[k];
      x[j] = (j < k ? x[j] : 0.0) + scale * (j == 0 ? fk[k] : fr);
    }
    f.swap(fk);
  }
  return x;
}

}  // namespace

CriterionKind criterion_kind_from_name(const std::string& name) {
  if (name == "si_snr") return CriterionKind::si_snr;
  if (name == "snr") return CriterionKind::snr;
  if (name == "ci_sdr") return CriterionKind::ci_sdr;
  if (name == "mse_spectrum") return CriterionKind::mse_spectrum;
  if (name == "mse_mask") return CriterionKind::mse_mask;
  throw std::invalid_argument("unknown criterion: " + name);
}

std::string criterion_kind_name(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::si_snr: return "si_snr";
    case CriterionKind::snr: return "snr";
    case CriterionKind::ci_sdr: return "ci_sdr";
    case CriterionKind::mse_spectrum: return "mse_spectrum";
    case CriterionKind::mse_mask: return "mse_mask";
  }
  return "unknown";
}

double si_snr(const Signal& ref, const Signal& est, double eps) {
  check_pair(ref, est, "si_snr");
  const double scale = dot(est, ref) / energy(ref);
  double target = 0.0, error = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double t = scale * ref[i];
    const double e = est[i] - t;
    target += t * t;
    error += e * e;
  }
  return capped_log_ratio(target, error, eps);
}

double snr(const Signal& ref, const Signal& est, double eps) {
  check_pair(ref, est, "snr");
  double error = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double e = est[i] - ref[i];
    error += e * e;
  }
  return capped_log_ratio(energy(ref), error, eps);
}

double ci_sdr(const Signal& ref, const Signal& est, int filter_taps, double eps) {
  check_pair(ref, est, "ci_sdr");
  const int L = filter_taps;
  if (L < 1) throw std::invalid_argument("ci_sdr: filter_taps must be >= 1");
  const long n = static_cast<long>(ref.size());
  if (L >= n) throw std::invalid_argument("ci_sdr: filter_taps must be < length");

  // autocorrelation of ref and cross-correlation with est, zero-padded
  std::vector<double> auto_corr(L, 0.0), cross(L, 0.0);
  for (int k = 0; k < L; ++k) {
    double a = 0.0, c = 0.0;
    for (long i = k; i < n; ++i) {
      a += ref[i] * ref[i - k];
      c += est[i] * ref[i - k];
    }
    auto_corr[k] = a;
    cross[k] = c;
  }
  auto_corr[0] *= 1.0 + 1e-10;

  const std::vector<double> h = levinson_solve(auto_corr, cross);

  // filtered reference truncated to the estimate's support
  double target = 0.0, error = 0.0;
  for (long i = 0; i < n; ++i) {
    double y = 0.0;
    const int k_hi = static_cast<int>(std::min<long>(L - 1, i));
    for (int k = 0; k <= k_hi; ++k) y += h[k] * ref[i - k];
    const double e = est[i] - y;
    target += y * y;
    error += e * e;
  }
  return capped_log_ratio(target, error, eps);
}

double mse_spectrum(const ComplexSpectrogram& ref, const ComplexSpectrogram& est) {
  if (!ref.same_shape(est))
    throw std::invalid_argument("mse_spectrum: shape mismatch");
  if (ref.data.empty()) throw std::invalid_argument("mse_spectrum: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < ref.data.size(); ++i) acc += std::norm(ref.data[i] - est.data[i]);
  return acc / ref.data.size();
}

double mse_mask(const TFMask& ref, const TFMask& est) {
  if (ref.frames != est.frames || ref.bins != est.bins)
    throw std::invalid_argument("mse_mask: shape mismatch");
  if (ref.values.empty()) throw std::invalid_argument("mse_mask: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < ref.values.size(); ++i) {
    const double d = ref.values[i] - est.values[i];
    acc += d * d;
  }
  return acc / ref.values.size();
}

double evaluate_criterion(const CriterionSpec& spec, const Signal& ref,
                          const Signal& est) {
  switch (spec.kind) {
    case CriterionKind::si_snr: return si_snr(ref, est, spec.eps);
    case CriterionKind::snr: return snr(ref, est, spec.eps);
    case CriterionKind::ci_sdr: return ci_sdr(ref, est, spec.filter_taps, spec.eps);
    default:
      throw std::invalid_argument(
          "criterion " + criterion_kind_name(spec.kind) + " needs spectral inputs");
  }
}

double criterion_loss(const CriterionSpec& spec, const Signal& ref,
                      const Signal& est) {
  // dB criteria are higher-better; wrappers minimize
  return -evaluate_criterion(spec, ref, est);
}

}  // namespace sepkit
