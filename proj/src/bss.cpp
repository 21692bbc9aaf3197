#include "sepkit/bss.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>

namespace sepkit {

namespace {

// per-bin S x T views gathered from a frame-major spectrogram
std::vector<Eigen::MatrixXcd> gather_bins(const ComplexSpectrogram& spec, int S) {
  std::vector<Eigen::MatrixXcd> z(spec.bins);
  for (int f = 0; f < spec.bins; ++f) {
    Eigen::MatrixXcd m(S, spec.frames);
    for (int t = 0; t < spec.frames; ++t)
      for (int s = 0; s < S; ++s) m(s, t) = spec.at(t, f, s);
    z[f] = std::move(m);
  }
  return z;
}

// r_s(t): per-frame norm of each source across bins, S x T
Eigen::ArrayXXd frame_norms(const std::vector<Eigen::MatrixXcd>& z, int S, int T) {
  Eigen::ArrayXXd r2 = Eigen::ArrayXXd::Zero(S, T);
  for (const auto& m : z) r2 += m.array().abs2();
  return r2.sqrt();
}

double surrogate_of(const std::vector<Eigen::MatrixXcd>& w,
                    const std::vector<Eigen::MatrixXcd>& z, int S, int T) {
  const double contrast = frame_norms(z, S, T).sum();
  double log_det = 0.0;
  for (const auto& m : w) log_det += std::log(std::abs(m.determinant()));
  return contrast - static_cast<double>(T) * log_det;
}

}  // namespace

StftConfig bss_stft_config() {
  StftConfig cfg;
  cfg.n_fft = 1024;
  cfg.hop = 256;
  cfg.win_length = 1024;
  return cfg;
}

BssResult auxiva_iss(const ComplexSpectrogram& spec, int n_iter,
                     double contrast_eps, int n_sources) {
  if (spec.frames <= 0 || spec.bins <= 0)
    throw std::invalid_argument("auxiva_iss: empty spectrogram");
  if (n_iter < 0)
    throw std::invalid_argument("auxiva_iss: negative iteration count");
  if (contrast_eps <= 0.0)
    throw std::invalid_argument("auxiva_iss: contrast_eps must be positive");
  const int M = spec.channels;
  const int S = n_sources > 0 ? n_sources : M;
  if (S > M) throw std::invalid_argument("auxiva_iss: more sources than channels");
  if (S < 2) throw std::invalid_argument("auxiva_iss: needs at least two sources");
  if (S < M)
    std::fprintf(stderr, "auxiva_iss: keeping the first %d of %d channels\n", S, M);

  const int T = spec.frames;
  const int F = spec.bins;

  std::vector<Eigen::MatrixXcd> z = gather_bins(spec, S);
  std::vector<Eigen::MatrixXcd> w(F, Eigen::MatrixXcd::Identity(S, S));

  DemixingState state;
  state.bins = F;
  state.sources = S;
  state.objective.reserve(n_iter + 1);
  state.objective.push_back(surrogate_of(w, z, S, T));

  Eigen::VectorXcd v(S);
  for (int iter = 1; iter <= n_iter; ++iter) {
    for (int k = 0; k < S; ++k) {
      const Eigen::ArrayXXd phi = frame_norms(z, S, T).max(contrast_eps).inverse();
      for (int f = 0; f < F; ++f) {
        const Eigen::RowVectorXcd zk = z[f].row(k);  // pre-update snapshot
        for (int s = 0; s < S; ++s) {
          if (s == k) {
            double u = 0.0;
            for (int t = 0; t < T; ++t) u += phi(k, t) * std::norm(zk(t));
            v(s) = Complex(1.0 - 1.0 / std::sqrt(u / T), 0.0);
          } else {
            Complex num(0.0, 0.0);
            double den = 0.0;
            for (int t = 0; t < T; ++t) {
              const double p = phi(s, t);
              num += p * z[f](s, t) * std::conj(zk(t));
              den += p * std::norm(zk(t));
            }
            v(s) = num / den;
          }
        }
        if (!v.allFinite())
          throw std::runtime_error("auxiva_iss: non-finite update at iteration " +
                                   std::to_string(iter) + " (bin " +
                                   std::to_string(f) + ")");
        const Eigen::RowVectorXcd wk = w[f].row(k);
        z[f].noalias() -= v * zk;
        w[f].noalias() -= v * wk;
      }
    }
    state.objective.push_back(surrogate_of(w, z, S, T));
  }

  state.iterations = n_iter;
  state.W = std::move(w);
  state.Z = ComplexSpectrogram(T, F, S);
  state.Z.hop = spec.hop;
  state.Z.sample_rate = spec.sample_rate;
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f)
      for (int s = 0; s < S; ++s) state.Z.at(t, f, s) = z[f](s, t);

  BssResult result;
  result.sources.reserve(S);
  for (int s = 0; s < S; ++s) {
    ComplexSpectrogram src(T, F, 1);
    src.hop = spec.hop;
    src.sample_rate = spec.sample_rate;
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) src.at(t, f, 0) = z[f](s, t);
    result.sources.push_back(std::move(src));
  }
  result.state = std::move(state);
  return result;
}

std::vector<ComplexSpectrogram> projection_back(
    const std::vector<ComplexSpectrogram>& separated,
    const ComplexSpectrogram& mixture, int ref_channel) {
  if (ref_channel < 0 || ref_channel >= mixture.channels)
    throw std::invalid_argument("projection_back: reference channel out of range");
  std::vector<ComplexSpectrogram> out;
  out.reserve(separated.size());
  for (const ComplexSpectrogram& src : separated) {
    if (src.frames != mixture.frames || src.bins != mixture.bins)
      throw std::invalid_argument("projection_back: shape mismatch with mixture");
    if (src.channels != 1)
      throw std::invalid_argument("projection_back: sources must be single-channel");
    ComplexSpectrogram scaled = src;
    for (int f = 0; f < src.bins; ++f) {
      Complex num(0.0, 0.0);
      double den = 0.0;
      for (int t = 0; t < src.frames; ++t) {
        const Complex zv = src.at(t, f, 0);
        num += std::conj(zv) * mixture.at(t, f, ref_channel);
        den += std::norm(zv);
      }
      const Complex c = den > 0.0 ? num / den : Complex(0.0, 0.0);
      for (int t = 0; t < src.frames; ++t) scaled.at(t, f, 0) = c * src.at(t, f, 0);
    }
    out.push_back(std::move(scaled));
  }
  return out;
}

double iva_surrogate(const std::vector<Eigen::MatrixXcd>& W,
                     const ComplexSpectrogram& Z) {
  if (static_cast<int>(W.size()) != Z.bins)
    throw std::invalid_argument("iva_surrogate: bin count mismatch");
  double contrast = 0.0;
  for (int t = 0; t < Z.frames; ++t)
    for (int s = 0; s < Z.channels; ++s) {
      double r2 = 0.0;
      for (int f = 0; f < Z.bins; ++f) r2 += std::norm(Z.at(t, f, s));
      contrast += std::sqrt(r2);
    }
  double log_det = 0.0;
  for (const auto& m : W) log_det += std::log(std::abs(m.determinant()));
  return contrast - static_cast<double>(Z.frames) * log_det;
}

}  // namespace sepkit
