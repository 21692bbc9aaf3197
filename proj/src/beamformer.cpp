#include "sepkit/beamformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sepkit {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Eigen::VectorXcd frame_vector(const ComplexSpectrogram& spec, int t, int f) {
  Eigen::VectorXcd y(spec.channels);
  for (int c = 0; c < spec.channels; ++c) y(c) = spec.at(t, f, c);
  return y;
}

Eigen::MatrixXcd loaded(const Eigen::MatrixXcd& a, double eps) {
  const double scale = a.trace().real() / a.rows();
  return a + eps * scale * Eigen::MatrixXcd::Identity(a.rows(), a.cols());
}

// rank-1 principal component sigma * v v^H
Eigen::MatrixXcd rank1_approx(const Eigen::MatrixXcd& phi) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(phi);
  const int last = static_cast<int>(phi.rows()) - 1;
  const double sigma = eig.eigenvalues()(last);
  const Eigen::VectorXcd v = eig.eigenvectors().col(last);
  return sigma * (v * v.adjoint());
}

}  // namespace

BeamformerVariant beamformer_variant_from_name(const std::string& name) {
  if (name == "mvdr_rtf") return BeamformerVariant::mvdr_rtf;
  if (name == "mvdr_souden") return BeamformerVariant::mvdr_souden;
  if (name == "wmpdr_rtf") return BeamformerVariant::wmpdr_rtf;
  if (name == "wmpdr_souden") return BeamformerVariant::wmpdr_souden;
  if (name == "wpd_rtf") return BeamformerVariant::wpd_rtf;
  if (name == "wpd_souden") return BeamformerVariant::wpd_souden;
  if (name == "sdw_mwf") return BeamformerVariant::sdw_mwf;
  if (name == "r1_mwf") return BeamformerVariant::r1_mwf;
  if (name == "mfmcwf") return BeamformerVariant::mfmcwf;
  throw std::invalid_argument("unknown beamformer variant: " + name);
}

std::string beamformer_variant_name(BeamformerVariant variant) {
  switch (variant) {
    case BeamformerVariant::mvdr_rtf: return "mvdr_rtf";
    case BeamformerVariant::mvdr_souden: return "mvdr_souden";
    case BeamformerVariant::wmpdr_rtf: return "wmpdr_rtf";
    case BeamformerVariant::wmpdr_souden: return "wmpdr_souden";
    case BeamformerVariant::wpd_rtf: return "wpd_rtf";
    case BeamformerVariant::wpd_souden: return "wpd_souden";
    case BeamformerVariant::sdw_mwf: return "sdw_mwf";
    case BeamformerVariant::r1_mwf: return "r1_mwf";
    case BeamformerVariant::mfmcwf: return "mfmcwf";
  }
  return "unknown";
}

TFMask ideal_ratio_mask(const ComplexSpectrogram& clean,
                        const ComplexSpectrogram& interference,
                        int ref_channel, double eps) {
  require(clean.same_shape(interference), "ideal_ratio_mask: shape mismatch");
  require(ref_channel >= 0 && ref_channel < clean.channels,
          "ideal_ratio_mask: bad reference channel");
  TFMask mask(clean.frames, clean.bins);
  for (int t = 0; t < clean.frames; ++t) {
    for (int f = 0; f < clean.bins; ++f) {
      const double s = std::abs(clean.at(t, f, ref_channel));
      const double n = std::abs(interference.at(t, f, ref_channel));
      mask.at(t, f) = s / (s + n + eps);
    }
  }
  return mask;
}

PsdMatrix estimate_psd(const ComplexSpectrogram& spec, const TFMask& mask) {
  require(spec.frames == mask.frames && spec.bins == mask.bins,
          "estimate_psd: mask shape mismatch");
  require(spec.frames > 0 && spec.channels > 0, "estimate_psd: empty input");
  PsdMatrix psd(spec.bins, spec.channels);
  for (int f = 0; f < spec.bins; ++f) {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(spec.channels, spec.channels);
    double mass = 0.0;
    for (int t = 0; t < spec.frames; ++t) {
      const double m = mask.at(t, f);
      if (m == 0.0) continue;
      const Eigen::VectorXcd y = frame_vector(spec, t, f);
      acc.noalias() += m * (y * y.adjoint());
      mass += m;
    }
    if (mass < 1e-8)
      throw std::runtime_error("estimate_psd: mask mass below floor at bin " +
                               std::to_string(f));
    acc /= mass;
    psd.phi[f] = 0.5 * (acc + acc.adjoint().eval());
  }
  return psd;
}

SteeringVectors steering_vector(const PsdMatrix& target_psd, int ref_channel) {
  require(ref_channel >= 0 && ref_channel < target_psd.channels,
          "steering_vector: bad reference channel");
  SteeringVectors out;
  out.bins = target_psd.bins;
  out.channels = target_psd.channels;
  out.d.resize(target_psd.bins);
  for (int f = 0; f < target_psd.bins; ++f) {
    if (!target_psd.phi[f].allFinite())
      throw std::invalid_argument("steering_vector: non-finite matrix at bin " +
                                  std::to_string(f));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(target_psd.phi[f]);
    Eigen::VectorXcd v = eig.eigenvectors().col(target_psd.channels - 1);
    v.normalize();
    const Complex r = v(ref_channel);
    if (std::abs(r) > 0.0) v *= std::conj(r) / std::abs(r);
    out.d[f] = v;
  }
  return out;
}

PsdMatrix diag_load(const PsdMatrix& psd, double eps) {
  require(eps >= 0.0, "diag_load: eps must be >= 0");
  PsdMatrix out = psd;
  for (auto& phi : out.phi) phi = loaded(phi, eps);
  return out;
}

Eigen::MatrixXcd solve_hermitian(const Eigen::MatrixXcd& a,
                                 const Eigen::MatrixXcd& b, double eps) {
  {
    Eigen::LLT<Eigen::MatrixXcd> llt(a);
    if (llt.info() == Eigen::Success) return llt.solve(b);
  }
  double e = eps > 0.0 ? eps : 1e-6;
  for (; e <= 1e-2 * (1.0 + 1e-12); e *= 10.0) {
    Eigen::LLT<Eigen::MatrixXcd> llt(loaded(a, e));
    if (llt.info() == Eigen::Success) return llt.solve(b);
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(loaded(a, 1e-2));
  if (lu.isInvertible()) return lu.solve(b);
  throw std::runtime_error("solve_hermitian: singular matrix after diagonal loading");
}

PowerWeights power_weights_from_mask(const ComplexSpectrogram& spec,
                                     const TFMask& mask, double mask_floor,
                                     double rel_floor) {
  require(spec.frames == mask.frames && spec.bins == mask.bins,
          "power_weights_from_mask: mask shape mismatch");
  PowerWeights lambda(spec.frames, spec.bins);
  double max_power = 0.0;
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      double p = 0.0;
      for (int c = 0; c < spec.channels; ++c) p += std::norm(spec.at(t, f, c));
      p /= spec.channels;
      lambda.at(t, f) = p;
      max_power = std::max(max_power, p);
    }
  }
  const double floor = max_power > 0.0 ? rel_floor * max_power : 1.0;
  for (int t = 0; t < spec.frames; ++t)
    for (int f = 0; f < spec.bins; ++f)
      lambda.at(t, f) =
          std::max(std::max(mask.at(t, f), mask_floor) * lambda.at(t, f), floor);
  return lambda;
}

PsdMatrix weighted_observation_psd(const ComplexSpectrogram& spec,
                                   const PowerWeights& lambda) {
  require(spec.frames == lambda.frames && spec.bins == lambda.bins,
          "weighted_observation_psd: lambda shape mismatch");
  PsdMatrix psd(spec.bins, spec.channels);
  for (int f = 0; f < spec.bins; ++f) {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(spec.channels, spec.channels);
    for (int t = 0; t < spec.frames; ++t) {
      const double lam = lambda.at(t, f);
      if (lam <= 0.0)
        throw std::invalid_argument("weighted_observation_psd: lambda not positive");
      const Eigen::VectorXcd y = frame_vector(spec, t, f);
      acc.noalias() += (y * y.adjoint()) / lam;
    }
    acc /= spec.frames;
    psd.phi[f] = 0.5 * (acc + acc.adjoint().eval());
  }
  return psd;
}

ComplexSpectrogram stack_frames(const ComplexSpectrogram& spec, int taps, int delay) {
  require(taps >= 1, "stack_frames: taps must be >= 1");
  require(delay >= 0, "stack_frames: delay must be >= 0");
  require(taps == 1 || delay >= 1,
          "stack_frames: delay must be >= 1 when taps > 1");
  ComplexSpectrogram out(spec.frames, spec.bins, spec.channels * taps);
  out.hop = spec.hop;
  out.sample_rate = spec.sample_rate;
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      for (int k = 0; k < taps; ++k) {
        const int src = k == 0 ? t : t - delay - (k - 1);
        for (int c = 0; c < spec.channels; ++c)
          out.at(t, f, k * spec.channels + c) =
              src >= 0 ? spec.at(src, f, c) : Complex(0.0, 0.0);
      }
    }
  }
  return out;
}

BeamformerWeights compute_weights(const BeamformerConfig& cfg,
                                  const BeamformerProblem& in) {
  using V = BeamformerVariant;
  const bool weighted = cfg.variant == V::wmpdr_rtf || cfg.variant == V::wmpdr_souden ||
                        cfg.variant == V::wpd_rtf || cfg.variant == V::wpd_souden;
  const bool stacked = cfg.variant == V::wpd_rtf || cfg.variant == V::wpd_souden ||
                       cfg.variant == V::mfmcwf;
  const bool rtf = cfg.variant == V::mvdr_rtf || cfg.variant == V::wmpdr_rtf ||
                   cfg.variant == V::wpd_rtf;
  const bool souden = cfg.variant == V::mvdr_souden || cfg.variant == V::wmpdr_souden ||
                      cfg.variant == V::wpd_souden;

  if (weighted) {
    require(in.observation != nullptr, "compute_weights: missing observation");
    require(in.lambda != nullptr, "compute_weights: missing lambda for weighted variant");
  }
  if (rtf) require(in.steering != nullptr, "compute_weights: missing steering vectors");
  if (souden || cfg.variant == V::sdw_mwf || cfg.variant == V::r1_mwf)
    require(in.target_psd != nullptr, "compute_weights: missing target PSD");
  if (cfg.variant == V::mvdr_rtf || cfg.variant == V::mvdr_souden ||
      cfg.variant == V::sdw_mwf || cfg.variant == V::r1_mwf)
    require(in.noise_psd != nullptr, "compute_weights: missing noise PSD");
  if (cfg.variant == V::mfmcwf) {
    require(in.observation != nullptr, "compute_weights: missing observation");
    require(in.target != nullptr, "compute_weights: missing target for mfmcwf");
    require(in.target->channels == 1, "compute_weights: mfmcwf target must be 1 channel");
  }
  require(cfg.mu >= 0.0, "compute_weights: mu must be >= 0");

  const int taps = stacked ? cfg.taps : 1;
  const int delay = stacked ? cfg.delay : 0;

  int bins = 0, channels = 0;
  if (weighted || stacked) {
    bins = in.observation->bins;
    channels = in.observation->channels;
  } else if (in.noise_psd != nullptr) {
    bins = in.noise_psd->bins;
    channels = in.noise_psd->channels;
  }
  require(bins > 0 && channels > 0, "compute_weights: no input shapes");
  require(cfg.ref_channel >= 0 && cfg.ref_channel < channels,
          "compute_weights: bad reference channel");

  // the covariance the quadratic form minimizes, built per variant
  PsdMatrix cov;
  ComplexSpectrogram stacked_obs;
  if (stacked) {
    stacked_obs = stack_frames(*in.observation, taps, delay);
    if (weighted) cov = weighted_observation_psd(stacked_obs, *in.lambda);
  } else if (weighted) {
    cov = weighted_observation_psd(*in.observation, *in.lambda);
  } else if (in.noise_psd != nullptr) {
    cov = *in.noise_psd;
  }

  const int dim = channels * taps;
  BeamformerWeights out;
  out.bins = bins;
  out.channels = channels;
  out.taps = taps;
  out.delay = delay;
  out.ref_channel = cfg.ref_channel;
  out.w.resize(bins);

  for (int f = 0; f < bins; ++f) {
    switch (cfg.variant) {
      case V::mvdr_rtf:
      case V::wmpdr_rtf:
      case V::wpd_rtf: {
        Eigen::VectorXcd d = Eigen::VectorXcd::Zero(dim);
        d.head(channels) = in.steering->d[f];
        const Eigen::VectorXcd x = solve_hermitian(cov.phi[f], d, cfg.diag_eps);
        const Complex denom = d.dot(x);  // d^H x
        if (std::abs(denom) == 0.0)
          throw std::runtime_error("compute_weights: degenerate steering at bin " +
                                   std::to_string(f));
        out.w[f] = x / denom;
        break;
      }
      case V::mvdr_souden:
      case V::wmpdr_souden:
      case V::wpd_souden: {
        Eigen::MatrixXcd phi_s = Eigen::MatrixXcd::Zero(dim, dim);
        phi_s.topLeftCorner(channels, channels) = in.target_psd->phi[f];
        const Eigen::MatrixXcd t = solve_hermitian(cov.phi[f], phi_s, cfg.diag_eps);
        const Complex tr = t.trace();
        if (std::abs(tr) == 0.0)
          throw std::runtime_error("compute_weights: zero target trace at bin " +
                                   std::to_string(f));
        out.w[f] = t.col(cfg.ref_channel) / tr;
        break;
      }
      case V::sdw_mwf: {
        const Eigen::MatrixXcd a =
            in.target_psd->phi[f] + cfg.mu * in.noise_psd->phi[f];
        const Eigen::MatrixXcd t =
            solve_hermitian(a, in.target_psd->phi[f], cfg.diag_eps);
        out.w[f] = t.col(cfg.ref_channel);
        break;
      }
      case V::r1_mwf: {
        const Eigen::MatrixXcd phi1 = rank1_approx(in.target_psd->phi[f]);
        const Eigen::MatrixXcd t = solve_hermitian(in.noise_psd->phi[f], phi1, cfg.diag_eps);
        const Complex denom = cfg.mu + t.trace();
        if (std::abs(denom) == 0.0)
          throw std::runtime_error("compute_weights: degenerate r1 trace at bin " +
                                   std::to_string(f));
        out.w[f] = t.col(cfg.ref_channel) / denom;
        break;
      }
      case V::mfmcwf: {
        Eigen::MatrixXcd gram = Eigen::MatrixXcd::Zero(dim, dim);
        Eigen::VectorXcd cross = Eigen::VectorXcd::Zero(dim);
        for (int t = 0; t < stacked_obs.frames; ++t) {
          const Eigen::VectorXcd y = frame_vector(stacked_obs, t, f);
          gram.noalias() += y * y.adjoint();
          cross.noalias() += y * std::conj(in.target->at(t, f, 0));
        }
        gram = 0.5 * (gram + gram.adjoint().eval());
        out.w[f] = solve_hermitian(gram, cross, cfg.diag_eps);
        break;
      }
    }
    if (!out.w[f].allFinite())
      throw std::runtime_error("compute_weights: non-finite weights at bin " +
                               std::to_string(f));
  }
  return out;
}

ComplexSpectrogram apply_beamformer(const BeamformerWeights& weights,
                                    const ComplexSpectrogram& spec) {
  require(weights.bins == spec.bins, "apply_beamformer: bin mismatch");
  require(weights.channels == spec.channels, "apply_beamformer: channel mismatch");
  const ComplexSpectrogram* input = &spec;
  ComplexSpectrogram stacked;
  if (weights.taps > 1) {
    stacked = stack_frames(spec, weights.taps, weights.delay);
    input = &stacked;
  }
  ComplexSpectrogram out(spec.frames, spec.bins, 1);
  out.hop = spec.hop;
  out.sample_rate = spec.sample_rate;
  for (int t = 0; t < spec.frames; ++t)
    for (int f = 0; f < spec.bins; ++f)
      out.at(t, f, 0) = weights.w[f].dot(frame_vector(*input, t, f));  // w^H y
  return out;
}

ComplexSpectrogram enhance_with_masks(const BeamformerConfig& cfg,
                                      const ComplexSpectrogram& mixture,
                                      const TFMask& target_mask,
                                      const TFMask& noise_mask) {
  using V = BeamformerVariant;
  require(cfg.variant != V::mfmcwf,
          "enhance_with_masks: mfmcwf needs an explicit regression target");

  // floor the mask copies so sparse masks cannot empty a bin's average
  TFMask tm = target_mask, nm = noise_mask;
  for (double& v : tm.values) v = std::max(v, 1e-4);
  for (double& v : nm.values) v = std::max(v, 1e-4);

  const PsdMatrix phi_s = estimate_psd(mixture, tm);
  const PsdMatrix phi_n = estimate_psd(mixture, nm);

  BeamformerProblem in;
  in.target_psd = &phi_s;
  in.noise_psd = &phi_n;
  in.observation = &mixture;

  SteeringVectors steering;
  const bool rtf = cfg.variant == V::mvdr_rtf || cfg.variant == V::wmpdr_rtf ||
                   cfg.variant == V::wpd_rtf;
  if (rtf) {
    steering = steering_vector(phi_s, cfg.ref_channel);
    // RTF convention: unit gain toward the target at the reference mic
    for (auto& d : steering.d) {
      const Complex r = d(cfg.ref_channel);
      if (std::abs(r) > 1e-12) d /= r;
    }
    in.steering = &steering;
  }

  PowerWeights lambda;
  const bool weighted = cfg.variant == V::wmpdr_rtf || cfg.variant == V::wmpdr_souden ||
                        cfg.variant == V::wpd_rtf || cfg.variant == V::wpd_souden;
  if (weighted) {
    lambda = power_weights_from_mask(mixture, target_mask, 1e-4, cfg.lambda_floor);
    in.lambda = &lambda;
  }

  const BeamformerWeights w = compute_weights(cfg, in);
  return apply_beamformer(w, mixture);
}

}  // namespace sepkit
