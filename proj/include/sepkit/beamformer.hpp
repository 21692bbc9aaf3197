#ifndef SEPKIT_BEAMFORMER_HPP
#define SEPKIT_BEAMFORMER_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sepkit/types.hpp"

namespace sepkit {

// Per-frequency M x M spatial covariance, Hermitian per bin.
struct PsdMatrix {
  int bins = 0;
  int channels = 0;
  std::vector<Eigen::MatrixXcd> phi;

  PsdMatrix() = default;
  PsdMatrix(int b, int m)
      : bins(b), channels(m), phi(b, Eigen::MatrixXcd::Zero(m, m)) {}
};

// Per-frequency target direction vector d.
struct SteeringVectors {
  int bins = 0;
  int channels = 0;
  std::vector<Eigen::VectorXcd> d;
};

// Time-varying target power estimate, strictly positive.
struct PowerWeights {
  int frames = 0;
  int bins = 0;
  std::vector<double> values;

  PowerWeights() = default;
  PowerWeights(int t, int f)
      : frames(t), bins(f), values(static_cast<size_t>(t) * f, 0.0) {}

  double& at(int t, int f) { return values[static_cast<size_t>(t) * bins + f]; }
  double at(int t, int f) const { return values[static_cast<size_t>(t) * bins + f]; }
};

enum class BeamformerVariant {
  mvdr_rtf,
  mvdr_souden,
  wmpdr_rtf,
  wmpdr_souden,
  wpd_rtf,
  wpd_souden,
  sdw_mwf,
  r1_mwf,
  mfmcwf,
};

BeamformerVariant beamformer_variant_from_name(const std::string& name);
std::string beamformer_variant_name(BeamformerVariant variant);

struct BeamformerConfig {
  BeamformerVariant variant = BeamformerVariant::mvdr_souden;
  int ref_channel = 0;
  double mu = 1.0;          // distortion weight, SDW-MWF / r1-MWF
  double diag_eps = 1e-6;   // diagonal loading factor for solves
  int taps = 5;             // K, multi-frame variants
  int delay = 3;            // D, prediction delay in frames
  double lambda_floor = 1e-8;
};

// Per-bin filters of length channels*taps; taps > 1 implies the same
// frame stacking as compute_weights used.
struct BeamformerWeights {
  int bins = 0;
  int channels = 0;
  int taps = 1;
  int delay = 0;
  int ref_channel = 0;
  std::vector<Eigen::VectorXcd> w;
};

// Variant-dependent inputs; unused fields may stay null.
struct BeamformerProblem {
  const PsdMatrix* target_psd = nullptr;            // Souden and MWF forms
  const PsdMatrix* noise_psd = nullptr;             // plain MVDR / MWF forms
  const SteeringVectors* steering = nullptr;        // rtf forms
  const ComplexSpectrogram* observation = nullptr;  // weighted and multi-frame forms
  const PowerWeights* lambda = nullptr;             // wmpdr / wpd
  const ComplexSpectrogram* target = nullptr;       // mfmcwf regression target, 1 channel
};

// |S| / (|S| + |N| + eps) at the reference channel.
TFMask ideal_ratio_mask(const ComplexSpectrogram& clean,
                        const ComplexSpectrogram& interference,
                        int ref_channel = 0, double eps = 1e-8);

// Mask-weighted normalized covariance, Hermitian-symmetrized.
PsdMatrix estimate_psd(const ComplexSpectrogram& spec, const TFMask& mask);

// Principal eigenvector per bin, unit norm, reference entry rotated
// real-positive. Never rescaled beyond that; RTF normalization is the
// caller's choice.
SteeringVectors steering_vector(const PsdMatrix& target_psd, int ref_channel = 0);

// Phi + eps*(trace/M)*I per bin.
PsdMatrix diag_load(const PsdMatrix& psd, double eps);

// Solve A X = B for Hermitian A: Cholesky, then escalating diagonal
// loading (x10 up to 1e-2), then fully pivoted LU, then error.
Eigen::MatrixXcd solve_hermitian(const Eigen::MatrixXcd& a,
                                 const Eigen::MatrixXcd& b, double eps);

// lambda(t,f) = max(mask_floored * mean channel power, rel_floor * max power).
PowerWeights power_weights_from_mask(const ComplexSpectrogram& spec,
                                     const TFMask& mask,
                                     double mask_floor = 1e-4,
                                     double rel_floor = 1e-8);

// R(f) = (1/T) sum_t y y^H / lambda(t,f), symmetrized.
PsdMatrix weighted_observation_psd(const ComplexSpectrogram& spec,
                                   const PowerWeights& lambda);

// Multi-frame stacking [y_t; y_{t-D}; ...; y_{t-D-K+2}], channels*K wide,
// out-of-range frames zero.
ComplexSpectrogram stack_frames(const ComplexSpectrogram& spec, int taps, int delay);

BeamformerWeights compute_weights(const BeamformerConfig& cfg,
                                  const BeamformerProblem& in);

// s(t,f) = w(f)^H y~(t,f); single-channel output.
ComplexSpectrogram apply_beamformer(const BeamformerWeights& weights,
                                    const ComplexSpectrogram& spec);

// Oracle-mask convenience path: PSDs from the masks, steering/lambda as
// the variant needs, then weights and filtering.
ComplexSpectrogram enhance_with_masks(const BeamformerConfig& cfg,
                                      const ComplexSpectrogram& mixture,
                                      const TFMask& target_mask,
                                      const TFMask& noise_mask);

}  // namespace sepkit

#endif
