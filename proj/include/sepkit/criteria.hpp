#ifndef SEPKIT_CRITERIA_HPP
#define SEPKIT_CRITERIA_HPP

#include <string>

#include "sepkit/types.hpp"

namespace sepkit {

// dB ratios saturate here; eps regularizes both ratio terms.
constexpr double kDbCap = 60.0;
constexpr double kCriterionEps = 1e-8;

enum class CriterionKind { si_snr, snr, ci_sdr, mse_spectrum, mse_mask };

struct CriterionSpec {
  CriterionKind kind = CriterionKind::si_snr;
  double eps = kCriterionEps;
  int filter_taps = 512;  // ci_sdr only
};

CriterionKind criterion_kind_from_name(const std::string& name);
std::string criterion_kind_name(CriterionKind kind);

// 10*log10(|s_t|^2 / |e|^2), s_t the projection of est onto ref.
double si_snr(const Signal& ref, const Signal& est, double eps = kCriterionEps);

// 10*log10(|ref|^2 / |est - ref|^2)
double snr(const Signal& ref, const Signal& est, double eps = kCriterionEps);

// Convolutive SDR: least-squares FIR h (filter_taps long) mapping ref
// to est, then 10*log10(|h*ref|^2 / |est - h*ref|^2). The normal
// equations are Toeplitz (correlation method) and solved by
// Levinson-Durbin with relative diagonal loading 1e-10.
double ci_sdr(const Signal& ref, const Signal& est, int filter_taps = 512,
              double eps = kCriterionEps);

// Mean squared magnitude difference over all (frame, bin, channel) cells.
double mse_spectrum(const ComplexSpectrogram& ref, const ComplexSpectrogram& est);
double mse_mask(const TFMask& ref, const TFMask& est);

// Raw criterion value in its native convention (dB higher-better, MSE
// lower-better) for waveform criteria.
double evaluate_criterion(const CriterionSpec& spec, const Signal& ref,
                          const Signal& est);

// Lower-is-better convention used inside wrappers: dB criteria negated.
double criterion_loss(const CriterionSpec& spec, const Signal& ref,
                      const Signal& est);

}  // namespace sepkit

#endif
