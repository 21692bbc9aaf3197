#ifndef SEPKIT_BSS_HPP
#define SEPKIT_BSS_HPP

#include <Eigen/Dense>
#include <vector>

#include "sepkit/stft.hpp"
#include "sepkit/types.hpp"

namespace sepkit {

// Demixing system left behind by auxiva_iss. W holds one S x S matrix per
// bin, Z the separated S-channel spectrogram, objective the surrogate value
// at initialization and after each sweep.
struct DemixingState {
  int bins = 0;
  int sources = 0;
  std::vector<Eigen::MatrixXcd> W;
  ComplexSpectrogram Z;
  int iterations = 0;
  std::vector<double> objective;
};

struct BssResult {
  std::vector<ComplexSpectrogram> sources;  // one single-channel spectrogram each
  DemixingState state;
};

// STFT settings used when separating waveforms (longer frames than the
// enhancement default).
StftConfig bss_stft_config();

// Determined blind source separation with iterative source steering updates.
// Per sweep, for each steering index k: auxiliary weights
// phi_s(t) = 1 / max(r_s(t), contrast_eps) with r_s(t) the per-frame source
// norm across bins, then a rank-1 update of W and Z per bin. n_sources = 0
// separates all channels; 0 < n_sources < channels keeps only the first
// n_sources channels and warns on stderr.
BssResult auxiva_iss(const ComplexSpectrogram& spec, int n_iter = 50,
                     double contrast_eps = 1e-8, int n_sources = 0);

// Per-bin least-squares rescaling of each separated source against the
// mixture reference channel. All-zero source bins get scale 0.
std::vector<ComplexSpectrogram> projection_back(
    const std::vector<ComplexSpectrogram>& separated,
    const ComplexSpectrogram& mixture, int ref_channel = 0);

// sum_t sum_s r_s(t) - T * sum_f log|det W(f)|, the separation surrogate
// recorded in DemixingState::objective. This is the exact majorization
// target of the ISS updates above, so it is non-increasing across sweeps;
// doubling the log-det term breaks that guarantee (the unit-variance
// normalization can then raise it).
double iva_surrogate(const std::vector<Eigen::MatrixXcd>& W,
                     const ComplexSpectrogram& Z);

}  // namespace sepkit

#endif  // SEPKIT_BSS_HPP
