#ifndef SEPKIT_SYNTH_HPP
#define SEPKIT_SYNTH_HPP

#include "sepkit/rng.hpp"
#include "sepkit/types.hpp"

namespace sepkit {

// Unit-variance Gaussian noise.
Signal white_noise(Rng& rng, long num_samples);

// Unit-variance Laplacian samples under a piecewise-random amplitude
// envelope (200 ms segments, amplitude u^2 with u ~ U(0.1, 1)). The heavy
// per-sample marginals and frame-scale level changes survive into STFT
// coefficients, which plain iid Laplacian noise does not.
Signal modulated_laplacian(Rng& rng, long num_samples, double sample_rate);

// Speech-shaped test utterance: 12 log-spaced noise bands over 100-7600 Hz,
// each under an independent 150-350 ms amplitude envelope (u^2 with
// u ~ U(0.03, 1)), gated by broadband pauses (p = 0.3 per segment). Gives
// the time-frequency sparsity that mask-based enhancement feeds on.
Signal modulated_utterance(Rng& rng, long num_samples, double sample_rate);

}  // namespace sepkit

#endif
