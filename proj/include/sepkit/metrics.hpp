#ifndef SEPKIT_METRICS_HPP
#define SEPKIT_METRICS_HPP

#include <string>
#include <vector>

#include "sepkit/types.hpp"

namespace sepkit {

// Rational-rate conversion in a single polyphase pass: Kaiser-windowed
// sinc (beta 14), cutoff at the lower Nyquist, 16 zero crossings per
// side at the cutoff rate. Output length ceil(n * fs_out / fs_in).
Signal resample(const Signal& x, double fs_in, double fs_out);

// Short-time objective intelligibility of est against ref, both mono at
// the same rate, fs >= 10 kHz. Both signals are resampled to 10 kHz;
// frames more than 40 dB below the loudest reference frame are dropped
// from both; magnitudes (256-sample hann frames, hop 128, 512-point
// transform) are pooled into 15 one-third-octave bands from 150 Hz; over
// sliding 30-frame segments the estimate is scale-matched per band,
// clipped at a -15 dB error bound, and correlated with the reference.
// Returns the mean correlation, typically in [0, 1].
double stoi(const Signal& ref, const Signal& est, double fs);

// si_snr(ref, est) - si_snr(ref, mixture_ref_channel). Zero when the
// estimate is the unprocessed mixture channel.
double si_snr_improvement(const Signal& mixture_ref_channel, const Signal& est,
                          const Signal& ref);

// One evaluated utterance; values are parallel to the requested metric
// list ("stoi" dimensionless, the rest dB).
struct MetricRow {
  std::string utterance_id;
  std::vector<double> values;
};

struct MetricTable {
  std::vector<std::string> metrics;  // column names as requested
  std::vector<MetricRow> rows;       // sorted by utterance_id
  std::vector<double> means;         // arithmetic mean per column
};

struct EvalOptions {
  int jobs = 1;
  int ci_sdr_taps = 512;
};

// Known metric names: stoi, si_snr, ci_sdr, si_snri.
bool is_known_metric(const std::string& name);

// Scores every utterance listed in the reference manifest. Manifest
// lines are "utterance_id<TAB>wav_path[<TAB>channel]"; the optional
// third column designates which channel of a multichannel file to
// score (default 0). The three manifests must list the same ids;
// missing or extra ids are reported by name. The mixture manifest is
// only read when si_snri is requested, but its id set is always
// validated. Rows come back sorted by utterance_id; evaluation runs on
// opts.jobs threads and the result is independent of the thread count.
MetricTable evaluate_corpus(const std::string& ref_manifest,
                            const std::string& est_manifest,
                            const std::string& mixture_manifest,
                            const std::vector<std::string>& metrics,
                            const EvalOptions& opts = {});

// Tab-separated table: header, one row per utterance, final "mean" row.
std::string format_metric_table(const MetricTable& table);

// Aligned human-readable table with a title line; the PESQ column is
// reported as n/a (no licensed reference implementation).
std::string format_summary(const MetricTable& table, const std::string& title);

}  // namespace sepkit

#endif
