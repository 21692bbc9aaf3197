#ifndef SEPKIT_PIPELINE_HPP
#define SEPKIT_PIPELINE_HPP

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/beamformer.hpp"
#include "sepkit/stft.hpp"
#include "sepkit/types.hpp"
#include "sepkit/wrappers.hpp"

namespace sepkit {

inline constexpr const char* kSepkitVersion = "0.1.0";

// Exit-code taxonomy: 2 validation, 3 missing input, 4 runtime failure.
enum class PipelineErrorKind { validation = 2, missing_input = 3, runtime = 4 };

class PipelineError : public std::runtime_error {
 public:
  PipelineError(PipelineErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  PipelineErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  PipelineErrorKind kind_;
};

// Enhancement over one corpus. Methods: every BeamformerVariant name,
// plus auxiva_iss and passthrough. Mask-based methods take their masks
// either from oracle components listed in the scene manifest
// (oracle_irm) or from NPY files listed in mask_manifest (from_files,
// lines "id<TAB>target_mask.npy<TAB>noise_mask.npy"). auxiva_iss
// separates all channels and keeps the source with the best SI-SNR
// against the oracle target when that file exists, otherwise against
// the mixture reference channel. passthrough copies the reference
// channel unchanged.
struct EnhanceConfig {
  std::string method = "mvdr_souden";
  std::string mask_source = "oracle_irm";  // oracle_irm | from_files
  std::string mask_manifest;
  StftConfig stft;
  BeamformerConfig beamformer;
  int bss_iterations = 50;
  int jobs = 1;

  EnhanceConfig() {
    stft.n_fft = 1024;
    stft.win_length = 1024;
    stft.hop = 256;
    beamformer.diag_eps = 1e-8;
  }
};

// Writes <out_dir>/<id>/enhanced.wav for every row of a spatializer
// manifest and returns the path of the two-column manifest listing them.
// Output is bit-identical for any jobs value.
std::string enhance_corpus(const std::string& manifest_path,
                           const std::string& out_dir, const EnhanceConfig& cfg);

struct PipelineConfig {
  // stages: 1 simulate, 2 enhance, 3 score, 4 pack
  int stage_start = 1;
  int stage_stop = 4;
  // io
  std::string out_dir = "out";
  long seed = 1234;
  int jobs = 1;
  // simulate
  std::string manifest_in;
  std::string point_noise_dir;
  std::string diffuse_bank;
  long count = 0;  // 0 = all utterances
  // enhance
  EnhanceConfig enhance;
  // score
  std::vector<std::string> metrics{"stoi", "si_snr", "ci_sdr", "si_snri"};
  int ci_sdr_taps = 512;
  bool has_loss_eval = false;  // optional offline objective scoring
  MtlSpec loss_eval;
};

// Strict JSON config loader: unknown keys, wrong types, and invalid
// values are validation errors naming the offending key. Environment
// variables with the SEPKIT_ prefix override keys before validation
// ("SEPKIT_IO__SEED=7" sets io.seed; values are parsed as JSON and fall
// back to plain strings). Relative paths resolve against the config
// file's directory.
PipelineConfig load_pipeline_config(const std::string& path);

// Fully materialized JSON (defaults filled in, keys sorted). Loading the
// serialized form reproduces the same config.
std::string serialize_pipeline_config(const PipelineConfig& cfg);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t config_hash(const PipelineConfig& cfg);

// Command-line overrides layered on top of the config.
struct RunOptions {
  int stage_start = 0;  // 0 keeps the config's range
  int stage_stop = 0;
  bool force = false;
  int jobs = 0;    // 0 keeps io.jobs
  long seed = -1;  // negative keeps io.seed
};

// Executes the selected stages in order. A stage whose outputs are
// already complete is skipped unless force; partially present outputs
// are an error pointing at --force. run.log (config hash, seed,
// version) is written once per out_dir. Progress lines go to log.
void run_pipeline(const PipelineConfig& cfg, const RunOptions& opts,
                  std::ostream& log);

// NPY v1.0 files (little-endian float64, C order, 2-D) used for
// precomputed masks.
void save_mask_npy(const std::string& path, const TFMask& mask);
TFMask load_mask_npy(const std::string& path);

}  // namespace sepkit

#endif
