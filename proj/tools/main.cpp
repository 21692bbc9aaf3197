#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sepkit/pipeline.hpp"
#include "sepkit/synth.hpp"
#include "sepkit/wav.hpp"

namespace stdfs = std::filesystem;
using namespace sepkit;

namespace {

struct StageFlags {
  std::string config_path;
  std::string stage_range;
  bool force = false;
  int jobs = 0;
  long seed = -1;
};

// "N" or "A..B", both within 1..4.
void parse_stage_range(const std::string& text, int& start, int& stop) {
  const auto bad = [&] {
    throw PipelineError(PipelineErrorKind::validation,
                        "--stage expects N or A..B within 1..4, got '" + text +
                            "'");
  };
  int a = 0, b = 0;
  const size_t dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      size_t used = 0;
      a = b = std::stoi(text, &used);
      if (used != text.size()) bad();
    } else {
      size_t used = 0;
      const std::string left = text.substr(0, dots);
      const std::string right = text.substr(dots + 2);
      a = std::stoi(left, &used);
      if (used != left.size()) bad();
      b = std::stoi(right, &used);
      if (used != right.size()) bad();
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception&) {
    bad();
  }
  if (a < 1 || b > 4 || a > b) bad();
  start = a;
  stop = b;
}

int run_stages(const StageFlags& flags, int fixed_start, int fixed_stop) {
  PipelineConfig cfg = load_pipeline_config(flags.config_path);
  RunOptions opts;
  if (!flags.stage_range.empty())
    parse_stage_range(flags.stage_range, opts.stage_start, opts.stage_stop);
  if (fixed_start > 0) {
    opts.stage_start = fixed_start;
    opts.stage_stop = fixed_stop;
  }
  opts.force = flags.force;
  opts.jobs = flags.jobs;
  opts.seed = flags.seed;
  run_pipeline(cfg, opts, std::cout);
  return 0;
}

void add_stage_flags(CLI::App* cmd, StageFlags& flags, bool with_stage) {
  cmd->add_option("--config", flags.config_path, "pipeline config (JSON)")
      ->required();
  if (with_stage)
    cmd->add_option("--stage", flags.stage_range,
                    "stage range: N or A..B (1 simulate, 2 enhance, 3 score, "
                    "4 pack)");
  cmd->add_flag("--force", flags.force, "discard existing stage outputs");
  cmd->add_option("--jobs", flags.jobs, "worker threads (overrides io.jobs)");
  cmd->add_option("--seed", flags.seed, "RNG seed (overrides io.seed)");
}

struct ToygenFlags {
  std::string out_dir;
  long count = 10;
  long seed = 1234;
  double sample_rate = 16000.0;
};

void write_mono(const stdfs::path& path, const Signal& x, double fs) {
  Waveform w(1, 0, fs);
  w.channels[0] = x;
  write_wav(path.string(), w);
}

// Small self-contained corpus: synthetic utterances, a point-noise bank,
// a diffuse bed, the manifest, and a ready-to-run config.json.
int run_toygen(const ToygenFlags& flags) {
  const stdfs::path root = stdfs::absolute(flags.out_dir);
  const double fs = flags.sample_rate;
  stdfs::create_directories(root / "utterances");
  stdfs::create_directories(root / "noise");

  std::ofstream manifest(root / "manifest.tsv");
  for (long i = 0; i < flags.count; ++i) {
    Rng rng(substream_seed(static_cast<std::uint64_t>(flags.seed),
                           static_cast<std::uint64_t>(i)));
    const long n = static_cast<long>(fs * (1.6 + 0.2 * (i % 4)));
    const stdfs::path path = root / "utterances" /
                             ("u" + std::to_string(i) + ".wav");
    write_mono(path, modulated_utterance(rng, n, fs), fs);
    char id[32];
    std::snprintf(id, sizeof(id), "utt%02ld", i);
    manifest << id << '\t' << path.string() << '\n';
  }
  manifest.close();

  for (long k = 0; k < 4; ++k) {
    Rng rng(substream_seed(static_cast<std::uint64_t>(flags.seed),
                           static_cast<std::uint64_t>(100 + k)));
    const long n = static_cast<long>(fs * (1.0 + 0.5 * k));
    write_mono(root / "noise" / ("n" + std::to_string(k) + ".wav"),
               modulated_laplacian(rng, n, fs), fs);
  }
  {
    Rng rng(substream_seed(static_cast<std::uint64_t>(flags.seed), 999));
    write_mono(root / "diffuse.wav",
               white_noise(rng, static_cast<long>(fs * 6)), fs);
  }

  PipelineConfig cfg;
  cfg.out_dir = (root / "out").string();
  cfg.seed = flags.seed;
  cfg.manifest_in = (root / "manifest.tsv").string();
  cfg.point_noise_dir = (root / "noise").string();
  cfg.diffuse_bank = (root / "diffuse.wav").string();
  std::ofstream config(root / "config.json");
  config << serialize_pipeline_config(cfg);
  if (!config) {
    std::cerr << "error: failed writing " << (root / "config.json").string()
              << "\n";
    return 4;
  }
  std::cout << "toy corpus at " << root.string() << " (" << flags.count
            << " utterances); config: " << (root / "config.json").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multichannel speech separation and enhancement pipeline"};
  app.require_subcommand(1);

  StageFlags run_flags, sim_flags, enh_flags, score_flags, pack_flags;
  ToygenFlags toy_flags;

  CLI::App* cmd_run = app.add_subcommand("run", "run pipeline stages");
  add_stage_flags(cmd_run, run_flags, true);
  CLI::App* cmd_sim = app.add_subcommand("simulate", "stage 1 only");
  add_stage_flags(cmd_sim, sim_flags, false);
  CLI::App* cmd_enh = app.add_subcommand("enhance", "stage 2 only");
  add_stage_flags(cmd_enh, enh_flags, false);
  CLI::App* cmd_score = app.add_subcommand("score", "stage 3 only");
  add_stage_flags(cmd_score, score_flags, false);
  CLI::App* cmd_pack = app.add_subcommand("pack", "stage 4 only");
  add_stage_flags(cmd_pack, pack_flags, false);

  CLI::App* cmd_toy = app.add_subcommand("toygen", "generate a toy corpus");
  cmd_toy->add_option("--out-dir", toy_flags.out_dir, "corpus directory")
      ->required();
  cmd_toy->add_option("--count", toy_flags.count, "number of utterances");
  cmd_toy->add_option("--seed", toy_flags.seed, "corpus RNG seed");
  cmd_toy->add_option("--sample-rate", toy_flags.sample_rate,
                      "sample rate in Hz");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_run->parsed()) return run_stages(run_flags, 0, 0);
    if (cmd_sim->parsed()) return run_stages(sim_flags, 1, 1);
    if (cmd_enh->parsed()) return run_stages(enh_flags, 2, 2);
    if (cmd_score->parsed()) return run_stages(score_flags, 3, 3);
    if (cmd_pack->parsed()) return run_stages(pack_flags, 4, 4);
    if (cmd_toy->parsed()) return run_toygen(toy_flags);
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
