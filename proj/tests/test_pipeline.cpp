#include "sepkit/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sepkit/beamformer.hpp"
#include "sepkit/criteria.hpp"
#include "sepkit/rng.hpp"
#include "sepkit/spatialize.hpp"
#include "sepkit/stft.hpp"
#include "sepkit/synth.hpp"
#include "sepkit/wav.hpp"

using namespace sepkit;
namespace stdfs = std::filesystem;

namespace {

stdfs::path fresh_dir(const std::string& name) {
  const stdfs::path dir =
      stdfs::temp_directory_path() / "sepkit_pipeline_test" / name;
  stdfs::remove_all(dir);
  stdfs::create_directories(dir);
  return dir;
}

std::string slurp(const stdfs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void spit(const stdfs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
  REQUIRE(out.good());
}

PipelineError load_error(const stdfs::path& dir, const std::string& body) {
  const stdfs::path cfg = dir / "cfg.json";
  spit(cfg, body);
  try {
    load_pipeline_config(cfg.string());
  } catch (const PipelineError& e) {
    return e;
  }
  FAIL("expected a config error for: ", body);
  return PipelineError(PipelineErrorKind::runtime, "unreachable");
}

void write_mono(const stdfs::path& path, const Signal& x, double fs) {
  Waveform w(1, 0, fs);
  w.channels[0] = x;
  write_wav(path.string(), w);
}

struct SceneFiles {
  std::string id;
  stdfs::path mixture, target, anechoic, noise_sum;
};

struct Corpus {
  stdfs::path root;
  std::string scene_manifest;
  std::vector<SceneFiles> scenes;
};

// Three short synthetic utterances spatialized into 4-mic scenes; built
// once and shared read-only by the cases below.
const Corpus& toy_corpus() {
  static Corpus corpus = [] {
    Corpus c;
    c.root = fresh_dir("corpus");
    const double fs = 16000.0;
    stdfs::create_directories(c.root / "utterances");
    stdfs::create_directories(c.root / "noise");
    std::ofstream manifest(c.root / "manifest.tsv");
    for (int i = 0; i < 3; ++i) {
      Rng rng(substream_seed(4400, static_cast<uint64_t>(i)));
      const long n = static_cast<long>(fs * (1.0 + 0.15 * i));
      const stdfs::path wav =
          c.root / "utterances" / ("u" + std::to_string(i) + ".wav");
      write_mono(wav, modulated_utterance(rng, n, fs), fs);
      manifest << "utt0" << i << '\t' << wav.string() << '\n';
    }
    manifest.close();
    for (int k = 0; k < 4; ++k) {
      Rng rng(substream_seed(4400, static_cast<uint64_t>(100 + k)));
      const long n = static_cast<long>(fs * (0.8 + 0.3 * k));
      write_mono(c.root / "noise" / ("n" + std::to_string(k) + ".wav"),
                 modulated_laplacian(rng, n, fs), fs);
    }
    {
      Rng rng(substream_seed(4400, 999));
      write_mono(c.root / "diffuse.wav",
                 white_noise(rng, static_cast<long>(fs * 5)), fs);
    }

    SpatializeJob job;
    job.manifest_in = (c.root / "manifest.tsv").string();
    job.point_noise_dir = (c.root / "noise").string();
    job.diffuse_bank = (c.root / "diffuse.wav").string();
    job.out_dir = (c.root / "sim").string();
    job.seed = 321;
    job.jobs = 2;
    c.scene_manifest = spatialize_corpus(job);

    std::ifstream in(c.scene_manifest);
    const stdfs::path base = stdfs::path(c.scene_manifest).parent_path();
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, '\t')) cols.push_back(col);
      REQUIRE(cols.size() == 6);
      c.scenes.push_back({cols[0], base / cols[1], base / cols[2],
                          base / cols[3], base / cols[4]});
    }
    REQUIRE(c.scenes.size() == 3);
    return c;
  }();
  return corpus;
}

EnhanceConfig fast_enhance_config(const std::string& method) {
  EnhanceConfig ec;
  ec.method = method;
  ec.stft.n_fft = 512;
  ec.stft.win_length = 512;
  ec.stft.hop = 128;
  ec.jobs = 2;
  return ec;
}

std::map<std::string, stdfs::path> read_enh_manifest(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  const stdfs::path base = stdfs::path(path).parent_path();
  std::map<std::string, stdfs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    out[line.substr(0, tab)] = base / line.substr(tab + 1);
  }
  return out;
}

std::map<stdfs::path, std::string> snapshot_tree(const stdfs::path& root) {
  std::map<stdfs::path, std::string> snap;
  for (const auto& e : stdfs::recursive_directory_iterator(root))
    if (e.is_regular_file()) snap[e.path()] = slurp(e.path());
  return snap;
}

}  // namespace

TEST_CASE("config loader enforces strict keys and typed values") {
  const stdfs::path dir = fresh_dir("cfg_errors");

  CHECK(load_error(dir, "{\"typo\":1}").exit_code() == 2);
  CHECK(std::string(load_error(dir, "{\"typo\":1}").what()) ==
        "config: unknown key 'typo'");
  CHECK(std::string(
            load_error(dir, "{\"enhance\":{\"stft\":{\"hopp\":4}}}").what()) ==
        "config: unknown key 'enhance.stft.hopp'");
  CHECK(std::string(load_error(dir, "{\"io\":{\"seed\":\"x\"}}").what()) ==
        "config: io.seed must be an integer");

  CHECK(load_error(dir, "{\"stages\":{\"start\":3,\"stop\":1}}").exit_code() ==
        2);
  CHECK(load_error(dir, "{\"stages\":{\"start\":0}}").exit_code() == 2);
  CHECK(load_error(dir, "{\"io\":{\"jobs\":0}}").exit_code() == 2);
  CHECK(load_error(dir, "{\"io\":{\"out_dir\":\"\"}}").exit_code() == 2);
  CHECK(load_error(dir, "{\"metrics\":{\"list\":[]}}").exit_code() == 2);
  CHECK(std::string(load_error(dir, "{\"metrics\":{\"list\":[\"sdr\"]}}")
                        .what())
            .find("'sdr'") != std::string::npos);
  CHECK(load_error(dir, "{\"enhance\":{\"method\":\"mvdr_fancy\"}}")
            .exit_code() == 2);
  CHECK(load_error(dir, "{\"enhance\":{\"mask_source\":\"from_files\"}}")
            .exit_code() == 2);
  CHECK(load_error(dir, "{\"enhance\":{\"stft\":{\"n_fft\":100}}}")
            .exit_code() == 2);
  CHECK(load_error(dir, "not json at all").exit_code() == 2);

  const PipelineError loss_err =
      load_error(dir, "{\"loss_eval\":{\"terms\":[{\"criterion\":\"nope\"}]}}");
  CHECK(loss_err.exit_code() == 2);
  CHECK(std::string(loss_err.what()).find("loss_eval.terms[0].") !=
        std::string::npos);
  CHECK(load_error(dir, "{\"loss_eval\":{\"terms\":[]}}").exit_code() == 2);
  CHECK(load_error(dir, "{\"loss_eval\":{\"terms\":[{}]}}").exit_code() == 2);

  try {
    load_pipeline_config((dir / "absent.json").string());
    FAIL("expected missing_input");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 3);
  }

  // defaults: empty config is valid, paths resolve against the config dir
  spit(dir / "min.json", "{}");
  const PipelineConfig cfg = load_pipeline_config((dir / "min.json").string());
  CHECK(cfg.stage_start == 1);
  CHECK(cfg.stage_stop == 4);
  CHECK(cfg.enhance.method == "mvdr_souden");
  CHECK(cfg.metrics.size() == 4);
  CHECK(cfg.has_loss_eval == false);
  CHECK(stdfs::path(cfg.out_dir).is_absolute());
  CHECK(stdfs::path(cfg.out_dir).parent_path() == dir);
}

TEST_CASE("environment overrides apply before validation") {
  const stdfs::path dir = fresh_dir("cfg_env");
  spit(dir / "cfg.json", "{\"io\":{\"seed\":1}}");

  setenv("SEPKIT_IO__SEED", "777", 1);
  setenv("SEPKIT_ENHANCE__METHOD", "passthrough", 1);
  PipelineConfig cfg;
  try {
    cfg = load_pipeline_config((dir / "cfg.json").string());
  } catch (...) {
    unsetenv("SEPKIT_IO__SEED");
    unsetenv("SEPKIT_ENHANCE__METHOD");
    throw;
  }
  unsetenv("SEPKIT_IO__SEED");
  unsetenv("SEPKIT_ENHANCE__METHOD");
  CHECK(cfg.seed == 777);
  CHECK(cfg.enhance.method == "passthrough");

  setenv("SEPKIT_WHOOPS", "1", 1);
  bool threw = false;
  try {
    load_pipeline_config((dir / "cfg.json").string());
  } catch (const PipelineError& e) {
    threw = true;
    CHECK(e.exit_code() == 2);
    CHECK(std::string(e.what()).find("whoops") != std::string::npos);
  }
  unsetenv("SEPKIT_WHOOPS");
  CHECK(threw);
}

TEST_CASE("config serialization round-trips and hashes are stable") {
  const stdfs::path dir = fresh_dir("cfg_roundtrip");
  spit(dir / "cfg.json",
       "{\"io\":{\"seed\":42,\"jobs\":3},"
       "\"enhance\":{\"method\":\"wpd_souden\",\"beamformer\":{\"taps\":4}},"
       "\"loss_eval\":{\"terms\":[{\"criterion\":\"si_snr\"},"
       "{\"wrapper\":\"pit\",\"criterion\":\"snr\",\"weight\":0.5}]}}");

  const PipelineConfig cfg1 = load_pipeline_config((dir / "cfg.json").string());
  CHECK(cfg1.has_loss_eval);
  REQUIRE(cfg1.loss_eval.entries.size() == 2);
  CHECK(cfg1.loss_eval.entries[1].weight == 0.5);

  const std::string s1 = serialize_pipeline_config(cfg1);
  spit(dir / "cfg2.json", s1);
  const PipelineConfig cfg2 = load_pipeline_config((dir / "cfg2.json").string());
  const std::string s2 = serialize_pipeline_config(cfg2);
  CHECK(s1 == s2);
  CHECK(config_hash(cfg1) == config_hash(cfg2));

  PipelineConfig tweaked = cfg2;
  tweaked.seed = 43;
  CHECK(config_hash(tweaked) != config_hash(cfg1));
}

TEST_CASE("mask files round-trip through NPY") {
  const stdfs::path dir = fresh_dir("npy");
  TFMask mask(3, 5);
  for (size_t i = 0; i < mask.values.size(); ++i)
    mask.values[i] = 0.01 * static_cast<double>(i);

  const stdfs::path path = dir / "m.npy";
  save_mask_npy(path.string(), mask);

  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() > 10);
  CHECK(bytes.compare(0, 6, "\x93NUMPY") == 0);
  CHECK(bytes[6] == 1);
  const size_t hlen = static_cast<unsigned char>(bytes[8]) |
                      (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK((10 + hlen) % 64 == 0);

  const TFMask back = load_mask_npy(path.string());
  CHECK(back.frames == 3);
  CHECK(back.bins == 5);
  CHECK(back.values == mask.values);

  spit(dir / "trunc.npy", bytes.substr(0, bytes.size() - 8));
  try {
    load_mask_npy((dir / "trunc.npy").string());
    FAIL("expected runtime error");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 4);
  }
  try {
    load_mask_npy((dir / "absent.npy").string());
    FAIL("expected missing_input");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("passthrough enhancement is the untouched reference channel") {
  const Corpus& corpus = toy_corpus();
  const stdfs::path out = fresh_dir("enh_passthrough");
  EnhanceConfig ec = fast_enhance_config("passthrough");
  const std::string manifest = enhance_corpus(corpus.scene_manifest,
                                              out.string(), ec);
  const auto rows = read_enh_manifest(manifest);
  REQUIRE(rows.size() == 3);
  for (const auto& scene : corpus.scenes) {
    const Waveform est = read_wav(rows.at(scene.id).string());
    const Waveform mix = read_wav(scene.mixture.string());
    REQUIRE(est.num_channels() == 1);
    CHECK(est.channels[0] == mix.channels[0]);
    CHECK(est.sample_rate == mix.sample_rate);
  }
}

TEST_CASE("masks loaded from files reproduce the oracle path exactly") {
  const Corpus& corpus = toy_corpus();

  const stdfs::path out_a = fresh_dir("enh_oracle");
  EnhanceConfig oracle = fast_enhance_config("mvdr_souden");
  enhance_corpus(corpus.scene_manifest, out_a.string(), oracle);

  const stdfs::path mask_dir = fresh_dir("masks");
  std::ofstream mask_manifest(mask_dir / "masks.tsv");
  for (const auto& scene : corpus.scenes) {
    const ComplexSpectrogram ts =
        stft(read_wav(scene.target.string()), oracle.stft);
    const ComplexSpectrogram ns =
        stft(read_wav(scene.noise_sum.string()), oracle.stft);
    const TFMask tm = ideal_ratio_mask(ts, ns, oracle.beamformer.ref_channel);
    TFMask nm(tm.frames, tm.bins);
    for (size_t i = 0; i < tm.values.size(); ++i)
      nm.values[i] = 1.0 - tm.values[i];
    save_mask_npy((mask_dir / (scene.id + "_t.npy")).string(), tm);
    save_mask_npy((mask_dir / (scene.id + "_n.npy")).string(), nm);
    mask_manifest << scene.id << '\t' << scene.id << "_t.npy" << '\t'
                  << scene.id << "_n.npy" << '\n';
  }
  mask_manifest.close();

  const stdfs::path out_b = fresh_dir("enh_from_files");
  EnhanceConfig from_files = fast_enhance_config("mvdr_souden");
  from_files.mask_source = "from_files";
  from_files.mask_manifest = (mask_dir / "masks.tsv").string();
  enhance_corpus(corpus.scene_manifest, out_b.string(), from_files);

  for (const auto& scene : corpus.scenes)
    CHECK(slurp(out_a / scene.id / "enhanced.wav") ==
          slurp(out_b / scene.id / "enhanced.wav"));

  // wrong analysis grid is a runtime failure, not silent misuse
  EnhanceConfig mismatched = from_files;
  mismatched.stft.n_fft = 256;
  mismatched.stft.win_length = 256;
  mismatched.stft.hop = 64;
  try {
    enhance_corpus(corpus.scene_manifest, fresh_dir("enh_mismatch").string(),
                   mismatched);
    FAIL("expected shape mismatch");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 4);
    CHECK(std::string(e.what()).find("mask shape") != std::string::npos);
  }

  // a mask manifest that skips an utterance names it
  std::ofstream partial(mask_dir / "partial.tsv");
  partial << corpus.scenes[0].id << '\t' << corpus.scenes[0].id << "_t.npy"
          << '\t' << corpus.scenes[0].id << "_n.npy" << '\n';
  partial.close();
  EnhanceConfig missing = from_files;
  missing.mask_manifest = (mask_dir / "partial.tsv").string();
  try {
    enhance_corpus(corpus.scene_manifest, fresh_dir("enh_missing").string(),
                   missing);
    FAIL("expected missing mask ids");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 3);
    CHECK(std::string(e.what()).find(corpus.scenes[1].id) !=
          std::string::npos);
  }
}

TEST_CASE("regression and separation methods produce usable output") {
  const Corpus& corpus = toy_corpus();

  const stdfs::path out_mf = fresh_dir("enh_mfmcwf");
  EnhanceConfig mf = fast_enhance_config("mfmcwf");
  mf.beamformer.taps = 3;
  mf.beamformer.delay = 1;
  enhance_corpus(corpus.scene_manifest, out_mf.string(), mf);

  const stdfs::path out_iva = fresh_dir("enh_auxiva");
  EnhanceConfig iva = fast_enhance_config("auxiva_iss");
  iva.bss_iterations = 8;
  enhance_corpus(corpus.scene_manifest, out_iva.string(), iva);

  for (const auto& scene : corpus.scenes) {
    const Signal ref = read_wav(scene.target.string()).channels[0];
    const Signal mix = read_wav(scene.mixture.string()).channels[0];
    const Signal est_mf =
        read_wav((out_mf / scene.id / "enhanced.wav").string()).channels[0];
    const Signal est_iva =
        read_wav((out_iva / scene.id / "enhanced.wav").string()).channels[0];
    REQUIRE(est_mf.size() == mix.size());
    REQUIRE(est_iva.size() == mix.size());
    CHECK(si_snr(ref, est_mf) > si_snr(ref, mix));
    for (double v : est_iva) REQUIRE(std::isfinite(v));
  }

  CHECK_THROWS_AS(
      enhance_corpus(corpus.scene_manifest, fresh_dir("enh_bad").string(),
                     fast_enhance_config("nonsense")),
      PipelineError);
}

TEST_CASE("pipeline runs, skips, forces, and detects partial stages") {
  const Corpus& corpus = toy_corpus();
  const stdfs::path out_a = fresh_dir("run_a");

  PipelineConfig cfg;
  cfg.out_dir = out_a.string();
  cfg.seed = 321;
  cfg.jobs = 2;
  cfg.manifest_in = (corpus.root / "manifest.tsv").string();
  cfg.point_noise_dir = (corpus.root / "noise").string();
  cfg.diffuse_bank = (corpus.root / "diffuse.wav").string();
  cfg.enhance = fast_enhance_config("mvdr_souden");
  cfg.ci_sdr_taps = 128;
  cfg.has_loss_eval = true;
  MtlEntry term1;
  term1.criterion.kind = CriterionKind::si_snr;
  MtlEntry term2;
  term2.criterion.kind = CriterionKind::snr;
  term2.weight = 0.5;
  cfg.loss_eval.entries = {term1, term2};

  std::ostringstream log1;
  run_pipeline(cfg, RunOptions{}, log1);
  for (const char* f :
       {"run.log", "simulated/manifest.tsv", "enhanced/manifest.tsv",
        "results/metrics.tsv", "results/summary.txt", "results/losses.tsv",
        "pack/checksums.tsv", "pack/report.txt", "pack/config.json"})
    CHECK(stdfs::exists(out_a / f));

  const std::string run_log = slurp(out_a / "run.log");
  CHECK(run_log.find("version: " + std::string(kSepkitVersion)) !=
        std::string::npos);
  {
    char expected[32];
    std::snprintf(expected, sizeof(expected), "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    CHECK(run_log.find(std::string("config_hash: ") + expected) !=
          std::string::npos);
  }

  CHECK(slurp(out_a / "pack/config.json") == serialize_pipeline_config(cfg));

  // losses.tsv: header + 3 utterances + mean, term columns then total
  {
    std::ifstream in(out_a / "results/losses.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "utterance_id\tterm0:fixed:si_snr\tterm1:fixed:snr\ttotal");
    int lines = 0;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++lines;
    CHECK(lines == 4);
  }

  // pack checksums cover every packed file and match their bytes
  {
    std::ifstream in(out_a / "pack/checksums.tsv");
    std::string line;
    int checked = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const size_t tab = line.find('\t');
      REQUIRE(tab != std::string::npos);
      const std::string bytes = slurp(out_a / "pack" / line.substr(0, tab));
      char expected[32];
      std::snprintf(expected, sizeof(expected), "%016llx",
                    static_cast<unsigned long long>(
                        fnv1a64(bytes.data(), bytes.size())));
      CHECK(line.substr(tab + 1) == expected);
      ++checked;
    }
    CHECK(checked == 6);
  }

  // a second run changes nothing: same bytes, same mtimes, all skips
  std::map<stdfs::path, stdfs::file_time_type> mtimes;
  for (const auto& e : stdfs::recursive_directory_iterator(out_a))
    if (e.is_regular_file()) mtimes[e.path()] = e.last_write_time();
  const auto snap1 = snapshot_tree(out_a);

  std::ostringstream log2;
  run_pipeline(cfg, RunOptions{}, log2);
  CHECK(log2.str().find("skipping") != std::string::npos);
  CHECK(log2.str().find("running") == std::string::npos);
  CHECK(snapshot_tree(out_a) == snap1);
  for (const auto& e : stdfs::recursive_directory_iterator(out_a))
    if (e.is_regular_file()) CHECK(mtimes.at(e.path()) == e.last_write_time());

  // same config into a fresh directory reproduces the tables byte for byte
  const stdfs::path out_b = fresh_dir("run_b");
  PipelineConfig cfg_b = cfg;
  cfg_b.out_dir = out_b.string();
  cfg_b.jobs = 1;
  std::ostringstream log3;
  run_pipeline(cfg_b, RunOptions{}, log3);
  CHECK(slurp(out_b / "results/metrics.tsv") ==
        slurp(out_a / "results/metrics.tsv"));
  CHECK(slurp(out_b / "results/losses.tsv") ==
        slurp(out_a / "results/losses.tsv"));

  // deleting one scoring artifact makes the stage partial
  stdfs::remove(out_a / "results/summary.txt");
  RunOptions stage3;
  stage3.stage_start = 3;
  stage3.stage_stop = 3;
  std::ostringstream log4;
  try {
    run_pipeline(cfg, stage3, log4);
    FAIL("expected partial-stage error");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 3);
    CHECK(std::string(e.what()).find("--force") != std::string::npos);
  }

  RunOptions force3 = stage3;
  force3.force = true;
  std::ostringstream log5;
  run_pipeline(cfg, force3, log5);
  CHECK(slurp(out_a / "results/metrics.tsv") ==
        std::string(snap1.at(out_a / "results/metrics.tsv")));
  CHECK(stdfs::exists(out_a / "results/summary.txt"));

  // enhancing before simulating is a missing-input error
  PipelineConfig cfg_c = cfg;
  cfg_c.out_dir = fresh_dir("run_c").string();
  RunOptions stage2;
  stage2.stage_start = 2;
  stage2.stage_stop = 2;
  std::ostringstream log6;
  try {
    run_pipeline(cfg_c, stage2, log6);
    FAIL("expected missing stage 1 outputs");
  } catch (const PipelineError& e) {
    CHECK(e.exit_code() == 3);
    CHECK(std::string(e.what()).find("stage 1") != std::string::npos);
  }
}
