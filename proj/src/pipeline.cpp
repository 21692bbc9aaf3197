#include "sepkit/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "sepkit/bss.hpp"
#include "sepkit/criteria.hpp"
#include "sepkit/metrics.hpp"
#include "sepkit/spatialize.hpp"
#include "sepkit/wav.hpp"

extern char** environ;

namespace sepkit {
namespace stdfs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void fail_validation(const std::string& msg) {
  throw PipelineError(PipelineErrorKind::validation, msg);
}
[[noreturn]] void fail_missing(const std::string& msg) {
  throw PipelineError(PipelineErrorKind::missing_input, msg);
}
[[noreturn]] void fail_runtime(const std::string& msg) {
  throw PipelineError(PipelineErrorKind::runtime, msg);
}

// ---------------------------------------------------------------------
// Strict config access.

void check_keys(const json& obj, const std::string& prefix,
                const std::set<std::string>& allowed) {
  if (!obj.is_object())
    fail_validation("config: " +
                    (prefix.empty() ? std::string("the root") : prefix) +
                    " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      fail_validation("config: unknown key '" + prefix + it.key() + "'");
}

long get_integer(const json& o, const std::string& prefix, const char* key,
                 long def) {
  if (!o.contains(key)) return def;
  const json& v = o.at(key);
  if (!v.is_number_integer())
    fail_validation("config: " + prefix + key + " must be an integer");
  return v.get<long>();
}

double get_number(const json& o, const std::string& prefix, const char* key,
                  double def) {
  if (!o.contains(key)) return def;
  const json& v = o.at(key);
  if (!v.is_number())
    fail_validation("config: " + prefix + key + " must be a number");
  return v.get<double>();
}

std::string get_string(const json& o, const std::string& prefix,
                       const char* key, const std::string& def) {
  if (!o.contains(key)) return def;
  const json& v = o.at(key);
  if (!v.is_string())
    fail_validation("config: " + prefix + key + " must be a string");
  return v.get<std::string>();
}

bool get_bool(const json& o, const std::string& prefix, const char* key,
              bool def) {
  if (!o.contains(key)) return def;
  const json& v = o.at(key);
  if (!v.is_boolean())
    fail_validation("config: " + prefix + key + " must be a boolean");
  return v.get<bool>();
}

WindowKind window_from_name(const std::string& s, const std::string& key) {
  if (s == "hann") return WindowKind::hann;
  if (s == "sqrt_hann") return WindowKind::sqrt_hann;
  if (s == "rectangular") return WindowKind::rectangular;
  fail_validation("config: " + key + " must be hann, sqrt_hann, or rectangular");
}

std::string window_name(WindowKind k) {
  switch (k) {
    case WindowKind::hann: return "hann";
    case WindowKind::sqrt_hann: return "sqrt_hann";
    case WindowKind::rectangular: return "rectangular";
  }
  return "hann";
}

bool is_enhance_method(const std::string& m) {
  if (m == "auxiva_iss" || m == "passthrough") return true;
  try {
    beamformer_variant_from_name(m);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// SEPKIT_-prefixed environment variables override config keys before
// validation: the name after the prefix is lowercased and "__" becomes a
// nesting separator. Values parse as JSON, falling back to strings.
void apply_env_overrides(json& root) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (char** env = environ; *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind("SEPKIT_", 0) != 0) continue;
    const size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    overrides.emplace_back(entry.substr(7, eq - 7), entry.substr(eq + 1));
  }
  std::sort(overrides.begin(), overrides.end());

  for (const auto& [raw_key, raw_val] : overrides) {
    std::string key = raw_key;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
      const size_t sep = key.find("__", pos);
      if (sep == std::string::npos) {
        parts.push_back(key.substr(pos));
        break;
      }
      parts.push_back(key.substr(pos, sep - pos));
      pos = sep + 2;
    }
    for (const auto& p : parts)
      if (p.empty())
        fail_validation("config: malformed override SEPKIT_" + raw_key);

    json value = json::parse(raw_val, nullptr, false);
    if (value.is_discarded()) value = raw_val;

    json* node = &root;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
      if (node->contains(parts[i]) && !(*node)[parts[i]].is_object())
        fail_validation("config: override SEPKIT_" + raw_key +
                        " descends into non-object key '" + parts[i] + "'");
      node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
  }
}

std::string resolve_path(const std::string& p, const stdfs::path& base) {
  if (p.empty()) return p;
  stdfs::path path(p);
  if (path.is_absolute()) return path.lexically_normal().string();
  return (base / path).lexically_normal().string();
}

// ---------------------------------------------------------------------
// Manifests.

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  size_t pos = 0;
  while (true) {
    const size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(pos));
      return cols;
    }
    cols.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

struct SceneRow {
  std::string id;
  stdfs::path mixture, target, anechoic, noise_sum, meta;
};

std::vector<SceneRow> read_scene_manifest(const stdfs::path& path) {
  if (!stdfs::exists(path))
    fail_missing("scene manifest not found: " + path.string());
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open scene manifest: " + path.string());
  const stdfs::path base = path.parent_path();
  std::vector<SceneRow> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 6 ||
        std::any_of(cols.begin(), cols.end(),
                    [](const std::string& c) { return c.empty(); }) ||
        cols[0].find('/') != std::string::npos)
      fail_runtime("scene manifest line " + std::to_string(lineno) +
                   " is malformed: " + path.string());
    rows.push_back({cols[0], base / cols[1], base / cols[2], base / cols[3],
                    base / cols[4], base / cols[5]});
  }
  if (rows.empty())
    fail_runtime("scene manifest is empty: " + path.string());
  return rows;
}

std::vector<std::pair<std::string, stdfs::path>> read_two_col_manifest(
    const stdfs::path& path, const std::string& label) {
  if (!stdfs::exists(path))
    fail_missing(label + " manifest not found: " + path.string());
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open " + label + " manifest: " + path.string());
  const stdfs::path base = path.parent_path();
  std::vector<std::pair<std::string, stdfs::path>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty())
      fail_runtime(label + " manifest line " + std::to_string(lineno) +
                   " is malformed: " + path.string());
    rows.emplace_back(cols[0], base / cols[1]);
  }
  if (rows.empty()) fail_runtime(label + " manifest is empty: " + path.string());
  return rows;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------
// Config.

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_missing("cannot open config: " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    fail_validation("config: " + std::string(e.what()));
  }
  apply_env_overrides(root);

  const stdfs::path base = stdfs::absolute(path).parent_path();
  PipelineConfig cfg;

  check_keys(root, "",
             {"stages", "io", "spatialize", "enhance", "metrics", "loss_eval"});

  if (root.contains("stages")) {
    const json& s = root.at("stages");
    check_keys(s, "stages.", {"start", "stop"});
    cfg.stage_start = static_cast<int>(get_integer(s, "stages.", "start", 1));
    cfg.stage_stop = static_cast<int>(get_integer(s, "stages.", "stop", 4));
  }
  if (cfg.stage_start < 1 || cfg.stage_stop > 4 ||
      cfg.stage_start > cfg.stage_stop)
    fail_validation("config: stages.start..stages.stop must be contiguous "
                    "within 1..4");

  if (root.contains("io")) {
    const json& io = root.at("io");
    check_keys(io, "io.", {"out_dir", "seed", "jobs"});
    cfg.out_dir = get_string(io, "io.", "out_dir", cfg.out_dir);
    cfg.seed = get_integer(io, "io.", "seed", cfg.seed);
    cfg.jobs = static_cast<int>(get_integer(io, "io.", "jobs", cfg.jobs));
  }
  if (cfg.out_dir.empty()) fail_validation("config: io.out_dir must be non-empty");
  if (cfg.seed < 0) fail_validation("config: io.seed must be >= 0");
  if (cfg.jobs < 1) fail_validation("config: io.jobs must be >= 1");

  if (root.contains("spatialize")) {
    const json& sp = root.at("spatialize");
    check_keys(sp, "spatialize.",
               {"manifest_in", "point_noise_dir", "diffuse_bank", "count"});
    cfg.manifest_in = get_string(sp, "spatialize.", "manifest_in", "");
    cfg.point_noise_dir = get_string(sp, "spatialize.", "point_noise_dir", "");
    cfg.diffuse_bank = get_string(sp, "spatialize.", "diffuse_bank", "");
    cfg.count = get_integer(sp, "spatialize.", "count", 0);
  }
  if (cfg.count < 0) fail_validation("config: spatialize.count must be >= 0");

  if (root.contains("enhance")) {
    const json& en = root.at("enhance");
    check_keys(en, "enhance.",
               {"method", "mask_source", "mask_manifest", "stft", "beamformer",
                "bss_iterations"});
    cfg.enhance.method = get_string(en, "enhance.", "method", cfg.enhance.method);
    cfg.enhance.mask_source =
        get_string(en, "enhance.", "mask_source", cfg.enhance.mask_source);
    cfg.enhance.mask_manifest =
        get_string(en, "enhance.", "mask_manifest", "");
    cfg.enhance.bss_iterations = static_cast<int>(
        get_integer(en, "enhance.", "bss_iterations", cfg.enhance.bss_iterations));
    if (en.contains("stft")) {
      const json& st = en.at("stft");
      check_keys(st, "enhance.stft.",
                 {"n_fft", "hop", "win_length", "window", "center_pad"});
      StftConfig& sc = cfg.enhance.stft;
      sc.n_fft = static_cast<int>(
          get_integer(st, "enhance.stft.", "n_fft", sc.n_fft));
      sc.hop = static_cast<int>(get_integer(st, "enhance.stft.", "hop", sc.hop));
      sc.win_length = static_cast<int>(
          get_integer(st, "enhance.stft.", "win_length", sc.win_length));
      sc.window = window_from_name(
          get_string(st, "enhance.stft.", "window", window_name(sc.window)),
          "enhance.stft.window");
      sc.center_pad =
          get_bool(st, "enhance.stft.", "center_pad", sc.center_pad);
    }
    if (en.contains("beamformer")) {
      const json& bf = en.at("beamformer");
      check_keys(bf, "enhance.beamformer.",
                 {"ref_channel", "mu", "diag_eps", "taps", "delay",
                  "lambda_floor"});
      BeamformerConfig& bc = cfg.enhance.beamformer;
      bc.ref_channel = static_cast<int>(
          get_integer(bf, "enhance.beamformer.", "ref_channel", bc.ref_channel));
      bc.mu = get_number(bf, "enhance.beamformer.", "mu", bc.mu);
      bc.diag_eps =
          get_number(bf, "enhance.beamformer.", "diag_eps", bc.diag_eps);
      bc.taps = static_cast<int>(
          get_integer(bf, "enhance.beamformer.", "taps", bc.taps));
      bc.delay = static_cast<int>(
          get_integer(bf, "enhance.beamformer.", "delay", bc.delay));
      bc.lambda_floor = get_number(bf, "enhance.beamformer.", "lambda_floor",
                                   bc.lambda_floor);
    }
  }
  if (!is_enhance_method(cfg.enhance.method))
    fail_validation("config: enhance.method '" + cfg.enhance.method +
                    "' is not a known method");
  if (cfg.enhance.mask_source != "oracle_irm" &&
      cfg.enhance.mask_source != "from_files")
    fail_validation("config: enhance.mask_source must be oracle_irm or "
                    "from_files");
  if (cfg.enhance.mask_source == "from_files" && cfg.enhance.mask_manifest.empty())
    fail_validation("config: enhance.mask_manifest is required when "
                    "enhance.mask_source is from_files");
  if (cfg.enhance.bss_iterations < 1)
    fail_validation("config: enhance.bss_iterations must be >= 1");
  try {
    cfg.enhance.stft.validate();
  } catch (const std::exception& e) {
    fail_validation("config: enhance.stft: " + std::string(e.what()));
  }
  if (cfg.enhance.beamformer.ref_channel < 0)
    fail_validation("config: enhance.beamformer.ref_channel must be >= 0");
  if (cfg.enhance.beamformer.taps < 1)
    fail_validation("config: enhance.beamformer.taps must be >= 1");
  if (cfg.enhance.beamformer.delay < 0)
    fail_validation("config: enhance.beamformer.delay must be >= 0");

  if (root.contains("metrics")) {
    const json& me = root.at("metrics");
    check_keys(me, "metrics.", {"list", "ci_sdr_taps"});
    if (me.contains("list")) {
      const json& list = me.at("list");
      if (!list.is_array())
        fail_validation("config: metrics.list must be an array of strings");
      cfg.metrics.clear();
      for (const json& v : list) {
        if (!v.is_string())
          fail_validation("config: metrics.list must be an array of strings");
        cfg.metrics.push_back(v.get<std::string>());
      }
    }
    cfg.ci_sdr_taps = static_cast<int>(
        get_integer(me, "metrics.", "ci_sdr_taps", cfg.ci_sdr_taps));
  }
  if (cfg.metrics.empty())
    fail_validation("config: metrics.list must not be empty");
  for (const auto& m : cfg.metrics)
    if (!is_known_metric(m))
      fail_validation("config: metrics.list entry '" + m +
                      "' is not a known metric");
  if (cfg.ci_sdr_taps < 1)
    fail_validation("config: metrics.ci_sdr_taps must be >= 1");

  if (root.contains("loss_eval") && !root.at("loss_eval").is_null()) {
    const json& le = root.at("loss_eval");
    check_keys(le, "loss_eval.", {"terms"});
    if (!le.contains("terms") || !le.at("terms").is_array() ||
        le.at("terms").empty())
      fail_validation("config: loss_eval.terms must be a non-empty array");
    cfg.has_loss_eval = true;
    for (size_t i = 0; i < le.at("terms").size(); ++i) {
      const json& t = le.at("terms").at(i);
      const std::string prefix = "loss_eval.terms[" + std::to_string(i) + "].";
      check_keys(t, prefix, {"wrapper", "criterion", "weight", "eps",
                             "filter_taps"});
      if (!t.contains("criterion"))
        fail_validation("config: " + prefix + "criterion is required");
      MtlEntry entry;
      try {
        entry.wrapper =
            wrapper_kind_from_name(get_string(t, prefix, "wrapper", "fixed"));
        entry.criterion.kind =
            criterion_kind_from_name(get_string(t, prefix, "criterion", ""));
      } catch (const std::exception& e) {
        fail_validation("config: " + prefix + e.what());
      }
      entry.weight = get_number(t, prefix, "weight", 1.0);
      entry.criterion.eps = get_number(t, prefix, "eps", entry.criterion.eps);
      entry.criterion.filter_taps = static_cast<int>(
          get_integer(t, prefix, "filter_taps", entry.criterion.filter_taps));
      if (entry.criterion.eps <= 0.0)
        fail_validation("config: " + prefix + "eps must be > 0");
      if (entry.criterion.filter_taps < 1)
        fail_validation("config: " + prefix + "filter_taps must be >= 1");
      cfg.loss_eval.entries.push_back(entry);
    }
  }

  cfg.out_dir = resolve_path(cfg.out_dir, base);
  cfg.manifest_in = resolve_path(cfg.manifest_in, base);
  cfg.point_noise_dir = resolve_path(cfg.point_noise_dir, base);
  cfg.diffuse_bank = resolve_path(cfg.diffuse_bank, base);
  cfg.enhance.mask_manifest = resolve_path(cfg.enhance.mask_manifest, base);
  return cfg;
}

std::string serialize_pipeline_config(const PipelineConfig& cfg) {
  json j;
  j["stages"]["start"] = cfg.stage_start;
  j["stages"]["stop"] = cfg.stage_stop;
  j["io"]["out_dir"] = cfg.out_dir;
  j["io"]["seed"] = cfg.seed;
  j["io"]["jobs"] = cfg.jobs;
  j["spatialize"]["manifest_in"] = cfg.manifest_in;
  j["spatialize"]["point_noise_dir"] = cfg.point_noise_dir;
  j["spatialize"]["diffuse_bank"] = cfg.diffuse_bank;
  j["spatialize"]["count"] = cfg.count;
  j["enhance"]["method"] = cfg.enhance.method;
  j["enhance"]["mask_source"] = cfg.enhance.mask_source;
  j["enhance"]["mask_manifest"] = cfg.enhance.mask_manifest;
  j["enhance"]["bss_iterations"] = cfg.enhance.bss_iterations;
  j["enhance"]["stft"]["n_fft"] = cfg.enhance.stft.n_fft;
  j["enhance"]["stft"]["hop"] = cfg.enhance.stft.hop;
  j["enhance"]["stft"]["win_length"] = cfg.enhance.stft.win_length;
  j["enhance"]["stft"]["window"] = window_name(cfg.enhance.stft.window);
  j["enhance"]["stft"]["center_pad"] = cfg.enhance.stft.center_pad;
  j["enhance"]["beamformer"]["ref_channel"] = cfg.enhance.beamformer.ref_channel;
  j["enhance"]["beamformer"]["mu"] = cfg.enhance.beamformer.mu;
  j["enhance"]["beamformer"]["diag_eps"] = cfg.enhance.beamformer.diag_eps;
  j["enhance"]["beamformer"]["taps"] = cfg.enhance.beamformer.taps;
  j["enhance"]["beamformer"]["delay"] = cfg.enhance.beamformer.delay;
  j["enhance"]["beamformer"]["lambda_floor"] =
      cfg.enhance.beamformer.lambda_floor;
  j["metrics"]["list"] = cfg.metrics;
  j["metrics"]["ci_sdr_taps"] = cfg.ci_sdr_taps;
  if (cfg.has_loss_eval) {
    json terms = json::array();
    for (const auto& e : cfg.loss_eval.entries) {
      json t;
      t["wrapper"] = wrapper_kind_name(e.wrapper);
      t["criterion"] = criterion_kind_name(e.criterion.kind);
      t["weight"] = e.weight;
      t["eps"] = e.criterion.eps;
      t["filter_taps"] = e.criterion.filter_taps;
      terms.push_back(t);
    }
    j["loss_eval"]["terms"] = terms;
  }
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const PipelineConfig& cfg) {
  const std::string s = serialize_pipeline_config(cfg);
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------
// NPY masks.

void save_mask_npy(const std::string& path, const TFMask& mask) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(mask.frames) + ", " +
                       std::to_string(mask.bins) + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header += std::string((64 - unpadded % 64) % 64, ' ');
  header += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write mask file: " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(hlen & 0xff));
  out.put(static_cast<char>(hlen >> 8));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(mask.values.data()),
            static_cast<std::streamsize>(mask.values.size() * sizeof(double)));
  if (!out) fail_runtime("failed writing mask file: " + path);
}

TFMask load_mask_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_missing("mask file not found: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) {
    fail_runtime("mask file " + path + ": " + why);
  };
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0)
    bad("not an NPY file");
  if (bytes[6] != 1) bad("unsupported NPY version");
  const std::size_t hlen = static_cast<unsigned char>(bytes[8]) |
                           (static_cast<unsigned char>(bytes[9]) << 8);
  if (bytes.size() < 10 + hlen) bad("truncated header");
  const std::string header = bytes.substr(10, hlen);
  if (header.find("'descr': '<f8'") == std::string::npos)
    bad("expected little-endian float64 data");
  if (header.find("'fortran_order': False") == std::string::npos)
    bad("expected C-order data");
  const std::size_t shape_pos = header.find("'shape': (");
  if (shape_pos == std::string::npos) bad("missing shape");
  long rows = 0, cols = 0;
  if (std::sscanf(header.c_str() + shape_pos, "'shape': (%ld, %ld)", &rows,
                  &cols) != 2 ||
      rows <= 0 || cols <= 0)
    bad("expected a 2-D shape");
  const std::size_t need =
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) *
      sizeof(double);
  if (bytes.size() - 10 - hlen != need) bad("data size does not match shape");

  TFMask mask(static_cast<int>(rows), static_cast<int>(cols));
  std::memcpy(mask.values.data(), bytes.data() + 10 + hlen, need);
  return mask;
}

// ---------------------------------------------------------------------
// Enhancement.

namespace {

Waveform enhance_one(const SceneRow& row, const EnhanceConfig& cfg,
                     const std::map<std::string, std::pair<stdfs::path,
                                                           stdfs::path>>& masks) {
  if (!stdfs::exists(row.mixture))
    fail_missing("utterance '" + row.id + "': mixture missing: " +
                 row.mixture.string());
  const Waveform mixture = read_wav(row.mixture.string());
  const int ref = cfg.beamformer.ref_channel;
  if (ref >= mixture.num_channels())
    fail_runtime("utterance '" + row.id + "': reference channel " +
                 std::to_string(ref) + " out of range");

  if (cfg.method == "passthrough") {
    Waveform out(1, 0, mixture.sample_rate);
    out.channels[0] = mixture.channels[ref];
    return out;
  }

  if (cfg.method == "auxiva_iss") {
    const StftConfig bss_cfg = bss_stft_config();
    const ComplexSpectrogram spec = stft(mixture, bss_cfg);
    const BssResult result = auxiva_iss(spec, cfg.bss_iterations);
    const std::vector<ComplexSpectrogram> fixed =
        projection_back(result.sources, spec, ref);
    // oracle target picks the winner when present; the unprocessed
    // reference channel is the fallback yardstick
    const Signal yardstick = stdfs::exists(row.target)
                                 ? read_wav(row.target.string()).channels[ref]
                                 : mixture.channels[ref];
    Waveform best;
    double best_score = -1e300;
    for (const auto& src : fixed) {
      Waveform w = istft(src, bss_cfg, mixture.num_samples(),
                         mixture.sample_rate);
      const double score = si_snr(yardstick, w.channels[0]);
      if (score > best_score) {
        best_score = score;
        best = std::move(w);
      }
    }
    return best;
  }

  // mask-driven beamformer family
  BeamformerConfig bf = cfg.beamformer;
  bf.variant = beamformer_variant_from_name(cfg.method);
  const ComplexSpectrogram spec = stft(mixture, cfg.stft);

  if (bf.variant == BeamformerVariant::mfmcwf) {
    if (!stdfs::exists(row.target))
      fail_missing("utterance '" + row.id + "': oracle component missing: " +
                   row.target.string());
    const Waveform target = read_wav(row.target.string());
    Waveform target_ref(1, target.num_samples(), target.sample_rate);
    target_ref.channels[0] = target.channels[ref];
    const ComplexSpectrogram tspec = stft(target_ref, cfg.stft);
    BeamformerProblem problem;
    problem.observation = &spec;
    problem.target = &tspec;
    const ComplexSpectrogram out =
        apply_beamformer(compute_weights(bf, problem), spec);
    return istft(out, cfg.stft, mixture.num_samples(), mixture.sample_rate);
  }

  TFMask target_mask, noise_mask;
  if (cfg.mask_source == "oracle_irm") {
    if (!stdfs::exists(row.target))
      fail_missing("utterance '" + row.id + "': oracle component missing: " +
                   row.target.string());
    if (!stdfs::exists(row.noise_sum))
      fail_missing("utterance '" + row.id + "': oracle component missing: " +
                   row.noise_sum.string());
    const Waveform target = read_wav(row.target.string());
    const Waveform noise = read_wav(row.noise_sum.string());
    target_mask =
        ideal_ratio_mask(stft(target, cfg.stft), stft(noise, cfg.stft), ref);
  } else {
    const auto it = masks.find(row.id);
    if (it == masks.end())
      fail_missing("utterance '" + row.id + "': no mask manifest entry");
    target_mask = load_mask_npy(it->second.first.string());
    noise_mask = load_mask_npy(it->second.second.string());
    if (target_mask.frames != spec.frames || target_mask.bins != spec.bins ||
        noise_mask.frames != spec.frames || noise_mask.bins != spec.bins)
      fail_runtime("utterance '" + row.id +
                   "': mask shape does not match the analysis grid");
  }
  if (noise_mask.values.empty()) {
    noise_mask = TFMask(target_mask.frames, target_mask.bins);
    for (size_t i = 0; i < target_mask.values.size(); ++i)
      noise_mask.values[i] = 1.0 - target_mask.values[i];
  }

  const ComplexSpectrogram out =
      enhance_with_masks(bf, spec, target_mask, noise_mask);
  return istft(out, cfg.stft, mixture.num_samples(), mixture.sample_rate);
}

}  // namespace

std::string enhance_corpus(const std::string& manifest_path,
                           const std::string& out_dir,
                           const EnhanceConfig& cfg) {
  if (!is_enhance_method(cfg.method))
    fail_validation("enhance_corpus: unknown method '" + cfg.method + "'");
  if (cfg.mask_source != "oracle_irm" && cfg.mask_source != "from_files")
    fail_validation("enhance_corpus: mask_source must be oracle_irm or "
                    "from_files");
  if (cfg.jobs < 1) fail_validation("enhance_corpus: jobs must be >= 1");

  const std::vector<SceneRow> rows = read_scene_manifest(manifest_path);

  std::map<std::string, std::pair<stdfs::path, stdfs::path>> masks;
  if (cfg.mask_source == "from_files" && cfg.method != "passthrough" &&
      cfg.method != "auxiva_iss" && cfg.method != "mfmcwf") {
    if (cfg.mask_manifest.empty())
      fail_validation("enhance_corpus: mask_manifest is required for "
                      "from_files");
    if (!stdfs::exists(cfg.mask_manifest))
      fail_missing("mask manifest not found: " + cfg.mask_manifest);
    std::ifstream in(cfg.mask_manifest);
    const stdfs::path base = stdfs::path(cfg.mask_manifest).parent_path();
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::vector<std::string> cols = split_tabs(line);
      if (cols.size() != 3 || cols[0].empty() || cols[1].empty() ||
          cols[2].empty())
        fail_runtime("mask manifest line " + std::to_string(lineno) +
                     " is not id<TAB>target<TAB>noise: " + cfg.mask_manifest);
      masks[cols[0]] = {base / cols[1], base / cols[2]};
    }
    std::vector<std::string> missing;
    for (const auto& row : rows)
      if (!masks.count(row.id)) missing.push_back(row.id);
    if (!missing.empty()) {
      std::string msg = "mask manifest missing ids:";
      for (const auto& id : missing) msg += " " + id;
      fail_missing(msg);
    }
  }

  const stdfs::path out_root(out_dir);
  stdfs::create_directories(out_root);
  std::vector<std::string> lines(rows.size());

  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      const long i = next.fetch_add(1);
      if (i >= static_cast<long>(rows.size())) return;
      if (failed.load()) return;
      try {
        const SceneRow& row = rows[i];
        const Waveform est = enhance_one(row, cfg, masks);
        stdfs::create_directories(out_root / row.id);
        write_wav((out_root / row.id / "enhanced.wav").string(), est);
        lines[i] = row.id + "\t" + row.id + "/enhanced.wav";
      } catch (...) {
        failed.store(true);
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  const int pool = static_cast<int>(
      std::min<long>(cfg.jobs, static_cast<long>(rows.size())));
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  const stdfs::path manifest = out_root / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) fail_runtime("cannot write " + manifest.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) fail_runtime("failed writing " + manifest.string());
  return manifest.string();
}

// ---------------------------------------------------------------------
// Stage runner.

namespace {

struct StagePaths {
  stdfs::path root, simulated, enhanced, results, pack, run_log;
};

StagePaths stage_paths(const PipelineConfig& cfg) {
  StagePaths p;
  p.root = cfg.out_dir;
  p.simulated = p.root / "simulated";
  p.enhanced = p.root / "enhanced";
  p.results = p.root / "results";
  p.pack = p.root / "pack";
  p.run_log = p.root / "run.log";
  return p;
}

enum class StageState { absent, partial, complete };

StageState simulate_state(const StagePaths& p) {
  if (!stdfs::exists(p.simulated)) return StageState::absent;
  try {
    const auto rows = read_scene_manifest(p.simulated / "manifest.tsv");
    for (const auto& r : rows)
      if (!stdfs::exists(r.mixture) || !stdfs::exists(r.target) ||
          !stdfs::exists(r.anechoic) || !stdfs::exists(r.noise_sum) ||
          !stdfs::exists(r.meta))
        return StageState::partial;
  } catch (const std::exception&) {
    return StageState::partial;
  }
  return StageState::complete;
}

StageState enhance_state(const StagePaths& p) {
  if (!stdfs::exists(p.enhanced)) return StageState::absent;
  try {
    const auto rows =
        read_two_col_manifest(p.enhanced / "manifest.tsv", "enhanced");
    for (const auto& [id, path] : rows)
      if (!stdfs::exists(path)) return StageState::partial;
  } catch (const std::exception&) {
    return StageState::partial;
  }
  return StageState::complete;
}

StageState score_state(const StagePaths& p, const PipelineConfig& cfg) {
  if (!stdfs::exists(p.results)) return StageState::absent;
  std::vector<stdfs::path> needed{p.results / "metrics.tsv",
                                  p.results / "summary.txt"};
  if (cfg.has_loss_eval) needed.push_back(p.results / "losses.tsv");
  for (const auto& f : needed)
    if (!stdfs::exists(f)) return StageState::partial;
  return StageState::complete;
}

StageState pack_state(const StagePaths& p) {
  if (!stdfs::exists(p.pack)) return StageState::absent;
  const stdfs::path sums = p.pack / "checksums.tsv";
  if (!stdfs::exists(sums)) return StageState::partial;
  std::ifstream in(sums);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 2 || !stdfs::exists(p.pack / cols[0]))
      return StageState::partial;
  }
  return StageState::complete;
}

void stage_simulate(const PipelineConfig& cfg, const StagePaths& p) {
  if (cfg.manifest_in.empty())
    fail_validation("config: spatialize.manifest_in is required for stage 1");
  if (!stdfs::exists(cfg.manifest_in))
    fail_missing("stage 1 (simulate): input manifest not found: " +
                 cfg.manifest_in);
  if (!stdfs::exists(cfg.point_noise_dir))
    fail_missing("stage 1 (simulate): point noise source not found: " +
                 cfg.point_noise_dir);
  if (!stdfs::exists(cfg.diffuse_bank))
    fail_missing("stage 1 (simulate): diffuse bank not found: " +
                 cfg.diffuse_bank);
  SpatializeJob job;
  job.manifest_in = cfg.manifest_in;
  job.point_noise_dir = cfg.point_noise_dir;
  job.diffuse_bank = cfg.diffuse_bank;
  job.out_dir = p.simulated.string();
  job.seed = static_cast<std::uint64_t>(cfg.seed);
  job.count = cfg.count;
  job.jobs = cfg.jobs;
  spatialize_corpus(job);
}

void stage_enhance(const PipelineConfig& cfg, const StagePaths& p) {
  if (simulate_state(p) != StageState::complete)
    fail_missing("stage 2 (enhance): needs completed simulate outputs at " +
                 p.simulated.string() + " (run stage 1)");
  EnhanceConfig ec = cfg.enhance;
  ec.jobs = cfg.jobs;
  enhance_corpus((p.simulated / "manifest.tsv").string(), p.enhanced.string(),
                 ec);
}

std::string format_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void stage_score(const PipelineConfig& cfg, const StagePaths& p) {
  if (simulate_state(p) != StageState::complete)
    fail_missing("stage 3 (score): needs completed simulate outputs at " +
                 p.simulated.string() + " (run stage 1)");
  if (enhance_state(p) != StageState::complete)
    fail_missing("stage 3 (score): needs completed enhance outputs at " +
                 p.enhanced.string() + " (run stage 2)");

  const auto rows = read_scene_manifest(p.simulated / "manifest.tsv");
  const auto enh = read_two_col_manifest(p.enhanced / "manifest.tsv",
                                         "enhanced");
  std::map<std::string, stdfs::path> enh_by_id(enh.begin(), enh.end());

  stdfs::create_directories(p.results);
  const int ref = cfg.enhance.beamformer.ref_channel;
  {
    std::ofstream ref_man(p.results / "ref_manifest.tsv");
    std::ofstream est_man(p.results / "est_manifest.tsv");
    std::ofstream mix_man(p.results / "mix_manifest.tsv");
    for (const auto& row : rows) {
      const auto it = enh_by_id.find(row.id);
      if (it == enh_by_id.end())
        fail_missing("stage 3 (score): no enhanced output for utterance '" +
                     row.id + "'");
      ref_man << row.id << '\t' << row.target.string() << '\t' << ref << '\n';
      est_man << row.id << '\t' << it->second.string() << '\n';
      mix_man << row.id << '\t' << row.mixture.string() << '\t' << ref << '\n';
    }
  }

  EvalOptions opts;
  opts.jobs = cfg.jobs;
  opts.ci_sdr_taps = cfg.ci_sdr_taps;
  const MetricTable table = evaluate_corpus(
      (p.results / "ref_manifest.tsv").string(),
      (p.results / "est_manifest.tsv").string(),
      (p.results / "mix_manifest.tsv").string(), cfg.metrics, opts);

  {
    std::ofstream out(p.results / "metrics.tsv");
    out << format_metric_table(table);
    if (!out) fail_runtime("failed writing metrics.tsv");
  }
  {
    const std::string title = cfg.enhance.method + " over " +
                              std::to_string(table.rows.size()) +
                              " utterances";
    std::ofstream out(p.results / "summary.txt");
    out << format_summary(table, title);
    if (!out) fail_runtime("failed writing summary.txt");
  }

  if (cfg.has_loss_eval) {
    std::map<std::string, const SceneRow*> row_by_id;
    for (const auto& row : rows) row_by_id[row.id] = &row;
    std::ofstream out(p.results / "losses.tsv");
    out << "utterance_id";
    for (size_t i = 0; i < cfg.loss_eval.entries.size(); ++i) {
      const auto& e = cfg.loss_eval.entries[i];
      out << "\tterm" << i << ":" << wrapper_kind_name(e.wrapper) << ":"
          << criterion_kind_name(e.criterion.kind);
    }
    out << "\ttotal\n";
    std::vector<double> sums(cfg.loss_eval.entries.size() + 1, 0.0);
    for (const auto& mrow : table.rows) {
      const SceneRow& srow = *row_by_id.at(mrow.utterance_id);
      MtlBatch batch;
      batch.refs.push_back(read_wav(srow.target.string()).channels[ref]);
      batch.ests.push_back(
          read_wav(enh_by_id.at(mrow.utterance_id).string()).channels[0]);
      batch.mixtures.push_back(read_wav(srow.mixture.string()).channels[ref]);
      const MtlReport report = mtl_combine(cfg.loss_eval, batch);
      out << mrow.utterance_id;
      for (size_t i = 0; i < report.values.size(); ++i) {
        out << '\t' << format_cell(report.values[i]);
        sums[i] += report.values[i];
      }
      out << '\t' << format_cell(report.total) << '\n';
      sums.back() += report.total;
    }
    out << "mean";
    for (double s : sums)
      out << '\t' << format_cell(s / static_cast<double>(table.rows.size()));
    out << '\n';
    if (!out) fail_runtime("failed writing losses.tsv");
  }
}

void stage_pack(const PipelineConfig& cfg, const StagePaths& p,
                std::uint64_t hash) {
  if (score_state(p, cfg) != StageState::complete)
    fail_missing("stage 4 (pack): needs completed score outputs at " +
                 p.results.string() + " (run stage 3)");
  if (!stdfs::exists(p.run_log))
    fail_missing("stage 4 (pack): run log not found: " + p.run_log.string());

  stdfs::create_directories(p.pack);
  std::vector<std::string> packed;
  auto copy_in = [&](const stdfs::path& src, const std::string& name) {
    stdfs::copy_file(src, p.pack / name,
                     stdfs::copy_options::overwrite_existing);
    packed.push_back(name);
  };
  copy_in(p.results / "metrics.tsv", "metrics.tsv");
  copy_in(p.results / "summary.txt", "summary.txt");
  if (cfg.has_loss_eval) copy_in(p.results / "losses.tsv", "losses.tsv");
  copy_in(p.run_log, "run.log");
  {
    std::ofstream out(p.pack / "config.json");
    out << serialize_pipeline_config(cfg);
    packed.push_back("config.json");
  }
  {
    std::ifstream metrics(p.results / "metrics.tsv");
    long lines = 0;
    std::string line;
    while (std::getline(metrics, line)) ++lines;
    std::ifstream summary(p.results / "summary.txt");
    std::stringstream body;
    body << summary.rdbuf();
    std::ofstream out(p.pack / "report.txt");
    out << "sepkit results package\n"
        << "version: " << kSepkitVersion << "\n"
        << "config_hash: " << hash_hex(hash) << "\n"
        << "seed: " << cfg.seed << "\n"
        << "utterances: " << std::max(0L, lines - 2) << "\n\n"
        << body.str();
    packed.push_back("report.txt");
  }
  std::sort(packed.begin(), packed.end());
  std::ofstream sums(p.pack / "checksums.tsv");
  for (const auto& name : packed) {
    std::ifstream in(p.pack / name, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    sums << name << '\t' << hash_hex(fnv1a64(bytes.data(), bytes.size()))
         << '\n';
  }
  if (!sums) fail_runtime("failed writing checksums.tsv");
}

}  // namespace

void run_pipeline(const PipelineConfig& cfg, const RunOptions& opts,
                  std::ostream& log) {
  PipelineConfig eff = cfg;
  if (opts.seed >= 0) eff.seed = opts.seed;
  if (opts.jobs > 0) eff.jobs = opts.jobs;
  if (opts.stage_start > 0) eff.stage_start = opts.stage_start;
  if (opts.stage_stop > 0) eff.stage_stop = opts.stage_stop;
  if (eff.stage_start < 1 || eff.stage_stop > 4 ||
      eff.stage_start > eff.stage_stop)
    fail_validation("stage range must be contiguous within 1..4");

  const StagePaths p = stage_paths(eff);
  stdfs::create_directories(p.root);

  const std::uint64_t hash = config_hash(eff);
  if (!stdfs::exists(p.run_log) || opts.force) {
    std::ofstream out(p.run_log);
    out << "sepkit run log\n"
        << "version: " << kSepkitVersion << "\n"
        << "config_hash: " << hash_hex(hash) << "\n"
        << "seed: " << eff.seed << "\n";
    if (!out) fail_runtime("failed writing " + p.run_log.string());
  }

  struct Stage {
    int number;
    const char* name;
    stdfs::path dir;
  };
  const Stage stages[4] = {{1, "simulate", p.simulated},
                           {2, "enhance", p.enhanced},
                           {3, "score", p.results},
                           {4, "pack", p.pack}};

  for (const Stage& stage : stages) {
    if (stage.number < eff.stage_start || stage.number > eff.stage_stop)
      continue;
    const std::string label = "stage " + std::to_string(stage.number) + " (" +
                              stage.name + ")";
    if (opts.force) stdfs::remove_all(stage.dir);

    StageState state = StageState::absent;
    switch (stage.number) {
      case 1: state = simulate_state(p); break;
      case 2: state = enhance_state(p); break;
      case 3: state = score_state(p, eff); break;
      case 4: state = pack_state(p); break;
    }
    if (state == StageState::complete) {
      log << label << ": outputs complete, skipping\n";
      continue;
    }
    if (state == StageState::partial)
      fail_missing(label + ": outputs at " + stage.dir.string() +
                   " are partial; rerun with --force");

    log << label << ": running\n";
    try {
      switch (stage.number) {
        case 1: stage_simulate(eff, p); break;
        case 2: stage_enhance(eff, p); break;
        case 3: stage_score(eff, p); break;
        case 4: stage_pack(eff, p, hash); break;
      }
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      fail_runtime(label + ": " + e.what());
    }
    log << label << ": done\n";
  }
}

}  // namespace sepkit
