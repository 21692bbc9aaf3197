#include "sepkit/spatialize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "sepkit/fft.hpp"
#include "sepkit/rng.hpp"
#include "sepkit/stft.hpp"
#include "sepkit/wav.hpp"

namespace sepkit {

namespace {

double unnormalized_sinc(double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }

// Linear convolution truncated (or zero-padded) to n samples.
Signal convolve_trunc(const Signal& x, const Signal& h, long n) {
  Signal full = fft_convolve(x, h);
  full.resize(static_cast<size_t>(n), 0.0);
  return full;
}

// Random crop when the clip is longer than n; loop with a 50 ms linear
// crossfade when shorter. Draws come from `rng` only on the crop path.
Signal fit_to_length(const Signal& clip, long n, double fs, Rng& rng) {
  const long len = static_cast<long>(clip.size());
  if (len <= 0) throw std::invalid_argument("fit_to_length: empty clip");
  if (len == n) return clip;
  if (len > n) {
    const long off = rng.uniform_int(0, len - n);
    return Signal(clip.begin() + off, clip.begin() + off + n);
  }
  const long cross = std::min(std::lround(0.05 * fs), len - 1);
  Signal out = clip;
  out.reserve(static_cast<size_t>(n) + clip.size());
  while (static_cast<long>(out.size()) < n) {
    const long base = static_cast<long>(out.size());
    for (long k = 0; k < cross; ++k) {
      const double w = (k + 1.0) / (cross + 1.0);
      out[base - cross + k] = out[base - cross + k] * (1.0 - w) + clip[k] * w;
    }
    out.insert(out.end(), clip.begin() + cross, clip.end());
  }
  out.resize(static_cast<size_t>(n));
  return out;
}

}  // namespace

Waveform gen_diffuse(const Waveform& noise, const ArrayGeometry& array,
                     double sample_rate, long out_samples) {
  noise.validate();
  if (noise.num_channels() != 1)
    throw std::invalid_argument("gen_diffuse: source noise must be mono");
  if (sample_rate <= 0.0)
    throw std::invalid_argument("gen_diffuse: sample_rate must be > 0");
  if (array.mic_count < 1)
    throw std::invalid_argument("gen_diffuse: need at least one mic");
  const int mics = array.mic_count;
  const long n = noise.num_samples();
  const long out = out_samples > 0 ? out_samples : n / mics;
  if (out <= 0 || static_cast<long>(mics) * out > n)
    throw std::invalid_argument(
        "gen_diffuse: source too short for " + std::to_string(mics) +
        " disjoint segments of " + std::to_string(out) + " samples");

  const long stride = n / mics;
  Waveform segments(mics, out, sample_rate);
  for (int c = 0; c < mics; ++c) {
    const auto begin = noise.channels[0].begin() + c * stride;
    std::copy(begin, begin + out, segments.channels[c].begin());
  }

  StftConfig cfg;
  ComplexSpectrogram spec = stft(segments, cfg);

  // Per-bin mixing by the symmetric square root C = U sqrt(L) U^T of Gamma.
  // C C^T = Gamma, and its rows have unit norm (Gamma_ii = 1), so per-channel
  // power is preserved. The symmetric root is the unique PSD solution, hence
  // continuous across bins; a raw eigenvector factor U sqrt(L) carries
  // arbitrary per-bin sign flips whose frame-to-frame inconsistency bleeds
  // power in the overlap-add synthesis.
  const auto positions = array.mic_positions();
  std::vector<double> mixing(static_cast<size_t>(spec.bins) * mics * mics);
  Eigen::MatrixXd gamma(mics, mics);
  for (int f = 0; f < spec.bins; ++f) {
    const double freq = f * sample_rate / cfg.n_fft;
    for (int i = 0; i < mics; ++i) {
      gamma(i, i) = 1.0;
      for (int j = i + 1; j < mics; ++j) {
        const double d = distance(positions[i], positions[j]);
        const double x = 2.0 * M_PI * freq * d / kSpeedOfSound;
        gamma(i, j) = gamma(j, i) = unnormalized_sinc(x);
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gamma);
    const Eigen::MatrixXd mix =
        es.eigenvectors() *
        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
    for (int i = 0; i < mics; ++i)
      for (int j = 0; j < mics; ++j)
        mixing[(static_cast<size_t>(f) * mics + i) * mics + j] = mix(i, j);
  }

  std::vector<Complex> frame(mics);
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      for (int c = 0; c < mics; ++c) frame[c] = spec.at(t, f, c);
      const double* m = &mixing[static_cast<size_t>(f) * mics * mics];
      for (int i = 0; i < mics; ++i) {
        Complex acc(0.0, 0.0);
        for (int j = 0; j < mics; ++j) acc += m[i * mics + j] * frame[j];
        spec.at(t, f, i) = acc;
      }
    }
  }
  return istft(spec, cfg, out, sample_rate);
}

double snr_gain(const Waveform& signal_ref, const Waveform& noise,
                double target_snr_db) {
  signal_ref.validate();
  noise.validate();
  auto mean_square = [](const Signal& s) {
    if (s.empty()) return 0.0;
    double acc = 0.0;
    for (double v : s) acc += v * v;
    return acc / static_cast<double>(s.size());
  };
  const double ps = mean_square(signal_ref.channels[0]);
  const double pn = mean_square(noise.channels[0]);
  if (ps <= 0.0)
    throw std::invalid_argument("snr_gain: reference signal has zero power");
  if (pn <= 0.0)
    throw std::invalid_argument("snr_gain: noise has zero power");
  return std::sqrt(ps / (pn * std::pow(10.0, target_snr_db / 10.0)));
}

MixtureRecord build_mixture(const Waveform& utterance, const SceneSpec& scene,
                            const std::vector<Signal>& noise_bank,
                            const Signal& diffuse_source,
                            const std::string& utterance_id) {
  utterance.validate();
  if (utterance.num_channels() != 1)
    throw std::invalid_argument("build_mixture: utterance must be mono");
  const long n = utterance.num_samples();
  if (n <= 0) throw std::invalid_argument("build_mixture: empty utterance");
  const int num_noise = static_cast<int>(scene.noise_positions.size());
  if (static_cast<int>(scene.snr_point_db.size()) != num_noise)
    throw std::invalid_argument(
        "build_mixture: scene noise positions and SNRs disagree in count");
  if (static_cast<int>(noise_bank.size()) < num_noise)
    throw std::invalid_argument(
        "build_mixture: noise bank holds " + std::to_string(noise_bank.size()) +
        " clips, scene needs " + std::to_string(num_noise));
  if (diffuse_source.empty())
    throw std::invalid_argument("build_mixture: empty diffuse source");
  const double fs = utterance.sample_rate;
  const int mics = scene.array.mic_count;
  const Signal& dry = utterance.channels[0];

  Rng rng_point(substream_seed(scene.rng_seed, 101));
  Rng rng_diffuse(substream_seed(scene.rng_seed, 202));

  MixtureRecord rec;
  rec.scene = scene;
  rec.utterance_id = utterance_id;

  const int order = rir_order_for(scene.room);
  const Rir target_rir = simulate_rir(scene.room, scene.target_pos, scene.array, order, fs);
  rec.target_reverberant = Waveform(mics, n, fs);
  for (int c = 0; c < mics; ++c)
    rec.target_reverberant.channels[c] = convolve_trunc(dry, target_rir.taps[c], n);

  const Rir direct_rir =
      simulate_rir(scene.room, scene.target_pos, scene.array, 1, fs, true);
  rec.target_anechoic = Waveform(1, n, fs);
  rec.target_anechoic.channels[0] = convolve_trunc(dry, direct_rir.taps[0], n);

  // Point noises: clips drawn without replacement, shaped to length, put
  // through their own RIRs, then scaled to the sampled SNR at mic 0.
  rec.noise_points = Waveform(mics, n, fs);
  std::vector<int> remaining(noise_bank.size());
  for (size_t i = 0; i < remaining.size(); ++i) remaining[i] = static_cast<int>(i);
  for (int i = 0; i < num_noise; ++i) {
    const long pick = rng_point.uniform_int(0, static_cast<long>(remaining.size()) - 1);
    const Signal& clip = noise_bank[remaining[pick]];
    remaining.erase(remaining.begin() + pick);
    const Signal shaped = fit_to_length(clip, n, fs, rng_point);
    const Rir rir =
        simulate_rir(scene.room, scene.noise_positions[i], scene.array, order, fs);
    Waveform reverberant(mics, n, fs);
    for (int c = 0; c < mics; ++c)
      reverberant.channels[c] = convolve_trunc(shaped, rir.taps[c], n);
    const double g = snr_gain(rec.target_reverberant, reverberant, scene.snr_point_db[i]);
    for (int c = 0; c < mics; ++c)
      for (long k = 0; k < n; ++k)
        rec.noise_points.channels[c][k] += g * reverberant.channels[c][k];
  }

  // Diffuse field: the generator consumes mic_count disjoint segments, so
  // shape the source to mic_count * n first.
  Waveform source(1, 0, fs);
  source.channels[0] =
      fit_to_length(diffuse_source, static_cast<long>(mics) * n, fs, rng_diffuse);
  Waveform diffuse = gen_diffuse(source, scene.array, fs, n);
  const double gd = snr_gain(rec.target_reverberant, diffuse, scene.snr_diffuse_db);
  rec.noise_diffuse = Waveform(mics, n, fs);
  for (int c = 0; c < mics; ++c)
    for (long k = 0; k < n; ++k)
      rec.noise_diffuse.channels[c][k] = gd * diffuse.channels[c][k];

  rec.noise_sum = Waveform(mics, n, fs);
  rec.mixture = Waveform(mics, n, fs);
  for (int c = 0; c < mics; ++c) {
    for (long k = 0; k < n; ++k) {
      rec.noise_sum.channels[c][k] =
          rec.noise_points.channels[c][k] + rec.noise_diffuse.channels[c][k];
      rec.mixture.channels[c][k] =
          rec.target_reverberant.channels[c][k] + rec.noise_sum.channels[c][k];
    }
  }
  return rec;
}

namespace {

namespace stdfs = std::filesystem;

struct ManifestEntry {
  std::string id;
  std::string path;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": expected \"utterance_id<TAB>wav_path\"");
    ManifestEntry entry{line.substr(0, tab), line.substr(tab + 1)};
    if (entry.id.find('/') != std::string::npos)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": utterance_id must not contain '/'");
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) throw std::runtime_error("manifest is empty: " + path);
  return entries;
}

// Sorted listing so clip indices are stable across filesystems.
std::vector<std::string> list_wavs(const std::string& path) {
  std::vector<std::string> out;
  const stdfs::path p(path);
  if (stdfs::is_regular_file(p)) {
    out.push_back(p.string());
    return out;
  }
  if (!stdfs::is_directory(p))
    throw std::runtime_error("noise path does not exist: " + path);
  for (const auto& entry : stdfs::directory_iterator(p))
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      out.push_back(entry.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no .wav files under " + path);
  return out;
}

Signal load_mono(const std::string& path, double* fs_seen) {
  Waveform wave = read_wav(path);
  if (wave.num_channels() != 1)
    throw std::runtime_error(path + ": expected a mono clip, got " +
                             std::to_string(wave.num_channels()) + " channels");
  if (*fs_seen <= 0.0) {
    *fs_seen = wave.sample_rate;
  } else if (wave.sample_rate != *fs_seen) {
    throw std::runtime_error(path + ": sample rate " +
                             std::to_string(wave.sample_rate) +
                             " does not match the corpus rate " +
                             std::to_string(*fs_seen));
  }
  return std::move(wave.channels[0]);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_scene_meta(const stdfs::path& path, const MixtureRecord& rec,
                      uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const SceneSpec& s = rec.scene;
  auto kv = [&out](const std::string& key, const std::string& value) {
    out << key << '\t' << value << '\n';
  };
  kv("utterance_id", rec.utterance_id);
  kv("rng_seed", std::to_string(seed));
  kv("sample_rate", format_double(rec.mixture.sample_rate));
  kv("room_lx", format_double(s.room.lx));
  kv("room_ly", format_double(s.room.ly));
  kv("room_lz", format_double(s.room.lz));
  kv("room_t60", format_double(s.room.t60));
  kv("room_absorption", format_double(s.room.absorption));
  kv("array_x", format_double(s.array.center[0]));
  kv("array_y", format_double(s.array.center[1]));
  kv("array_z", format_double(s.array.center[2]));
  kv("array_yaw", format_double(s.array.yaw));
  kv("array_radius", format_double(s.array.radius));
  kv("mic_count", std::to_string(s.array.mic_count));
  kv("target_x", format_double(s.target_pos[0]));
  kv("target_y", format_double(s.target_pos[1]));
  kv("target_z", format_double(s.target_pos[2]));
  kv("snr_diffuse_db", format_double(s.snr_diffuse_db));
  kv("num_point_noises", std::to_string(s.noise_positions.size()));
  for (size_t i = 0; i < s.noise_positions.size(); ++i) {
    const std::string tag = "noise" + std::to_string(i);
    kv(tag + "_x", format_double(s.noise_positions[i][0]));
    kv(tag + "_y", format_double(s.noise_positions[i][1]));
    kv(tag + "_z", format_double(s.noise_positions[i][2]));
    kv(tag + "_snr_db", format_double(s.snr_point_db[i]));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string spatialize_corpus(const SpatializeJob& job) {
  if (job.count < 0)
    throw std::invalid_argument("spatialize_corpus: count must be >= 0");
  if (job.jobs < 1)
    throw std::invalid_argument("spatialize_corpus: jobs must be >= 1");

  std::vector<ManifestEntry> entries = read_manifest(job.manifest_in);
  if (job.count > 0 && job.count < static_cast<long>(entries.size()))
    entries.resize(static_cast<size_t>(job.count));

  double corpus_fs = 0.0;
  std::vector<Signal> bank;
  for (const auto& path : list_wavs(job.point_noise_dir))
    bank.push_back(load_mono(path, &corpus_fs));
  std::vector<Signal> diffuse_clips;
  for (const auto& path : list_wavs(job.diffuse_bank))
    diffuse_clips.push_back(load_mono(path, &corpus_fs));

  const stdfs::path out_root(job.out_dir);
  stdfs::create_directories(out_root);

  std::vector<std::string> lines(entries.size());
  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto process = [&](long i) {
    const ManifestEntry& entry = entries[static_cast<size_t>(i)];
    Waveform utterance = read_wav(entry.path);
    if (utterance.num_channels() != 1)
      throw std::runtime_error(entry.path + ": expected a mono utterance");
    if (utterance.sample_rate != corpus_fs)
      throw std::runtime_error(entry.path + ": sample rate " +
                               std::to_string(utterance.sample_rate) +
                               " does not match the noise banks (" +
                               std::to_string(corpus_fs) + ")");
    const uint64_t seed = substream_seed(job.seed, static_cast<uint64_t>(i));
    const SceneSpec scene = sample_scene(seed);
    Rng picker(substream_seed(seed, 303));
    const Signal& diffuse_source =
        diffuse_clips[picker.uniform_int(0, static_cast<long>(diffuse_clips.size()) - 1)];
    const MixtureRecord rec =
        build_mixture(utterance, scene, bank, diffuse_source, entry.id);

    const stdfs::path dir = out_root / entry.id;
    stdfs::create_directories(dir);
    write_wav((dir / "mixture.wav").string(), rec.mixture);
    write_wav((dir / "target_reverberant.wav").string(), rec.target_reverberant);
    write_wav((dir / "target_anechoic.wav").string(), rec.target_anechoic);
    write_wav((dir / "noise_sum.wav").string(), rec.noise_sum);
    write_scene_meta(dir / "scene.meta", rec, seed);

    const std::string rel = entry.id + "/";
    lines[static_cast<size_t>(i)] =
        entry.id + "\t" + rel + "mixture.wav\t" + rel + "target_reverberant.wav\t" +
        rel + "target_anechoic.wav\t" + rel + "noise_sum.wav\t" + rel + "scene.meta";
  };

  auto worker = [&]() {
    for (;;) {
      if (failed.load()) return;
      const long i = next.fetch_add(1);
      if (i >= static_cast<long>(entries.size())) return;
      try {
        process(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const int pool = static_cast<int>(
      std::min<long>(job.jobs, static_cast<long>(entries.size())));
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  const stdfs::path manifest_path = out_root / "manifest.tsv";
  std::ofstream manifest(manifest_path);
  if (!manifest)
    throw std::runtime_error("cannot write " + manifest_path.string());
  for (const auto& line : lines) manifest << line << '\n';
  if (!manifest)
    throw std::runtime_error("failed writing " + manifest_path.string());
  return manifest_path.string();
}

}  // namespace sepkit
