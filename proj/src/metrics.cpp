#include "sepkit/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sepkit/criteria.hpp"
#include "sepkit/fft.hpp"
#include "sepkit/wav.hpp"

namespace sepkit {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double bessel_i0(double z) {
  // power series; converges in ~30 terms for z <= 14
  double sum = 1.0, term = 1.0;
  const double q = 0.25 * z * z;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-18) break;
  }
  return sum;
}

// ---------------------------------------------------------------------
// STOI internals. All fixed at the 10 kHz analysis rate.

constexpr double kStoiRate = 10000.0;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBins = kStoiFft / 2 + 1;
constexpr int kStoiBands = 15;
constexpr double kStoiBandStart = 150.0;
constexpr int kStoiSegment = 30;
constexpr double kStoiDynRange = 40.0;
// min(alpha*y, x*(1+c)) bounds the per-cell error at -15 dB: c = 10^(15/20)
const double kStoiClipGain = 1.0 + std::pow(10.0, 15.0 / 20.0);

// Symmetric hann without its zero endpoints, as in the reference
// intelligibility code: w[k] = 0.5 - 0.5 cos(2 pi (k+1) / (frame+1)).
std::vector<double> stoi_window() {
  std::vector<double> w(kStoiFrame);
  for (int k = 0; k < kStoiFrame; ++k)
    w[k] = 0.5 - 0.5 * std::cos(2.0 * M_PI * (k + 1) / (kStoiFrame + 1));
  return w;
}

// Drops every frame whose windowed reference energy sits more than 40 dB
// below the loudest reference frame, then overlap-adds the kept frames
// back into a pair of shorter signals.
void remove_silent_frames(const Signal& x, const Signal& y, Signal& x_out,
                          Signal& y_out) {
  const std::vector<double> w = stoi_window();
  const long n = static_cast<long>(x.size());
  std::vector<long> starts;
  for (long i = 0; i + kStoiFrame <= n; i += kStoiHop) starts.push_back(i);

  std::vector<double> energy_db(starts.size());
  double max_db = -std::numeric_limits<double>::infinity();
  for (size_t f = 0; f < starts.size(); ++f) {
    double e = 0.0;
    for (int k = 0; k < kStoiFrame; ++k) {
      const double v = w[k] * x[starts[f] + k];
      e += v * v;
    }
    energy_db[f] = 20.0 * std::log10(std::sqrt(e) + kEps);
    max_db = std::max(max_db, energy_db[f]);
  }

  std::vector<long> kept;
  for (size_t f = 0; f < starts.size(); ++f)
    if (energy_db[f] >= max_db - kStoiDynRange) kept.push_back(starts[f]);

  const long n_out =
      kept.empty() ? 0 : static_cast<long>(kept.size() - 1) * kStoiHop + kStoiFrame;
  x_out.assign(n_out, 0.0);
  y_out.assign(n_out, 0.0);
  for (size_t f = 0; f < kept.size(); ++f)
    for (int k = 0; k < kStoiFrame; ++k) {
      const long dst = static_cast<long>(f) * kStoiHop + k;
      x_out[dst] += w[k] * x[kept[f] + k];
      y_out[dst] += w[k] * y[kept[f] + k];
    }
}

// One-third-octave band edges snapped to the nearest 512-point bin at
// 10 kHz; half-open [lo, hi) bin ranges.
std::vector<std::pair<int, int>> third_octave_bins() {
  std::vector<std::pair<int, int>> bands(kStoiBands);
  for (int b = 0; b < kStoiBands; ++b) {
    const double cf = kStoiBandStart * std::pow(2.0, b / 3.0);
    const double lo = cf * std::pow(2.0, -1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    auto nearest = [](double f_target) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < kStoiBins; ++i) {
        const double f = i * kStoiRate / kStoiFft;
        const double d = (f - f_target) * (f - f_target);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      return best;
    };
    bands[b] = {nearest(lo), nearest(hi)};
  }
  return bands;
}

// Band-pooled magnitudes, bands x frames. Frames start every 128
// samples and must fit strictly before the end of the signal.
std::vector<std::vector<double>> band_magnitudes(const Signal& x) {
  static const std::vector<std::pair<int, int>> bands = third_octave_bins();
  const std::vector<double> w = stoi_window();
  const long n = static_cast<long>(x.size());
  std::vector<long> starts;
  for (long i = 0; i + kStoiFrame < n; i += kStoiHop) starts.push_back(i);

  std::vector<std::vector<double>> out(
      kStoiBands, std::vector<double>(starts.size(), 0.0));
  std::vector<double> buf(kStoiFft, 0.0);
  for (size_t f = 0; f < starts.size(); ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int k = 0; k < kStoiFrame; ++k) buf[k] = w[k] * x[starts[f] + k];
    const std::vector<Complex> spec = rfft(buf.data(), kStoiFft);
    for (int b = 0; b < kStoiBands; ++b) {
      double e = 0.0;
      for (int i = bands[b].first; i < bands[b].second; ++i)
        e += std::norm(spec[i]);
      out[b][f] = std::sqrt(e);
    }
  }
  return out;
}

double segment_correlation(const double* x, const double* y_clipped, int n) {
  double mx = 0.0, my = 0.0;
  for (int k = 0; k < n; ++k) {
    mx += x[k];
    my += y_clipped[k];
  }
  mx /= n;
  my /= n;
  double num = 0.0, ex = 0.0, ey = 0.0;
  for (int k = 0; k < n; ++k) {
    const double a = x[k] - mx;
    const double b = y_clipped[k] - my;
    num += a * b;
    ex += a * a;
    ey += b * b;
  }
  return num / (std::sqrt(ex) * std::sqrt(ey) + kEps);
}

// ---------------------------------------------------------------------
// Corpus evaluation internals.

struct ManifestEntry {
  std::string id;
  std::string path;
  int channel = 0;
};

std::vector<ManifestEntry> read_metric_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t pos = 0;
    while (true) {
      const size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(pos));
        break;
      }
      cols.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty())
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               " is not id<TAB>path[<TAB>channel]: " + path);
    ManifestEntry e{cols[0], cols[1], 0};
    if (cols.size() == 3) {
      try {
        size_t used = 0;
        e.channel = std::stoi(cols[2], &used);
        if (used != cols[2].size() || e.channel < 0) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                 " has a bad channel index: " + path);
      }
    }
    if (!seen.insert(e.id).second)
      throw std::runtime_error("duplicate utterance_id '" + e.id +
                               "' in manifest: " + path);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("manifest is empty: " + path);
  return entries;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  return out;
}

// Every manifest must list exactly the reference ids; differences are
// spelled out by name.
void check_aligned(const std::vector<ManifestEntry>& ref,
                   const std::vector<ManifestEntry>& other,
                   const std::string& label) {
  std::set<std::string> ref_ids, other_ids;
  for (const auto& e : ref) ref_ids.insert(e.id);
  for (const auto& e : other) other_ids.insert(e.id);
  std::vector<std::string> missing, extra;
  for (const auto& id : ref_ids)
    if (!other_ids.count(id)) missing.push_back(id);
  for (const auto& id : other_ids)
    if (!ref_ids.count(id)) extra.push_back(id);
  if (missing.empty() && extra.empty()) return;
  std::string msg = label + " manifest is misaligned with the reference";
  if (!missing.empty()) msg += "; missing ids: " + join_ids(missing);
  if (!extra.empty()) msg += "; extra ids: " + join_ids(extra);
  throw std::runtime_error(msg);
}

Signal load_channel(const ManifestEntry& e, double* fs) {
  const Waveform wave = read_wav(e.path);
  if (e.channel >= wave.num_channels())
    throw std::runtime_error("utterance '" + e.id + "': channel " +
                             std::to_string(e.channel) + " out of range for " +
                             e.path);
  *fs = wave.sample_rate;
  return wave.channels[e.channel];
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string metric_display_name(const std::string& key) {
  if (key == "stoi") return "STOI";
  if (key == "si_snr") return "SI-SNR (dB)";
  if (key == "ci_sdr") return "CI-SDR (dB)";
  if (key == "si_snri") return "SI-SNRi (dB)";
  return key;
}

}  // namespace

Signal resample(const Signal& x, double fs_in, double fs_out) {
  if (fs_in <= 0.0 || fs_out <= 0.0)
    throw std::invalid_argument("resample: rates must be > 0");
  const long r_in = std::lround(fs_in);
  const long r_out = std::lround(fs_out);
  if (std::abs(fs_in - r_in) > 1e-6 || std::abs(fs_out - r_out) > 1e-6)
    throw std::invalid_argument("resample: rates must be integral");
  const long g = std::gcd(r_in, r_out);
  const long up = r_out / g;    // L
  const long down = r_in / g;   // M
  if (up == down) return x;

  // Kernel in input-sample time: cutoff fc of the input Nyquist, Kaiser
  // beta 14, half-width 16 cutoff-rate zero crossings.
  const double fc = std::min(1.0, static_cast<double>(up) / down);
  const double half_width = 16.0 / fc;
  const long k_max = static_cast<long>(std::ceil(half_width));
  const double i0_beta = bessel_i0(14.0);
  auto kernel = [&](double t) {
    const double u = t / half_width;
    if (std::abs(u) >= 1.0) return 0.0;
    const double window = bessel_i0(14.0 * std::sqrt(1.0 - u * u)) / i0_beta;
    const double a = M_PI * fc * t;
    const double s = (std::abs(a) < 1e-12) ? 1.0 : std::sin(a) / a;
    return fc * s * window;
  };

  // Phase p serves output samples at fractional offset p/up; tap k
  // multiplies x[base - k].
  std::vector<std::vector<double>> phases(up);
  for (long p = 0; p < up; ++p) {
    phases[p].resize(2 * k_max + 1);
    for (long k = -k_max; k <= k_max; ++k)
      phases[p][k + k_max] = kernel(k + static_cast<double>(p) / up);
  }

  const long n = static_cast<long>(x.size());
  const long n_out = (n * up + down - 1) / down;
  Signal y(n_out, 0.0);
  for (long m = 0; m < n_out; ++m) {
    const long q = m * down;
    const long base = q / up;
    const std::vector<double>& taps = phases[q % up];
    double acc = 0.0;
    const long k_lo = std::max(-k_max, base - (n - 1));
    const long k_hi = std::min(k_max, base);
    for (long k = k_lo; k <= k_hi; ++k) acc += x[base - k] * taps[k + k_max];
    y[m] = acc;
  }
  return y;
}

double stoi(const Signal& ref, const Signal& est, double fs) {
  if (ref.size() != est.size())
    throw std::invalid_argument("stoi: signals differ in length");
  if (fs < kStoiRate)
    throw std::invalid_argument("stoi: sample rate must be at least 10 kHz");

  Signal x = resample(ref, fs, kStoiRate);
  Signal y = resample(est, fs, kStoiRate);

  Signal x_sil, y_sil;
  remove_silent_frames(x, y, x_sil, y_sil);

  const std::vector<std::vector<double>> bx = band_magnitudes(x_sil);
  const std::vector<std::vector<double>> by = band_magnitudes(y_sil);
  const long frames = static_cast<long>(bx[0].size());
  if (frames < kStoiSegment)
    throw std::runtime_error(
        "stoi: signal shorter than one 30-frame segment after "
        "silent-frame removal");

  double acc = 0.0;
  long count = 0;
  double y_clip[kStoiSegment];
  for (long m = kStoiSegment; m <= frames; ++m) {
    for (int b = 0; b < kStoiBands; ++b) {
      const double* xs = bx[b].data() + (m - kStoiSegment);
      const double* ys = by[b].data() + (m - kStoiSegment);
      double ex = 0.0, ey = 0.0;
      for (int k = 0; k < kStoiSegment; ++k) {
        ex += xs[k] * xs[k];
        ey += ys[k] * ys[k];
      }
      const double alpha = std::sqrt(ex / (ey + kEps));
      for (int k = 0; k < kStoiSegment; ++k)
        y_clip[k] = std::min(alpha * ys[k], xs[k] * kStoiClipGain);
      acc += segment_correlation(xs, y_clip, kStoiSegment);
      ++count;
    }
  }
  return acc / count;
}

double si_snr_improvement(const Signal& mixture_ref_channel, const Signal& est,
                          const Signal& ref) {
  return si_snr(ref, est) - si_snr(ref, mixture_ref_channel);
}

bool is_known_metric(const std::string& name) {
  return name == "stoi" || name == "si_snr" || name == "ci_sdr" ||
         name == "si_snri";
}

MetricTable evaluate_corpus(const std::string& ref_manifest,
                            const std::string& est_manifest,
                            const std::string& mixture_manifest,
                            const std::vector<std::string>& metrics,
                            const EvalOptions& opts) {
  if (opts.jobs < 1)
    throw std::invalid_argument("evaluate_corpus: jobs must be >= 1");
  if (metrics.empty())
    throw std::invalid_argument("evaluate_corpus: no metrics requested");
  for (const auto& m : metrics)
    if (!is_known_metric(m))
      throw std::invalid_argument(
          "evaluate_corpus: unknown metric '" + m +
          "' (known: stoi, si_snr, ci_sdr, si_snri)");
  const bool needs_mixture =
      std::find(metrics.begin(), metrics.end(), "si_snri") != metrics.end();

  const std::vector<ManifestEntry> refs = read_metric_manifest(ref_manifest);
  const std::vector<ManifestEntry> ests = read_metric_manifest(est_manifest);
  const std::vector<ManifestEntry> mixes = read_metric_manifest(mixture_manifest);
  check_aligned(refs, ests, "estimate");
  check_aligned(refs, mixes, "mixture");

  std::map<std::string, const ManifestEntry*> est_by_id, mix_by_id;
  for (const auto& e : ests) est_by_id[e.id] = &e;
  for (const auto& e : mixes) mix_by_id[e.id] = &e;

  std::vector<const ManifestEntry*> order;
  order.reserve(refs.size());
  for (const auto& e : refs) order.push_back(&e);
  std::sort(order.begin(), order.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) {
              return a->id < b->id;
            });

  MetricTable table;
  table.metrics = metrics;
  table.rows.resize(order.size());

  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      const long i = next.fetch_add(1);
      if (i >= static_cast<long>(order.size())) return;
      if (failed.load()) return;
      try {
        const ManifestEntry& ref_e = *order[i];
        double fs_ref = 0.0, fs_est = 0.0;
        const Signal ref_sig = load_channel(ref_e, &fs_ref);
        const Signal est_sig = load_channel(*est_by_id.at(ref_e.id), &fs_est);
        if (est_sig.size() != ref_sig.size())
          throw std::runtime_error("utterance '" + ref_e.id +
                                   "': estimate and reference lengths differ");
        if (fs_est != fs_ref)
          throw std::runtime_error("utterance '" + ref_e.id +
                                   "': estimate and reference rates differ");
        Signal mix_sig;
        if (needs_mixture) {
          double fs_mix = 0.0;
          mix_sig = load_channel(*mix_by_id.at(ref_e.id), &fs_mix);
          if (mix_sig.size() != ref_sig.size())
            throw std::runtime_error("utterance '" + ref_e.id +
                                     "': mixture and reference lengths differ");
          if (fs_mix != fs_ref)
            throw std::runtime_error("utterance '" + ref_e.id +
                                     "': mixture and reference rates differ");
        }

        MetricRow row;
        row.utterance_id = ref_e.id;
        row.values.reserve(metrics.size());
        for (const auto& m : metrics) {
          if (m == "stoi")
            row.values.push_back(stoi(ref_sig, est_sig, fs_ref));
          else if (m == "si_snr")
            row.values.push_back(si_snr(ref_sig, est_sig));
          else if (m == "ci_sdr")
            row.values.push_back(ci_sdr(ref_sig, est_sig, opts.ci_sdr_taps));
          else
            row.values.push_back(si_snr_improvement(mix_sig, est_sig, ref_sig));
        }
        table.rows[i] = std::move(row);
      } catch (...) {
        failed.store(true);
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  const int pool = static_cast<int>(
      std::min<long>(opts.jobs, static_cast<long>(order.size())));
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  table.means.assign(metrics.size(), 0.0);
  for (const auto& row : table.rows)
    for (size_t c = 0; c < row.values.size(); ++c) table.means[c] += row.values[c];
  for (auto& v : table.means) v /= static_cast<double>(table.rows.size());
  return table;
}

std::string format_metric_table(const MetricTable& table) {
  std::string out = "utterance_id";
  for (const auto& m : table.metrics) out += "\t" + m;
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.utterance_id;
    for (double v : row.values) out += "\t" + format_value(v);
    out += "\n";
  }
  out += "mean";
  for (double v : table.means) out += "\t" + format_value(v);
  out += "\n";
  return out;
}

std::string format_summary(const MetricTable& table, const std::string& title) {
  std::vector<std::string> headers{"utterance"};
  for (const auto& m : table.metrics) headers.push_back(metric_display_name(m));
  headers.push_back("PESQ");

  std::vector<std::vector<std::string>> cells;
  for (const auto& row : table.rows) {
    std::vector<std::string> line{row.utterance_id};
    for (double v : row.values) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3f", v);
      line.push_back(buf);
    }
    line.push_back("n/a");
    cells.push_back(std::move(line));
  }
  std::vector<std::string> mean_line{"mean"};
  for (double v : table.means) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    mean_line.push_back(buf);
  }
  mean_line.push_back("n/a");
  cells.push_back(std::move(mean_line));

  std::vector<size_t> width(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
  }
  auto pad = [](const std::string& s, size_t w) {
    return s + std::string(w - s.size(), ' ');
  };

  std::string out = title + "\n";
  for (size_t c = 0; c < headers.size(); ++c)
    out += pad(headers[c], width[c]) + (c + 1 < headers.size() ? "  " : "");
  out += "\n";
  for (const auto& line : cells) {
    for (size_t c = 0; c < line.size(); ++c)
      out += pad(line[c], width[c]) + (c + 1 < line.size() ? "  " : "");
    out += "\n";
  }
  return out;
}

}  // namespace sepkit
