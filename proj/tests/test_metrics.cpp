#include "sepkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "sepkit/criteria.hpp"
#include "sepkit/rng.hpp"
#include "sepkit/synth.hpp"
#include "sepkit/wav.hpp"

using namespace sepkit;
namespace stdfs = std::filesystem;

namespace {

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, ea = 0, eb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    ea += (ra[i] - ma) * (ra[i] - ma);
    eb += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(ea * eb);
}

}  // namespace

TEST_CASE("resample preserves tones and rejects out-of-band content") {
  const double fs = 16000.0;
  const long n = 16000;
  Signal sine(n);
  for (long i = 0; i < n; ++i) sine[i] = std::sin(2 * M_PI * 400.0 * i / fs);
  const Signal y = resample(sine, fs, 10000.0);
  CHECK(y.size() == 10000);

  double err = 0, ref = 0;
  const long margin = 100;
  for (long m = margin; m < static_cast<long>(y.size()) - margin; ++m) {
    const double v = std::sin(2 * M_PI * 400.0 * m / 10000.0);
    err += (y[m] - v) * (y[m] - v);
    ref += v * v;
  }
  CHECK(std::sqrt(err / ref) < 1e-6);  // measured 3.1e-8

  // 6 kHz sits above the 5 kHz output Nyquist and must be filtered out.
  Signal hi(n);
  for (long i = 0; i < n; ++i) hi[i] = std::sin(2 * M_PI * 6000.0 * i / fs);
  const Signal yh = resample(hi, fs, 10000.0);
  double leak = 0;
  for (long m = margin; m < static_cast<long>(yh.size()) - margin; ++m)
    leak += yh[m] * yh[m];
  leak /= (yh.size() - 2 * margin);
  CHECK(leak < 1e-4);  // measured 1.9e-6 against input power 0.5

  // odd length: output ceil(n * 5 / 8)
  CHECK(resample(Signal(1001, 0.0), fs, 10000.0).size() == 626);

  // equal rates pass through untouched
  const Signal same = resample(sine, fs, fs);
  CHECK(same == sine);

  CHECK_THROWS_AS(resample(sine, 0.0, 10000.0), std::invalid_argument);
  CHECK_THROWS_AS(resample(sine, fs, -1.0), std::invalid_argument);
}

TEST_CASE("stoi self-score is 1 at native and resampled rates") {
  Rng rng(1000);
  const Signal s = modulated_utterance(rng, 48000, 16000.0);
  CHECK(stoi(s, s, 16000.0) == doctest::Approx(1.0).epsilon(1e-3));

  Rng rng10(1001);
  const Signal s10 = modulated_utterance(rng10, 30000, 10000.0);
  CHECK(stoi(s10, s10, 10000.0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("stoi input validation") {
  Rng rng(1002);
  const Signal s = modulated_utterance(rng, 32000, 16000.0);
  Signal shorter(s.begin(), s.end() - 5);
  CHECK_THROWS_AS(stoi(s, shorter, 16000.0), std::invalid_argument);
  CHECK_THROWS_AS(stoi(s, s, 8000.0), std::invalid_argument);

  // 3000 samples at 16 kHz keep only ~12 frames at 10 kHz: below one segment
  Signal tiny(s.begin(), s.begin() + 3000);
  CHECK_THROWS_AS(stoi(tiny, tiny, 16000.0), std::runtime_error);
}

TEST_CASE("stoi separates intact speech from independent noise") {
  Rng rng(1000);
  const Signal s = modulated_utterance(rng, 48000, 16000.0);
  Rng nrng(2000);
  const Signal noise = white_noise(nrng, 48000);
  CHECK(stoi(s, noise, 16000.0) < 0.2);  // measured 0.094
}

TEST_CASE("stoi ignores global scaling of the estimate") {
  Rng rng(1000);
  const Signal s = modulated_utterance(rng, 48000, 16000.0);
  Rng nrng(2000);
  const Signal noise = white_noise(nrng, 48000);
  Signal est(s.size());
  for (size_t i = 0; i < s.size(); ++i) est[i] = s[i] + 0.5 * noise[i];
  const double base = stoi(s, est, 16000.0);
  for (double alpha : {0.01, 37.0}) {
    Signal scaled(est.size());
    for (size_t i = 0; i < est.size(); ++i) scaled[i] = alpha * est[i];
    CHECK(std::abs(stoi(s, scaled, 16000.0) - base) < 1e-6);
  }
}

TEST_CASE("stoi decreases monotonically along a noise sweep") {
  Rng srng(3000);
  const Signal s = modulated_utterance(srng, 48000, 16000.0);
  Rng nrng(3001);
  const Signal noise = white_noise(nrng, 48000);
  double ps = 0, pn = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    ps += s[i] * s[i];
    pn += noise[i] * noise[i];
  }
  const double sigma0 = std::sqrt(ps / pn);

  std::vector<double> sigmas(20), scores(20);
  for (int k = 0; k < 20; ++k) {
    const double snr_db = 25.0 - 2.0 * k;
    sigmas[k] = sigma0 * std::pow(10.0, -snr_db / 20.0);
    Signal est(s.size());
    for (size_t i = 0; i < s.size(); ++i) est[i] = s[i] + sigmas[k] * noise[i];
    scores[k] = stoi(s, est, 16000.0);
  }
  CHECK(spearman(sigmas, scores) <= -0.95);  // measured -1.0 exactly
  for (int k = 1; k < 20; ++k) CHECK(scores[k] <= scores[k - 1]);
  CHECK(scores.front() > 0.95);
  CHECK(scores.back() < 0.4);
}

TEST_CASE("si_snr_improvement identities") {
  Rng rng(4000);
  const Signal ref = modulated_utterance(rng, 32000, 16000.0);
  Rng nrng(4001);
  const Signal noise = white_noise(nrng, 32000);
  Signal mix(ref.size());
  for (size_t i = 0; i < ref.size(); ++i) mix[i] = ref[i] + 0.3 * noise[i];

  CHECK(si_snr_improvement(mix, mix, ref) == 0.0);
  const double gain = si_snr_improvement(mix, ref, ref);
  CHECK(gain > 0.0);
  CHECK(gain == doctest::Approx(kDbCap - si_snr(ref, mix)).epsilon(1e-12));
}

TEST_CASE("evaluate_corpus scores, sorts, aggregates, and parallelizes") {
  const stdfs::path root = stdfs::temp_directory_path() / "sepkit_metrics_test";
  stdfs::remove_all(root);
  stdfs::create_directories(root);

  const std::vector<std::string> ids{"utt_a", "utt_b", "utt_c"};
  std::ofstream ref_man(root / "ref.tsv"), est_man(root / "est.tsv"),
      mix_man(root / "mix.tsv"), self_man(root / "self.tsv");
  std::vector<Signal> refs, mixes;
  for (size_t u = 0; u < ids.size(); ++u) {
    Rng rng(7000 + u);
    const Signal ref = modulated_utterance(rng, 24000, 16000.0);
    Rng nrng(7100 + u);
    const Signal noise = white_noise(nrng, 24000);
    Signal mix(ref.size()), est(ref.size()), junk(ref.size());
    for (size_t i = 0; i < ref.size(); ++i) {
      mix[i] = ref[i] + 0.3 * noise[i];
      est[i] = ref[i] + 0.1 * noise[i];
      junk[i] = noise[i];
    }
    refs.push_back(ref);
    mixes.push_back(mix);

    Waveform ref_w(1, 0, 16000.0);
    ref_w.channels[0] = ref;
    write_wav((root / (ids[u] + "_ref.wav")).string(), ref_w);
    Waveform est_w(1, 0, 16000.0);
    est_w.channels[0] = est;
    write_wav((root / (ids[u] + "_est.wav")).string(), est_w);
    // mixture stored with a decoy channel 0; manifests designate channel 1
    Waveform mix_w(2, 0, 16000.0);
    mix_w.channels[0] = junk;
    mix_w.channels[1] = mix;
    write_wav((root / (ids[u] + "_mix.wav")).string(), mix_w);
  }
  // manifests written out of order to prove rows come back sorted
  for (size_t u : {1, 2, 0}) {
    ref_man << ids[u] << '\t' << (root / (ids[u] + "_ref.wav")).string() << '\n';
    est_man << ids[u] << '\t' << (root / (ids[u] + "_est.wav")).string() << '\n';
    mix_man << ids[u] << '\t' << (root / (ids[u] + "_mix.wav")).string()
            << "\t1\n";
    self_man << ids[u] << '\t' << (root / (ids[u] + "_ref.wav")).string() << '\n';
  }
  ref_man.close();
  est_man.close();
  mix_man.close();
  self_man.close();

  const std::vector<std::string> metrics{"stoi", "si_snr", "ci_sdr", "si_snri"};
  const MetricTable table =
      evaluate_corpus((root / "ref.tsv").string(), (root / "est.tsv").string(),
                      (root / "mix.tsv").string(), metrics, {});

  REQUIRE(table.rows.size() == 3);
  CHECK(table.metrics == metrics);
  for (size_t u = 0; u < 3; ++u) CHECK(table.rows[u].utterance_id == ids[u]);
  for (const auto& row : table.rows) {
    REQUIRE(row.values.size() == 4);
    for (double v : row.values) CHECK(std::isfinite(v));
    CHECK(row.values[0] > 0.0);
    CHECK(row.values[0] <= 1.0);
    CHECK(row.values[3] > 0.0);  // est is closer to ref than the mixture
  }
  for (size_t c = 0; c < metrics.size(); ++c) {
    double mean = 0;
    for (const auto& row : table.rows) mean += row.values[c];
    mean /= 3.0;
    CHECK(std::abs(table.means[c] - mean) < 1e-12);
  }

  // thread count must not change a single byte of the result
  EvalOptions three;
  three.jobs = 3;
  const MetricTable parallel =
      evaluate_corpus((root / "ref.tsv").string(), (root / "est.tsv").string(),
                      (root / "mix.tsv").string(), metrics, three);
  CHECK(format_metric_table(parallel) == format_metric_table(table));

  // est = ref: STOI mean 1, SI-SNR saturates at the cap, SI-SNRi is the
  // cap minus each mixture's SI-SNR
  const MetricTable self =
      evaluate_corpus((root / "ref.tsv").string(), (root / "self.tsv").string(),
                      (root / "mix.tsv").string(), metrics, {});
  CHECK(self.means[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(self.means[1] == doctest::Approx(kDbCap).epsilon(1e-12));
  for (size_t u = 0; u < 3; ++u) {
    const Signal mix_file =
        read_wav((root / (ids[u] + "_mix.wav")).string()).channels[1];
    const Signal ref_file =
        read_wav((root / (ids[u] + "_ref.wav")).string()).channels[0];
    CHECK(self.rows[u].values[3] ==
          doctest::Approx(kDbCap - si_snr(ref_file, mix_file)).epsilon(1e-9));
  }

  // est = mixture channel: improvement is exactly zero
  const MetricTable idle = evaluate_corpus(
      (root / "ref.tsv").string(), (root / "mix.tsv").string(),
      (root / "mix.tsv").string(), {"si_snri"}, {});
  for (const auto& row : idle.rows) CHECK(row.values[0] == 0.0);

  // formatted outputs
  const std::string tsv = format_metric_table(table);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 5);  // header + 3 + mean
  CHECK(tsv.find("utterance_id\tstoi\tsi_snr\tci_sdr\tsi_snri\n") == 0);
  CHECK(tsv.find("\nmean\t") != std::string::npos);
  const std::string summary = format_summary(table, "toy corpus");
  CHECK(summary.find("toy corpus") == 0);
  CHECK(summary.find("STOI") != std::string::npos);
  CHECK(summary.find("SI-SNRi (dB)") != std::string::npos);
  CHECK(summary.find("PESQ") != std::string::npos);
  CHECK(summary.find("n/a") != std::string::npos);

  stdfs::remove_all(root);
}

TEST_CASE("evaluate_corpus reports misalignment and bad input by name") {
  const stdfs::path root = stdfs::temp_directory_path() / "sepkit_metrics_errs";
  stdfs::remove_all(root);
  stdfs::create_directories(root);

  Rng rng(8000);
  const Signal ref = modulated_utterance(rng, 24000, 16000.0);
  Waveform w(1, 0, 16000.0);
  w.channels[0] = ref;
  write_wav((root / "a.wav").string(), w);
  Waveform shorter(1, 0, 16000.0);
  shorter.channels[0] = Signal(ref.begin(), ref.end() - 100);
  write_wav((root / "short.wav").string(), shorter);

  auto write_lines = [&](const std::string& name,
                         const std::vector<std::string>& lines) {
    std::ofstream out(root / name);
    for (const auto& l : lines) out << l << '\n';
    return (root / name).string();
  };
  const std::string wav_a = (root / "a.wav").string();
  const std::string ref_tsv =
      write_lines("ref.tsv", {"utt_a\t" + wav_a, "utt_b\t" + wav_a});
  const std::string good_tsv =
      write_lines("good.tsv", {"utt_a\t" + wav_a, "utt_b\t" + wav_a});

  // missing utt_b, extra utt_x: both named in the error
  const std::string bad_ids =
      write_lines("bad_ids.tsv", {"utt_a\t" + wav_a, "utt_x\t" + wav_a});
  try {
    evaluate_corpus(ref_tsv, bad_ids, good_tsv, {"si_snr"}, {});
    FAIL("expected misalignment error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("utt_b") != std::string::npos);
    CHECK(msg.find("utt_x") != std::string::npos);
  }

  CHECK_THROWS_AS(
      evaluate_corpus(ref_tsv, good_tsv, good_tsv, {"sdr"}, {}),
      std::invalid_argument);
  CHECK_THROWS_AS(evaluate_corpus(ref_tsv, good_tsv, good_tsv, {}, {}),
                  std::invalid_argument);

  // channel designation out of range names the utterance
  const std::string bad_chan =
      write_lines("bad_chan.tsv", {"utt_a\t" + wav_a + "\t7", "utt_b\t" + wav_a});
  try {
    evaluate_corpus(ref_tsv, bad_chan, good_tsv, {"si_snr"}, {});
    FAIL("expected channel error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("utt_a") != std::string::npos);
  }

  // estimate length mismatch names the utterance
  const std::string bad_len = write_lines(
      "bad_len.tsv",
      {"utt_a\t" + (root / "short.wav").string(), "utt_b\t" + wav_a});
  try {
    evaluate_corpus(ref_tsv, bad_len, good_tsv, {"si_snr"}, {});
    FAIL("expected length error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("utt_a") != std::string::npos);
  }

  // malformed manifest rows
  const std::string no_tab = write_lines("no_tab.tsv", {"just_one_column"});
  CHECK_THROWS_AS(evaluate_corpus(no_tab, good_tsv, good_tsv, {"si_snr"}, {}),
                  std::runtime_error);
  const std::string dup =
      write_lines("dup.tsv", {"utt_a\t" + wav_a, "utt_a\t" + wav_a});
  CHECK_THROWS_AS(evaluate_corpus(dup, good_tsv, good_tsv, {"si_snr"}, {}),
                  std::runtime_error);
  const std::string empty = write_lines("empty.tsv", {});
  CHECK_THROWS_AS(evaluate_corpus(empty, good_tsv, good_tsv, {"si_snr"}, {}),
                  std::runtime_error);
  CHECK_THROWS_AS(evaluate_corpus((root / "absent.tsv").string(), good_tsv,
                                  good_tsv, {"si_snr"}, {}),
                  std::runtime_error);

  stdfs::remove_all(root);
}
