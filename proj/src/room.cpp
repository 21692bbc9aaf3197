#include "sepkit/room.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "sepkit/rng.hpp"

namespace sepkit {

namespace {

constexpr int kKernelHalf = 40;  // 81-tap fractional-delay kernel
constexpr double kMinDistance = 1e-3;

// cos/sin of pi*i/(half+1) over the tap offsets, so the Hann factor at
// i - frac needs only one cos/sin pair per image.
struct KernelTables {
  std::array<double, 2 * kKernelHalf + 1> cos_tab;
  std::array<double, 2 * kKernelHalf + 1> sin_tab;
  KernelTables() {
    for (int i = -kKernelHalf; i <= kKernelHalf; ++i) {
      const double arg = M_PI * i / (kKernelHalf + 1.0);
      cos_tab[i + kKernelHalf] = std::cos(arg);
      sin_tab[i + kKernelHalf] = std::sin(arg);
    }
  }
};

const KernelTables& kernel_tables() {
  static const KernelTables tables;
  return tables;
}

// Accumulates amp * hann_sinc(i - frac) around sample delay. Taps that fall
// outside [0, length) are dropped.
void add_image(double* h, long length, double delay_samples, double amp) {
  const long n0 = std::lround(delay_samples);
  if (n0 - kKernelHalf >= length || n0 + kKernelHalf < 0) return;
  const double frac = delay_samples - n0;
  const int lo = static_cast<int>(std::max<long>(-kKernelHalf, -n0));
  const int hi = static_cast<int>(std::min<long>(kKernelHalf, length - 1 - n0));
  if (std::abs(frac) < 1e-12) {
    if (n0 >= 0 && n0 < length) h[n0] += amp;
    return;
  }
  const auto& tabs = kernel_tables();
  const double sin_pf = std::sin(M_PI * frac);
  const double cos_w = std::cos(M_PI * frac / (kKernelHalf + 1.0));
  const double sin_w = std::sin(M_PI * frac / (kKernelHalf + 1.0));
  double sign = (lo % 2 == 0) ? 1.0 : -1.0;  // (-1)^i at i = lo
  for (int i = lo; i <= hi; ++i) {
    // sin(pi(i - frac)) = -(-1)^i sin(pi frac)
    const double sinc = -sign * sin_pf / (M_PI * (i - frac));
    const double window =
        0.5 * (1.0 + tabs.cos_tab[i + kKernelHalf] * cos_w +
               tabs.sin_tab[i + kKernelHalf] * sin_w);
    h[n0 + i] += amp * sinc * window;
    sign = -sign;
  }
}

// Image coordinates along one axis: 2mL + s carries |2m| reflections,
// 2mL - s carries |2m - 1|. Images beyond reach of the array are dropped.
struct AxisImage {
  double pos;
  int reflections;
};

std::vector<AxisImage> axis_images(double length, double source, int max_order,
                                   double center, double reach) {
  std::vector<AxisImage> out;
  for (int m = -max_order; m <= max_order; ++m) {
    for (int q = 0; q < 2; ++q) {
      const double pos = 2.0 * m * length + (q ? -source : source);
      if (std::abs(pos - center) > reach) continue;
      out.push_back({pos, std::abs(2 * m - q)});
    }
  }
  return out;
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool RoomSpec::contains(const Vec3& p, double margin) const {
  return p[0] >= margin && p[0] <= lx - margin && p[1] >= margin &&
         p[1] <= ly - margin && p[2] >= margin && p[2] <= lz - margin;
}

Vec3 ArrayGeometry::mic_position(int m) const {
  const double angle = yaw + 2.0 * M_PI * m / mic_count;
  return {center[0] + radius * std::cos(angle),
          center[1] + radius * std::sin(angle), center[2]};
}

std::vector<Vec3> ArrayGeometry::mic_positions() const {
  std::vector<Vec3> out;
  out.reserve(mic_count);
  for (int m = 0; m < mic_count; ++m) out.push_back(mic_position(m));
  return out;
}

SceneSpec sample_scene(uint64_t seed, const SceneConstraints& constraints) {
  if (constraints.max_position_attempts < 1 || constraints.max_room_retries < 1)
    throw std::invalid_argument("sample_scene: attempt budgets must be >= 1");
  if (constraints.wall_margin < 0.0 || constraints.min_separation < 0.0)
    throw std::invalid_argument("sample_scene: negative margin");

  Rng rng(seed);
  const double margin = constraints.wall_margin;

  for (int retry = 0; retry < constraints.max_room_retries; ++retry) {
    const double area = rng.uniform(10.0, 100.0);
    const double aspect = rng.uniform(0.5, 2.0);

    SceneSpec scene;
    scene.rng_seed = seed;
    scene.room.lx = std::sqrt(area * aspect);
    scene.room.ly = std::sqrt(area / aspect);
    scene.room.lz = rng.uniform(2.5, 4.0);
    scene.room.t60 = rng.uniform(0.2, 0.6);
    scene.room.absorption = absorption_from_t60(scene.room.lx, scene.room.ly,
                                                scene.room.lz, scene.room.t60);

    // center margin includes the radius so every mic keeps the wall margin
    const double cm = margin + scene.array.radius;
    if (scene.room.lx <= 2.0 * cm || scene.room.ly <= 2.0 * cm ||
        scene.room.lz <= 2.0 * margin)
      continue;
    scene.array.center = {rng.uniform(cm, scene.room.lx - cm),
                          rng.uniform(cm, scene.room.ly - cm),
                          rng.uniform(margin, scene.room.lz - margin)};
    scene.array.yaw = rng.uniform(0.0, 2.0 * M_PI);

    const int n_noise = static_cast<int>(rng.uniform_int(1, 4));

    std::vector<Vec3> placed{scene.array.center};
    bool ok = true;
    for (int p = 0; p < 1 + n_noise && ok; ++p) {
      ok = false;
      for (int attempt = 0; attempt < constraints.max_position_attempts;
           ++attempt) {
        const Vec3 pos{rng.uniform(margin, scene.room.lx - margin),
                       rng.uniform(margin, scene.room.ly - margin),
                       rng.uniform(margin, scene.room.lz - margin)};
        bool clear = true;
        for (const auto& other : placed)
          if (distance(pos, other) < constraints.min_separation) {
            clear = false;
            break;
          }
        if (!clear) continue;
        placed.push_back(pos);
        if (p == 0)
          scene.target_pos = pos;
        else
          scene.noise_positions.push_back(pos);
        ok = true;
        break;
      }
    }
    if (!ok) continue;

    for (int i = 0; i < n_noise; ++i)
      scene.snr_point_db.push_back(rng.uniform(0.0, 15.0));
    scene.snr_diffuse_db = rng.uniform(12.0, 35.0);
    return scene;
  }
  throw std::runtime_error("sample_scene: placement failed after " +
                           std::to_string(constraints.max_room_retries) +
                           " room retries");
}

namespace {

// The image lattice and each image's bounce count are fixed by the geometry
// alone, so the room's arrivals can be enumerated once, their amplitudes
// binned by (sample, reflections), and re-weighted for any absorption as a
// polynomial in sqrt(1 - alpha). Two effects leave a Sabine/Eyring alpha
// 40-100% too reverberant in such simulations: low-loss axial image
// families outlive the diffuse average, and every tap is positive, so the
// many arrivals sharing a sample at late times add coherently and their
// energy is the square of the summed amplitude. The decay fit is therefore
// predicted on coherent per-sample amplitude sums and inverted directly.
class EnergyProfile {
 public:
  EnergyProfile(double lx, double ly, double lz, double horizon_s) {
    bins_ = static_cast<long>(std::ceil(horizon_s * kCalibrationRate)) + 1;
    // fixed interior probe points, off the symmetry planes
    const Vec3 src{0.43 * lx, 0.56 * ly, 0.37 * lz};
    const Vec3 rcv{0.57 * lx, 0.41 * ly, 0.62 * lz};
    const double reach = horizon_s * kSpeedOfSound;
    const auto xs = axis_images(lx, src[0], axis_order(lx, reach), rcv[0], reach);
    const auto ys = axis_images(ly, src[1], axis_order(ly, reach), rcv[1], reach);
    const auto zs = axis_images(lz, src[2], axis_order(lz, reach), rcv[2], reach);
    int max_refl = 0;
    for (const auto* v : {&xs, &ys, &zs}) {
      int axis_max = 0;
      for (const auto& im : *v) axis_max = std::max(axis_max, im.reflections);
      max_refl += axis_max;
    }
    orders_ = max_refl + 1;
    amplitude_.assign(static_cast<size_t>(bins_) * orders_, 0.0);
    const double reach2 = reach * reach;
    for (const auto& xi : xs) {
      const double dx = xi.pos - rcv[0];
      for (const auto& yi : ys) {
        const double dy = yi.pos - rcv[1];
        const double rxy2 = dx * dx + dy * dy;
        if (rxy2 > reach2) continue;
        for (const auto& zi : zs) {
          const double dz = zi.pos - rcv[2];
          const double d2 = rxy2 + dz * dz;
          if (d2 > reach2) continue;
          const double d = std::max(std::sqrt(d2), kMinDistance);
          const long bin = std::lround(d * kCalibrationRate / kSpeedOfSound);
          if (bin >= bins_) continue;
          const int n = xi.reflections + yi.reflections + zi.reflections;
          amplitude_[static_cast<size_t>(bin) * orders_ + n] +=
              1.0 / (4.0 * M_PI * d);
        }
      }
    }
  }

  // T60 a -5..-25 dB Schroeder backward-integration line fit would report;
  // +inf when the curve never reaches -25 dB inside the horizon.
  double schroeder_t60(double alpha) const {
    const double keep = std::sqrt(1.0 - alpha);  // amplitude kept per bounce
    std::vector<double> tail(bins_ + 1, 0.0);
    for (long b = bins_ - 1; b >= 0; --b) {
      const double* coef = amplitude_.data() + static_cast<size_t>(b) * orders_;
      double a = 0.0;
      for (int n = orders_ - 1; n >= 0; --n) a = a * keep + coef[n];
      tail[b] = tail[b + 1] + a * a;
    }
    const double e0 = tail[0];
    if (e0 <= 0.0) return std::numeric_limits<double>::infinity();
    long k5 = -1, k25 = -1;
    for (long b = 0; b < bins_; ++b) {
      const double db = 10.0 * std::log10(std::max(tail[b] / e0, 1e-300));
      if (k5 < 0 && db <= -5.0) k5 = b;
      if (db <= -25.0) {
        k25 = b;
        break;
      }
    }
    if (k25 < 0) return std::numeric_limits<double>::infinity();
    if (k5 < 0 || k25 - k5 < 4) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double cnt = static_cast<double>(k25 - k5 + 1);
    for (long b = k5; b <= k25; ++b) {
      const double x = b / kCalibrationRate;
      const double y = 10.0 * std::log10(tail[b] / e0);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    return -60.0 / slope;
  }

 private:
  static constexpr double kCalibrationRate = 16000.0;  // bins per second

  static int axis_order(double length, double reach) {
    return static_cast<int>(std::ceil(reach / (2.0 * length))) + 1;
  }

  long bins_ = 0;
  int orders_ = 0;
  std::vector<double> amplitude_;  // [sample bin][reflection count]
};

}  // namespace

double absorption_from_t60(double lx, double ly, double lz, double t60) {
  if (lx <= 0.0 || ly <= 0.0 || lz <= 0.0)
    throw std::invalid_argument("absorption_from_t60: dimensions must be > 0");
  if (t60 <= 0.0)
    throw std::invalid_argument("absorption_from_t60: t60 must be > 0");
  // exact lattice inversion up to the cap; beyond it the damping is scaled
  // down asymptotically (fit time ~ 1/damping) to keep the cost bounded
  constexpr double kExactCap = 0.75;
  const double solved = std::min(t60, kExactCap);
  const EnergyProfile profile(lx, ly, lz, 1.2 * solved);
  double lo = 1e-6, hi = 1.0 - 1e-6;
  for (int it = 0; it < 40; ++it) {
    const double alpha = 0.5 * (lo + hi);
    (profile.schroeder_t60(alpha) > solved ? lo : hi) = alpha;
  }
  const double alpha = 0.5 * (lo + hi);
  if (t60 <= kExactCap) return alpha;
  return 1.0 - std::pow(1.0 - alpha, kExactCap / t60);
}

int rir_order_for(const RoomSpec& room) {
  const double reach = kSpeedOfSound * room.t60;
  const double min_dim = std::min({room.lx, room.ly, room.lz});
  if (min_dim <= 0.0 || room.t60 <= 0.0)
    throw std::invalid_argument("rir_order_for: invalid room");
  return static_cast<int>(std::ceil(reach / (2.0 * min_dim))) + 1;
}

Rir simulate_rir(const RoomSpec& room, const Vec3& src,
                 const ArrayGeometry& array, int max_order, double sample_rate,
                 bool direct_only) {
  if (room.lx <= 0.0 || room.ly <= 0.0 || room.lz <= 0.0 || room.t60 <= 0.0)
    throw std::invalid_argument("simulate_rir: invalid room");
  if (room.absorption <= 0.0 || room.absorption >= 1.0)
    throw std::invalid_argument("simulate_rir: absorption must lie in (0, 1)");
  if (max_order < 1) throw std::invalid_argument("simulate_rir: order budget < 1");
  if (sample_rate <= 0.0)
    throw std::invalid_argument("simulate_rir: sample rate must be > 0");
  if (!room.contains(src, kMinDistance))
    throw std::invalid_argument("simulate_rir: source outside room");
  const auto mics = array.mic_positions();
  if (mics.empty()) throw std::invalid_argument("simulate_rir: no mics");
  for (const auto& mic : mics)
    if (!room.contains(mic, kMinDistance))
      throw std::invalid_argument("simulate_rir: mic outside room");

  const double fs = sample_rate;
  double max_direct = 0.0;
  for (const auto& mic : mics) max_direct = std::max(max_direct, distance(src, mic));

  const long kernel_len = 2 * kKernelHalf + 1;
  const long length =
      static_cast<long>(std::ceil((max_direct / kSpeedOfSound + room.t60) * fs)) +
      kernel_len + kKernelHalf;

  Rir rir;
  rir.sample_rate = fs;
  rir.direct_only = direct_only;
  rir.taps.assign(mics.size(), Signal(length, 0.0));

  if (direct_only) {
    for (size_t m = 0; m < mics.size(); ++m) {
      const double d = std::max(distance(src, mics[m]), kMinDistance);
      add_image(rir.taps[m].data(), length, d * fs / kSpeedOfSound,
                1.0 / (4.0 * M_PI * d));
    }
    return rir;
  }

  // prune against the array center; the +1 m slack covers the mic offsets
  const double reach = (static_cast<double>(length) / fs) * kSpeedOfSound + 1.0;
  const auto xs = axis_images(room.lx, src[0], max_order, array.center[0], reach);
  const auto ys = axis_images(room.ly, src[1], max_order, array.center[1], reach);
  const auto zs = axis_images(room.lz, src[2], max_order, array.center[2], reach);

  const double beta = std::sqrt(1.0 - room.absorption);
  int max_refl = 0;
  for (const auto& v : {xs, ys, zs}) {
    int axis_max = 0;
    for (const auto& im : v) axis_max = std::max(axis_max, im.reflections);
    max_refl += axis_max;
  }
  std::vector<double> beta_pow(max_refl + 1, 1.0);
  for (int n = 1; n <= max_refl; ++n) beta_pow[n] = beta_pow[n - 1] * beta;

  const double reach2 = reach * reach;
  for (const auto& xi : xs) {
    const double dx = xi.pos - array.center[0];
    for (const auto& yi : ys) {
      const double dy = yi.pos - array.center[1];
      const double rxy2 = dx * dx + dy * dy;
      if (rxy2 > reach2) continue;
      for (const auto& zi : zs) {
        const double dz = zi.pos - array.center[2];
        if (rxy2 + dz * dz > reach2) continue;
        const double gain = beta_pow[xi.reflections + yi.reflections + zi.reflections];
        const Vec3 img{xi.pos, yi.pos, zi.pos};
        for (size_t m = 0; m < mics.size(); ++m) {
          const double d = std::max(distance(img, mics[m]), kMinDistance);
          add_image(rir.taps[m].data(), length, d * fs / kSpeedOfSound,
                    gain / (4.0 * M_PI * d));
        }
      }
    }
  }
  return rir;
}

}  // namespace sepkit
