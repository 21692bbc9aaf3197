#ifndef SEPKIT_ROOM_HPP
#define SEPKIT_ROOM_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "sepkit/types.hpp"

namespace sepkit {

inline constexpr double kSpeedOfSound = 343.0;  // m/s

using Vec3 = std::array<double, 3>;

double distance(const Vec3& a, const Vec3& b);

// Shoebox room with one corner at the origin and walls on the axis planes.
struct RoomSpec {
  double lx = 0.0;          // meters
  double ly = 0.0;
  double lz = 0.0;
  double t60 = 0.0;         // seconds
  double absorption = 0.0;  // energy absorption per surface, in (0, 1)

  double volume() const { return lx * ly * lz; }
  double surface_area() const { return 2.0 * (lx * ly + lx * lz + ly * lz); }
  bool contains(const Vec3& p, double margin = 0.0) const;
};

// Horizontal circular array: mic m sits at yaw + m * 2pi/mic_count.
struct ArrayGeometry {
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 0.05;
  int mic_count = 4;
  double yaw = 0.0;

  Vec3 mic_position(int m) const;
  std::vector<Vec3> mic_positions() const;
};

struct SceneConstraints {
  double wall_margin = 0.5;      // sources and mics keep this from every wall
  double min_separation = 0.5;   // pairwise floor among array center and sources
  int max_position_attempts = 1000;
  int max_room_retries = 10;
};

// One simulated recording setup: room, array pose, target and point-noise
// positions, and the per-noise / diffuse SNR draws.
struct SceneSpec {
  RoomSpec room;
  ArrayGeometry array;
  Vec3 target_pos{0.0, 0.0, 0.0};
  std::vector<Vec3> noise_positions;  // 1..4 sources
  std::vector<double> snr_point_db;   // one per point noise
  double snr_diffuse_db = 0.0;
  uint64_t rng_seed = 0;
};

// Multichannel impulse response, one filter per mic.
struct Rir {
  std::vector<Signal> taps;  // [mic][sample]
  double sample_rate = 16000.0;
  bool direct_only = false;

  int num_mics() const { return static_cast<int>(taps.size()); }
  long length() const {
    return taps.empty() ? 0 : static_cast<long>(taps[0].size());
  }
};

// Draws room area U(10,100) m^2 with aspect U(0.5,2), height U(2.5,4) m,
// T60 U(0.2,0.6) s, then places the array (height within wall margins, yaw
// U[0,2pi)), the target, and 1..4 point noises by rejection sampling under
// the margin/separation floors. Per-noise SNR U(0,15) dB, diffuse U(12,35).
// An over-constrained room is redrawn up to max_room_retries times.
SceneSpec sample_scene(uint64_t seed, const SceneConstraints& constraints = {});

// Energy absorption per surface that makes the Schroeder backward-integration
// fit (-5..-25 dB) of an image-source simulation land on t60. Inverted by
// bisection on the image lattice itself: per-sample image amplitudes are
// summed coherently (taps are all positive, so collisions add in amplitude)
// and grouped by reflection count before squaring. A plain inverse
// Sabine/Eyring alpha leaves such simulations 40-100% too reverberant, since
// the late field is carried by low-loss axial image families and the
// coherent pileup that diffuse-field formulas ignore.
double absorption_from_t60(double lx, double ly, double lz, double t60);

// Smallest per-axis image order whose farthest image lies at least
// c * t60 from every point in the room.
int rir_order_for(const RoomSpec& room);

// Shoebox image-source simulation. Each image contributes amplitude
// (1-alpha)^(n/2) / (4 pi d) -- reflection coefficient sqrt(1-alpha) per
// bounce -- at delay d/c, placed with an 81-tap Hann-windowed-sinc
// fractional-delay kernel. max_order bounds the per-axis image index.
// direct_only keeps just the zeroth-order path (the anechoic reference).
Rir simulate_rir(const RoomSpec& room, const Vec3& src, const ArrayGeometry& array,
                 int max_order, double sample_rate = 16000.0,
                 bool direct_only = false);

}  // namespace sepkit

#endif
