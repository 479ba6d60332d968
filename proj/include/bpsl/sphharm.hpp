#pragma once

#include <array>
#include <complex>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bpsl/parallel.hpp"
#include "bpsl/signal.hpp"
#include "bpsl/vec3.hpp"

namespace bpsl {

inline constexpr int kDefaultShOrder = 4;
inline constexpr double kDefaultArrayRadius = 0.042;
/// Cap on |1/b_n(ka)| in radial equalization (40 dB).
inline constexpr double kDefaultRadialGainLimit = 100.0;

constexpr std::size_t sh_count(int order) { return static_cast<std::size_t>((order + 1) * (order + 1)); }
constexpr std::size_t sh_index(int n, int m) { return static_cast<std::size_t>(n * n + n + m); }

/// Complex orthonormal spherical harmonics Y_n^m (Condon-Shortley phase),
/// ordered by sh_index(n, m).
std::vector<cdouble> sh_basis(const Vec3& direction, int order);

/// Spherical Bessel function of the first kind.
double spherical_bessel_j(int n, double x);

/// Open-sphere radial function b_n(ka) = 4 pi i^n j_n(ka).
cdouble radial_function(int n, double ka);

/// Soft-knee limited 1/b: the phase of 1/b, magnitude compressed to stay below limit.
cdouble limited_inverse(cdouble b, double limit);

struct ArrayGeometry {
  std::vector<Vec3> directions;  // unit vectors in the array frame
  std::vector<double> weights;   // quadrature weights, summing to 4 pi
  double radius = kDefaultArrayRadius;
  Vec3 center;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // array frame -> world, row-major

  std::size_t size() const { return directions.size(); }
  Vec3 to_world(const Vec3& local_direction) const;
  Vec3 to_local(const Vec3& world_direction) const;
  Vec3 mic_position(std::size_t q) const { return center + to_world(directions[q]) * radius; }

  /// Max |sum_q w_q Y_a Y_b^* - delta_ab| over harmonics up to `order`.
  double orthonormality_error(int order) const;

  /// 32 directions: icosahedron vertices plus dodecahedron vertices, with the two
  /// weight classes chosen so harmonics up to order 4 are discretely orthonormal.
  static ArrayGeometry default_32(double radius = kDefaultArrayRadius);
  /// Directions (normalized) with quadrature weights fitted to the given order.
  static ArrayGeometry from_directions(std::vector<Vec3> directions, double radius, int order);
  /// Text file: `radius <a>` then one `x y z` direction per line; `#` comments.
  static ArrayGeometry load(const std::filesystem::path& path, int order);

  void set_yaw_pitch_roll(double yaw, double pitch, double roll);
};

/// Spherical-harmonic coefficients per frequency bin, bins x sh_count(order).
struct ShCoefficients {
  int order = kDefaultShOrder;
  std::size_t bins = 0;
  double sample_rate = kDefaultSampleRate;
  std::size_t padded_length = 0;
  std::size_t frame_length = 0;
  std::vector<cdouble> data;

  std::size_t width() const { return sh_count(order); }
  std::span<cdouble> bin(std::size_t f) { return {data.data() + f * width(), width()}; }
  std::span<const cdouble> bin(std::size_t f) const { return {data.data() + f * width(), width()}; }
  double bin_frequency(std::size_t f) const {
    return static_cast<double>(f) * sample_rate / static_cast<double>(padded_length);
  }
};

struct SphericalFtOptions {
  int order = kDefaultShOrder;
  double radial_gain_limit = kDefaultRadialGainLimit;
  bool radial_equalization = true;
  /// Inclusive bin range to transform; bins outside are left zero.
  std::optional<std::pair<std::size_t, std::size_t>> bin_range;
};

/// Least-squares projection of the mic spectra onto harmonics, then (optionally)
/// radial equalization into plane-wave-density coefficients.
ShCoefficients spherical_ft(std::span<const Spectrum> mic_spectra, const ArrayGeometry& geom,
                            const SphericalFtOptions& options = {}, Exec exec = Exec::parallel);

/// Pressure at each mic direction for one bin of harmonic coefficients (no radial term).
std::vector<cdouble> sh_synthesize(std::span<const cdouble> coefficients, int order,
                                   const ArrayGeometry& geom);

}  // namespace bpsl
