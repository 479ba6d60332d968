#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "bpsl/parallel.hpp"
#include "bpsl/signal.hpp"
#include "bpsl/sphharm.hpp"
#include "bpsl/vec3.hpp"

namespace bpsl {

/// Analysis band in Hz (inclusive).
struct Band {
  double low = 2000.0;
  double high = 8000.0;
};

/// Bin indices [first, last] whose center frequency lies in the band.
std::pair<std::size_t, std::size_t> band_bins(const Band& band, double sample_rate, std::size_t padded_length);

/// Beam energy over elevation rows 0..180 deg and azimuth columns [0, 360) deg.
struct BeamMap {
  double resolution_deg = 5.0;
  std::size_t rows = 0;  // elevation samples, 180 / resolution + 1
  std::size_t cols = 0;  // azimuth samples, 360 / resolution
  std::vector<double> energy;

  double at(std::size_t row, std::size_t col) const { return energy[row * cols + col]; }
  double& at(std::size_t row, std::size_t col) { return energy[row * cols + col]; }
  double elevation(std::size_t row) const;  // radians
  double azimuth(std::size_t col) const;    // radians
  Vec3 direction(std::size_t row, std::size_t col) const;

  /// Grid shape for a resolution that divides 180 degrees; throws otherwise.
  static BeamMap make(double resolution_deg);
};

struct DirectionEstimate {
  Vec3 direction;  // unit, array frame
  double energy = 0.0;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct SeparationSignal {
  Vec3 direction;
  Spectrum spectrum;
  TimeSignal signal;
};

struct BeamformConfig {
  double resolution_deg = 5.0;
  Band band;
  double diagonal_loading = 1e-3;  // fraction of trace / dim
  std::size_t max_peaks = 10;
  double floor_ratio = 0.3;
  /// Parabolic sub-cell refinement of peak directions.
  bool refine_peaks = true;
};

/// Steering vector of a plane wave from `direction`: conj(Y(d)).
std::vector<cdouble> steering_vector(const Vec3& direction, int order);

/// MVDR energy 1 / (v^H R^-1 v) with R the loaded covariance of the band bins.
/// Throws if the band carries no energy.
BeamMap mvdr_map(const ShCoefficients& coeffs, const BeamformConfig& config = {},
                 Exec exec = Exec::parallel);

/// Strict 8-neighbourhood maxima (azimuth wraps; each pole is one cell whose
/// neighbours are the whole adjacent ring), strongest first.
std::vector<DirectionEstimate> find_peaks(const BeamMap& map, std::size_t max_peaks = 10,
                                          double floor_ratio = 0.3);

/// Peak directions moved to the vertex of a parabola through each neighbour pair.
void refine_peaks(const BeamMap& map, std::vector<DirectionEstimate>& peaks);

/// Plane-wave-decomposition beam: S[f] = sum M[f] conj(W) with W = conj(Y(d)) 4 pi / (N+1)^2,
/// kept inside the band and zero elsewhere.
SeparationSignal extract_separation(const ShCoefficients& coeffs, const Vec3& direction,
                                    const Band& band = {});

/// CSV grid: elevation_deg,azimuth_deg,energy.
void write_beam_map_csv(std::ostream& out, const BeamMap& map);

}  // namespace bpsl
