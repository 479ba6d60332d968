#pragma once

#include <array>
#include <map>
#include <span>

#include "bpsl/geometry.hpp"
#include "bpsl/signal.hpp"

namespace bpsl {

inline constexpr std::size_t kBandCount = 7;
using BandValues = std::array<double, kBandCount>;

/// Per-material reflectivity over the octave bands 125 Hz .. 8 kHz.
class MaterialTable {
 public:
  static constexpr BandValues kBandCenters{125, 250, 500, 1000, 2000, 4000, 8000};
  static constexpr double kDefaultFloor = 0.05;

  /// Octave band holding f; frequencies beyond the outer bands map to them.
  static std::size_t band_index(double frequency);

  /// Throws unless every value is in (0, 1].
  void set(int material_id, const BandValues& reflectivity);
  bool contains(int material_id) const { return table_.count(material_id) != 0; }
  const BandValues& bands(int material_id) const;
  std::size_t size() const { return table_.size(); }
  const std::map<int, BandValues>& entries() const { return table_; }

  /// Reflectivity used by both propagation directions: max(stored, floor).
  double reflectivity(int material_id, std::size_t band) const;
  double reflectivity_at(int material_id, double frequency) const {
    return reflectivity(material_id, band_index(frequency));
  }

  double floor() const { return floor_; }
  void set_floor(double floor);

 private:
  std::map<int, BandValues> table_;
  double floor_ = kDefaultFloor;
};

/// Backward travel-distance amplification 4 pi (1 + l).
double distance_amplification(double travel_distance);

/// Product of 1/reflectivity over the first k hits of the path, at frequency f.
double reflection_amplification(const RayPath& path, int k, const MaterialTable& materials,
                                double frequency);

/// Same product for every octave band at once.
BandValues reflection_amplification_bands(const RayPath& path, int k, const MaterialTable& materials);

struct BackwardResponseOptions {
  /// Replace 4 pi (1 + l) with 1; used to isolate the phase ramp in tests.
  bool unit_distance_gain = false;
};

/// H[f] = exp(+j 2 pi f l / c) * A_D(l) * A_R(path, k, f) on the bin grid of `grid`.
Spectrum backward_impulse_response(const RayPath& path, const PathPoint& point,
                                   const MaterialTable& materials, const Spectrum& grid,
                                   const BackwardResponseOptions& options = {});

struct BackPropSignal {
  PathPoint point;
  Spectrum spectrum;
  TimeSignal signal;
};

/// P = S * H, then back to the time domain. The advance l/c must fit in the
/// padding headroom (padded_length - frame_length) of the separation spectrum.
BackPropSignal back_propagate(const Spectrum& separation, const RayPath& path, const PathPoint& point,
                              const MaterialTable& materials,
                              const BackwardResponseOptions& options = {});

}  // namespace bpsl
