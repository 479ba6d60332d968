#include "bpsl/backprop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"

namespace bpsl {

namespace {

// Tolerance for matching a PathPoint against the path it claims to lie on.
constexpr double kPointTolerance = 1e-6;

void check_point_on_path(const RayPath& path, const PathPoint& point) {
  if (path.size() == 0) throw Error("back-propagation: empty ray path");
  if (point.segment_order < 0 || static_cast<std::size_t>(point.segment_order) >= path.size())
    throw Error("back-propagation: segment order " + std::to_string(point.segment_order) +
                " outside the path");
  const auto k = static_cast<std::size_t>(point.segment_order);
  const double begin = path.length_before(k);
  const double end = path.cumulative_lengths[k];
  if (point.travel_distance < begin - kPointTolerance || point.travel_distance > end + kPointTolerance)
    throw Error("back-propagation: travel distance does not fall on the stated segment");
  if (distance(path.point_at(point.travel_distance), point.point) > kPointTolerance)
    throw Error("back-propagation: point does not lie on the path");
}

}  // namespace

std::size_t MaterialTable::band_index(double frequency) {
  // Band edges sit halfway (geometrically) between neighbouring centers.
  std::size_t b = 0;
  while (b + 1 < kBandCount && frequency >= kBandCenters[b] * std::numbers::sqrt2) ++b;
  return b;
}

void MaterialTable::set(int material_id, const BandValues& reflectivity) {
  for (double g : reflectivity) {
    if (!(g > 0.0 && g <= 1.0))
      throw Error("material " + std::to_string(material_id) + ": reflectivity must lie in (0, 1]");
  }
  table_[material_id] = reflectivity;
}

const BandValues& MaterialTable::bands(int material_id) const {
  auto it = table_.find(material_id);
  if (it == table_.end()) throw Error("missing material id " + std::to_string(material_id));
  return it->second;
}

double MaterialTable::reflectivity(int material_id, std::size_t band) const {
  return std::max(bands(material_id).at(band), floor_);
}

void MaterialTable::set_floor(double floor) {
  if (!(floor > 0.0 && floor <= 1.0)) throw Error("reflectivity floor must lie in (0, 1]");
  floor_ = floor;
}

double distance_amplification(double travel_distance) {
  if (!(travel_distance >= 0.0)) throw Error("distance_amplification: negative travel distance");
  return 4.0 * kPi * (1.0 + travel_distance);
}

BandValues reflection_amplification_bands(const RayPath& path, int k, const MaterialTable& materials) {
  if (k < 0 || (k > 0 && static_cast<std::size_t>(k) > path.size()))
    throw Error("reflection_amplification: order " + std::to_string(k) + " outside the path");
  BandValues gain;
  gain.fill(1.0);
  for (int i = 0; i < k; ++i) {
    const auto& seg = path.segments[static_cast<std::size_t>(i)];
    if (!seg.hit_triangle) throw Error("reflection_amplification: segment has no hit");
    for (std::size_t b = 0; b < kBandCount; ++b) gain[b] /= materials.reflectivity(seg.hit_material, b);
  }
  return gain;
}

double reflection_amplification(const RayPath& path, int k, const MaterialTable& materials,
                                double frequency) {
  return reflection_amplification_bands(path, k, materials)[MaterialTable::band_index(frequency)];
}

Spectrum backward_impulse_response(const RayPath& path, const PathPoint& point,
                                   const MaterialTable& materials, const Spectrum& grid,
                                   const BackwardResponseOptions& options) {
  check_point_on_path(path, point);
  const double l = point.travel_distance;
  const double gain_d = options.unit_distance_gain ? 1.0 : distance_amplification(l);
  const BandValues gain_r = reflection_amplification_bands(path, point.segment_order, materials);

  Spectrum h;
  h.sample_rate = grid.sample_rate;
  h.padded_length = grid.padded_length;
  h.frame_length = grid.frame_length;
  h.bins.resize(grid.padded_length / 2 + 1);
  const double advance = l / kSpeedOfSound;
  for (std::size_t f = 0; f < h.bins.size(); ++f) {
    const double freq = h.bin_frequency(f);
    const double phase = 2.0 * kPi * freq * advance;
    const double mag = gain_d * gain_r[MaterialTable::band_index(freq)];
    h.bins[f] = std::polar(mag, phase);
  }
  return h;
}

BackPropSignal back_propagate(const Spectrum& separation, const RayPath& path, const PathPoint& point,
                              const MaterialTable& materials, const BackwardResponseOptions& options) {
  if (separation.bins.size() != separation.padded_length / 2 + 1 || separation.padded_length == 0)
    throw Error("back-propagation: separation spectrum is not on a padded bin grid");
  const double headroom = static_cast<double>(separation.padded_length - separation.frame_length);
  const double advance = point.travel_distance * separation.sample_rate / kSpeedOfSound;
  if (advance > headroom)
    throw Error("back-propagation: advance of " + std::to_string(advance) +
                " samples exceeds the padding headroom");
  const Spectrum h = backward_impulse_response(path, point, materials, separation, options);
  BackPropSignal out;
  out.point = point;
  out.spectrum = separation;
  for (std::size_t f = 0; f < out.spectrum.bins.size(); ++f) out.spectrum.bins[f] *= h.bins[f];
  out.signal = inverse_dft(out.spectrum);
  return out;
}

}  // namespace bpsl
