#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include "bpsl/backprop.hpp"
#include "bpsl/geometry.hpp"
#include "bpsl/parallel.hpp"
#include "bpsl/signal.hpp"

namespace bpsl {

struct LocalizerConfig {
  std::size_t particle_count = 1000;
  double alpha = 1.0;               // similarity blend
  double sigma_w = 0.5;             // meters
  double a_th = 0.15;               // correlation threshold
  double motion_sigma = 0.2;        // meters per frame
  double resample_threshold = 0.5;  // fraction of particle_count
  std::uint64_t seed = 1;
  /// Correlate fully back-propagated signals per particle instead of the shifted base correlations.
  bool oracle_correlation = false;

  /// Throws unless counts and scales are positive, alpha >= 0 and a_th in (0, 1).
  void validate() const;
};

struct Particle {
  Vec3 position;
  double weight = 0.0;
};

struct Estimate {
  Vec3 position;
  double confidence_radius_95 = 0.0;
  std::size_t frame = 0;
  bool stale = false;  // no usable observation; position carried over
};

/// Ray paths of one frame and the separation spectrum that launched each.
struct FrameObservation {
  std::vector<RayPath> paths;
  std::vector<Spectrum> separations;
  MaterialTable materials;

  /// Throws if counts differ, grids differ, or a path outruns the padding headroom.
  void validate() const;
};

/// exp(-d^2 / (2 sigma^2)), d the distance from x to its perpendicular foot on the path.
double distance_weight(const Vec3& x, const RayPath& path, double sigma_w);

/// (L - |l_cc|) / L when a_cc > a_th, else 0.
double similarity_term(const CorrelationResult& c, double a_th, std::size_t signal_length);

/// Mean similarity term between back-propagated signal n and every other one.
/// Zero when there is a single signal.
double similarity_weight(std::size_t n, std::span<const BackPropSignal> backprops, double a_th);

/// Unnormalized score sum_n [w_d + alpha w_s], with backprops taken at each path's foot from x.
double particle_weight(const Vec3& x, std::span<const RayPath> paths, std::span<const BackPropSignal> backprops,
                       const LocalizerConfig& config);

/// Peak correlation between the back-propagation signals of two paths, evaluated
/// from per-frame base cross-spectra: moving the evaluation points only shifts
/// the lag by (l_m - l_n) f_s / c and reweights the octave bands.
class PairCorrelator {
 public:
  explicit PairCorrelator(const FrameObservation& observation);

  std::size_t path_count() const { return paths_.size(); }

  /// Makes the base correlation for the orders of (a, b) available; call before
  /// concurrent queries. Queries on unprepared orders prepare them on demand.
  void prepare(const PathPoint& a, const PathPoint& b);
  /// Exact peak over integer lags in [-L/2, L/2).
  CorrelationResult correlate(const PathPoint& a, const PathPoint& b) const;
  /// similarity_term of correlate(a, b); skips the search when the pair cannot pass a_th.
  double similarity(const PathPoint& a, const PathPoint& b, double a_th) const;

  /// Reference: back-propagate both separations and correlate the time signals.
  CorrelationResult correlate_naive(const PathPoint& a, const PathPoint& b) const;

 private:
  struct Base;
  using Key = std::tuple<int, int, int, int>;

  const Base& base(const PathPoint& a, const PathPoint& b) const;
  Base build(int n, int m, int kn, int km) const;
  CorrelationResult search(const Base& base, double shift) const;

  const std::vector<RayPath>& paths_;
  const std::vector<Spectrum>& separations_;
  const MaterialTable& materials_;
  std::size_t length_ = 0;
  std::size_t first_ = 0;
  std::size_t last_ = 0;
  std::vector<std::size_t> band_of_;                  // per support bin
  std::vector<std::vector<BandValues>> gains_;        // [path][order]
  std::vector<BandValues> band_energy_;               // [path] energy per band, unit gains
  mutable std::map<Key, std::shared_ptr<const Base>> cache_;
  mutable std::mutex cache_mutex_;
};

class ParticleFilter {
 public:
  /// Particles start uniform over the bounds.
  ParticleFilter(const LocalizerConfig& config, const Aabb& bounds);

  const std::vector<Particle>& particles() const { return particles_; }
  const LocalizerConfig& config() const { return config_; }
  std::size_t frame() const { return frame_; }

  /// Diffuse, weight, normalize, estimate, and resample when the effective sample size is low.
  Estimate step(const FrameObservation& observation, Exec exec = Exec::parallel);

  /// Scores for arbitrary positions against one observation (no state change).
  std::vector<double> score(std::span<const Vec3> positions, const FrameObservation& observation,
                            Exec exec = Exec::parallel) const;

 private:
  void diffuse();
  Estimate estimate(bool stale) const;
  void resample();

  LocalizerConfig config_;
  Aabb bounds_;
  std::vector<Particle> particles_;
  std::size_t frame_ = 0;
  Estimate last_;
};

}  // namespace bpsl
