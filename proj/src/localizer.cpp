#include "bpsl/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"
#include "bpsl/random.hpp"

namespace bpsl {

namespace {

// Upsampling factor of the base correlations used to locate candidate peaks.
constexpr std::size_t kUpsample = 4;
// Same tie tolerance as pick_peak, on normalized correlation values.
constexpr double kTieTolerance = 1e-12;
// Radius of a fitted isotropic 3-D Gaussian holding 95% of its mass, in sigmas
// (square root of the chi-square(3) 0.95 quantile).
constexpr double kRadius95 = 2.7954834829151074;

enum StreamTag : std::uint64_t { kInit = 1, kDiffuse = 2, kResample = 3 };

double one_sided_weight(std::size_t f, std::size_t n) { return (f == 0 || 2 * f == n) ? 1.0 : 2.0; }

bool preferred_lag(long lag, long other) {
  return std::labs(lag) < std::labs(other) || (std::labs(lag) == std::labs(other) && lag < other);
}

}  // namespace

void LocalizerConfig::validate() const {
  if (particle_count == 0) throw Error("localizer: particle count must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("localizer: alpha must be non-negative");
  if (!(sigma_w > 0.0)) throw Error("localizer: sigma_w must be positive");
  if (!(a_th > 0.0 && a_th < 1.0)) throw Error("localizer: a_th must lie in (0, 1)");
  if (!(motion_sigma > 0.0)) throw Error("localizer: motion sigma must be positive");
  if (!(resample_threshold > 0.0 && resample_threshold <= 1.0))
    throw Error("localizer: resample threshold must lie in (0, 1]");
}

void FrameObservation::validate() const {
  if (paths.size() != separations.size()) throw Error("observation: one separation signal per path required");
  for (std::size_t n = 0; n < paths.size(); ++n) {
    const Spectrum& s = separations[n];
    if (!s.same_grid(separations.front()) || s.bins.size() != s.padded_length / 2 + 1)
      throw Error("observation: separation spectra do not share a bin grid");
    if (paths[n].size() == 0) throw Error("observation: empty ray path");
    const double headroom = static_cast<double>(s.padded_length - s.frame_length);
    if (paths[n].total_length() * s.sample_rate / kSpeedOfSound > headroom)
      throw Error("observation: ray path longer than the padding headroom allows");
    for (const RaySegment& seg : paths[n].segments) {
      if (seg.hit_triangle) materials.bands(seg.hit_material);
    }
  }
}

double distance_weight(const Vec3& x, const RayPath& path, double sigma_w) {
  if (!(sigma_w > 0.0)) throw Error("distance_weight: sigma_w must be positive");
  const double d = perpendicular_foot(path, x).distance;
  return std::exp(-d * d / (2.0 * sigma_w * sigma_w));
}

double similarity_term(const CorrelationResult& c, double a_th, std::size_t signal_length) {
  if (!(c.a_cc > a_th)) return 0.0;
  const double len = static_cast<double>(signal_length);
  return (len - static_cast<double>(std::labs(c.l_cc))) / len;
}

double similarity_weight(std::size_t n, std::span<const BackPropSignal> backprops, double a_th) {
  if (n >= backprops.size()) throw Error("similarity_weight: path index out of range");
  if (backprops.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t m = 0; m < backprops.size(); ++m) {
    if (m == n) continue;
    const auto c = xcorr_peak_circular(backprops[n].signal, backprops[m].signal);
    sum += similarity_term(c, a_th, backprops[n].signal.size());
  }
  return sum / static_cast<double>(backprops.size() - 1);
}

double particle_weight(const Vec3& x, std::span<const RayPath> paths, std::span<const BackPropSignal> backprops,
                       const LocalizerConfig& config) {
  if (paths.size() != backprops.size()) throw Error("particle_weight: one back-propagation per path required");
  double score = 0.0;
  for (std::size_t n = 0; n < paths.size(); ++n) {
    score += distance_weight(x, paths[n], config.sigma_w);
    if (config.alpha != 0.0) score += config.alpha * similarity_weight(n, backprops, config.a_th);
  }
  return score;
}

// ---------------------------------------------------------------------------

struct PairCorrelator::Base {
  std::vector<cdouble> y;  // conj(S_n) S_m g_n g_m over the support bins, one-sided weight folded in
  double norm = 0.0;       // sqrt(E_n E_m) of the back-propagated pair, unit distance gain
  double slack = 0.0;      // bound on continuous peak minus sampled peak
  std::vector<std::pair<double, std::uint32_t>> maxima;  // fine-grid local maxima, strongest first
};

PairCorrelator::PairCorrelator(const FrameObservation& observation)
    : paths_(observation.paths), separations_(observation.separations), materials_(observation.materials) {
  observation.validate();
  if (separations_.empty()) return;
  length_ = separations_.front().padded_length;
  const std::size_t bins = separations_.front().bins.size();
  first_ = bins;
  last_ = 0;
  for (const Spectrum& s : separations_) {
    for (std::size_t f = 0; f < bins; ++f) {
      if (s.bins[f] != cdouble{}) {
        first_ = std::min(first_, f);
        last_ = std::max(last_, f);
      }
    }
  }
  if (first_ > last_) first_ = last_ = 0;
  band_of_.resize(last_ - first_ + 1);
  for (std::size_t f = first_; f <= last_; ++f)
    band_of_[f - first_] = MaterialTable::band_index(separations_.front().bin_frequency(f));

  gains_.resize(paths_.size());
  band_energy_.assign(paths_.size(), BandValues{});
  for (std::size_t n = 0; n < paths_.size(); ++n) {
    for (std::size_t k = 0; k < paths_[n].size(); ++k) {
      const bool reachable = k == 0 || paths_[n].segments[k - 1].hit_triangle.has_value();
      gains_[n].push_back(reachable ? reflection_amplification_bands(paths_[n], static_cast<int>(k), materials_)
                                    : gains_[n].back());
    }
    for (std::size_t f = first_; f <= last_; ++f) {
      band_energy_[n][band_of_[f - first_]] +=
          one_sided_weight(f, length_) * std::norm(separations_[n].bins[f]) / static_cast<double>(length_);
    }
  }
}

PairCorrelator::Base PairCorrelator::build(int n, int m, int kn, int km) const {
  const auto& sn = separations_[static_cast<std::size_t>(n)];
  const auto& sm = separations_[static_cast<std::size_t>(m)];
  const BandValues& gn = gains_[static_cast<std::size_t>(n)][static_cast<std::size_t>(kn)];
  const BandValues& gm = gains_[static_cast<std::size_t>(m)][static_cast<std::size_t>(km)];
  const double len = static_cast<double>(length_);

  Base b;
  double en = 0.0;
  double em = 0.0;
  for (std::size_t band = 0; band < kBandCount; ++band) {
    en += gn[band] * gn[band] * band_energy_[static_cast<std::size_t>(n)][band];
    em += gm[band] * gm[band] * band_energy_[static_cast<std::size_t>(m)][band];
  }
  b.norm = std::sqrt(en * em);
  if (!(b.norm > 0.0)) return b;

  const std::size_t fine_len = kUpsample * length_;
  std::vector<cdouble> fine_bins(fine_len / 2 + 1, cdouble{});
  b.y.resize(last_ - first_ + 1);
  double curvature = 0.0;
  for (std::size_t f = first_; f <= last_; ++f) {
    const std::size_t band = band_of_[f - first_];
    const cdouble v = std::conj(sn.bins[f]) * sm.bins[f] * (gn[band] * gm[band]);
    b.y[f - first_] = one_sided_weight(f, length_) * v;
    fine_bins[f] = v;
    const double omega = 2.0 * kPi * static_cast<double>(f) / len;
    curvature += one_sided_weight(f, length_) * std::abs(v) * omega * omega / len;
  }
  // Sampled at spacing 1/U the peak can be missed by at most f''max / (8 U^2).
  b.slack = curvature / (8.0 * static_cast<double>(kUpsample * kUpsample));

  auto fine = irfft(fine_bins, fine_len);
  for (double& v : fine) v *= static_cast<double>(kUpsample);
  for (std::size_t i = 0; i < fine_len; ++i) {
    const double prev = fine[(i + fine_len - 1) % fine_len];
    const double next = fine[(i + 1) % fine_len];
    if (fine[i] >= prev && fine[i] > next) b.maxima.emplace_back(fine[i], static_cast<std::uint32_t>(i));
  }
  std::sort(b.maxima.begin(), b.maxima.end(), [](const auto& p, const auto& q) {
    return p.first > q.first || (p.first == q.first && p.second < q.second);
  });
  return b;
}

const PairCorrelator::Base& PairCorrelator::base(const PathPoint& a, const PathPoint& b) const {
  const Key key{a.path_index, b.path_index, a.segment_order, b.segment_order};
  std::lock_guard lock(cache_mutex_);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, std::make_shared<const Base>(build(a.path_index, b.path_index, a.segment_order,
                                                                 b.segment_order)))
             .first;
  }
  return *it->second;
}

void PairCorrelator::prepare(const PathPoint& a, const PathPoint& b) { base(a, b); }

CorrelationResult PairCorrelator::search(const Base& b, double shift) const {
  const long n = static_cast<long>(length_);
  const long half = n / 2;
  const double len = static_cast<double>(length_);
  const double tol = kTieTolerance * b.norm;
  const double reach = 1.0 + 1.0 / static_cast<double>(kUpsample);

  // Clenshaw summation of sum_i y_i exp(j theta (first + i)) at x0, x0 + 1, ... for up to
  // kChains consecutive lags at once; the chains are independent and interleave.
  constexpr std::size_t kChains = 3;
  auto exact = [&](double x0, std::size_t count, double* out) {
    double c[kChains], two_c[kChains], b1r[kChains] = {}, b1i[kChains] = {}, b2r[kChains] = {}, b2i[kChains] = {};
    for (std::size_t t = 0; t < kChains; ++t) {
      c[t] = std::cos(2.0 * kPi * (x0 + static_cast<double>(t)) / len);
      two_c[t] = 2.0 * c[t];
    }
    for (std::size_t i = b.y.size(); i-- > 1;) {
      const double yr = b.y[i].real();
      const double yi = b.y[i].imag();
      for (std::size_t t = 0; t < kChains; ++t) {
        const double r = yr + two_c[t] * b1r[t] - b2r[t];
        const double m = yi + two_c[t] * b1i[t] - b2i[t];
        b2r[t] = b1r[t];
        b2i[t] = b1i[t];
        b1r[t] = r;
        b1i[t] = m;
      }
    }
    for (std::size_t t = 0; t < count; ++t) {
      const double theta = 2.0 * kPi * (x0 + static_cast<double>(t)) / len;
      const double s = std::sin(theta);
      const cdouble cos_sum{b.y[0].real() + b1r[t] * c[t] - b2r[t], b.y[0].imag() + b1i[t] * c[t] - b2i[t]};
      const cdouble sin_sum{b1r[t] * s, b1i[t] * s};
      const cdouble sum = cos_sum + cdouble{0.0, 1.0} * sin_sum;
      out[t] = (std::polar(1.0, theta * static_cast<double>(first_)) * sum).real() / len;
    }
  };

  double best = -std::numeric_limits<double>::infinity();
  long best_lag = 0;
  double values[kChains];
  for (const auto& [value, index] : b.maxima) {
    const double bound = value + b.slack;
    if (bound < best - tol) break;
    const double x = static_cast<double>(index) / static_cast<double>(kUpsample);
    const long lo = static_cast<long>(std::ceil(x - reach - shift));
    const long hi = static_cast<long>(std::floor(x + reach - shift));
    for (long start = lo; start <= hi; start += static_cast<long>(kChains)) {
      const auto count = static_cast<std::size_t>(std::min<long>(hi - start + 1, static_cast<long>(kChains)));
      // The phase depends on the lag only modulo the signal length.
      exact(static_cast<double>(start) + shift, count, values);
      for (std::size_t t = 0; t < count; ++t) {
        const long tau = start + static_cast<long>(t);
        const long lag = ((tau + half) % n + n) % n - half;
        const double v = values[t];
        if (v > best + tol) {
          best = v;
          best_lag = lag;
        } else if (v >= best - tol && preferred_lag(lag, best_lag)) {
          best = std::max(best, v);
          best_lag = lag;
        }
      }
    }
  }
  if (!std::isfinite(best)) return {0.0, 0};
  return {std::clamp(best / b.norm, -1.0, 1.0), best_lag};
}

CorrelationResult PairCorrelator::correlate(const PathPoint& a, const PathPoint& b) const {
  const Base& base_ab = base(a, b);
  if (!(base_ab.norm > 0.0)) throw Error("pair correlation: zero-energy separation signal");
  const double shift = (b.travel_distance - a.travel_distance) * separations_.front().sample_rate / kSpeedOfSound;
  return search(base_ab, shift);
}

double PairCorrelator::similarity(const PathPoint& a, const PathPoint& b, double a_th) const {
  const Base& base_ab = base(a, b);
  if (!(base_ab.norm > 0.0)) return 0.0;
  const double stop = a_th * base_ab.norm;
  if (base_ab.maxima.empty() || base_ab.maxima.front().first + base_ab.slack <= stop) return 0.0;
  const double shift = (b.travel_distance - a.travel_distance) * separations_.front().sample_rate / kSpeedOfSound;
  return similarity_term(search(base_ab, shift), a_th, length_);
}

CorrelationResult PairCorrelator::correlate_naive(const PathPoint& a, const PathPoint& b) const {
  const auto pa = back_propagate(separations_[static_cast<std::size_t>(a.path_index)],
                                 paths_[static_cast<std::size_t>(a.path_index)], a, materials_);
  const auto pb = back_propagate(separations_[static_cast<std::size_t>(b.path_index)],
                                 paths_[static_cast<std::size_t>(b.path_index)], b, materials_);
  return xcorr_peak_circular(pa.signal, pb.signal);
}

// ---------------------------------------------------------------------------

ParticleFilter::ParticleFilter(const LocalizerConfig& config, const Aabb& bounds)
    : config_(config), bounds_(bounds) {
  config_.validate();
  const Vec3 e = bounds.extent();
  if (!(e.x >= 0.0 && e.y >= 0.0 && e.z >= 0.0) || !is_finite(e)) throw Error("particle filter: invalid bounds");
  particles_.resize(config_.particle_count);
  const double w = 1.0 / static_cast<double>(particles_.size());
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    SplitMix64 rng{config_.seed, kInit, static_cast<std::uint64_t>(i)};
    const double u = rng.uniform();
    const double v = rng.uniform();
    const double t = rng.uniform();
    particles_[i] = {bounds.lo + Vec3{e.x * u, e.y * v, e.z * t}, w};
  }
  last_ = estimate(true);
}

void ParticleFilter::diffuse() {
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    SplitMix64 rng{config_.seed, kDiffuse, static_cast<std::uint64_t>(frame_), static_cast<std::uint64_t>(i)};
    Vec3& p = particles_[i].position;
    p += Vec3{rng.normal(), rng.normal(), rng.normal()} * config_.motion_sigma;
    p = component_max(bounds_.lo, component_min(bounds_.hi, p));
  }
}

std::vector<double> ParticleFilter::score(std::span<const Vec3> positions, const FrameObservation& observation,
                                          Exec exec) const {
  observation.validate();
  const std::size_t count = positions.size();
  const std::size_t paths = observation.paths.size();
  std::vector<double> out(count, 0.0);
  if (paths == 0) return out;

  std::vector<PathPoint> feet(count * paths);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t n = 0; n < paths; ++n)
      feet[i * paths + n] = perpendicular_foot(observation.paths[n], positions[i], static_cast<int>(n));
  }

  const bool similarity = config_.alpha != 0.0 && paths > 1;
  PairCorrelator correlator(observation);
  if (similarity && !config_.oracle_correlation) {
    std::set<std::tuple<std::size_t, std::size_t, int, int>> needed;
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t n = 0; n < paths; ++n) {
        for (std::size_t m = n + 1; m < paths; ++m)
          needed.emplace(n, m, feet[i * paths + n].segment_order, feet[i * paths + m].segment_order);
      }
    }
    for (const auto& [n, m, kn, km] : needed) {
      PathPoint a;
      a.path_index = static_cast<int>(n);
      a.segment_order = kn;
      PathPoint b;
      b.path_index = static_cast<int>(m);
      b.segment_order = km;
      correlator.prepare(a, b);
    }
  }

  // The oracle path needs zero-energy checks that the fast path handles itself.
  std::vector<bool> silent(paths);
  for (std::size_t n = 0; n < paths; ++n) silent[n] = !(observation.separations[n].energy() > 0.0);

  auto score_one = [&](std::size_t i) {
    const PathPoint* f = feet.data() + i * paths;
    double s = 0.0;
    for (std::size_t n = 0; n < paths; ++n) {
      const double d = f[n].distance;
      s += std::exp(-d * d / (2.0 * config_.sigma_w * config_.sigma_w));
    }
    if (similarity) {
      double pairs = 0.0;
      for (std::size_t n = 0; n < paths; ++n) {
        for (std::size_t m = n + 1; m < paths; ++m) {
          if (config_.oracle_correlation) {
            if (silent[n] || silent[m]) continue;
            const auto c = correlator.correlate_naive(f[n], f[m]);
            pairs += similarity_term(c, config_.a_th, observation.separations[n].padded_length);
          } else {
            pairs += correlator.similarity(f[n], f[m], config_.a_th);
          }
        }
      }
      // Each pair term appears in w_s of both of its paths.
      s += config_.alpha * 2.0 * pairs / static_cast<double>(paths - 1);
    }
    out[i] = s;
  };
  const auto n = static_cast<std::int64_t>(count);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < n; ++i) score_one(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < n; ++i) score_one(static_cast<std::size_t>(i));
  }
  return out;
}

Estimate ParticleFilter::estimate(bool stale) const {
  Estimate e;
  e.frame = frame_;
  e.stale = stale;
  Vec3 mean;
  for (const Particle& p : particles_) mean += p.position * p.weight;
  double spread = 0.0;
  for (const Particle& p : particles_) {
    const Vec3 d = p.position - mean;
    spread += p.weight * dot(d, d);
  }
  e.position = mean;
  e.confidence_radius_95 = kRadius95 * std::sqrt(std::max(spread, 0.0) / 3.0);
  return e;
}

void ParticleFilter::resample() {
  // Systematic (low-variance) resampling with one uniform offset per frame.
  const std::size_t count = particles_.size();
  SplitMix64 rng{config_.seed, kResample, static_cast<std::uint64_t>(frame_)};
  const double step = 1.0 / static_cast<double>(count);
  double u = rng.uniform() * step;
  std::vector<Particle> next(count);
  double cumulative = particles_[0].weight;
  std::size_t j = 0;
  for (std::size_t i = 0; i < count; ++i) {
    while (u > cumulative && j + 1 < count) cumulative += particles_[++j].weight;
    next[i] = {particles_[j].position, step};
    u += step;
  }
  particles_ = std::move(next);
}

Estimate ParticleFilter::step(const FrameObservation& observation, Exec exec) {
  observation.validate();
  diffuse();
  Estimate e;
  if (observation.paths.empty()) {
    e = last_;
    e.stale = true;
  } else {
    std::vector<Vec3> positions(particles_.size());
    for (std::size_t i = 0; i < particles_.size(); ++i) positions[i] = particles_[i].position;
    const auto scores = score(positions, observation, exec);
    double total = 0.0;
    for (std::size_t i = 0; i < particles_.size(); ++i) total += particles_[i].weight * scores[i];
    if (!(total > 0.0) || !std::isfinite(total)) {
      for (Particle& p : particles_) p.weight = 1.0 / static_cast<double>(particles_.size());
      e = last_;
      e.stale = true;
    } else {
      for (std::size_t i = 0; i < particles_.size(); ++i) particles_[i].weight *= scores[i] / total;
      e = estimate(false);
      double sum_sq = 0.0;
      for (const Particle& p : particles_) sum_sq += p.weight * p.weight;
      if (1.0 / sum_sq < config_.resample_threshold * static_cast<double>(particles_.size())) resample();
    }
  }
  e.frame = frame_;
  last_ = e;
  ++frame_;
  return e;
}

}  // namespace bpsl
