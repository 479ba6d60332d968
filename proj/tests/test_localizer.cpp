#include <doctest.h>

#include <bpsl/beamform.hpp>
#include <bpsl/constants.hpp>
#include <bpsl/forward_sim.hpp>
#include <bpsl/error.hpp>
#include <bpsl/localizer.hpp>

#include <algorithm>
#include <cmath>

#include "support.hpp"

using namespace bpsl;

namespace {

RayPath straight(const Vec3& from, const Vec3& through, double length) {
  RayPath p;
  p.push_back({from, normalized(through - from), length, {}, -1});
  return p;
}

// Separation as heard at the end of a straight path of `length`: the payload laid at the
// end of the padded buffer, delayed and attenuated as a circular shift, kept to the
// analysis band like a beamformer separation.
Spectrum heard(const std::vector<double>& emitted, double length) {
  Spectrum s = forward_dft(pad_to_end(TimeSignal{emitted}, kPadLength), kPadLength);
  s.frame_length = kFrameLength;
  BandValues unity;
  unity.fill(1.0);
  const Spectrum g = forward_path_response(length, unity, s);
  const auto [first, last] = band_bins({}, kDefaultSampleRate, kPadLength);
  for (std::size_t f = 0; f < s.size(); ++f) s.bins[f] = f >= first && f <= last ? s.bins[f] * g.bins[f] : 0.0;
  return s;
}

std::vector<double> white(SplitMix64& rng) {
  std::vector<double> v(kFrameLength);
  for (double& x : v) x = rng.normal();
  return v;
}

// Two paths meet at the source; two more cross at a decoy and carry unrelated noise.
// Each path stops 0.5 m past its crossing, so no other point is near two paths.
struct DecoyScene {
  Vec3 source{2.0, 2.0, 1.5};
  Vec3 decoy{4.2, 4.5, 1.5};
  FrameObservation obs;

  explicit DecoyScene(std::uint64_t seed) {
    SplitMix64 rng(seed);
    const auto emitted = white(rng);
    const std::vector<Vec3> source_origins{{2.0, 5.5, 1.5}, {5.5, 2.0, 0.5}};
    for (const Vec3& o : source_origins) {
      const double d = distance(o, source);
      obs.paths.push_back(straight(o, source, d + 0.5));
      obs.separations.push_back(heard(emitted, d));
    }
    const std::vector<Vec3> decoy_origins{{6.0, 6.0, 1.5}, {4.2, 6.0, 2.9}};
    for (const Vec3& o : decoy_origins) {
      const double d = distance(o, decoy);
      obs.paths.push_back(straight(o, decoy, d + 0.5));
      obs.separations.push_back(heard(white(rng), d));
    }
  }
};

Aabb box(const Vec3& lo, const Vec3& hi) {
  Aabb b;
  b.expand(lo);
  b.expand(hi);
  return b;
}

}  // namespace

TEST_CASE("localizer config validation") {
  LocalizerConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.alpha == 1.0);
  CHECK(c.sigma_w == 0.5);
  CHECK(c.a_th == 0.15);
  auto bad = c;
  bad.a_th = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.particle_count = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.sigma_w = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("distance weight is an unnormalized Gaussian kernel") {
  const RayPath p = straight({0, 0, 0}, {1, 0, 0}, 10);
  CHECK(distance_weight({3, 0, 0}, p, 0.5) == 1.0);
  CHECK(distance_weight({3, 0.5, 0}, p, 0.5) == doctest::Approx(std::exp(-0.5)));
  double prev = 2.0;
  for (double d = 0.0; d < 3.0; d += 0.1) {
    const double w = distance_weight({3, d, 0}, p, 0.5);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("similarity term and weight") {
  CHECK(similarity_term({0.1, 0}, 0.15, 8192) == 0.0);
  CHECK(similarity_term({0.15, 0}, 0.15, 8192) == 0.0);
  CHECK(similarity_term({0.5, 0}, 0.15, 8192) == 1.0);
  CHECK(similarity_term({0.5, -2048}, 0.15, 8192) == doctest::Approx(0.75));
  CHECK(similarity_term({0.5, 2048}, 0.15, 8192) == doctest::Approx(0.75));

  SplitMix64 rng(61);
  const TimeSignal a{white(rng)};
  const TimeSignal b{white(rng)};
  std::vector<BackPropSignal> one(1);
  one[0].signal = a;
  CHECK(similarity_weight(0, one, 0.15) == 0.0);
  std::vector<BackPropSignal> two(2);
  two[0].signal = a;
  two[1].signal = a;
  CHECK(similarity_weight(0, two, 0.15) == doctest::Approx(1.0));
  // One aligned partner and one unrelated one: average of 1 and 0.
  std::vector<BackPropSignal> three(3);
  three[0].signal = a;
  three[1].signal = a;
  three[2].signal = b;
  CHECK(similarity_weight(0, three, 0.15) == doctest::Approx(0.5));
  CHECK_THROWS_AS(similarity_weight(3, three, 0.15), Error);
}

TEST_CASE("particle weight with alpha zero is distance only") {
  const DecoyScene scene(62);
  const auto& obs = scene.obs;
  LocalizerConfig cfg;
  cfg.alpha = 0.0;
  std::vector<BackPropSignal> bps;
  for (std::size_t n = 0; n < obs.paths.size(); ++n) {
    const PathPoint f = perpendicular_foot(obs.paths[n], scene.source, int(n));
    bps.push_back(back_propagate(obs.separations[n], obs.paths[n], f, obs.materials));
  }
  double wd = 0;
  for (const auto& p : obs.paths) wd += distance_weight(scene.source, p, cfg.sigma_w);
  CHECK(particle_weight(scene.source, obs.paths, bps, cfg) == doctest::Approx(wd));
  // Each source path has one aligned partner among three: 1/3 apiece.
  cfg.alpha = 1.0;
  CHECK(particle_weight(scene.source, obs.paths, bps, cfg) == doctest::Approx(wd + 2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("filter score matches the reference particle weight") {
  const DecoyScene scene(63);
  LocalizerConfig cfg;
  cfg.particle_count = 10;
  const ParticleFilter pf(cfg, box({0, 0, 0}, {6, 6, 3}));
  SplitMix64 rng(64);
  std::vector<Vec3> xs{scene.source, scene.decoy};
  for (int i = 0; i < 10; ++i) xs.push_back(bpsl::test::random_in_box(rng, {0, 0, 0}, {6, 6, 3}));
  const auto fast = pf.score(xs, scene.obs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<BackPropSignal> bps;
    for (std::size_t n = 0; n < scene.obs.paths.size(); ++n) {
      const PathPoint f = perpendicular_foot(scene.obs.paths[n], xs[i], int(n));
      bps.push_back(back_propagate(scene.obs.separations[n], scene.obs.paths[n], f, scene.obs.materials));
    }
    CHECK(fast[i] == doctest::Approx(particle_weight(xs[i], scene.obs.paths, bps, cfg)).epsilon(1e-9));
  }
}

TEST_CASE("score at the source beats the decoy crossing on a 10 cm grid") {
  const DecoyScene scene(65);
  LocalizerConfig cfg;
  cfg.particle_count = 1;
  const ParticleFilter pf(cfg, box({0, 0, 0}, {6, 6, 3}));
  std::vector<Vec3> grid;
  for (int i = 0; i <= 60; ++i)
    for (int j = 0; j <= 60; ++j)
      for (int k = 0; k <= 30; k += 3) grid.push_back({0.1 * i, 0.1 * j, 0.1 * k});
  const auto s = pf.score(grid, scene.obs);
  const auto best = std::max_element(s.begin(), s.end()) - s.begin();
  CHECK(distance(grid[static_cast<std::size_t>(best)], scene.source) < 0.15);
  const std::vector<Vec3> two{scene.source, scene.decoy};
  const auto st = pf.score(two, scene.obs);
  CHECK(st[0] > st[1]);
}

TEST_CASE("shifted base correlation equals the back-propagated oracle") {
  const DecoyScene scene(66);
  const PairCorrelator pc(scene.obs);
  SplitMix64 rng(67);
  const int paths = static_cast<int>(scene.obs.paths.size());
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = bpsl::test::random_in_box(rng, {0, 0, 0}, {6, 6, 3});
    const int n = static_cast<int>(rng.uniform() * paths);
    int m = static_cast<int>(rng.uniform() * (paths - 1));
    if (m >= n) ++m;
    const PathPoint a = perpendicular_foot(scene.obs.paths[std::size_t(n)], x, n);
    const PathPoint b = perpendicular_foot(scene.obs.paths[std::size_t(m)], x, m);
    const auto fast = pc.correlate(a, b);
    const auto slow = pc.correlate_naive(a, b);
    CHECK(std::abs(fast.a_cc - slow.a_cc) < 1e-9);
    CHECK(fast.l_cc == slow.l_cc);
    // Symmetric in its arguments.
    const auto swapped = pc.correlate(b, a);
    CHECK(swapped.a_cc == doctest::Approx(fast.a_cc).epsilon(1e-9));
    CHECK(swapped.l_cc == -fast.l_cc);
    CHECK(pc.similarity(a, b, 0.15) == doctest::Approx(similarity_term(fast, 0.15, kPadLength)));
  }
}

TEST_CASE("aligned paths back-propagate to zero lag at the source") {
  const DecoyScene scene(68);
  const PairCorrelator pc(scene.obs);
  const PathPoint a = perpendicular_foot(scene.obs.paths[0], scene.source, 0);
  const PathPoint b = perpendicular_foot(scene.obs.paths[1], scene.source, 1);
  const auto c = pc.correlate_naive(a, b);
  CHECK(c.l_cc == 0);
  CHECK(c.a_cc > 0.999);
}

namespace {

// Four paths from scattered origins, all meeting at the source with the same signal.
struct SourceScene {
  Vec3 source{2.0, 2.0, 1.5};
  FrameObservation obs;

  explicit SourceScene(std::uint64_t seed) {
    SplitMix64 rng(seed);
    const auto emitted = white(rng);
    const std::vector<Vec3> origins{{2.0, 5.5, 1.5}, {5.5, 2.0, 0.5}, {0.3, 0.4, 2.6}, {3.5, 0.2, 2.9}};
    for (const Vec3& o : origins) {
      const double d = distance(o, source);
      obs.paths.push_back(straight(o, source, d + 0.5));
      obs.separations.push_back(heard(emitted, d));
    }
  }
};

double error_after(const SourceScene& scene, LocalizerConfig cfg, int frames) {
  ParticleFilter pf(cfg, box({0, 0, 0}, {6, 6, 3}));
  Estimate e;
  for (int f = 0; f < frames; ++f) {
    e = pf.step(scene.obs);
    double total = 0;
    for (const auto& p : pf.particles()) total += p.weight;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    for (const auto& p : pf.particles()) CHECK(box({0, 0, 0}, {6, 6, 3}).contains(p.position));
    CHECK_FALSE(e.stale);
    CHECK(e.frame == f);
    CHECK(e.confidence_radius_95 >= 0.0);
  }
  return distance(e.position, scene.source);
}

}  // namespace

TEST_CASE("filter converges on a stationary source") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const SourceScene scene(60 + seed);
    LocalizerConfig cfg;
    cfg.seed = seed;
    cfg.alpha = 0.0;
    CHECK(error_after(scene, cfg, 10) < 0.3);
    // The similarity term is nearly uniform over space and slows the contraction.
    cfg.alpha = 1.0;
    CHECK(error_after(scene, cfg, 20) < 0.3);
  }
}

TEST_CASE("filter runs are reproducible and independent of execution mode") {
  const DecoyScene scene(70);
  LocalizerConfig cfg;
  cfg.particle_count = 300;
  ParticleFilter a(cfg, box({0, 0, 0}, {6, 6, 3}));
  ParticleFilter b(cfg, box({0, 0, 0}, {6, 6, 3}));
  for (int f = 0; f < 4; ++f) {
    const Estimate ea = a.step(scene.obs, Exec::parallel);
    const Estimate eb = b.step(scene.obs, Exec::serial);
    CHECK(ea.position == eb.position);
  }
  for (std::size_t i = 0; i < a.particles().size(); ++i) CHECK(a.particles()[i].position == b.particles()[i].position);
}

TEST_CASE("frames without paths or without weight leave a stale estimate") {
  const DecoyScene scene(71);
  LocalizerConfig cfg;
  cfg.particle_count = 200;
  ParticleFilter pf(cfg, box({0, 0, 0}, {6, 6, 3}));
  const Estimate first = pf.step(scene.obs);
  const FrameObservation empty;
  const Estimate e = pf.step(empty);
  CHECK(e.stale);
  CHECK(e.position == first.position);
  CHECK(e.frame == 1);

  // A single path far from every particle with a vanishing kernel.
  LocalizerConfig sharp = cfg;
  sharp.sigma_w = 1e-3;
  ParticleFilter lost(sharp, box({0, 0, 0}, {1, 1, 1}));
  FrameObservation far;
  far.paths.push_back(straight({5, 5, 5}, {6, 5, 5}, 1.0));
  far.separations.push_back(scene.obs.separations[0]);
  const Estimate z = lost.step(far);
  CHECK(z.stale);
  for (const auto& p : lost.particles()) CHECK(p.weight == doctest::Approx(1.0 / 200));
}

TEST_CASE("observation validation") {
  DecoyScene scene(72);
  FrameObservation obs = scene.obs;
  obs.separations.pop_back();
  CHECK_THROWS_AS(obs.validate(), Error);
  obs = scene.obs;
  obs.paths[0] = straight({0, 0, 0}, {1, 0, 0}, 40.0);  // 5598 samples > 4352 headroom
  CHECK_THROWS_AS(obs.validate(), Error);
}

TEST_CASE("a particle far from every path with no correlated pairs scores about zero") {
  const DecoyScene scene(72);
  FrameObservation noise;
  noise.paths = {scene.obs.paths[2], scene.obs.paths[3]};
  noise.separations = {scene.obs.separations[2], scene.obs.separations[3]};
  LocalizerConfig cfg;
  cfg.particle_count = 1;
  const ParticleFilter pf(cfg, box({0, 0, 0}, {40, 40, 40}));
  const std::vector<Vec3> far{{35, 35, 35}, {0.5, 0.5, 0.2}};
  for (double s : pf.score(far, noise)) CHECK(s < 1e-6);
}

TEST_CASE("scaling every separation leaves scores and the filter unchanged") {
  const DecoyScene scene(73);
  FrameObservation loud = scene.obs;
  for (auto& s : loud.separations)
    for (auto& b : s.bins) b *= 37.0;
  LocalizerConfig cfg;
  cfg.particle_count = 300;
  ParticleFilter a(cfg, box({0, 0, 0}, {6, 6, 3}));
  ParticleFilter b(cfg, box({0, 0, 0}, {6, 6, 3}));
  SplitMix64 rng(74);
  std::vector<Vec3> xs{scene.source, scene.decoy};
  for (int i = 0; i < 50; ++i) xs.push_back(bpsl::test::random_in_box(rng, {0, 0, 0}, {6, 6, 3}));
  const auto sa = a.score(xs, scene.obs);
  const auto sb = b.score(xs, loud);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(sb[i] == doctest::Approx(sa[i]).epsilon(1e-9));
  CHECK(std::max_element(sa.begin(), sa.end()) - sa.begin() == std::max_element(sb.begin(), sb.end()) - sb.begin());
  for (int f = 0; f < 3; ++f) CHECK(distance(a.step(scene.obs).position, b.step(loud).position) < 1e-9);
}
