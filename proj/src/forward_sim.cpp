#include "bpsl/forward_sim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"
#include "bpsl/random.hpp"

namespace bpsl {

namespace {

// Length of the raised-cosine fade-in on each render window.
constexpr std::size_t kTaperLength = 256;
// Image-source sequences beyond this count are refused rather than enumerated.
constexpr double kMaxSequences = 2e6;
// Coplanarity tolerances for grouping triangles into reflecting planes.
constexpr double kPlaneNormalTolerance = 1e-9;
constexpr double kPlaneOffsetTolerance = 1e-7;
// Slack on hit distances when matching a mesh hit with a plane crossing.
constexpr double kHitMatchTolerance = 1e-6;

struct Plane {
  Vec3 normal;
  double offset = 0.0;  // normal . p for points on the plane
  std::vector<int> triangles;
};

std::vector<Plane> group_planes(const Mesh& mesh, std::vector<int>& plane_of) {
  std::vector<Plane> planes;
  plane_of.assign(mesh.size(), -1);
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    const Triangle& t = mesh.triangle(static_cast<int>(i));
    Vec3 n = t.normal;
    // Orientation-free key: first significant component positive.
    for (int a = 0; a < 3; ++a) {
      if (std::abs(n[a]) > 1e-12) {
        if (n[a] < 0.0) n = -n;
        break;
      }
    }
    const double d = dot(n, t.vertices[0]);
    int found = -1;
    for (std::size_t p = 0; p < planes.size(); ++p) {
      if (norm(planes[p].normal - n) < kPlaneNormalTolerance && std::abs(planes[p].offset - d) < kPlaneOffsetTolerance) {
        found = static_cast<int>(p);
        break;
      }
    }
    if (found < 0) {
      found = static_cast<int>(planes.size());
      planes.push_back({n, d, {}});
    }
    planes[static_cast<std::size_t>(found)].triangles.push_back(static_cast<int>(i));
    plane_of[i] = found;
  }
  return planes;
}

Vec3 mirror(const Vec3& p, const Plane& plane) {
  return p - plane.normal * (2.0 * (dot(plane.normal, p) - plane.offset));
}

struct Enumerator {
  const Mesh& mesh;
  const MaterialTable& materials;
  const std::vector<Plane>& planes;
  const std::vector<int>& plane_of;
  Vec3 source;
  Vec3 listener;
  int max_order;
  std::vector<ForwardPath> found;

  // walls[i] is the i-th plane the sound meets after leaving the source;
  // images[i] is the source mirrored through walls[0..i].
  void validate(const std::vector<int>& walls, const std::vector<Vec3>& images) {
    ForwardPath path;
    path.points.push_back(listener);
    path.reflectivity.fill(1.0);
    Vec3 x = listener;
    for (int i = static_cast<int>(walls.size()) - 1; i >= 0; --i) {
      const Plane& plane = planes[static_cast<std::size_t>(walls[static_cast<std::size_t>(i)])];
      const Vec3 target = images[static_cast<std::size_t>(i)];
      const double span = distance(target, x);
      if (span <= kHitEpsilon) return;
      const Vec3 dir = (target - x) / span;
      const double denom = dot(plane.normal, dir);
      if (std::abs(denom) < 1e-12) return;
      const double t_plane = (plane.offset - dot(plane.normal, x)) / denom;
      if (!(t_plane > kHitEpsilon && t_plane < span)) return;
      const auto hit = mesh.intersect(x, dir, kHitEpsilon, t_plane + kHitMatchTolerance);
      if (!hit) return;  // crosses the plane outside its triangles
      const bool on_plane = plane_of[static_cast<std::size_t>(hit->triangle)] == walls[static_cast<std::size_t>(i)];
      if (!on_plane && hit->distance < t_plane - kHitMatchTolerance) return;  // occluded
      const int tri = on_plane ? hit->triangle : plane.triangles.front();
      const int material = mesh.triangle(tri).material_id;
      for (std::size_t b = 0; b < kBandCount; ++b) path.reflectivity[b] *= materials.reflectivity(material, b);
      x = x + dir * t_plane;
      path.points.push_back(x);
      path.triangles.push_back(tri);
    }
    const double last = distance(source, x);
    if (last > kHitEpsilon) {
      const Vec3 dir = (source - x) / last;
      if (mesh.intersect(x, dir, kHitEpsilon, last - kHitEpsilon)) return;
    }
    path.points.push_back(source);
    path.length = walls.empty() ? distance(listener, source) : distance(listener, images.back());
    found.push_back(std::move(path));
  }

  void recurse(std::vector<int>& walls, std::vector<Vec3>& images) {
    validate(walls, images);
    if (static_cast<int>(walls.size()) == max_order) return;
    const Vec3 from = images.empty() ? source : images.back();
    for (std::size_t p = 0; p < planes.size(); ++p) {
      if (!walls.empty() && walls.back() == static_cast<int>(p)) continue;
      walls.push_back(static_cast<int>(p));
      images.push_back(mirror(from, planes[p]));
      recurse(walls, images);
      walls.pop_back();
      images.pop_back();
    }
  }
};

bool has_volume(const Aabb& box) {
  const Vec3 e = box.extent();
  return e.x > 0.0 && e.y > 0.0 && e.z > 0.0;
}

}  // namespace

TimeSignal SignalSpec::render(long long first, std::size_t count, double sample_rate) const {
  TimeSignal out{std::vector<double>(count, 0.0), sample_rate};
  switch (kind) {
    case SignalKind::silence:
      break;
    case SignalKind::impulse: {
      const long long at = std::llround(start_s * sample_rate);
      if (at >= first && at < first + static_cast<long long>(count))
        out.samples[static_cast<std::size_t>(at - first)] = amplitude;
      break;
    }
    case SignalKind::noise:
      for (std::size_t i = 0; i < count; ++i) {
        SplitMix64 rng{seed, 0x6e6f697365ull, static_cast<std::uint64_t>(first + static_cast<long long>(i))};
        out.samples[i] = amplitude * rng.normal();
      }
      break;
    case SignalKind::clap: {
      if (!(period_s > 0.0) || !(burst_s > 0.0)) throw Error("clap signal needs positive period and burst");
      const double tau = burst_s / 5.0;
      const long long burst = std::llround(burst_s * sample_rate);
      for (std::size_t i = 0; i < count; ++i) {
        const double t = static_cast<double>(first + static_cast<long long>(i)) / sample_rate - start_s;
        if (t < 0.0) continue;
        const auto rep = static_cast<long long>(std::floor(t / period_s));
        const long long onset = std::llround((start_s + static_cast<double>(rep) * period_s) * sample_rate);
        const long long offset = first + static_cast<long long>(i) - onset;
        if (offset < 0 || offset >= burst) continue;
        SplitMix64 rng{seed, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(offset)};
        out.samples[i] = amplitude * rng.normal() * std::exp(-static_cast<double>(offset) / sample_rate / tau);
      }
      break;
    }
  }
  return out;
}

Vec3 Trajectory::position_at(double time_s) const {
  if (waypoints.empty()) throw Error("trajectory has no waypoints");
  if (time_s <= waypoints.front().time_s) return waypoints.front().position;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    if (time_s <= waypoints[i].time_s) {
      const Waypoint& a = waypoints[i - 1];
      const Waypoint& b = waypoints[i];
      const double u = (time_s - a.time_s) / (b.time_s - a.time_s);
      return a.position + (b.position - a.position) * u;
    }
  }
  return waypoints.back().position;
}

void Trajectory::validate() const {
  if (waypoints.empty()) throw Error("trajectory has no waypoints");
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    if (!is_finite(waypoints[i].position) || !std::isfinite(waypoints[i].time_s))
      throw Error("trajectory waypoint is not finite");
    if (i > 0 && !(waypoints[i].time_s > waypoints[i - 1].time_s))
      throw Error("trajectory waypoint times must increase");
  }
}

double ForwardPath::gain(std::size_t band) const { return reflectivity[band] / (4.0 * kPi * (1.0 + length)); }

std::vector<ForwardPath> trace_forward_paths(const Mesh& mesh, const MaterialTable& materials,
                                             const Vec3& source, const Vec3& listener, int max_order) {
  if (max_order < 0) throw Error("trace_forward_paths: negative reflection order");
  if (has_volume(mesh.bounds()) && !mesh.bounds().contains(source))
    throw Error("trace_forward_paths: source lies outside the mesh");
  for (const Triangle& t : mesh.triangles()) materials.bands(t.material_id);

  std::vector<int> plane_of;
  const std::vector<Plane> planes = group_planes(mesh, plane_of);
  double sequences = 1.0;
  double layer = 1.0;
  for (int k = 1; k <= max_order; ++k) {
    layer *= k == 1 ? static_cast<double>(planes.size()) : static_cast<double>(planes.size()) - 1.0;
    sequences += layer;
  }
  if (sequences > kMaxSequences) throw Error("trace_forward_paths: too many reflecting planes for this order");

  Enumerator e{mesh, materials, planes, plane_of, source, listener, max_order, {}};
  std::vector<int> walls;
  std::vector<Vec3> images;
  e.recurse(walls, images);
  std::stable_sort(e.found.begin(), e.found.end(), [](const ForwardPath& a, const ForwardPath& b) {
    if (a.order() != b.order()) return a.order() < b.order();
    return a.length < b.length;
  });
  return std::move(e.found);
}

Spectrum forward_path_response(double length, const BandValues& reflectivity, const Spectrum& grid) {
  if (!(length >= 0.0)) throw Error("forward_path_response: negative length");
  Spectrum g;
  g.sample_rate = grid.sample_rate;
  g.padded_length = grid.padded_length;
  g.frame_length = grid.frame_length;
  g.bins.resize(grid.padded_length / 2 + 1);
  const double delay = length / kSpeedOfSound;
  const double spread = 4.0 * kPi * (1.0 + length);
  for (std::size_t f = 0; f < g.bins.size(); ++f) {
    const double freq = g.bin_frequency(f);
    g.bins[f] = std::polar(reflectivity[MaterialTable::band_index(freq)] / spread, -2.0 * kPi * freq * delay);
  }
  return g;
}

void Scenario::validate() const {
  if (frame_hop == 0) throw Error("scenario: frame hop must be positive");
  if (frame_length == 0) throw Error("scenario: frame length must be positive");
  if (!(sample_rate > 0.0)) throw Error("scenario: sample rate must be positive");
  if (!(duration_s > 0.0)) throw Error("scenario: duration must be positive");
  if (max_order < 0) throw Error("scenario: negative reflection order");
  if (array.size() == 0) throw Error("scenario: array has no microphones");
  if (!mesh.empty() && !mesh.bounds().contains(array.center))
    throw Error("scenario: array center lies outside the mesh bounds");
  for (const Triangle& t : mesh.triangles()) {
    if (!materials.contains(t.material_id))
      throw Error("scenario: mesh uses undefined material " + std::to_string(t.material_id));
  }
  for (const Emitter& e : emitters) {
    e.trajectory.validate();
    if (e.trajectory.waypoints.size() > 1 &&
        (e.trajectory.waypoints.front().time_s > 0.0 || e.trajectory.waypoints.back().time_s < duration_s))
      throw Error("scenario: emitter trajectory does not cover the scenario duration");
    for (const Waypoint& w : e.trajectory.waypoints) {
      if (!mesh.empty() && !mesh.bounds().contains(w.position))
        throw Error("scenario: emitter waypoint lies outside the mesh bounds");
    }
  }
  if (frame_count() == 0) throw Error("scenario: duration shorter than one frame");
}

std::size_t Scenario::frame_count() const {
  const double total = duration_s * sample_rate;
  if (total < static_cast<double>(frame_length)) return 0;
  return static_cast<std::size_t>((total - static_cast<double>(frame_length)) / static_cast<double>(frame_hop)) + 1;
}

double Scenario::frame_time(std::size_t frame) const {
  return (static_cast<double>(frame * frame_hop) + 0.5 * static_cast<double>(frame_length)) / sample_rate;
}

Vec3 Scenario::source_position(std::size_t frame) const {
  for (const Emitter& e : emitters) {
    if (e.kind == EmitterKind::source) return e.trajectory.position_at(frame_time(frame));
  }
  throw Error("scenario has no source emitter");
}

std::vector<TimeSignal> render_frame(const Scenario& scenario, std::size_t frame, Exec exec) {
  if (frame >= scenario.frame_count()) throw Error("render_frame: frame outside the scenario duration");
  const std::size_t q_count = scenario.array.size();
  const double fs = scenario.sample_rate;
  const std::size_t len = scenario.frame_length;
  const double t_frame = scenario.frame_time(frame);
  const long long frame_start = static_cast<long long>(frame * scenario.frame_hop);

  std::vector<Vec3> mic_dirs(q_count);
  for (std::size_t q = 0; q < q_count; ++q) mic_dirs[q] = scenario.array.to_world(scenario.array.directions[q]);

  std::vector<TimeSignal> out(q_count, TimeSignal{std::vector<double>(len, 0.0), fs});
  for (const Emitter& emitter : scenario.emitters) {
    if (emitter.signal.kind == SignalKind::silence) continue;
    const Vec3 pos = emitter.trajectory.position_at(t_frame);
    const auto paths =
        trace_forward_paths(scenario.mesh, scenario.materials, pos, scenario.array.center, scenario.max_order);
    if (paths.empty()) continue;

    double max_delay = 0.0;
    for (const auto& p : paths) max_delay = std::max(max_delay, p.length);
    max_delay = (max_delay + scenario.array.radius) * fs / kSpeedOfSound;
    const std::size_t n = std::bit_ceil(len + static_cast<std::size_t>(std::ceil(max_delay)) + 2 * kTaperLength);

    // The window ends with the frame; the fade-in keeps the periodic extension smooth.
    TimeSignal window = emitter.signal.render(frame_start + static_cast<long long>(len) - static_cast<long long>(n), n, fs);
    for (std::size_t i = 0; i < kTaperLength; ++i)
      window.samples[i] *= 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / static_cast<double>(kTaperLength));
    const auto emitted = rfft(window.samples);
    const std::size_t bins = emitted.size();

    // Per path: emitted spectrum through gain and the delay to the array center.
    std::vector<std::vector<cdouble>> at_center(paths.size());
    std::vector<std::size_t> band_of(bins);
    for (std::size_t f = 0; f < bins; ++f)
      band_of[f] = MaterialTable::band_index(static_cast<double>(f) * fs / static_cast<double>(n));
    for (std::size_t p = 0; p < paths.size(); ++p) {
      auto& spec = at_center[p];
      spec.resize(bins);
      const double delay = paths[p].length * fs / kSpeedOfSound;
      for (std::size_t f = 0; f < bins; ++f) {
        const double phase = -2.0 * kPi * static_cast<double>(f) * delay / static_cast<double>(n);
        spec[f] = emitted[f] * std::polar(paths[p].gain(band_of[f]), phase);
      }
    }

    auto render_mic = [&](std::size_t q) {
      std::vector<cdouble> acc(bins, cdouble{});
      for (std::size_t p = 0; p < paths.size(); ++p) {
        // A mic facing the arrival direction hears the wave a*cos/c earlier.
        const double lead = scenario.array.radius * dot(paths[p].arrival_direction(), mic_dirs[q]) * fs / kSpeedOfSound;
        const double step = 2.0 * kPi * lead / static_cast<double>(n);
        const auto& spec = at_center[p];
        constexpr std::size_t kReanchor = 512;
        cdouble rot{1.0, 0.0};
        const cdouble w = std::polar(1.0, step);
        for (std::size_t f = 0; f < bins; ++f) {
          if (f % kReanchor == 0) rot = std::polar(1.0, step * static_cast<double>(f));
          acc[f] += spec[f] * rot;
          rot *= w;
        }
      }
      const auto y = irfft(acc, n);
      auto& dst = out[q].samples;
      for (std::size_t i = 0; i < len; ++i) dst[i] += y[n - len + i];
    };
    const auto qn = static_cast<std::int64_t>(q_count);
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
      for (std::int64_t q = 0; q < qn; ++q) render_mic(static_cast<std::size_t>(q));
    } else {
      for (std::int64_t q = 0; q < qn; ++q) render_mic(static_cast<std::size_t>(q));
    }
  }

  if (std::isfinite(scenario.snr_db)) {
    double power = 0.0;
    for (const auto& ch : out) power += ch.energy();
    power /= static_cast<double>(q_count * len);
    if (power > 0.0) {
      const double sigma = std::sqrt(power / std::pow(10.0, scenario.snr_db / 10.0));
      for (std::size_t q = 0; q < q_count; ++q) {
        SplitMix64 rng{scenario.noise_seed, static_cast<std::uint64_t>(frame), static_cast<std::uint64_t>(q)};
        for (double& v : out[q].samples) v += sigma * rng.normal();
      }
    }
  }
  return out;
}

}  // namespace bpsl
