#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bpsl/backprop.hpp"
#include "bpsl/geometry.hpp"
#include "bpsl/parallel.hpp"
#include "bpsl/signal.hpp"
#include "bpsl/sphharm.hpp"

namespace bpsl {

enum class EmitterKind { source, noise };
enum class SignalKind { clap, noise, impulse, silence };

/// Procedural emitted waveform, addressable at any global sample index so every
/// frame can be rendered independently.
struct SignalSpec {
  SignalKind kind = SignalKind::clap;
  double amplitude = 1.0;
  double period_s = 0.08;  // clap repetition period
  double burst_s = 0.02;   // clap length; the envelope decays by e^-5 over it
  double start_s = 0.0;    // first clap / impulse time
  std::uint64_t seed = 1;

  /// Samples at global indices [first, first + count).
  TimeSignal render(long long first, std::size_t count, double sample_rate) const;
};

struct Waypoint {
  double time_s = 0.0;
  Vec3 position;
};

/// Piecewise-linear trajectory, held constant before the first and after the last waypoint.
struct Trajectory {
  std::vector<Waypoint> waypoints;

  Vec3 position_at(double time_s) const;
  /// Throws unless non-empty with strictly increasing times.
  void validate() const;
};

struct Emitter {
  EmitterKind kind = EmitterKind::source;
  Trajectory trajectory;
  SignalSpec signal;
};

/// Specular path from the listener back to a source, as found by the image-source method.
struct ForwardPath {
  std::vector<Vec3> points;      // listener, reflection points, source
  std::vector<int> triangles;    // reflecting triangles, listener side first
  double length = 0.0;           // meters
  BandValues reflectivity{};     // product of (floored) reflectivities per band

  int order() const { return static_cast<int>(triangles.size()); }
  /// Unit vector from the listener toward the direction the sound arrives from.
  Vec3 arrival_direction() const { return normalized(points[1] - points[0]); }
  /// Pressure gain at frequency band b: reflectivity[b] / (4 pi (1 + l)).
  double gain(std::size_t band) const;
};

/// Direct and specular paths up to `max_order` reflections between a source and
/// a listener, each occlusion-checked against the mesh. Ordered by reflection
/// order, then by length.
std::vector<ForwardPath> trace_forward_paths(const Mesh& mesh, const MaterialTable& materials,
                                             const Vec3& source, const Vec3& listener, int max_order);

/// One path applied to a signal on a periodic grid: delay l/c and per-band gain.
Spectrum forward_path_response(double length, const BandValues& reflectivity, const Spectrum& grid);

struct Scenario {
  std::string name = "scenario";
  Mesh mesh;
  MaterialTable materials;
  std::vector<Emitter> emitters;
  ArrayGeometry array = ArrayGeometry::default_32();
  double duration_s = 1.6;
  double sample_rate = kDefaultSampleRate;
  std::size_t frame_length = 3840;
  std::size_t frame_hop = 3840;
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t noise_seed = 1;
  int max_order = 3;  // reflections rendered by the forward simulator

  /// Throws on infeasible geometry or inconsistent settings.
  void validate() const;
  std::size_t frame_count() const;
  /// Emitters are frozen at the middle of each frame.
  double frame_time(std::size_t frame) const;
  /// First source-kind emitter at the frame time; throws if there is none.
  Vec3 source_position(std::size_t frame) const;
};

/// Simulated array recording for one frame: one signal of frame_length samples per mic.
std::vector<TimeSignal> render_frame(const Scenario& scenario, std::size_t frame,
                                     Exec exec = Exec::parallel);

}  // namespace bpsl
