#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bpsl/beamform.hpp"
#include "bpsl/forward_sim.hpp"
#include "bpsl/localizer.hpp"
#include "bpsl/raytrace.hpp"

namespace bpsl {

/// Raw scenario file: sections of key = value entries remembering their line.
///
///   # comment
///   [world]
///   room = 7 7 3
///   [materials]
///   material 1 0.97 0.97 0.97 0.97 0.97 0.97 0.97
///
/// Overrides (`section.key=value`) replace or add entries before interpretation.
class ConfigTree {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static ConfigTree parse(std::istream& in, const std::string& source_name);

  void set(const std::string& section, const std::string& key, const std::string& value);
  /// `section.key=value`; the section may itself contain dots (emitter.1.kind=noise).
  void apply_override(const std::string& assignment);

  bool has(const std::string& section, const std::string& key) const;
  const Entry* find(const std::string& section, const std::string& key) const;
  std::vector<std::string> sections() const;
  const std::map<std::string, Entry>& entries(const std::string& section) const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

/// Everything a run needs: the world to simulate and the processing settings.
struct ScenarioSpec {
  Scenario scenario;
  BeamformConfig beamform;
  TraceConfig trace;
  LocalizerConfig localizer;
  std::size_t pad_length = 8192;
  int sh_order = kDefaultShOrder;
  double radial_gain_limit = kDefaultRadialGainLimit;
};

/// Interprets a parsed tree; paths (mesh, array layout) resolve against base_dir.
/// Errors name the file and line of the offending entry.
ScenarioSpec build_scenario(const ConfigTree& tree, const std::filesystem::path& base_dir = {});
ScenarioSpec load_scenario(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Separations and paths for one frame, plus bookkeeping for the trace.
struct FrameAnalysis {
  FrameObservation observation;
  std::size_t peak_count = 0;
  double ms_beamform = 0.0;
  double ms_trace = 0.0;
};

/// Beamform, pick peaks, trace backward and extract separation signals for one frame.
FrameAnalysis analyze_frame(const ScenarioSpec& spec, const std::vector<TimeSignal>& mics,
                            Exec exec = Exec::parallel);

/// Mic frames for every frame index: simulated, or sliced from recorded audio.
std::vector<std::vector<TimeSignal>> render_all(const Scenario& scenario, Exec exec = Exec::parallel);
std::vector<std::vector<TimeSignal>> slice_frames(const Scenario& scenario, const std::vector<TimeSignal>& audio);
/// Frames laid end to end by hop (overlaps, if any, are summed).
std::vector<TimeSignal> join_frames(const Scenario& scenario, const std::vector<std::vector<TimeSignal>>& frames);

struct RunRecord {
  std::size_t frame = 0;
  double time_s = 0.0;
  Vec3 truth;
  Estimate estimate;
  double error_m = 0.0;
  std::size_t n_paths = 0;
  std::size_t n_peaks = 0;
  double ms_beamform = 0.0;
  double ms_trace = 0.0;
  double ms_localize = 0.0;
};

struct RunOptions {
  std::uint64_t seed = 1;
  Exec exec = Exec::parallel;
  /// Record wall-clock columns; off keeps traces byte-identical across runs.
  bool timing = false;
};

/// Runs the particle filter over pre-analyzed frames.
std::vector<RunRecord> run_localizer(const ScenarioSpec& spec, const std::vector<FrameAnalysis>& frames,
                                     const RunOptions& options);

/// Full pipeline: render (unless audio is given), analyze each frame, localize.
std::vector<RunRecord> run(const ScenarioSpec& spec, const RunOptions& options,
                           const std::vector<TimeSignal>* audio = nullptr);

void write_trace_csv(std::ostream& out, const std::vector<RunRecord>& records);

struct RunSummary {
  double mean_error_m = 0.0;
  double median_error_m = 0.0;
  double final_error_m = 0.0;
  std::size_t frames = 0;
  std::size_t stale_frames = 0;
  double ms_beamform = 0.0;
  double ms_trace = 0.0;
  double ms_localize = 0.0;
};
RunSummary summarize(const std::vector<RunRecord>& records);
void write_summary_json(std::ostream& out, const RunSummary& summary);

struct SweepSpec {
  std::string parameter;  // alpha, sigma_w or a_th
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<double> mean_error_m;        // per value, averaged over frames and seeds
  std::vector<double> mean_final_error_m;  // per value, final frame averaged over seeds
};

/// Sets one localizer parameter by name; throws for unknown names.
void set_localizer_parameter(LocalizerConfig& config, const std::string& name, double value);

SweepResult sweep(const ScenarioSpec& spec, const std::vector<FrameAnalysis>& frames, const SweepSpec& sweep,
                  Exec exec = Exec::parallel);
/// Table layout: one header row of parameter values, one row per statistic.
void write_sweep_csv(std::ostream& out, const SweepResult& result);

struct PairStat {
  int n = 0;
  int m = 0;
  CorrelationResult separation;
  CorrelationResult backprop;
};

struct AlignmentReport {
  std::size_t frame = 0;
  Vec3 point;
  std::vector<int> paths;  // paths passing within the radius of the point
  std::vector<PairStat> pairs;
  double mean_a_separation = 0.0;
  double mean_lag_separation = 0.0;  // mean |l_cc|, samples
  double mean_a_backprop = 0.0;
  double mean_lag_backprop = 0.0;
};

/// Correlation of separation signals versus back-propagated signals at `point`,
/// for the frame's paths passing within `radius` of it.
AlignmentReport analyze_alignment(const FrameAnalysis& frame, std::size_t frame_index, const Vec3& point,
                                  double radius);
void write_alignment_report(std::ostream& out, const AlignmentReport& report);

}  // namespace bpsl
