// Command-line front end: run, sweep, analyze and render scenarios.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bpsl/error.hpp"
#include "bpsl/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string scenario;
  std::uint64_t seed = 1;
  std::vector<std::string> overrides;
  std::string out = "out";
  bool oracle = false;
  bool serial = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--scenario", c.scenario, "scenario file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "particle filter seed");
  cmd->add_option("--set", c.overrides, "override section.key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--oracle-correlation", c.oracle, "correlate fully back-propagated signals per particle");
  cmd->add_flag("--serial", c.serial, "disable OpenMP kernels");
}

bpsl::ScenarioSpec load(const Common& c) {
  auto spec = bpsl::load_scenario(c.scenario, c.overrides);
  spec.localizer.oracle_correlation = c.oracle;
  return spec;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw bpsl::Error("cannot write " + (dir / name).string());
  return out;
}

std::vector<bpsl::FrameAnalysis> analyze_all(const bpsl::ScenarioSpec& spec, bpsl::Exec exec,
                                             const std::string& audio_path) {
  std::vector<std::vector<bpsl::TimeSignal>> mics;
  if (audio_path.empty()) {
    mics = bpsl::render_all(spec.scenario, exec);
  } else {
    mics = bpsl::slice_frames(spec.scenario, bpsl::load_raw_audio(audio_path));
  }
  std::vector<bpsl::FrameAnalysis> frames;
  for (const auto& m : mics) frames.push_back(bpsl::analyze_frame(spec, m, exec));
  return frames;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflection-aware sound source localization with back-propagation signals"};
  app.require_subcommand(1);

  Common run_opts;
  bool timing = false;
  std::string audio;
  auto* run = app.add_subcommand("run", "render (or load) frames, localize, write trace.csv and summary.json");
  add_common(run, run_opts);
  run->add_flag("--timing", timing, "fill the wall-clock columns of the trace");
  run->add_option("--audio", audio, "pre-rendered raw audio instead of the simulator")->check(CLI::ExistingFile);

  Common sweep_opts;
  std::string parameter;
  std::string values;
  int seeds = 5;
  auto* sw = app.add_subcommand("sweep", "mean error per parameter value, averaged over seeds");
  add_common(sw, sweep_opts);
  sw->add_option("--param", parameter, "alpha, sigma_w or a_th")->required();
  sw->add_option("--values", values, "comma-separated values")->required();
  sw->add_option("--seeds", seeds, "seeds per value (seed, seed+1, ...)");

  Common an_opts;
  std::vector<double> point;
  std::size_t frame = 0;
  double radius = -1.0;
  auto* an = app.add_subcommand("analyze", "pairwise alignment of separation vs back-propagated signals");
  add_common(an, an_opts);
  an->add_option("--point", point, "x y z (default: true source)")->expected(3);
  an->add_option("--frame", frame, "frame index");
  an->add_option("--radius", radius, "paths passing within this distance (default sigma_w)");

  Common render_opts;
  auto* render = app.add_subcommand("render", "dump simulated array audio (raw float32)");
  add_common(render, render_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto spec = load(run_opts);
      const auto exec = run_opts.serial ? bpsl::Exec::serial : bpsl::Exec::parallel;
      const auto frames = analyze_all(spec, exec, audio);
      bpsl::RunOptions o;
      o.seed = run_opts.seed;
      o.exec = exec;
      o.timing = timing;
      const auto records = bpsl::run_localizer(spec, frames, o);
      auto trace = open_out(run_opts.out, "trace.csv");
      bpsl::write_trace_csv(trace, records);
      auto summary = open_out(run_opts.out, "summary.json");
      bpsl::write_summary_json(summary, bpsl::summarize(records));
      bpsl::write_summary_json(std::cout, bpsl::summarize(records));
    } else if (*sw) {
      const auto spec = load(sweep_opts);
      const auto exec = sweep_opts.serial ? bpsl::Exec::serial : bpsl::Exec::parallel;
      const auto frames = analyze_all(spec, exec, {});
      bpsl::SweepSpec s;
      s.parameter = parameter;
      s.values = parse_list(values);
      for (int i = 0; i < seeds; ++i) s.seeds.push_back(sweep_opts.seed + static_cast<std::uint64_t>(i));
      const auto result = bpsl::sweep(spec, frames, s, exec);
      auto out = open_out(sweep_opts.out, "sweep_" + parameter + ".csv");
      bpsl::write_sweep_csv(out, result);
      bpsl::write_sweep_csv(std::cout, result);
    } else if (*an) {
      const auto spec = load(an_opts);
      const auto exec = an_opts.serial ? bpsl::Exec::serial : bpsl::Exec::parallel;
      if (frame >= spec.scenario.frame_count()) throw bpsl::Error("frame index outside the scenario");
      const auto analysis = bpsl::analyze_frame(spec, bpsl::render_frame(spec.scenario, frame, exec), exec);
      const bpsl::Vec3 at = point.empty() ? spec.scenario.source_position(frame) : bpsl::Vec3{point[0], point[1], point[2]};
      const auto report =
          bpsl::analyze_alignment(analysis, frame, at, radius > 0.0 ? radius : spec.localizer.sigma_w);
      auto out = open_out(an_opts.out, "alignment.txt");
      bpsl::write_alignment_report(out, report);
      bpsl::write_alignment_report(std::cout, report);
    } else if (*render) {
      const auto spec = load(render_opts);
      const auto exec = render_opts.serial ? bpsl::Exec::serial : bpsl::Exec::parallel;
      const auto audio_out = bpsl::join_frames(spec.scenario, bpsl::render_all(spec.scenario, exec));
      fs::create_directories(render_opts.out);
      bpsl::save_raw_audio(fs::path(render_opts.out) / "audio.raw", audio_out);
      std::cout << "wrote " << (fs::path(render_opts.out) / "audio.raw").string() << " (" << audio_out.size()
                << " channels, " << audio_out.front().size() << " samples)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "bpsl: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
