#include "bpsl/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"
#include "bpsl/random.hpp"

namespace bpsl {

namespace {

constexpr int kOverrideLine = -1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream ss(s);
  std::vector<std::string> out;
  for (std::string t; ss >> t;) out.push_back(t);
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

// Interprets entries of a ConfigTree, reporting the offending line on failure.
class Reader {
 public:
  explicit Reader(const ConfigTree& tree) : tree_(tree) {}

  [[noreturn]] void fail(const ConfigTree::Entry& e, const std::string& what) const {
    if (e.line == kOverrideLine) throw ParseError(tree_.source() + " (override)", 0, what);
    throw ParseError(tree_.source(), e.line, what);
  }

  std::vector<double> numbers(const std::string& section, const std::string& key, const ConfigTree::Entry& e,
                              std::size_t count) const {
    std::vector<double> out;
    for (const auto& t : tokens(e.value)) {
      try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        out.push_back(v);
      } catch (const std::exception&) {
        fail(e, "[" + section + "] " + key + ": '" + t + "' is not a number");
      }
    }
    if (count != 0 && out.size() != count)
      fail(e, "[" + section + "] " + key + ": expected " + std::to_string(count) + " numbers");
    return out;
  }

  double number(const std::string& section, const std::string& key, double fallback) const {
    const auto* e = tree_.find(section, key);
    return e ? numbers(section, key, *e, 1)[0] : fallback;
  }

  double positive(const std::string& section, const std::string& key, double fallback) const {
    const double v = number(section, key, fallback);
    if (!(v > 0.0)) fail(*tree_.find(section, key), "[" + section + "] " + key + " must be positive");
    return v;
  }

  std::int64_t integer(const std::string& section, const std::string& key, std::int64_t fallback) const {
    const auto* e = tree_.find(section, key);
    if (!e) return fallback;
    const double v = numbers(section, key, *e, 1)[0];
    if (v != std::floor(v) || std::abs(v) > 9e15) fail(*e, "[" + section + "] " + key + " must be an integer");
    return static_cast<std::int64_t>(v);
  }

  std::uint64_t seed(const std::string& section, const std::string& key, std::uint64_t fallback) const {
    const auto* e = tree_.find(section, key);
    if (!e) return fallback;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(e->value, &used);
      if (used != e->value.size()) throw std::invalid_argument(e->value);
      return v;
    } catch (const std::exception&) {
      fail(*e, "[" + section + "] " + key + " must be an unsigned integer");
    }
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    const auto* e = tree_.find(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "on") return true;
    if (e->value == "false" || e->value == "0" || e->value == "off") return false;
    fail(*e, "[" + section + "] " + key + " must be true or false");
  }

  Vec3 vec3(const std::string& section, const std::string& key, const ConfigTree::Entry& e) const {
    const auto v = numbers(section, key, e, 3);
    return {v[0], v[1], v[2]};
  }

  void only_keys(const std::string& section, const std::set<std::string>& allowed) const {
    for (const auto& [key, e] : tree_.entries(section)) {
      if (!allowed.count(key) && !(section == "world" && key.rfind("obstacle", 0) == 0))
        fail(e, "unknown key '" + key + "' in [" + section + "]");
    }
  }

 private:
  const ConfigTree& tree_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Scenario files

ConfigTree ConfigTree::parse(std::istream& in, const std::string& source_name) {
  ConfigTree tree;
  tree.source_ = source_name;
  std::string section;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(source_name, line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      tree.sections_[section];
      continue;
    }
    if (section.empty()) throw ParseError(source_name, line_no, "entry outside of any section");
    std::string key;
    std::string value;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      key = trim(line.substr(0, eq));
      value = trim(line.substr(eq + 1));
    } else if (section == "materials") {
      const auto t = tokens(line);
      if (t.size() < 2 || t[0] != "material")
        throw ParseError(source_name, line_no, "expected 'material <id> <reflectivity per band>'");
      key = t[0] + " " + t[1];
      for (std::size_t i = 2; i < t.size(); ++i) value += (i > 2 ? " " : "") + t[i];
    } else {
      throw ParseError(source_name, line_no, "expected 'key = value'");
    }
    if (key.empty()) throw ParseError(source_name, line_no, "empty key");
    auto& entries = tree.sections_[section];
    if (entries.count(key)) throw ParseError(source_name, line_no, "duplicate key '" + key + "'");
    entries[key] = {value, line_no};
  }
  return tree;
}

void ConfigTree::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = {value, kOverrideLine};
}

void ConfigTree::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("override '" + assignment + "' is not of the form section.key=value");
  const std::string path = trim(assignment.substr(0, eq));
  const auto dot = path.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw Error("override '" + assignment + "' is not of the form section.key=value");
  set(path.substr(0, dot), path.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

bool ConfigTree::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

const ConfigTree::Entry* ConfigTree::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto e = s->second.find(key);
  return e == s->second.end() ? nullptr : &e->second;
}

std::vector<std::string> ConfigTree::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, entries] : sections_) out.push_back(name);
  return out;
}

const std::map<std::string, ConfigTree::Entry>& ConfigTree::entries(const std::string& section) const {
  static const std::map<std::string, Entry> empty;
  auto s = sections_.find(section);
  return s == sections_.end() ? empty : s->second;
}

ScenarioSpec build_scenario(const ConfigTree& tree, const std::filesystem::path& base_dir) {
  const Reader r(tree);
  ScenarioSpec spec;
  Scenario& sc = spec.scenario;
  sc.name = std::filesystem::path(tree.source()).stem().string();

  for (const auto& name : tree.sections()) {
    static const std::set<std::string> known{"world", "materials", "array", "frames", "trace", "beamform", "localizer"};
    if (!known.count(name) && name.rfind("emitter.", 0) != 0) {
      const auto& entries = tree.entries(name);
      if (entries.empty()) throw ParseError(tree.source(), 0, "unknown section [" + name + "]");
      r.fail(entries.begin()->second, "unknown section [" + name + "]");
    }
  }

  // [materials]
  for (const auto& [key, e] : tree.entries("materials")) {
    if (key == "floor") continue;
    const auto t = tokens(key);
    if (t.size() != 2 || t[0] != "material") r.fail(e, "unknown key '" + key + "' in [materials]");
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(t[1], &used);
      if (used != t[1].size() || id < 0) throw std::invalid_argument(t[1]);
    } catch (const std::exception&) {
      r.fail(e, "material id '" + t[1] + "' is not a non-negative integer");
    }
    const auto v = r.numbers("materials", key, e, kBandCount);
    BandValues bands;
    std::copy(v.begin(), v.end(), bands.begin());
    try {
      sc.materials.set(id, bands);
    } catch (const Error& err) {
      r.fail(e, err.what());
    }
  }
  if (const auto* e = tree.find("materials", "floor")) {
    try {
      sc.materials.set_floor(r.numbers("materials", "floor", *e, 1)[0]);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& err) {
      r.fail(*e, err.what());
    }
  }

  // [world]
  r.only_keys("world", {"mesh", "room", "room_material"});
  std::vector<Triangle> tris;
  const auto* mesh_entry = tree.find("world", "mesh");
  const auto* room_entry = tree.find("world", "room");
  if (mesh_entry && room_entry) r.fail(*room_entry, "[world] takes either mesh or room, not both");
  auto require_material = [&](const ConfigTree::Entry& e, int id) {
    if (!sc.materials.contains(id)) r.fail(e, "missing material " + std::to_string(id));
  };
  if (mesh_entry) {
    try {
      const Mesh m = load_mesh(base_dir / mesh_entry->value);
      tris.assign(m.triangles().begin(), m.triangles().end());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& err) {
      r.fail(*mesh_entry, err.what());
    }
    for (const Triangle& t : tris) require_material(*mesh_entry, t.material_id);
  }
  if (room_entry) {
    const Vec3 size = r.vec3("world", "room", *room_entry);
    if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0)) r.fail(*room_entry, "room dimensions must be positive");
    const auto* mat_entry = tree.find("world", "room_material");
    const int mat = static_cast<int>(r.integer("world", "room_material", 0));
    require_material(mat_entry ? *mat_entry : *room_entry, mat);
    auto room = box_triangles({0, 0, 0}, size, mat, true);
    tris.insert(tris.end(), room.begin(), room.end());
  }
  for (const auto& [key, e] : tree.entries("world")) {
    if (key.rfind("obstacle", 0) != 0) continue;
    const auto v = r.numbers("world", key, e, 7);
    const Vec3 lo{v[0], v[1], v[2]};
    const Vec3 hi{v[3], v[4], v[5]};
    if (!(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z)) r.fail(e, "obstacle corners must satisfy lo < hi");
    if (v[6] != std::floor(v[6]) || v[6] < 0) r.fail(e, "obstacle material must be a non-negative integer");
    const int mat = static_cast<int>(v[6]);
    require_material(e, mat);
    auto box = box_triangles(lo, hi, mat, false);
    tris.insert(tris.end(), box.begin(), box.end());
  }
  sc.mesh = Mesh(std::move(tris));

  // [array]
  r.only_keys("array", {"radius", "center", "orientation", "layout", "order", "radial_limit"});
  spec.sh_order = static_cast<int>(r.integer("array", "order", kDefaultShOrder));
  if (spec.sh_order < 1 || spec.sh_order > 12) r.fail(*tree.find("array", "order"), "[array] order must be in 1..12");
  spec.radial_gain_limit = r.positive("array", "radial_limit", kDefaultRadialGainLimit);
  const double radius = r.positive("array", "radius", kDefaultArrayRadius);
  if (const auto* e = tree.find("array", "layout")) {
    try {
      sc.array = ArrayGeometry::load(base_dir / e->value, spec.sh_order);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& err) {
      r.fail(*e, err.what());
    }
    if (tree.has("array", "radius")) sc.array.radius = radius;
  } else {
    sc.array = ArrayGeometry::default_32(radius);
  }
  if (const auto* e = tree.find("array", "center")) sc.array.center = r.vec3("array", "center", *e);
  if (const auto* e = tree.find("array", "orientation")) {
    const Vec3 ypr = r.vec3("array", "orientation", *e) * (kPi / 180.0);
    sc.array.set_yaw_pitch_roll(ypr.x, ypr.y, ypr.z);
  }

  // [frames]
  r.only_keys("frames", {"hop", "length", "pad", "dur_s", "rate", "snr_db", "noise_seed", "render_order"});
  sc.frame_length = static_cast<std::size_t>(r.integer("frames", "length", 3840));
  sc.frame_hop = static_cast<std::size_t>(r.integer("frames", "hop", static_cast<std::int64_t>(sc.frame_length)));
  spec.pad_length = static_cast<std::size_t>(r.integer("frames", "pad", 8192));
  sc.duration_s = r.positive("frames", "dur_s", sc.duration_s);
  sc.sample_rate = r.positive("frames", "rate", kDefaultSampleRate);
  if (const auto* e = tree.find("frames", "snr_db")) {
    sc.snr_db = (e->value == "inf") ? std::numeric_limits<double>::infinity() : r.numbers("frames", "snr_db", *e, 1)[0];
  }
  sc.noise_seed = r.seed("frames", "noise_seed", 1);
  sc.max_order = static_cast<int>(r.integer("frames", "render_order", 3));
  if (const auto* e = tree.find("frames", "pad"); e && spec.pad_length < sc.frame_length)
    r.fail(*e, "[frames] pad must be at least the frame length");
  if (const auto* e = tree.find("frames", "hop"); e && sc.frame_hop == 0) r.fail(*e, "[frames] hop must be positive");

  // [emitter.*]
  for (const auto& name : tree.sections()) {
    if (name.rfind("emitter.", 0) != 0) continue;
    r.only_keys(name, {"kind", "signal", "waypoints", "position", "amplitude", "period", "burst", "start", "seed"});
    const auto& entries = tree.entries(name);
    if (entries.empty()) continue;
    const auto& any = entries.begin()->second;
    Emitter em;
    if (const auto* e = tree.find(name, "kind")) {
      if (e->value == "source") em.kind = EmitterKind::source;
      else if (e->value == "noise") em.kind = EmitterKind::noise;
      else r.fail(*e, "emitter kind must be source or noise");
    }
    em.signal.kind = em.kind == EmitterKind::noise ? SignalKind::noise : SignalKind::clap;
    if (const auto* e = tree.find(name, "signal")) {
      if (e->value == "clap") em.signal.kind = SignalKind::clap;
      else if (e->value == "noise") em.signal.kind = SignalKind::noise;
      else if (e->value == "impulse") em.signal.kind = SignalKind::impulse;
      else if (e->value == "silence") em.signal.kind = SignalKind::silence;
      else r.fail(*e, "signal must be clap, noise, impulse or silence");
    }
    em.signal.amplitude = r.number(name, "amplitude", 1.0);
    em.signal.period_s = r.positive(name, "period", em.signal.period_s);
    em.signal.burst_s = r.positive(name, "burst", em.signal.burst_s);
    em.signal.start_s = r.number(name, "start", 0.0);
    em.signal.seed = r.seed(name, "seed", hash_key({name.size(), std::hash<std::string>{}(name)}) & 0xFFFFFFFFull);
    const auto* wp = tree.find(name, "waypoints");
    const auto* pos = tree.find(name, "position");
    if (wp && pos) r.fail(*pos, "emitter takes either waypoints or position, not both");
    if (pos) {
      em.trajectory.waypoints = {{0.0, r.vec3(name, "position", *pos)}};
    } else if (wp) {
      std::istringstream ss(wp->value);
      for (std::string item; std::getline(ss, item, ';');) {
        if (trim(item).empty()) continue;
        ConfigTree::Entry one{item, wp->line};
        const auto v = r.numbers(name, "waypoints", one, 4);
        em.trajectory.waypoints.push_back({v[0], {v[1], v[2], v[3]}});
      }
      try {
        em.trajectory.validate();
      } catch (const Error& err) {
        r.fail(*wp, err.what());
      }
    } else {
      r.fail(any, "[" + name + "] needs waypoints or position");
    }
    sc.emitters.push_back(std::move(em));
  }

  // [trace]
  r.only_keys("trace", {"max_order", "max_length", "epsilon"});
  spec.trace.max_order = static_cast<int>(r.integer("trace", "max_order", spec.trace.max_order));
  spec.trace.max_total_length = r.positive("trace", "max_length", spec.trace.max_total_length);
  spec.trace.hit_epsilon = r.positive("trace", "epsilon", spec.trace.hit_epsilon);

  // [beamform]
  r.only_keys("beamform", {"resolution", "band_low", "band_high", "loading", "max_peaks", "floor_ratio", "refine"});
  spec.beamform.resolution_deg = r.positive("beamform", "resolution", spec.beamform.resolution_deg);
  spec.beamform.band.low = r.number("beamform", "band_low", spec.beamform.band.low);
  spec.beamform.band.high = r.number("beamform", "band_high", spec.beamform.band.high);
  spec.beamform.diagonal_loading = r.positive("beamform", "loading", spec.beamform.diagonal_loading);
  spec.beamform.max_peaks = static_cast<std::size_t>(r.integer("beamform", "max_peaks", 10));
  spec.beamform.floor_ratio = r.number("beamform", "floor_ratio", spec.beamform.floor_ratio);
  spec.beamform.refine_peaks = r.flag("beamform", "refine", spec.beamform.refine_peaks);

  // [localizer]
  r.only_keys("localizer", {"alpha", "sigma_w", "a_th", "particles", "seed", "motion_sigma", "resample"});
  LocalizerConfig& lc = spec.localizer;
  lc.alpha = r.number("localizer", "alpha", lc.alpha);
  lc.sigma_w = r.number("localizer", "sigma_w", lc.sigma_w);
  lc.a_th = r.number("localizer", "a_th", lc.a_th);
  lc.particle_count = static_cast<std::size_t>(r.integer("localizer", "particles", 1000));
  lc.seed = r.seed("localizer", "seed", 1);
  lc.motion_sigma = r.number("localizer", "motion_sigma", lc.motion_sigma);
  lc.resample_threshold = r.number("localizer", "resample", lc.resample_threshold);

  lc.validate();
  spec.trace.validate();
  sc.validate();
  if (spec.trace.max_total_length * sc.sample_rate / kSpeedOfSound >
      static_cast<double>(spec.pad_length - sc.frame_length))
    throw Error("scenario: trace max_length exceeds what the padding headroom can back-propagate");
  return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario " + path.string());
  ConfigTree tree = ConfigTree::parse(in, path.string());
  for (const auto& o : overrides) tree.apply_override(o);
  return build_scenario(tree, path.parent_path());
}

// ---------------------------------------------------------------------------
// Frames

std::vector<std::vector<TimeSignal>> render_all(const Scenario& scenario, Exec exec) {
  scenario.validate();
  const std::size_t count = scenario.frame_count();
  std::vector<std::vector<TimeSignal>> frames(count);
  const auto n = static_cast<std::int64_t>(count);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t j = 0; j < n; ++j)
      frames[static_cast<std::size_t>(j)] = render_frame(scenario, static_cast<std::size_t>(j), Exec::serial);
  } else {
    for (std::int64_t j = 0; j < n; ++j)
      frames[static_cast<std::size_t>(j)] = render_frame(scenario, static_cast<std::size_t>(j), Exec::serial);
  }
  return frames;
}

std::vector<std::vector<TimeSignal>> slice_frames(const Scenario& scenario, const std::vector<TimeSignal>& audio) {
  if (audio.size() != scenario.array.size()) throw Error("audio channel count does not match the array");
  for (const auto& ch : audio) {
    if (ch.sample_rate != scenario.sample_rate) throw Error("audio sample rate does not match the scenario");
    if (ch.size() != audio.front().size()) throw Error("audio channels differ in length");
  }
  const std::size_t total = audio.front().size();
  std::vector<std::vector<TimeSignal>> frames;
  for (std::size_t start = 0; start + scenario.frame_length <= total && frames.size() < scenario.frame_count();
       start += scenario.frame_hop) {
    std::vector<TimeSignal> f;
    for (const auto& ch : audio) {
      f.push_back({std::vector<double>(ch.samples.begin() + static_cast<long>(start),
                                       ch.samples.begin() + static_cast<long>(start + scenario.frame_length)),
                   ch.sample_rate});
    }
    frames.push_back(std::move(f));
  }
  if (frames.size() < scenario.frame_count()) throw Error("audio is shorter than the scenario duration");
  return frames;
}

std::vector<TimeSignal> join_frames(const Scenario& scenario, const std::vector<std::vector<TimeSignal>>& frames) {
  if (frames.empty()) throw Error("join_frames: no frames");
  const std::size_t total = (frames.size() - 1) * scenario.frame_hop + scenario.frame_length;
  std::vector<TimeSignal> out(frames.front().size(), TimeSignal{std::vector<double>(total, 0.0), scenario.sample_rate});
  for (std::size_t j = 0; j < frames.size(); ++j) {
    for (std::size_t q = 0; q < out.size(); ++q) {
      for (std::size_t i = 0; i < scenario.frame_length; ++i)
        out[q].samples[j * scenario.frame_hop + i] += frames[j][q].samples[i];
    }
  }
  return out;
}

FrameAnalysis analyze_frame(const ScenarioSpec& spec, const std::vector<TimeSignal>& mics, Exec exec) {
  const Scenario& sc = spec.scenario;
  FrameAnalysis out;
  out.observation.materials = sc.materials;
  auto t0 = std::chrono::steady_clock::now();

  std::vector<Spectrum> spectra;
  spectra.reserve(mics.size());
  for (const TimeSignal& m : mics) {
    // Payload at the end of the padded frame leaves headroom for the backward advance.
    Spectrum s = forward_dft(pad_to_end(m, spec.pad_length), spec.pad_length);
    s.frame_length = m.size();
    spectra.push_back(std::move(s));
  }
  SphericalFtOptions sft;
  sft.order = spec.sh_order;
  sft.radial_gain_limit = spec.radial_gain_limit;
  sft.bin_range = band_bins(spec.beamform.band, sc.sample_rate, spec.pad_length);
  const ShCoefficients coeffs = spherical_ft(spectra, sc.array, sft, exec);

  double energy = 0.0;
  for (const Spectrum& s : spectra) energy += s.energy();
  std::vector<DirectionEstimate> peaks;
  if (energy > 0.0) {
    const BeamMap map = mvdr_map(coeffs, spec.beamform, exec);
    peaks = find_peaks(map, spec.beamform.max_peaks, spec.beamform.floor_ratio);
    if (spec.beamform.refine_peaks) refine_peaks(map, peaks);
  }
  std::vector<Vec3> directions;
  for (const auto& p : peaks) {
    out.observation.separations.push_back(extract_separation(coeffs, p.direction, spec.beamform.band).spectrum);
    directions.push_back(normalized(sc.array.to_world(p.direction)));
  }
  out.peak_count = peaks.size();
  out.ms_beamform = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  out.observation.paths = trace_all(sc.mesh, sc.array.center, directions, spec.trace, exec);
  out.ms_trace = elapsed_ms(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Runs

std::vector<RunRecord> run_localizer(const ScenarioSpec& spec, const std::vector<FrameAnalysis>& frames,
                                     const RunOptions& options) {
  if (spec.scenario.mesh.empty()) throw Error("run: the scenario needs a mesh to bound the particles");
  LocalizerConfig config = spec.localizer;
  config.seed = options.seed;
  ParticleFilter filter(config, spec.scenario.mesh.bounds());
  std::vector<RunRecord> records;
  records.reserve(frames.size());
  for (std::size_t j = 0; j < frames.size(); ++j) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.estimate = filter.step(frames[j].observation, options.exec);
    rec.ms_localize = options.timing ? elapsed_ms(t0) : 0.0;
    rec.frame = j;
    rec.time_s = spec.scenario.frame_time(j);
    rec.truth = spec.scenario.source_position(j);
    rec.error_m = distance(rec.truth, rec.estimate.position);
    rec.n_paths = frames[j].observation.paths.size();
    rec.n_peaks = frames[j].peak_count;
    if (options.timing) {
      rec.ms_beamform = frames[j].ms_beamform;
      rec.ms_trace = frames[j].ms_trace;
    }
    records.push_back(rec);
  }
  return records;
}

std::vector<RunRecord> run(const ScenarioSpec& spec, const RunOptions& options, const std::vector<TimeSignal>* audio) {
  const auto mics = audio ? slice_frames(spec.scenario, *audio) : render_all(spec.scenario, options.exec);
  std::vector<FrameAnalysis> frames;
  frames.reserve(mics.size());
  for (const auto& m : mics) frames.push_back(analyze_frame(spec, m, options.exec));
  return run_localizer(spec, frames, options);
}

void write_trace_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << "frame,time_s,gt_x,gt_y,gt_z,est_x,est_y,est_z,err_m,n_paths,n_peaks,ms_beamform,ms_trace,ms_localize\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed;
  for (const RunRecord& r : records) {
    out << r.frame << ',' << std::setprecision(4) << r.time_s << ',' << std::setprecision(6) << r.truth.x << ','
        << r.truth.y << ',' << r.truth.z << ',' << r.estimate.position.x << ',' << r.estimate.position.y << ','
        << r.estimate.position.z << ',' << r.error_m << ',' << r.n_paths << ',' << r.n_peaks << ','
        << std::setprecision(3) << r.ms_beamform << ',' << r.ms_trace << ',' << r.ms_localize << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

RunSummary summarize(const std::vector<RunRecord>& records) {
  RunSummary s;
  s.frames = records.size();
  if (records.empty()) return s;
  std::vector<double> errors;
  for (const RunRecord& r : records) {
    errors.push_back(r.error_m);
    s.mean_error_m += r.error_m;
    s.stale_frames += r.estimate.stale ? 1 : 0;
    s.ms_beamform += r.ms_beamform;
    s.ms_trace += r.ms_trace;
    s.ms_localize += r.ms_localize;
  }
  s.mean_error_m /= static_cast<double>(records.size());
  std::sort(errors.begin(), errors.end());
  const std::size_t mid = errors.size() / 2;
  s.median_error_m = errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
  s.final_error_m = records.back().error_m;
  return s;
}

void write_summary_json(std::ostream& out, const RunSummary& s) {
  nlohmann::ordered_json j;
  j["frames"] = s.frames;
  j["stale_frames"] = s.stale_frames;
  j["mean_error_m"] = s.mean_error_m;
  j["median_error_m"] = s.median_error_m;
  j["final_error_m"] = s.final_error_m;
  j["ms_beamform_total"] = s.ms_beamform;
  j["ms_trace_total"] = s.ms_trace;
  j["ms_localize_total"] = s.ms_localize;
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sweeps

void set_localizer_parameter(LocalizerConfig& config, const std::string& name, double value) {
  if (name == "alpha") config.alpha = value;
  else if (name == "sigma_w") config.sigma_w = value;
  else if (name == "a_th") config.a_th = value;
  else throw Error("unknown sweep parameter '" + name + "' (expected alpha, sigma_w or a_th)");
  config.validate();
}

SweepResult sweep(const ScenarioSpec& spec, const std::vector<FrameAnalysis>& frames, const SweepSpec& sweep_spec,
                  Exec exec) {
  if (sweep_spec.values.empty() || sweep_spec.seeds.empty()) throw Error("sweep: needs values and seeds");
  std::vector<ScenarioSpec> variants(sweep_spec.values.size(), spec);
  for (std::size_t v = 0; v < variants.size(); ++v)
    set_localizer_parameter(variants[v].localizer, sweep_spec.parameter, sweep_spec.values[v]);

  const std::size_t seeds = sweep_spec.seeds.size();
  const auto jobs = static_cast<std::int64_t>(variants.size() * seeds);
  std::vector<double> mean(static_cast<std::size_t>(jobs));
  std::vector<double> final(static_cast<std::size_t>(jobs));
  auto job = [&](std::size_t i) {
    RunOptions o;
    o.seed = sweep_spec.seeds[i % seeds];
    o.exec = Exec::serial;
    const auto s = summarize(run_localizer(variants[i / seeds], frames, o));
    mean[i] = s.mean_error_m;
    final[i] = s.final_error_m;
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < jobs; ++i) job(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < jobs; ++i) job(static_cast<std::size_t>(i));
  }

  SweepResult result;
  result.spec = sweep_spec;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    double m = 0.0;
    double f = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      m += mean[v * seeds + s];
      f += final[v * seeds + s];
    }
    result.mean_error_m.push_back(m / static_cast<double>(seeds));
    result.mean_final_error_m.push_back(f / static_cast<double>(seeds));
  }
  return result;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << result.spec.parameter;
  for (double v : result.spec.values) out << ',' << v;
  out << '\n' << std::fixed << std::setprecision(4) << "mean_error_m";
  for (double e : result.mean_error_m) out << ',' << e;
  out << "\nmean_final_error_m";
  for (double e : result.mean_final_error_m) out << ',' << e;
  out << '\n';
  out.flags(flags);
  out.precision(precision);
}

// ---------------------------------------------------------------------------
// Alignment analysis

AlignmentReport analyze_alignment(const FrameAnalysis& frame, std::size_t frame_index, const Vec3& point,
                                  double radius) {
  const FrameObservation& obs = frame.observation;
  obs.validate();
  AlignmentReport report;
  report.frame = frame_index;
  report.point = point;
  std::vector<PathPoint> feet;
  for (std::size_t n = 0; n < obs.paths.size(); ++n) {
    const PathPoint foot = perpendicular_foot(obs.paths[n], point, static_cast<int>(n));
    if (foot.distance <= radius && obs.separations[n].energy() > 0.0) {
      report.paths.push_back(static_cast<int>(n));
      feet.push_back(foot);
    }
  }
  std::vector<TimeSignal> raw;
  std::vector<TimeSignal> back;
  for (std::size_t i = 0; i < feet.size(); ++i) {
    const auto n = static_cast<std::size_t>(report.paths[i]);
    raw.push_back(inverse_dft(obs.separations[n]));
    back.push_back(back_propagate(obs.separations[n], obs.paths[n], feet[i], obs.materials).signal);
  }
  for (std::size_t i = 0; i < feet.size(); ++i) {
    for (std::size_t k = i + 1; k < feet.size(); ++k) {
      PairStat p;
      p.n = report.paths[i];
      p.m = report.paths[k];
      p.separation = xcorr_peak_circular(raw[i], raw[k]);
      p.backprop = xcorr_peak_circular(back[i], back[k]);
      report.pairs.push_back(p);
    }
  }
  if (!report.pairs.empty()) {
    for (const PairStat& p : report.pairs) {
      report.mean_a_separation += p.separation.a_cc;
      report.mean_lag_separation += static_cast<double>(std::labs(p.separation.l_cc));
      report.mean_a_backprop += p.backprop.a_cc;
      report.mean_lag_backprop += static_cast<double>(std::labs(p.backprop.l_cc));
    }
    const double n = static_cast<double>(report.pairs.size());
    report.mean_a_separation /= n;
    report.mean_lag_separation /= n;
    report.mean_a_backprop /= n;
    report.mean_lag_backprop /= n;
  }
  return report;
}

void write_alignment_report(std::ostream& out, const AlignmentReport& report) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed << std::setprecision(4);
  out << "frame " << report.frame << "\npoint " << report.point.x << ' ' << report.point.y << ' ' << report.point.z
      << "\npaths_near_point " << report.paths.size() << '\n';
  if (report.pairs.empty()) {
    out << "notice: fewer than two paths pass near the point; no pair statistics\n";
  } else {
    out << "pair,sep_a_cc,sep_l_cc,bp_a_cc,bp_l_cc\n";
    for (const PairStat& p : report.pairs) {
      out << p.n << '-' << p.m << ',' << p.separation.a_cc << ',' << p.separation.l_cc << ',' << p.backprop.a_cc
          << ',' << p.backprop.l_cc << '\n';
    }
    out << "separation mean_a_cc " << report.mean_a_separation << " mean_abs_l_cc " << report.mean_lag_separation
        << "\nbackprop mean_a_cc " << report.mean_a_backprop << " mean_abs_l_cc " << report.mean_lag_backprop << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace bpsl
