// Serial reference versus OpenMP kernel for each data-parallel stage.

#include <benchmark/benchmark.h>

#include <bpsl/beamform.hpp>
#include <bpsl/constants.hpp>
#include <bpsl/forward_sim.hpp>
#include <bpsl/localizer.hpp>
#include <bpsl/pipeline.hpp>
#include <bpsl/random.hpp>
#include <bpsl/raytrace.hpp>

#include <cmath>
#include <filesystem>

using namespace bpsl;

namespace {

Exec mode(const benchmark::State& state) { return state.range(0) ? Exec::parallel : Exec::serial; }

Vec3 random_unit(SplitMix64& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * kPi * rng.uniform();
  const double r = std::sqrt(1.0 - z * z);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

// One rendered and analyzed frame of the decoy scene, shared by the benchmarks.
struct Fixture {
  ScenarioSpec spec;
  std::vector<TimeSignal> mics;
  FrameAnalysis frame;
  ShCoefficients coeffs;

  Fixture() {
    spec = load_scenario(std::filesystem::path(BPSL_SCENARIO_DIR) / "decoy.ini");
    mics = render_frame(spec.scenario, 6);
    frame = analyze_frame(spec, mics);
    std::vector<Spectrum> spectra;
    for (const auto& m : mics) {
      Spectrum s = forward_dft(pad_to_end(m, spec.pad_length), spec.pad_length);
      s.frame_length = m.size();
      spectra.push_back(std::move(s));
    }
    SphericalFtOptions sft;
    sft.bin_range = band_bins(spec.beamform.band, spec.scenario.sample_rate, spec.pad_length);
    coeffs = spherical_ft(spectra, spec.scenario.array, sft);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_render_frame(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(render_frame(f.spec.scenario, 6, mode(state)));
}

void BM_mvdr_map(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(mvdr_map(f.coeffs, f.spec.beamform, mode(state)));
}

void BM_trace_all(benchmark::State& state) {
  const auto& f = fixture();
  SplitMix64 rng(7);
  std::vector<Vec3> dirs(2048);
  for (auto& d : dirs) d = random_unit(rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(trace_all(f.spec.scenario.mesh, f.spec.scenario.array.center, dirs, f.spec.trace,
                                       mode(state)));
}

void BM_intersect_all(benchmark::State& state) {
  SplitMix64 rng(8);
  std::vector<Triangle> tris;
  while (tris.size() < 10000) {
    const Vec3 c{10 * rng.uniform(), 10 * rng.uniform(), 10 * rng.uniform()};
    const Vec3 a = c + random_unit(rng) * 0.3;
    const Vec3 b = c + random_unit(rng) * 0.3;
    const Vec3 e = c + random_unit(rng) * 0.3;
    if (norm(cross(b - a, e - a)) > 1e-6) tris.push_back(Triangle::make(a, b, e, 0));
  }
  const Mesh mesh(std::move(tris));
  std::vector<Vec3> origins(20000);
  std::vector<Vec3> dirs(origins.size());
  for (std::size_t i = 0; i < origins.size(); ++i) {
    origins[i] = {10 * rng.uniform(), 10 * rng.uniform(), 10 * rng.uniform()};
    dirs[i] = random_unit(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(intersect_all(mesh, origins, dirs, false, mode(state)));
}

void BM_particle_score(benchmark::State& state) {
  const auto& f = fixture();
  ParticleFilter pf(f.spec.localizer, f.spec.scenario.mesh.bounds());
  std::vector<Vec3> positions;
  for (const auto& p : pf.particles()) positions.push_back(p.position);
  for (auto _ : state) benchmark::DoNotOptimize(pf.score(positions, f.frame.observation, mode(state)));
}

}  // namespace

// Argument 0 is the serial reference, 1 the OpenMP kernel.
BENCHMARK(BM_render_frame)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mvdr_map)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_trace_all)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_intersect_all)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_particle_score)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
