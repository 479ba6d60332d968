#include <doctest.h>

#include <bpsl/beamform.hpp>
#include <bpsl/constants.hpp>
#include <bpsl/error.hpp>
#include <bpsl/sphharm.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace bpsl;

namespace {

constexpr double kDegree = kPi / 180.0;

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0));
}

// Plane-wave-density coefficients conj(Y(d)) * S[f] for each source, plus white noise.
ShCoefficients synthetic_field(const std::vector<std::pair<Vec3, double>>& sources, double noise, std::uint64_t seed) {
  ShCoefficients c;
  c.order = 4;
  c.padded_length = 8192;
  c.frame_length = 3840;
  c.bins = 4097;
  c.data.assign(c.bins * c.width(), 0.0);
  SplitMix64 rng(seed);
  for (const auto& [d, amp] : sources) {
    const auto y = sh_basis(d, 4);
    for (std::size_t f = 0; f < c.bins; ++f) {
      const cdouble s = amp * cdouble(rng.normal(), rng.normal());
      for (std::size_t i = 0; i < y.size(); ++i) c.bin(f)[i] += std::conj(y[i]) * s;
    }
  }
  for (auto& v : c.data) v += noise * cdouble(rng.normal(), rng.normal());
  return c;
}

}  // namespace

TEST_CASE("analysis band bins") {
  const auto [first, last] = band_bins({}, 48000, 8192);
  CHECK(first == 342);
  CHECK(last == 1365);
  const auto [a, b] = band_bins({0, 24000}, 48000, 8192);
  CHECK(a == 0);
  CHECK(b == 4096);
  CHECK_THROWS_AS(band_bins({5000, 4000}, 48000, 8192), Error);
  CHECK_THROWS_AS(band_bins({2000.1, 2000.2}, 48000, 8192), Error);
}

TEST_CASE("beam map grid shape") {
  const BeamMap m = BeamMap::make(5.0);
  CHECK(m.rows == 37);
  CHECK(m.cols == 72);
  CHECK(m.direction(0, 17) == Vec3{0, 0, 1});
  CHECK(m.direction(36, 3) == Vec3{0, 0, -1});
  CHECK(distance(m.direction(18, 0), Vec3{1, 0, 0}) < 1e-12);
  CHECK(distance(m.direction(18, 18), Vec3{0, 1, 0}) < 1e-12);
  CHECK_THROWS_AS(BeamMap::make(7.0), Error);
}

TEST_CASE("steering vector is the conjugated harmonic basis") {
  const Vec3 d = normalized(Vec3{1, 2, -0.5});
  const auto v = steering_vector(d, 4);
  const auto y = sh_basis(d, 4);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == std::conj(y[i]));
}

TEST_CASE("MVDR map peaks at a single plane wave") {
  SplitMix64 rng(51);
  for (int t = 0; t < 10; ++t) {
    const Vec3 d = bpsl::test::random_unit(rng);
    const auto coeffs = synthetic_field({{d, 1.0}}, 0.05, 100 + t);
    const BeamMap map = mvdr_map(coeffs);
    const auto peaks = find_peaks(map, 10, 0.3);
    REQUIRE_FALSE(peaks.empty());
    CHECK(angle_between(peaks.front().direction, d) <= 7.1 * kDegree / 2 + 1e-9);
    // Parallel and serial maps agree.
    const BeamMap serial = mvdr_map(coeffs, {}, Exec::serial);
    for (std::size_t i = 0; i < map.energy.size(); i += 97) CHECK(serial.energy[i] == doctest::Approx(map.energy[i]));
  }
}

TEST_CASE("MVDR separates two plane waves") {
  const Vec3 a = direction_from_angles(60 * kDegree, 30 * kDegree);
  const Vec3 b = direction_from_angles(110 * kDegree, 200 * kDegree);
  const auto coeffs = synthetic_field({{a, 1.0}, {b, 0.8}}, 0.02, 7);
  const auto peaks = find_peaks(mvdr_map(coeffs), 10, 0.3);
  REQUIRE(peaks.size() >= 2);
  CHECK(angle_between(peaks[0].direction, a) < 4 * kDegree);
  CHECK(angle_between(peaks[1].direction, b) < 4 * kDegree);
  CHECK(peaks[0].energy >= peaks[1].energy);
}

TEST_CASE("MVDR on a silent frame is an error") {
  const auto coeffs = synthetic_field({}, 0.0, 1);
  CHECK_THROWS_AS(mvdr_map(coeffs), Error);
}

TEST_CASE("peak finding: strict maxima, azimuth wrap, poles, floor and cap") {
  BeamMap m = BeamMap::make(30.0);  // 7 x 12
  for (auto& e : m.energy) e = 1.0;
  m.at(3, 0) = 10.0;   // neighbours wrap to column 11
  m.at(3, 11) = 9.0;   // not a maximum: touches column 0
  m.at(2, 5) = 5.0;
  m.at(0, 0) = 8.0;    // pole row: single cell
  m.at(6, 0) = 2.0;    // below the floor ratio 0.3 * 10
  m.at(4, 8) = 2.0;
  auto peaks = find_peaks(m, 10, 0.3);
  REQUIRE(peaks.size() == 3);
  CHECK(peaks[0].row == 3);
  CHECK(peaks[0].col == 0);
  CHECK(peaks[1].row == 0);
  CHECK(peaks[2].row == 2);
  CHECK(peaks[2].col == 5);
  CHECK(find_peaks(m, 2, 0.3).size() == 2);
  CHECK(find_peaks(m, 10, 0.1).size() == 5);

  // A plateau has no strict maximum.
  BeamMap flat = BeamMap::make(30.0);
  for (auto& e : flat.energy) e = 1.0;
  CHECK(find_peaks(flat, 10, 0.3).empty());
}

TEST_CASE("peak refinement finds the vertex of a Gaussian lobe") {
  BeamMap m = BeamMap::make(5.0);
  const double el0 = 62.0 * kDegree, az0 = 141.5 * kDegree, w = 9.0 * kDegree;
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double de = m.elevation(r) - el0, da = m.azimuth(c) - az0;
      m.at(r, c) = std::exp(-(de * de + da * da) / (2 * w * w));
    }
  auto peaks = find_peaks(m, 1, 0.3);
  REQUIRE(peaks.size() == 1);
  refine_peaks(m, peaks);
  CHECK(angle_between(peaks[0].direction, direction_from_angles(el0, az0)) < 1e-9);
}

TEST_CASE("separation from a single plane wave returns its spectrum inside the band") {
  const Vec3 d = normalized(Vec3{0.2, -0.7, 0.4});
  const auto coeffs = synthetic_field({{d, 1.0}}, 0.0, 3);
  const auto y = sh_basis(d, 4);
  const SeparationSignal s = extract_separation(coeffs, d);
  const auto [first, last] = band_bins({}, 48000, 8192);
  for (std::size_t f = 0; f < s.spectrum.size(); f += 13) {
    // Recover S[f] from the first coefficient, conj(Y_00) S.
    const cdouble expected = coeffs.bin(f)[0] / std::conj(y[0]);
    if (f >= first && f <= last)
      CHECK(std::abs(s.spectrum.bins[f] - expected) < 1e-9 * std::abs(expected) + 1e-12);
    else
      CHECK(s.spectrum.bins[f] == cdouble(0.0));
  }
  CHECK(s.signal.size() == 8192);
  CHECK_THROWS_AS(extract_separation(coeffs, {1, 1, 0}), Error);
}

TEST_CASE("beam map CSV") {
  const BeamMap m = BeamMap::make(30.0);
  std::ostringstream out;
  write_beam_map_csv(out, m);
  const std::string s = out.str();
  CHECK(s.rfind("elevation_deg,azimuth_deg,energy\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 7 * 12);
}

namespace {

// Mic spectra of a far-field wave from `from` carrying spectrum s, free field, open sphere.
std::vector<Spectrum> plane_wave_mics(const ArrayGeometry& g, const Vec3& from, const Spectrum& s) {
  std::vector<Spectrum> out(g.size(), s);
  for (std::size_t q = 0; q < g.size(); ++q) {
    const double lead = g.radius * dot(from, g.directions[q]) / kSpeedOfSound;
    for (std::size_t f = 0; f < s.size(); ++f)
      out[q].bins[f] = s.bins[f] * std::polar(1.0, 2 * kPi * s.bin_frequency(f) * lead);
  }
  return out;
}

std::size_t argmax(const BeamMap& m) {
  return static_cast<std::size_t>(std::max_element(m.energy.begin(), m.energy.end()) - m.energy.begin());
}

double band_energy(const Spectrum& s) {
  double e = 0.0;
  for (auto b : s.bins) e += std::norm(b);
  return e;
}

}  // namespace

TEST_CASE("MVDR argmax is invariant to scaling the coefficients") {
  SplitMix64 rng(52);
  for (int t = 0; t < 5; ++t) {
    const Vec3 d = bpsl::test::random_unit(rng);
    auto coeffs = synthetic_field({{d, 1.0}, {bpsl::test::random_unit(rng), 0.5}}, 0.05, 200 + t);
    const std::size_t before = argmax(mvdr_map(coeffs));
    for (auto& v : coeffs.data) v *= 10.0;
    CHECK(argmax(mvdr_map(coeffs)) == before);
  }
}

TEST_CASE("MVDR map of isotropic noise is flat within 3 dB") {
  // Mean over noise realizations.
  BeamMap mean = BeamMap::make(5.0);
  const int runs = 10;
  for (int r = 0; r < runs; ++r) {
    const BeamMap m = mvdr_map(synthetic_field({}, 1.0, 300 + r));
    for (std::size_t i = 0; i < m.energy.size(); ++i) mean.energy[i] += m.energy[i] / runs;
  }
  const auto [lo, hi] = std::minmax_element(mean.energy.begin(), mean.energy.end());
  CHECK(10 * std::log10(*hi / *lo) < 3.0);
}

TEST_CASE("peak finding: a single bump and a weak second bump under the floor") {
  BeamMap m = BeamMap::make(5.0);
  auto bump = [&](double el0, double az0, double amp) {
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        const double de = m.elevation(r) - el0, da = m.azimuth(c) - az0;
        m.at(r, c) += amp * std::exp(-(de * de + da * da) / (2 * 0.01));
      }
  };
  bump(m.elevation(10), m.azimuth(20), 1.0);
  auto one = find_peaks(m, 10, 0.2);
  REQUIRE(one.size() == 1);
  CHECK(one[0].row == 10);
  CHECK(one[0].col == 20);
  bump(m.elevation(25), m.azimuth(50), 0.1);
  CHECK(find_peaks(m, 10, 0.2).size() == 1);
  CHECK(find_peaks(m, 10, 0.05).size() == 2);
  // Deterministic, and a subset of strict local maxima.
  const auto again = find_peaks(m, 10, 0.05);
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].row == find_peaks(m, 10, 0.05)[i].row);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const std::size_t r = again[i].row + dr;
        const std::size_t c = (again[i].col + m.cols + dc) % m.cols;
        if (r < m.rows) CHECK(m.at(r, c) < again[i].energy);
      }
  }
}

TEST_CASE("separation is linear and silent coefficients give a silent signal") {
  const Vec3 d = normalized(Vec3{-0.3, 0.5, 0.8});
  auto x = synthetic_field({{d, 1.0}}, 0.1, 11);
  auto z = synthetic_field({{normalized(Vec3{1, 0, 0}), 1.0}}, 0.1, 12);
  auto mix = x;
  const cdouble a(0.4, 0.0), b(-1.7, 0.0);
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * z.data[i];
  const auto sx = extract_separation(x, d), sz = extract_separation(z, d), sm = extract_separation(mix, d);
  for (std::size_t f = 0; f < sm.spectrum.size(); ++f)
    CHECK(std::abs(sm.spectrum.bins[f] - (a * sx.spectrum.bins[f] + b * sz.spectrum.bins[f])) < 1e-9);
  for (std::size_t t = 0; t < sm.signal.size(); t += 5)
    CHECK(sm.signal.samples[t] ==
          doctest::Approx(a.real() * sx.signal.samples[t] + b.real() * sz.signal.samples[t]).scale(1.0));

  auto silent = x;
  std::fill(silent.data.begin(), silent.data.end(), cdouble(0.0));
  const auto s0 = extract_separation(silent, d);
  for (double v : s0.signal.samples) CHECK(v == 0.0);
}

TEST_CASE("separation of a rendered plane wave recovers its waveform and rejects other directions") {
  const ArrayGeometry g = ArrayGeometry::default_32();
  SplitMix64 rng(53);
  TimeSignal emitted{std::vector<double>(3840)};
  for (double& v : emitted.samples) v = rng.normal();
  Spectrum s = forward_dft(pad_to_end(emitted, 8192), 8192);
  s.frame_length = 3840;
  const auto [first, last] = band_bins({}, 48000, 8192);
  for (int t = 0; t < 5; ++t) {
    const Vec3 d = bpsl::test::random_unit(rng);
    const auto coeffs = spherical_ft(plane_wave_mics(g, d, s), g);
    const SeparationSignal on = extract_separation(coeffs, d);
    // Within ka <= N_sh the open-sphere model holds; above it, aliasing and the j_2 zero
    // near 7.5 kHz (a = 4.2 cm) leave a larger residual over the full band.
    double err = 0.0, ref = 0.0, err_all = 0.0, ref_all = 0.0;
    for (std::size_t f = first; f <= last; ++f) {
      const double e = std::norm(on.spectrum.bins[f] - s.bins[f]), r = std::norm(s.bins[f]);
      err_all += e;
      ref_all += r;
      if (2 * kPi * s.bin_frequency(f) * g.radius / kSpeedOfSound > 4.0) continue;
      err += e;
      ref += r;
    }
    CHECK(std::sqrt(err / ref) < 0.10);
    CHECK(std::sqrt(err_all / ref_all) < 0.15);
    // Steering 90 degrees away.
    const Vec3 away = normalized(cross(d, bpsl::test::random_unit(rng)));
    const SeparationSignal off = extract_separation(coeffs, away);
    CHECK(10 * std::log10(band_energy(off.spectrum) / band_energy(on.spectrum)) <= -10.0);
  }
}
