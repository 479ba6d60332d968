#include "bpsl/beamform.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"

namespace bpsl {

namespace {

constexpr double kDeg = kPi / 180.0;

}  // namespace

std::pair<std::size_t, std::size_t> band_bins(const Band& band, double sample_rate, std::size_t padded_length) {
  if (!(band.low >= 0.0 && band.high > band.low)) throw Error("analysis band must satisfy 0 <= low < high");
  if (padded_length == 0) throw Error("band_bins: empty bin grid");
  const double df = sample_rate / static_cast<double>(padded_length);
  const std::size_t nyquist = padded_length / 2;
  const auto first = static_cast<std::size_t>(std::ceil(band.low / df - 1e-9));
  const auto last = std::min(nyquist, static_cast<std::size_t>(std::floor(band.high / df + 1e-9)));
  if (first > last) throw Error("analysis band contains no DFT bins");
  return {first, last};
}

double BeamMap::elevation(std::size_t row) const { return static_cast<double>(row) * resolution_deg * kDeg; }
double BeamMap::azimuth(std::size_t col) const { return static_cast<double>(col) * resolution_deg * kDeg; }

Vec3 BeamMap::direction(std::size_t row, std::size_t col) const {
  if (row == 0) return {0.0, 0.0, 1.0};
  if (row + 1 == rows) return {0.0, 0.0, -1.0};
  return direction_from_angles(elevation(row), azimuth(col));
}

BeamMap BeamMap::make(double resolution_deg) {
  if (!(resolution_deg > 0.0)) throw Error("beam map resolution must be positive");
  const double steps = 180.0 / resolution_deg;
  if (std::abs(steps - std::round(steps)) > 1e-9)
    throw Error("beam map resolution must divide 180 degrees");
  BeamMap m;
  m.resolution_deg = resolution_deg;
  m.rows = static_cast<std::size_t>(std::llround(steps)) + 1;
  m.cols = 2 * (m.rows - 1);
  m.energy.assign(m.rows * m.cols, 0.0);
  return m;
}

std::vector<cdouble> steering_vector(const Vec3& direction, int order) {
  auto v = sh_basis(direction, order);
  for (auto& c : v) c = std::conj(c);
  return v;
}

BeamMap mvdr_map(const ShCoefficients& coeffs, const BeamformConfig& config, Exec exec) {
  BeamMap map = BeamMap::make(config.resolution_deg);
  const auto [first, last] = band_bins(config.band, coeffs.sample_rate, coeffs.padded_length);
  if (last >= coeffs.bins) throw Error("mvdr_map: coefficients do not cover the analysis band");
  const auto dim = static_cast<Eigen::Index>(coeffs.width());

  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(dim, dim);
  for (std::size_t f = first; f <= last; ++f) {
    const auto b = coeffs.bin(f);
    const Eigen::Map<const Eigen::VectorXcd> m(b.data(), dim);
    r.noalias() += m * m.adjoint();
  }
  r /= static_cast<double>(last - first + 1);
  const double trace = r.trace().real();
  if (!(trace > 0.0) || !std::isfinite(trace)) throw Error("mvdr_map: covariance is singular (all-zero frame)");
  r.diagonal().array() += config.diagonal_loading * trace / static_cast<double>(dim);
  const Eigen::LDLT<Eigen::MatrixXcd> ldlt(r);
  if (ldlt.info() != Eigen::Success) throw Error("mvdr_map: covariance is singular after loading");
  const Eigen::MatrixXcd r_inv = ldlt.solve(Eigen::MatrixXcd::Identity(dim, dim));

  auto row_energy = [&](std::size_t row) {
    for (std::size_t col = 0; col < map.cols; ++col) {
      const auto v = steering_vector(map.direction(row, col), coeffs.order);
      const Eigen::Map<const Eigen::VectorXcd> sv(v.data(), dim);
      const double denom = sv.dot(r_inv * sv).real();  // v^H R^-1 v
      map.at(row, col) = 1.0 / denom;
    }
  };
  const auto rows = static_cast<std::int64_t>(map.rows);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < rows; ++row) row_energy(static_cast<std::size_t>(row));
  } else {
    for (std::int64_t row = 0; row < rows; ++row) row_energy(static_cast<std::size_t>(row));
  }
  return map;
}

namespace {

// Pole rows collapse to their first column.
double cell_value(const BeamMap& map, std::size_t row, std::size_t col) {
  if (row == 0 || row + 1 == map.rows) return map.at(row, 0);
  return map.at(row, col);
}

bool is_strict_maximum(const BeamMap& map, std::size_t row, std::size_t col) {
  const double v = cell_value(map, row, col);
  const std::size_t last = map.rows - 1;
  if (row == 0 || row == last) {
    const std::size_t ring = row == 0 ? 1 : last - 1;
    for (std::size_t c = 0; c < map.cols; ++c) {
      if (!(v > cell_value(map, ring, c))) return false;
    }
    return true;
  }
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const std::size_t r = row + static_cast<std::size_t>(static_cast<long>(dr));
      const std::size_t c = (col + map.cols + static_cast<std::size_t>(static_cast<long>(dc))) % map.cols;
      if (!(v > cell_value(map, r, c))) return false;
    }
  }
  return true;
}

// Vertex offset, in cells, of a Gaussian through three samples.
double vertex_offset(double minus, double centre, double plus) {
  if (!(minus > 0.0 && centre > 0.0 && plus > 0.0)) return 0.0;
  const double a = std::log(minus);
  const double b = std::log(centre);
  const double c = std::log(plus);
  const double curvature = a - 2.0 * b + c;
  if (!(curvature < 0.0)) return 0.0;
  return std::clamp(0.5 * (a - c) / curvature, -0.5, 0.5);
}

}  // namespace

std::vector<DirectionEstimate> find_peaks(const BeamMap& map, std::size_t max_peaks, double floor_ratio) {
  std::vector<DirectionEstimate> peaks;
  if (map.rows < 3 || map.energy.empty()) return peaks;
  const double global = *std::max_element(map.energy.begin(), map.energy.end());
  const double floor = floor_ratio * global;
  for (std::size_t row = 0; row < map.rows; ++row) {
    const bool pole = row == 0 || row + 1 == map.rows;
    for (std::size_t col = 0; col < (pole ? 1 : map.cols); ++col) {
      const double v = cell_value(map, row, col);
      if (v < floor || !is_strict_maximum(map, row, col)) continue;
      peaks.push_back({map.direction(row, col), v, row, col});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const DirectionEstimate& a, const DirectionEstimate& b) { return a.energy > b.energy; });
  if (peaks.size() > max_peaks) peaks.resize(max_peaks);
  return peaks;
}

void refine_peaks(const BeamMap& map, std::vector<DirectionEstimate>& peaks) {
  for (auto& p : peaks) {
    if (p.row == 0 || p.row + 1 == map.rows) continue;
    const std::size_t left = (p.col + map.cols - 1) % map.cols;
    const std::size_t right = (p.col + 1) % map.cols;
    const double centre = map.at(p.row, p.col);
    const double dr = vertex_offset(cell_value(map, p.row - 1, p.col), centre, cell_value(map, p.row + 1, p.col));
    const double dc = vertex_offset(map.at(p.row, left), centre, map.at(p.row, right));
    const double step = map.resolution_deg * kDeg;
    p.direction = direction_from_angles(map.elevation(p.row) + dr * step, map.azimuth(p.col) + dc * step);
  }
}

SeparationSignal extract_separation(const ShCoefficients& coeffs, const Vec3& direction, const Band& band) {
  const double len = norm(direction);
  if (!(std::abs(len - 1.0) < 1e-6)) throw Error("extract_separation: direction must be a unit vector");
  const auto [first, last] = band_bins(band, coeffs.sample_rate, coeffs.padded_length);
  const auto y = sh_basis(direction / len, coeffs.order);
  const double scale = 4.0 * kPi / static_cast<double>(coeffs.width());

  SeparationSignal out;
  out.direction = direction / len;
  out.spectrum.sample_rate = coeffs.sample_rate;
  out.spectrum.padded_length = coeffs.padded_length;
  out.spectrum.frame_length = coeffs.frame_length;
  out.spectrum.bins.assign(coeffs.padded_length / 2 + 1, cdouble{});
  for (std::size_t f = first; f <= std::min(last, coeffs.bins - 1); ++f) {
    const auto m = coeffs.bin(f);
    cdouble acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += m[i] * y[i];
    out.spectrum.bins[f] = scale * acc;
  }
  out.signal = inverse_dft(out.spectrum);
  return out;
}

void write_beam_map_csv(std::ostream& out, const BeamMap& map) {
  out << "elevation_deg,azimuth_deg,energy\n";
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      out << static_cast<double>(r) * map.resolution_deg << ',' << static_cast<double>(c) * map.resolution_deg
          << ',' << map.at(r, c) << '\n';
    }
  }
}

}  // namespace bpsl
