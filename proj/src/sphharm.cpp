#include "bpsl/sphharm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "bpsl/constants.hpp"
#include "bpsl/error.hpp"

namespace bpsl {

std::vector<cdouble> sh_basis(const Vec3& direction, int order) {
  if (order < 0) throw Error("sh_basis: negative order");
  const double r = norm(direction);
  const double x = std::clamp(direction.z / r, -1.0, 1.0);
  const double s = std::sqrt(std::fmax(0.0, 1.0 - x * x));
  const double phi = std::atan2(direction.y, direction.x);

  // Fully normalized associated Legendre values, m >= 0, with the Condon-Shortley phase.
  std::vector<double> p(sh_count(order), 0.0);
  p[sh_index(0, 0)] = 1.0 / std::sqrt(4.0 * kPi);
  for (int m = 1; m <= order; ++m) {
    p[sh_index(m, m)] = -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * p[sh_index(m - 1, m - 1)];
  }
  for (int m = 0; m < order; ++m) {
    p[sh_index(m + 1, m)] = std::sqrt(2.0 * m + 3.0) * x * p[sh_index(m, m)];
  }
  for (int m = 0; m <= order; ++m) {
    for (int n = m + 2; n <= order; ++n) {
      const double nn = n;
      const double mm = m;
      const double a = std::sqrt((4.0 * nn * nn - 1.0) / (nn * nn - mm * mm));
      const double b = std::sqrt(((nn - 1.0) * (nn - 1.0) - mm * mm) / (4.0 * (nn - 1.0) * (nn - 1.0) - 1.0));
      p[sh_index(n, m)] = a * (x * p[sh_index(n - 1, m)] - b * p[sh_index(n - 2, m)]);
    }
  }

  std::vector<cdouble> y(sh_count(order));
  for (int n = 0; n <= order; ++n) {
    for (int m = 0; m <= n; ++m) {
      const cdouble v = p[sh_index(n, m)] * std::polar(1.0, m * phi);
      y[sh_index(n, m)] = v;
      if (m > 0) y[sh_index(n, -m)] = ((m % 2) ? -1.0 : 1.0) * std::conj(v);
    }
  }
  return y;
}

double spherical_bessel_j(int n, double x) { return std::sph_bessel(static_cast<unsigned>(n), x); }

cdouble radial_function(int n, double ka) {
  static constexpr std::array<cdouble, 4> kIPow{cdouble{1, 0}, cdouble{0, 1}, cdouble{-1, 0}, cdouble{0, -1}};
  return 4.0 * kPi * kIPow[static_cast<std::size_t>(n % 4)] * spherical_bessel_j(n, ka);
}

cdouble limited_inverse(cdouble b, double limit) {
  const double mag = std::abs(b);
  if (mag == 0.0) return 0.0;
  const double g = 1.0 / mag;
  const double g_lim = (2.0 * limit / kPi) * std::atan(kPi * g / (2.0 * limit));
  return std::polar(g_lim, -std::arg(b));
}

Vec3 ArrayGeometry::to_world(const Vec3& d) const {
  const auto& r = rotation;
  return {r[0] * d.x + r[1] * d.y + r[2] * d.z, r[3] * d.x + r[4] * d.y + r[5] * d.z,
          r[6] * d.x + r[7] * d.y + r[8] * d.z};
}

Vec3 ArrayGeometry::to_local(const Vec3& d) const {
  const auto& r = rotation;
  return {r[0] * d.x + r[3] * d.y + r[6] * d.z, r[1] * d.x + r[4] * d.y + r[7] * d.z,
          r[2] * d.x + r[5] * d.y + r[8] * d.z};
}

void ArrayGeometry::set_yaw_pitch_roll(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  // R = Rz(yaw) * Ry(pitch) * Rx(roll)
  rotation = {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
              sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
              -sp,     cp * sr,                cp * cr};
}

double ArrayGeometry::orthonormality_error(int order) const {
  const std::size_t k = sh_count(order);
  std::vector<std::vector<cdouble>> ys;
  ys.reserve(directions.size());
  for (const Vec3& d : directions) ys.push_back(sh_basis(d, order));
  double worst = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      cdouble g = 0.0;
      for (std::size_t q = 0; q < directions.size(); ++q) g += weights[q] * ys[q][a] * std::conj(ys[q][b]);
      worst = std::fmax(worst, std::abs(g - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

ArrayGeometry ArrayGeometry::from_directions(std::vector<Vec3> directions, double radius, int order) {
  if (directions.size() < sh_count(order))
    throw Error("array has fewer microphones than harmonics of the requested order");
  if (!(radius > 0.0)) throw Error("array radius must be positive");
  for (Vec3& d : directions) {
    if (!(norm(d) > 0.0)) throw Error("zero-length microphone direction");
    d = normalized(d);
  }
  // Weights solving sum_q w_q Y_a(u_q) Y_b(u_q)^* = delta_ab in the least-squares sense.
  const std::size_t k = sh_count(order);
  const std::size_t q_count = directions.size();
  std::vector<std::vector<cdouble>> ys;
  for (const Vec3& d : directions) ys.push_back(sh_basis(d, order));
  Eigen::MatrixXd a(2 * k * k, q_count);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * k * k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto row = static_cast<Eigen::Index>(2 * (i * k + j));
      for (std::size_t q = 0; q < q_count; ++q) {
        const cdouble g = ys[q][i] * std::conj(ys[q][j]);
        a(row, static_cast<Eigen::Index>(q)) = g.real();
        a(row + 1, static_cast<Eigen::Index>(q)) = g.imag();
      }
      if (i == j) rhs(row) = 1.0;
    }
  }
  const Eigen::VectorXd w = a.completeOrthogonalDecomposition().solve(rhs);

  ArrayGeometry g;
  g.directions = std::move(directions);
  g.weights.assign(w.data(), w.data() + w.size());
  g.radius = radius;
  return g;
}

ArrayGeometry ArrayGeometry::default_32(double radius) {
  const double phi = std::numbers::phi;
  std::vector<Vec3> dirs;
  // Icosahedron: cyclic permutations of (0, +-1, +-phi).
  for (double s1 : {-1.0, 1.0}) {
    for (double s2 : {-1.0, 1.0}) {
      dirs.push_back({0.0, s1, s2 * phi});
      dirs.push_back({s1, s2 * phi, 0.0});
      dirs.push_back({s2 * phi, 0.0, s1});
    }
  }
  // Dodecahedron (dual orientation, vertices over the icosahedron's face centers):
  // (+-1, +-1, +-1) and cyclic permutations of (0, +-phi, +-1/phi).
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) dirs.push_back({sx, sy, sz});
    }
  }
  for (double s1 : {-1.0, 1.0}) {
    for (double s2 : {-1.0, 1.0}) {
      dirs.push_back({0.0, s1 * phi, s2 / phi});
      dirs.push_back({s1 * phi, s2 / phi, 0.0});
      dirs.push_back({s2 / phi, 0.0, s1 * phi});
    }
  }
  return from_directions(std::move(dirs), radius, kDefaultShOrder);
}

ArrayGeometry ArrayGeometry::load(const std::filesystem::path& path, int order) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open array geometry " + path.string());
  std::vector<Vec3> dirs;
  std::optional<double> radius;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first == "radius") {
      double r = 0.0;
      if (!(ss >> r) || !(r > 0.0)) throw ParseError(path.string(), line_no, "expected 'radius <meters>'");
      radius = r;
      continue;
    }
    Vec3 d;
    std::istringstream all(line);
    std::string extra;
    if (!(all >> d.x >> d.y >> d.z) || (all >> extra))
      throw ParseError(path.string(), line_no, "expected 'x y z' direction");
    dirs.push_back(d);
  }
  if (!radius) throw ParseError(path.string(), line_no, "missing radius record");
  try {
    return from_directions(std::move(dirs), *radius, order);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(path.string(), line_no, e.what());
  }
}

ShCoefficients spherical_ft(std::span<const Spectrum> mic_spectra, const ArrayGeometry& geom,
                            const SphericalFtOptions& options, Exec exec) {
  const std::size_t q_count = geom.size();
  if (mic_spectra.size() != q_count) throw Error("spherical_ft: channel count does not match the array");
  for (const Spectrum& s : mic_spectra) {
    if (!s.same_grid(mic_spectra.front()) || s.size() != mic_spectra.front().size())
      throw Error("spherical_ft: channels do not share a bin grid");
  }
  const int order = options.order;
  const std::size_t k = sh_count(order);

  Eigen::MatrixXcd y(static_cast<Eigen::Index>(q_count), static_cast<Eigen::Index>(k));
  for (std::size_t q = 0; q < q_count; ++q) {
    const auto row = sh_basis(geom.directions[q], order);
    for (std::size_t i = 0; i < k; ++i) y(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i)) = row[i];
  }
  const Eigen::MatrixXcd pinv = y.completeOrthogonalDecomposition().pseudoInverse();
  std::vector<cdouble> projector(k * q_count);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t q = 0; q < q_count; ++q)
      projector[i * q_count + q] = pinv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
  }

  const Spectrum& ref = mic_spectra.front();
  ShCoefficients out;
  out.order = order;
  out.bins = ref.size();
  out.sample_rate = ref.sample_rate;
  out.padded_length = ref.padded_length;
  out.frame_length = ref.frame_length;
  out.data.assign(out.bins * k, cdouble{});

  std::size_t first = 0;
  std::size_t last = out.bins == 0 ? 0 : out.bins - 1;
  if (options.bin_range) {
    first = options.bin_range->first;
    last = std::min(options.bin_range->second, last);
  }

  auto one_bin = [&](std::size_t f) {
    auto dst = out.bin(f);
    for (std::size_t i = 0; i < k; ++i) {
      cdouble acc = 0.0;
      const cdouble* row = projector.data() + i * q_count;
      for (std::size_t q = 0; q < q_count; ++q) acc += row[q] * mic_spectra[q].bins[f];
      dst[i] = acc;
    }
    if (!options.radial_equalization) return;
    const double ka = 2.0 * kPi * ref.bin_frequency(f) * geom.radius / kSpeedOfSound;
    for (int n = 0; n <= order; ++n) {
      const cdouble g = limited_inverse(radial_function(n, ka), options.radial_gain_limit);
      for (int m = -n; m <= n; ++m) dst[sh_index(n, m)] *= g;
    }
  };

  const auto lo = static_cast<std::int64_t>(first);
  const auto hi = static_cast<std::int64_t>(last);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t f = lo; f <= hi; ++f) one_bin(static_cast<std::size_t>(f));
  } else {
    for (std::int64_t f = lo; f <= hi; ++f) one_bin(static_cast<std::size_t>(f));
  }
  return out;
}

std::vector<cdouble> sh_synthesize(std::span<const cdouble> coefficients, int order,
                                   const ArrayGeometry& geom) {
  if (coefficients.size() != sh_count(order)) throw Error("sh_synthesize: coefficient count mismatch");
  std::vector<cdouble> p(geom.size());
  for (std::size_t q = 0; q < geom.size(); ++q) {
    const auto y = sh_basis(geom.directions[q], order);
    cdouble acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += coefficients[i] * y[i];
    p[q] = acc;
  }
  return p;
}

}  // namespace bpsl
