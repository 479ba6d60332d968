#pragma once

#include <bpsl/geometry.hpp>
#include <bpsl/random.hpp>
#include <bpsl/signal.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace bpsl::test {

inline Vec3 random_unit(SplitMix64& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(1.0 - z * z);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

inline Vec3 random_in_box(SplitMix64& rng, const Vec3& lo, const Vec3& hi) {
  return {lo.x + (hi.x - lo.x) * rng.uniform(), lo.y + (hi.y - lo.y) * rng.uniform(),
          lo.z + (hi.z - lo.z) * rng.uniform()};
}

/// Small random triangles scattered through a cube of side `extent`.
inline std::vector<Triangle> random_soup(SplitMix64& rng, std::size_t count, double extent, double size) {
  std::vector<Triangle> tris;
  tris.reserve(count);
  while (tris.size() < count) {
    const Vec3 c = random_in_box(rng, {0, 0, 0}, {extent, extent, extent});
    const Vec3 a = c + random_unit(rng) * size;
    const Vec3 b = c + random_unit(rng) * size;
    const Vec3 d = c + random_unit(rng) * size;
    if (norm(cross(b - a, d - a)) < 1e-6) continue;
    tris.push_back(Triangle::make(a, b, d, static_cast<int>(tris.size() % 3)));
  }
  return tris;
}

/// Textbook O(N^2) one-sided DFT of x zero-padded to n.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x, std::size_t n) {
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < x.size() && t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(t) / double(n));
    out[k] = acc;
  }
  return out;
}

/// Direct evaluation of sum_t p[t] q[t + lag] over every lag; returns (best value, best lag)
/// with ties to smaller |lag|, then the negative lag.
inline std::pair<double, long> brute_xcorr(const std::vector<double>& p, const std::vector<double>& q,
                                           bool circular) {
  const long np = static_cast<long>(p.size());
  const long nq = static_cast<long>(q.size());
  double ep = 0, eq = 0;
  for (double v : p) ep += v * v;
  for (double v : q) eq += v * v;
  const double scale = std::sqrt(ep * eq);
  const long lo = circular ? -np / 2 : -(np - 1);
  const long hi = circular ? np / 2 - 1 : nq - 1;
  double best = -2.0;
  long best_lag = 0;
  for (long lag = lo; lag <= hi; ++lag) {
    double acc = 0;
    for (long t = 0; t < np; ++t) {
      long u = t + lag;
      if (circular) u = ((u % nq) + nq) % nq;
      else if (u < 0 || u >= nq) continue;
      acc += p[static_cast<std::size_t>(t)] * q[static_cast<std::size_t>(u)];
    }
    const double v = acc / scale;
    const bool better = v > best + 1e-12 ||
                        (std::abs(v - best) <= 1e-12 &&
                         (std::labs(lag) < std::labs(best_lag) ||
                          (std::labs(lag) == std::labs(best_lag) && lag < best_lag)));
    if (better) {
      best = v;
      best_lag = lag;
    }
  }
  return {best, best_lag};
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace bpsl::test
