#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "bpsl/geometry.hpp"
#include "bpsl/parallel.hpp"

namespace bpsl {

struct TraceConfig {
  int max_order = 3;               // segments per path (primary ray plus reflections)
  double max_total_length = 30.0;  // meters
  double hit_epsilon = kHitEpsilon;

  /// Throws on K < 1, non-positive length or epsilon.
  void validate() const;
};

/// Primary ray from `origin` along `direction`, chained through specular
/// reflections. Stops after max_order segments, at max_total_length, or when the
/// ray escapes (the escaping segment is capped at the remaining length).
RayPath trace_path(const Mesh& mesh, const Vec3& origin, const Vec3& direction,
                   const TraceConfig& config = {});

/// Element-wise trace_path, order preserved.
std::vector<RayPath> trace_all(const Mesh& mesh, const Vec3& origin, std::span<const Vec3> directions,
                               const TraceConfig& config = {}, Exec exec = Exec::parallel);

/// CSV: path,order,x0,y0,z0,x1,y1,z1,material (material -1 for an escaping segment).
void write_paths_csv(std::ostream& out, std::span<const RayPath> paths);

}  // namespace bpsl
