#include "bpsl/raytrace.hpp"

#include <cmath>
#include <ostream>

#include "bpsl/error.hpp"

namespace bpsl {

void TraceConfig::validate() const {
  if (max_order < 1) throw Error("trace: max_order must be at least 1");
  if (!(max_total_length > 0.0)) throw Error("trace: max_total_length must be positive");
  if (!(hit_epsilon > 0.0)) throw Error("trace: hit epsilon must be positive");
}

RayPath trace_path(const Mesh& mesh, const Vec3& origin, const Vec3& direction, const TraceConfig& config) {
  config.validate();
  const double len = norm(direction);
  if (!(std::abs(len - 1.0) < 1e-6)) throw Error("trace_path: direction must be a unit vector");

  RayPath path;
  Vec3 o = origin;
  Vec3 d = direction / len;
  // The primary ray starts at the array itself; only reflections skip epsilon.
  double min_t = 0.0;
  for (int k = 0; k < config.max_order; ++k) {
    const double remaining = config.max_total_length - path.total_length();
    if (remaining <= 0.0) break;
    RaySegment seg{o, d, remaining, std::nullopt, -1};
    if (auto hit = mesh.intersect(o, d, min_t, remaining)) {
      seg.length = hit->distance;
      seg.hit_triangle = hit->triangle;
      seg.hit_material = mesh.triangle(hit->triangle).material_id;
      path.push_back(seg);
      d = reflect(d, mesh.triangle(hit->triangle).normal);
      o = hit->point;
      min_t = config.hit_epsilon;
    } else {
      path.push_back(seg);
      break;
    }
  }
  return path;
}

std::vector<RayPath> trace_all(const Mesh& mesh, const Vec3& origin, std::span<const Vec3> directions,
                               const TraceConfig& config, Exec exec) {
  config.validate();
  // Exceptions cannot leave an OpenMP region; reject bad input up front.
  for (const Vec3& d : directions) {
    if (!(std::abs(norm(d) - 1.0) < 1e-6)) throw Error("trace_all: direction must be a unit vector");
  }
  std::vector<RayPath> out(directions.size());
  const long n = static_cast<long>(directions.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = trace_path(mesh, origin, directions[static_cast<std::size_t>(i)], config);
  }
  return out;
}

void write_paths_csv(std::ostream& out, std::span<const RayPath> paths) {
  out << "path,order,x0,y0,z0,x1,y1,z1,material\n";
  for (std::size_t p = 0; p < paths.size(); ++p) {
    for (std::size_t k = 0; k < paths[p].size(); ++k) {
      const RaySegment& s = paths[p].segments[k];
      const Vec3 e = s.end();
      out << p << ',' << k << ',' << s.origin.x << ',' << s.origin.y << ',' << s.origin.z << ',' << e.x << ','
          << e.y << ',' << e.z << ',' << (s.hit_triangle ? s.hit_material : -1) << '\n';
    }
  }
}

}  // namespace bpsl
