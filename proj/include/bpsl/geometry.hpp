#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpsl/parallel.hpp"
#include "bpsl/vec3.hpp"

namespace bpsl {

/// Minimum hit distance; reflected rays restart this far along their new direction.
inline constexpr double kHitEpsilon = 1e-4;

struct Triangle {
  std::array<Vec3, 3> vertices;
  Vec3 normal;
  int material_id = 0;

  /// Throws if the triangle is degenerate (area <= 1e-12 m^2).
  static Triangle make(const Vec3& a, const Vec3& b, const Vec3& c, int material_id);

  double area() const;
  Vec3 centroid() const { return (vertices[0] + vertices[1] + vertices[2]) / 3.0; }
};

struct Aabb {
  Vec3 lo{1e300, 1e300, 1e300};
  Vec3 hi{-1e300, -1e300, -1e300};

  void expand(const Vec3& p) {
    lo = component_min(lo, p);
    hi = component_max(hi, p);
  }
  void expand(const Aabb& b) {
    lo = component_min(lo, b.lo);
    hi = component_max(hi, b.hi);
  }
  bool contains(const Vec3& p, double slack = 0.0) const {
    return p.x >= lo.x - slack && p.x <= hi.x + slack && p.y >= lo.y - slack &&
           p.y <= hi.y + slack && p.z >= lo.z - slack && p.z <= hi.z + slack;
  }
  Vec3 extent() const { return hi - lo; }
  double surface_area() const;
};

struct Hit {
  int triangle = -1;
  Vec3 point;
  double distance = 0.0;
};

/// Triangle soup plus a bounding-volume hierarchy. Immutable once built.
class Mesh {
 public:
  Mesh() = default;
  explicit Mesh(std::vector<Triangle> triangles);

  std::span<const Triangle> triangles() const { return triangles_; }
  const Triangle& triangle(int i) const { return triangles_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return triangles_.size(); }
  bool empty() const { return triangles_.empty(); }
  const Aabb& bounds() const { return bounds_; }

  /// Nearest hit with distance > min_distance and < max_distance, using the BVH.
  /// Equal distances resolve to the lower triangle index.
  std::optional<Hit> intersect(const Vec3& origin, const Vec3& direction,
                               double min_distance = kHitEpsilon,
                               double max_distance = 1e300) const;

  /// Same contract as intersect(), scanning every triangle. Test oracle.
  std::optional<Hit> intersect_brute_force(const Vec3& origin, const Vec3& direction,
                                           double min_distance = kHitEpsilon,
                                           double max_distance = 1e300) const;

  /// Number of BVH leaves that reference each triangle (all ones for a valid tree).
  std::vector<int> leaf_reference_counts() const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // child index (inner) or first slot in order_ (leaf)
    std::uint32_t count = 0;  // 0 for inner nodes
  };

  void build();
  void build_node(std::uint32_t node, std::uint32_t begin, std::uint32_t end,
                  const std::vector<Aabb>& boxes, const std::vector<Vec3>& centroids);

  std::vector<Triangle> triangles_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  Aabb bounds_;
};

/// Distance along the ray to the triangle, or nullopt. Two-sided, watertight
/// (shear-and-scale edge functions evaluated in double precision).
std::optional<double> intersect_triangle(const Triangle& tri, const Vec3& origin,
                                         const Vec3& direction);

/// Specular reflection d - 2(d.n)n.
Vec3 reflect(const Vec3& direction, const Vec3& normal);

/// Batched nearest-hit queries, one per (origin, direction) pair.
std::vector<std::optional<Hit>> intersect_all(const Mesh& mesh, std::span<const Vec3> origins,
                                              std::span<const Vec3> directions,
                                              bool brute_force = false,
                                              Exec exec = Exec::parallel);

struct RaySegment {
  Vec3 origin;
  Vec3 direction;
  double length = 0.0;
  std::optional<int> hit_triangle;  // triangle the segment ends on; empty for an escaping ray
  int hit_material = -1;             // material of hit_triangle

  Vec3 end() const { return origin + direction * length; }
};

struct RayPath {
  std::vector<RaySegment> segments;
  std::vector<double> cumulative_lengths;  // cumulative_lengths[k] = sum of lengths 0..k

  void push_back(const RaySegment& segment);
  double total_length() const { return cumulative_lengths.empty() ? 0.0 : cumulative_lengths.back(); }
  double length_before(std::size_t k) const { return k == 0 ? 0.0 : cumulative_lengths[k - 1]; }
  std::size_t size() const { return segments.size(); }
  Vec3 point_at(double travel_distance) const;
};

struct PathPoint {
  int path_index = 0;
  int segment_order = 0;
  Vec3 point;
  double travel_distance = 0.0;
  double distance = 0.0;  // from the query point
};

/// Point on the path closest to x. Feet are clamped to segment ends; ties go to
/// the lower segment order.
PathPoint perpendicular_foot(const RayPath& path, const Vec3& x, int path_index = 0);

// Mesh text format:
//   v x y z        vertex, meters
//   f i j k m      triangle from 0-based vertex indices, material m
//   # comment
Mesh read_mesh(std::istream& in, const std::string& source_name = "<mesh>");
Mesh load_mesh(const std::filesystem::path& path);
void write_mesh(std::ostream& out, const Mesh& mesh);

/// Axis-aligned box as 12 triangles. inward_normals for rooms, outward for obstacles.
std::vector<Triangle> box_triangles(const Vec3& lo, const Vec3& hi, int material_id,
                                    bool inward_normals);

}  // namespace bpsl
