#include "bpsl/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "bpsl/error.hpp"

namespace bpsl {

namespace {

constexpr std::uint32_t kMaxLeafSize = 4;
constexpr int kSahBins = 16;

// Slab bounds are widened by this factor so rounding in the slab test never culls
// a box that holds a hit (robust traversal, cf. Ize 2013).
constexpr double kSlabWiden = 1.0 + 4.0 * std::numeric_limits<double>::epsilon();

Aabb padded(Aabb b) {
  for (int a = 0; a < 3; ++a) {
    const double pad = 1e-9 * (1.0 + std::fmax(std::fabs(b.lo[a]), std::fabs(b.hi[a])));
    b.lo[a] -= pad;
    b.hi[a] += pad;
  }
  return b;
}

struct RayInv {
  Vec3 origin;
  Vec3 inv;
  std::array<bool, 3> zero;
};

RayInv prepare(const Vec3& origin, const Vec3& direction) {
  RayInv r{origin, {}, {}};
  for (int a = 0; a < 3; ++a) {
    r.zero[a] = direction[a] == 0.0;
    r.inv[a] = r.zero[a] ? 0.0 : 1.0 / direction[a];
  }
  return r;
}

// Entry distance of the ray into the box if it overlaps [0, t_max], else nullopt.
std::optional<double> slab(const Aabb& b, const RayInv& r, double t_max) {
  double t0 = 0.0;
  double t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    if (r.zero[a]) {
      if (r.origin[a] < b.lo[a] || r.origin[a] > b.hi[a]) return std::nullopt;
      continue;
    }
    double tn = (b.lo[a] - r.origin[a]) * r.inv[a];
    double tf = (b.hi[a] - r.origin[a]) * r.inv[a];
    if (tn > tf) std::swap(tn, tf);
    tf *= kSlabWiden;
    t0 = std::fmax(t0, tn);
    t1 = std::fmin(t1, tf);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

bool closer(double t, int idx, double best_t, int best_idx) {
  return t < best_t || (t == best_t && idx < best_idx);
}

}  // namespace

Triangle Triangle::make(const Vec3& a, const Vec3& b, const Vec3& c, int material_id) {
  const Vec3 n = cross(b - a, c - a);
  const double twice_area = norm(n);
  if (!(0.5 * twice_area > 1e-12)) throw Error("degenerate triangle (area <= 1e-12 m^2)");
  return Triangle{{a, b, c}, n / twice_area, material_id};
}

double Triangle::area() const {
  return 0.5 * norm(cross(vertices[1] - vertices[0], vertices[2] - vertices[0]));
}

double Aabb::surface_area() const {
  const Vec3 e = extent();
  if (e.x < 0 || e.y < 0 || e.z < 0) return 0.0;
  return 2.0 * (e.x * e.y + e.y * e.z + e.z * e.x);
}

std::optional<double> intersect_triangle(const Triangle& tri, const Vec3& origin,
                                         const Vec3& direction) {
  // Woop, Benthin & Wald, "Watertight ray/triangle intersection", JCGT 2013.
  int kz = 0;
  if (std::fabs(direction.y) > std::fabs(direction[kz])) kz = 1;
  if (std::fabs(direction.z) > std::fabs(direction[kz])) kz = 2;
  int kx = (kz + 1) % 3;
  int ky = (kx + 1) % 3;
  if (direction[kz] < 0.0) std::swap(kx, ky);

  const double sx = direction[kx] / direction[kz];
  const double sy = direction[ky] / direction[kz];
  const double sz = 1.0 / direction[kz];

  const Vec3 a = tri.vertices[0] - origin;
  const Vec3 b = tri.vertices[1] - origin;
  const Vec3 c = tri.vertices[2] - origin;

  const double ax = a[kx] - sx * a[kz];
  const double ay = a[ky] - sy * a[kz];
  const double bx = b[kx] - sx * b[kz];
  const double by = b[ky] - sy * b[kz];
  const double cx = c[kx] - sx * c[kz];
  const double cy = c[ky] - sy * c[kz];

  double u = cx * by - cy * bx;
  double v = ax * cy - ay * cx;
  double w = bx * ay - by * ax;
  if (u == 0.0 || v == 0.0 || w == 0.0) {
    const long double lu = static_cast<long double>(cx) * by - static_cast<long double>(cy) * bx;
    const long double lv = static_cast<long double>(ax) * cy - static_cast<long double>(ay) * cx;
    const long double lw = static_cast<long double>(bx) * ay - static_cast<long double>(by) * ax;
    u = static_cast<double>(lu);
    v = static_cast<double>(lv);
    w = static_cast<double>(lw);
  }
  if ((u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0)) return std::nullopt;

  const double det = u + v + w;
  if (det == 0.0) return std::nullopt;

  const double az = sz * a[kz];
  const double bz = sz * b[kz];
  const double cz = sz * c[kz];
  const double t = (u * az + v * bz + w * cz) / det;
  if (!std::isfinite(t)) return std::nullopt;
  return t;
}

Vec3 reflect(const Vec3& direction, const Vec3& normal) {
  return direction - normal * (2.0 * dot(direction, normal));
}

Mesh::Mesh(std::vector<Triangle> triangles) : triangles_(std::move(triangles)) { build(); }

void Mesh::build() {
  nodes_.clear();
  order_.resize(triangles_.size());
  bounds_ = Aabb{};
  if (triangles_.empty()) return;

  std::vector<Aabb> boxes(triangles_.size());
  std::vector<Vec3> centroids(triangles_.size());
  for (std::size_t i = 0; i < triangles_.size(); ++i) {
    order_[i] = static_cast<std::uint32_t>(i);
    for (const Vec3& v : triangles_[i].vertices) {
      boxes[i].expand(v);
      bounds_.expand(v);
    }
    centroids[i] = triangles_[i].centroid();
  }
  nodes_.reserve(2 * triangles_.size());
  nodes_.emplace_back();
  build_node(0, 0, static_cast<std::uint32_t>(triangles_.size()), boxes, centroids);
}

void Mesh::build_node(std::uint32_t node, std::uint32_t begin, std::uint32_t end,
                      const std::vector<Aabb>& boxes, const std::vector<Vec3>& centroids) {
  Aabb box;
  Aabb centroid_box;
  for (std::uint32_t i = begin; i < end; ++i) {
    box.expand(boxes[order_[i]]);
    centroid_box.expand(centroids[order_[i]]);
  }
  nodes_[node].box = padded(box);

  const std::uint32_t count = end - begin;
  if (count <= kMaxLeafSize) {
    nodes_[node].first = begin;
    nodes_[node].count = count;
    return;
  }

  // Binned SAH along the widest centroid axis.
  const Vec3 ext = centroid_box.extent();
  int axis = 0;
  if (ext.y > ext[axis]) axis = 1;
  if (ext.z > ext[axis]) axis = 2;

  std::uint32_t mid = begin + count / 2;
  int best_split = -1;
  if (ext[axis] > 0.0) {
    std::array<Aabb, kSahBins> bin_box;
    std::array<std::uint32_t, kSahBins> bin_count{};
    const double scale = kSahBins / ext[axis];
    auto bin_of = [&](std::uint32_t tri) {
      const int b = static_cast<int>((centroids[tri][axis] - centroid_box.lo[axis]) * scale);
      return std::clamp(b, 0, kSahBins - 1);
    };
    for (std::uint32_t i = begin; i < end; ++i) {
      const int b = bin_of(order_[i]);
      ++bin_count[b];
      bin_box[b].expand(boxes[order_[i]]);
    }
    std::array<double, kSahBins - 1> cost{};
    std::array<std::uint32_t, kSahBins - 1> left_count{};
    Aabb left;
    std::uint32_t left_n = 0;
    for (int s = 0; s < kSahBins - 1; ++s) {
      left.expand(bin_box[s]);
      left_n += bin_count[s];
      left_count[s] = left_n;
      cost[s] = left.surface_area() * left_n;
    }
    Aabb right;
    std::uint32_t right_n = 0;
    for (int s = kSahBins - 1; s > 0; --s) {
      right.expand(bin_box[s]);
      right_n += bin_count[s];
      cost[s - 1] += right.surface_area() * right_n;
    }
    double best_cost = std::numeric_limits<double>::infinity();
    for (int s = 0; s < kSahBins - 1; ++s) {
      if (left_count[s] == 0 || left_count[s] == count) continue;
      if (cost[s] < best_cost) {
        best_cost = cost[s];
        best_split = s;
      }
    }
    if (best_split >= 0) {
      auto* first = order_.data() + begin;
      auto* it = std::partition(first, order_.data() + end,
                                [&](std::uint32_t tri) { return bin_of(tri) <= best_split; });
      mid = static_cast<std::uint32_t>(it - order_.data());
    }
  }
  if (best_split < 0) {
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t l, std::uint32_t r) {
                       if (centroids[l][axis] != centroids[r][axis])
                         return centroids[l][axis] < centroids[r][axis];
                       return l < r;
                     });
  }

  const auto left_child = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].first = left_child;
  nodes_[node].count = 0;
  build_node(left_child, begin, mid, boxes, centroids);
  build_node(left_child + 1, mid, end, boxes, centroids);
}

std::optional<Hit> Mesh::intersect(const Vec3& origin, const Vec3& direction,
                                   double min_distance, double max_distance) const {
  if (nodes_.empty()) return std::nullopt;
  const RayInv ray = prepare(origin, direction);

  double best_t = max_distance;
  int best = -1;

  std::array<std::uint32_t, 64> stack;
  int top = 0;
  if (!slab(nodes_[0].box, ray, best_t)) return std::nullopt;
  stack[top++] = 0;

  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const auto idx = static_cast<int>(order_[i]);
        const auto t = intersect_triangle(triangles_[order_[i]], origin, direction);
        if (t && *t > min_distance && *t < max_distance && closer(*t, idx, best_t, best)) {
          best_t = *t;
          best = idx;
        }
      }
      continue;
    }
    // Ties must be kept (a later leaf may hold an equal-distance, lower-index
    // triangle), so boxes are culled only when entered strictly beyond best_t.
    const auto tl = slab(nodes_[node.first].box, ray, best_t);
    const auto tr = slab(nodes_[node.first + 1].box, ray, best_t);
    if (tl && tr) {
      if (*tl <= *tr) {
        stack[top++] = node.first + 1;
        stack[top++] = node.first;
      } else {
        stack[top++] = node.first;
        stack[top++] = node.first + 1;
      }
    } else if (tl) {
      stack[top++] = node.first;
    } else if (tr) {
      stack[top++] = node.first + 1;
    }
  }
  if (best < 0) return std::nullopt;
  return Hit{best, origin + direction * best_t, best_t};
}

std::optional<Hit> Mesh::intersect_brute_force(const Vec3& origin, const Vec3& direction,
                                               double min_distance, double max_distance) const {
  double best_t = max_distance;
  int best = -1;
  for (std::size_t i = 0; i < triangles_.size(); ++i) {
    const auto t = intersect_triangle(triangles_[i], origin, direction);
    if (t && *t > min_distance && *t < max_distance &&
        closer(*t, static_cast<int>(i), best_t, best)) {
      best_t = *t;
      best = static_cast<int>(i);
    }
  }
  if (best < 0) return std::nullopt;
  return Hit{best, origin + direction * best_t, best_t};
}

std::vector<int> Mesh::leaf_reference_counts() const {
  std::vector<int> counts(triangles_.size(), 0);
  for (const Node& n : nodes_) {
    for (std::uint32_t i = n.first; n.count > 0 && i < n.first + n.count; ++i) ++counts[order_[i]];
  }
  return counts;
}

std::vector<std::optional<Hit>> intersect_all(const Mesh& mesh, std::span<const Vec3> origins,
                                              std::span<const Vec3> directions, bool brute_force,
                                              Exec exec) {
  if (origins.size() != directions.size()) throw Error("intersect_all: size mismatch");
  const auto n = static_cast<std::int64_t>(origins.size());
  std::vector<std::optional<Hit>> out(origins.size());
  auto one = [&](std::int64_t i) {
    const auto u = static_cast<std::size_t>(i);
    out[u] = brute_force ? mesh.intersect_brute_force(origins[u], directions[u])
                         : mesh.intersect(origins[u], directions[u]);
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i) one(i);
  } else {
    for (std::int64_t i = 0; i < n; ++i) one(i);
  }
  return out;
}

void RayPath::push_back(const RaySegment& segment) {
  segments.push_back(segment);
  cumulative_lengths.push_back(total_length() + segment.length);
}

Vec3 RayPath::point_at(double travel_distance) const {
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (travel_distance <= cumulative_lengths[k] || k + 1 == segments.size()) {
      const double along = std::clamp(travel_distance - length_before(k), 0.0, segments[k].length);
      return segments[k].origin + segments[k].direction * along;
    }
  }
  return {};
}

PathPoint perpendicular_foot(const RayPath& path, const Vec3& x, int path_index) {
  PathPoint best;
  best.path_index = path_index;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < path.segments.size(); ++k) {
    const RaySegment& s = path.segments[k];
    const double along = std::clamp(dot(x - s.origin, s.direction), 0.0, s.length);
    const Vec3 foot = s.origin + s.direction * along;
    const double d = distance(x, foot);
    if (d < best.distance) {
      best.segment_order = static_cast<int>(k);
      best.point = foot;
      best.travel_distance = path.length_before(k) + along;
      best.distance = d;
    }
  }
  return best;
}

Mesh read_mesh(std::istream& in, const std::string& source_name) {
  std::vector<Vec3> vertices;
  struct Face {
    std::array<long long, 3> idx;
    int material;
    int line;
  };
  std::vector<Face> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z)) throw ParseError(source_name, line_no, "expected 'v x y z'");
      if (!is_finite(v)) throw ParseError(source_name, line_no, "non-finite vertex");
      vertices.push_back(v);
    } else if (tag == "f") {
      Face f{};
      f.line = line_no;
      if (!(ss >> f.idx[0] >> f.idx[1] >> f.idx[2] >> f.material))
        throw ParseError(source_name, line_no, "expected 'f i j k material'");
      if (f.material < 0) throw ParseError(source_name, line_no, "negative material index");
      faces.push_back(f);
    } else {
      throw ParseError(source_name, line_no, "unknown record type '" + tag + "'");
    }
    std::string extra;
    if (ss >> extra && extra[0] != '#')
      throw ParseError(source_name, line_no, "trailing data '" + extra + "'");
  }
  std::vector<Triangle> tris;
  tris.reserve(faces.size());
  for (const Face& f : faces) {
    for (long long i : f.idx) {
      if (i < 0 || i >= static_cast<long long>(vertices.size()))
        throw ParseError(source_name, f.line, "vertex index out of range");
    }
    try {
      tris.push_back(Triangle::make(vertices[static_cast<std::size_t>(f.idx[0])],
                                    vertices[static_cast<std::size_t>(f.idx[1])],
                                    vertices[static_cast<std::size_t>(f.idx[2])], f.material));
    } catch (const Error& e) {
      throw ParseError(source_name, f.line, e.what());
    }
  }
  return Mesh(std::move(tris));
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file " + path.string());
  return read_mesh(in, path.string());
}

void write_mesh(std::ostream& out, const Mesh& mesh) {
  const auto old_precision = out.precision(17);
  out << "# " << mesh.size() << " triangles\n";
  for (const Triangle& t : mesh.triangles()) {
    for (const Vec3& v : t.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  }
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    out << "f " << 3 * i << ' ' << 3 * i + 1 << ' ' << 3 * i + 2 << ' '
        << mesh.triangles()[i].material_id << '\n';
  }
  out.precision(old_precision);
}

std::vector<Triangle> box_triangles(const Vec3& lo, const Vec3& hi, int material_id,
                                    bool inward_normals) {
  const std::array<Vec3, 8> c{{{lo.x, lo.y, lo.z},
                               {hi.x, lo.y, lo.z},
                               {hi.x, hi.y, lo.z},
                               {lo.x, hi.y, lo.z},
                               {lo.x, lo.y, hi.z},
                               {hi.x, lo.y, hi.z},
                               {hi.x, hi.y, hi.z},
                               {lo.x, hi.y, hi.z}}};
  // Quads wound for outward normals.
  const std::array<std::array<int, 4>, 6> quads{{{0, 3, 2, 1},
                                                 {4, 5, 6, 7},
                                                 {0, 1, 5, 4},
                                                 {2, 3, 7, 6},
                                                 {0, 4, 7, 3},
                                                 {1, 2, 6, 5}}};
  std::vector<Triangle> out;
  out.reserve(12);
  for (const auto& q : quads) {
    if (inward_normals) {
      out.push_back(Triangle::make(c[q[0]], c[q[2]], c[q[1]], material_id));
      out.push_back(Triangle::make(c[q[0]], c[q[3]], c[q[2]], material_id));
    } else {
      out.push_back(Triangle::make(c[q[0]], c[q[1]], c[q[2]], material_id));
      out.push_back(Triangle::make(c[q[0]], c[q[2]], c[q[3]], material_id));
    }
  }
  return out;
}

}  // namespace bpsl
