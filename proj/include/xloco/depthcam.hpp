#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <queue>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/env.hpp"
#include "xloco/heightfield.hpp"
#include "xloco/rewards.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Watertight ray-triangle intersection (shear + scaled barycentrics with
// consistent edge handling, so shared heightfield edges never crack)

struct RayFrame {
  Vec3 o, d;
  int kx = 0, ky = 1, kz = 2;
  double sx = 0, sy = 0, sz = 0;
};

inline RayFrame make_ray_frame(const Vec3& o, const Vec3& d) {
  RayFrame r;
  r.o = o;
  r.d = d;
  r.kz = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(d(i)) > std::abs(d(r.kz))) r.kz = i;
  r.kx = (r.kz + 1) % 3;
  r.ky = (r.kx + 1) % 3;
  if (d(r.kz) < 0.0) std::swap(r.kx, r.ky);
  r.sx = d(r.kx) / d(r.kz);
  r.sy = d(r.ky) / d(r.kz);
  r.sz = 1.0 / d(r.kz);
  return r;
}

/// Distance along the ray to triangle (a, b, c), or a negative value on miss.
inline double ray_triangle(const RayFrame& r, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 A = a - r.o, B = b - r.o, C = c - r.o;
  const double ax = A(r.kx) - r.sx * A(r.kz), ay = A(r.ky) - r.sy * A(r.kz);
  const double bx = B(r.kx) - r.sx * B(r.kz), by = B(r.ky) - r.sy * B(r.kz);
  const double cx = C(r.kx) - r.sx * C(r.kz), cy = C(r.ky) - r.sy * C(r.kz);
  const double u = cx * by - cy * bx;
  const double v = ax * cy - ay * cx;
  const double w = bx * ay - by * ax;
  if ((u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0)) return -1.0;
  const double det = u + v + w;
  if (det == 0.0) return -1.0;
  const double az = r.sz * A(r.kz), bz = r.sz * B(r.kz), cz = r.sz * C(r.kz);
  const double t = (u * az + v * bz + w * cz) / det;
  return t > 0.0 ? t : -1.0;
}

// ---------------------------------------------------------------------------
// Triangle mesh with a median-split BVH

struct Aabb {
  Vec3 lo = Vec3::Constant(kInf), hi = Vec3::Constant(-kInf);
  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool hit(const Vec3& o, const Vec3& inv_d, double tmax) const {
    double t0 = 0.0, t1 = tmax;
    for (int i = 0; i < 3; ++i) {
      double a = (lo(i) - o(i)) * inv_d(i);
      double b = (hi(i) - o(i)) * inv_d(i);
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
      if (t0 > t1) return false;
    }
    return true;
  }
};

struct MeshHit {
  int tri = -1;
  double t = kInf;
  bool valid() const { return tri >= 0; }
};

class TriangleMesh {
 public:
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  void add_triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
    const int base = static_cast<int>(vertices.size());
    vertices.push_back(a);
    vertices.push_back(b);
    vertices.push_back(c);
    triangles.push_back({base, base + 1, base + 2});
  }

  int triangle_count() const { return static_cast<int>(triangles.size()); }

  /// Drops degenerate (zero-area) triangles and builds the BVH.
  void build() {
    std::vector<std::array<int, 3>> kept;
    kept.reserve(triangles.size());
    const int nv = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
      require(t[0] >= 0 && t[1] >= 0 && t[2] >= 0 && t[0] < nv && t[1] < nv && t[2] < nv,
              "mesh: triangle index out of range");
      const Vec3 e1 = vertices[static_cast<size_t>(t[1])] - vertices[static_cast<size_t>(t[0])];
      const Vec3 e2 = vertices[static_cast<size_t>(t[2])] - vertices[static_cast<size_t>(t[0])];
      if (e1.cross(e2).norm() > 1e-12) kept.push_back(t);
    }
    triangles = std::move(kept);

    order_.resize(triangles.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.clear();
    if (!triangles.empty()) build_node(0, static_cast<int>(triangles.size()));
    built_ = true;
  }

  bool built() const { return built_; }

  /// Nearest hit via BVH traversal.
  MeshHit intersect(const Vec3& o, const Vec3& d, double tmax = kInf) const {
    require(built_, "mesh: intersect before build");
    MeshHit best;
    best.t = tmax;
    if (nodes_.empty()) return MeshHit{};
    const RayFrame fr = make_ray_frame(o, d);
    Vec3 inv_d;
    for (int i = 0; i < 3; ++i) inv_d(i) = d(i) != 0.0 ? 1.0 / d(i) : kInf;
    std::array<int, 64> stack;
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& n = nodes_[static_cast<size_t>(stack[--sp])];
      if (!n.box.hit(o, inv_d, best.t)) continue;
      if (n.count > 0) {
        for (int i = 0; i < n.count; ++i) {
          const int tri = order_[static_cast<size_t>(n.first + i)];
          const auto& idx = triangles[static_cast<size_t>(tri)];
          const double t = ray_triangle(fr, vertices[static_cast<size_t>(idx[0])],
                                        vertices[static_cast<size_t>(idx[1])], vertices[static_cast<size_t>(idx[2])]);
          if (t > 0.0 && t < best.t) {
            best.t = t;
            best.tri = tri;
          }
        }
      } else {
        stack[sp++] = n.left;
        stack[sp++] = n.right;
      }
    }
    if (!best.valid()) return MeshHit{};
    return best;
  }

  /// Reference implementation testing every triangle.
  MeshHit intersect_brute(const Vec3& o, const Vec3& d, double tmax = kInf) const {
    MeshHit best;
    best.t = tmax;
    const RayFrame fr = make_ray_frame(o, d);
    for (size_t i = 0; i < triangles.size(); ++i) {
      const auto& idx = triangles[i];
      const double t = ray_triangle(fr, vertices[static_cast<size_t>(idx[0])], vertices[static_cast<size_t>(idx[1])],
                                    vertices[static_cast<size_t>(idx[2])]);
      if (t > 0.0 && t < best.t) {
        best.t = t;
        best.tri = static_cast<int>(i);
      }
    }
    if (!best.valid()) return MeshHit{};
    return best;
  }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;
    int first = 0, count = 0;  // leaf when count > 0
  };

  Aabb tri_bounds(int tri) const {
    Aabb b;
    for (int v : triangles[static_cast<size_t>(tri)]) b.expand(vertices[static_cast<size_t>(v)]);
    return b;
  }

  int build_node(int first, int count) {
    Node node;
    node.first = first;
    node.count = count;
    Aabb centroid_box;
    for (int i = 0; i < count; ++i) {
      const Aabb tb = tri_bounds(order_[static_cast<size_t>(first + i)]);
      node.box.expand(tb);
      centroid_box.expand(0.5 * (tb.lo + tb.hi));
    }
    const int idx = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (count <= 4) return idx;

    int axis = 0;
    const Vec3 extent = centroid_box.hi - centroid_box.lo;
    for (int i = 1; i < 3; ++i)
      if (extent(i) > extent(axis)) axis = i;
    if (extent(axis) <= 1e-12) return idx;  // cannot split further

    const int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](int a, int b) {
                       const Aabb ba = tri_bounds(a), bb = tri_bounds(b);
                       return ba.lo(axis) + ba.hi(axis) < bb.lo(axis) + bb.hi(axis);
                     });
    nodes_[static_cast<size_t>(idx)].count = 0;
    const int l = build_node(first, mid - first);
    const int r = build_node(mid, first + count - mid);
    nodes_[static_cast<size_t>(idx)].left = l;
    nodes_[static_cast<size_t>(idx)].right = r;
    return idx;
  }

  std::vector<Node> nodes_;
  std::vector<int> order_;
  bool built_ = false;
};

// ---------------------------------------------------------------------------
// Scene construction

inline void append_box(TriangleMesh& mesh, const Vec3& center, const Vec3& half, const Mat3& R = Mat3::Identity()) {
  std::array<Vec3, 8> corners;
  int k = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) corners[static_cast<size_t>(k++)] = center + R * Vec3(sx * half.x(), sy * half.y(), sz * half.z());
  // 12 triangles, outward order not required for distance queries
  static const int faces[12][3] = {{0, 1, 3}, {0, 3, 2}, {4, 6, 7}, {4, 7, 5}, {0, 4, 5}, {0, 5, 1},
                                   {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 5, 7}, {1, 7, 3}};
  for (const auto& f : faces)
    mesh.add_triangle(corners[static_cast<size_t>(f[0])], corners[static_cast<size_t>(f[1])],
                      corners[static_cast<size_t>(f[2])]);
}

/// Terrain surface (two triangles per cell, shared-edge consistent) plus the
/// hanging-bar slabs recorded in the patch metadata.
inline TriangleMesh build_static_mesh(const Heightfield& hf) {
  hf.validate();
  TriangleMesh mesh;
  const int rows = hf.rows(), cols = hf.cols();
  mesh.vertices.reserve(static_cast<size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      mesh.vertices.emplace_back(hf.origin.x() + c * hf.cell_size, hf.origin.y() + r * hf.cell_size,
                                 hf.elevations(r, c));
  auto vid = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      mesh.triangles.push_back({vid(r, c), vid(r, c + 1), vid(r + 1, c)});
      mesh.triangles.push_back({vid(r + 1, c), vid(r, c + 1), vid(r + 1, c + 1)});
    }
  for (int pr = 0; pr < hf.patch_rows; ++pr)
    for (int pc = 0; pc < hf.patch_cols; ++pc) {
      const PatchMeta& m = hf.patches[static_cast<size_t>(pr * hf.patch_cols + pc)];
      if (m.type != TerrainType::hanging_bar) continue;
      const double x = hf.origin.x() + pc * hf.patch_size + m.bar_x;
      const double y = hf.origin.y() + (pr + 0.5) * hf.patch_size;
      const double zc = m.bar_clearance + 0.5 * m.bar_slab_height;
      append_box(mesh, Vec3(x, y, zc),
                 Vec3(m.bar_half_thickness, 0.5 * hf.patch_size, 0.5 * m.bar_slab_height));
    }
  mesh.build();
  return mesh;
}

/// Desk-scale agent body: torso and head boxes posed from the robot state.
inline TriangleMesh make_agent_mesh(const RobotState& s, const SurrogateParams& p = {}) {
  TriangleMesh mesh;
  const Mat3 R = s.base_quat().toRotationMatrix();
  append_box(mesh, s.base_pos, Vec3(0.12, 0.16, 0.3), R);
  append_box(mesh, s.base_pos + R * Vec3(0.0, 0.0, p.head_offset), Vec3(0.09, 0.09, 0.11), R);
  mesh.build();
  return mesh;
}

// ---------------------------------------------------------------------------
// Camera model and rendering

struct CameraModel {
  Vec3 pos_offset = Vec3(0.15, 0.0, 0.07);  // head-frame mount, clear of the head shell
  Vec3 rpy_offset = Vec3::Zero();
  double fov_h_deg = 87.0;
  int width = 64, height = 64;
  double max_range = 6.0;
  double near_clip = 0.05;

  void validate() const {
    require(fov_h_deg > 0.0 && fov_h_deg < 180.0, "camera: fov out of range");
    require(width > 0 && height > 0, "camera: bad resolution");
    require(near_clip > 0.0 && max_range > near_clip, "camera: bad clip planes");
  }
};

struct CameraPose {
  Vec3 position = Vec3::Zero();
  Vec3 rpy = Vec3::Zero();
};

/// World-frame camera pose given the mounting frame (agent head).
inline CameraPose camera_world_pose(const CameraModel& cam, const Vec3& head_pos, const Vec3& head_rpy) {
  const Mat3 Rh = rot_from_euler(head_rpy);
  CameraPose p;
  p.position = head_pos + Rh * cam.pos_offset;
  p.rpy = head_rpy + cam.rpy_offset;  // small-offset convention
  return p;
}

/// Pinhole depth render: Euclidean hit distance per ray against the static
/// mesh and the agent's own dynamic mesh only (visual isolation). Misses
/// read max_range, hits inside the near plane read near_clip.
inline Mat render_depth(const TriangleMesh& static_mesh, const TriangleMesh* own_mesh, const CameraModel& cam,
                        const CameraPose& pose) {
  cam.validate();
  require(pose.position.allFinite() && pose.rpy.allFinite(), "render: non-finite camera pose");
  const Mat3 R = rot_from_euler(pose.rpy);
  const double tan_h = std::tan(0.5 * cam.fov_h_deg * M_PI / 180.0);
  const double tan_v = tan_h * cam.height / cam.width;
  Mat img(cam.height, cam.width);
  for (int i = 0; i < cam.height; ++i) {
    const double v = (1.0 - 2.0 * (i + 0.5) / cam.height) * tan_v;  // up is +
    for (int j = 0; j < cam.width; ++j) {
      const double u = (2.0 * (j + 0.5) / cam.width - 1.0) * tan_h;
      const Vec3 dir = (R * Vec3(1.0, -u, v)).normalized();
      double t = cam.max_range;
      const MeshHit hs = static_mesh.intersect(pose.position, dir, t);
      if (hs.valid()) t = hs.t;
      if (own_mesh != nullptr) {
        const MeshHit hd = own_mesh->intersect(pose.position, dir, t);
        if (hd.valid()) t = hd.t;
      }
      img(i, j) = clampd(t, cam.near_clip, cam.max_range);
    }
  }
  return img;
}

/// Multi-agent wrapper enforcing visual isolation: agent `agent_id` sees the
/// static scene and its own dynamic mesh, never the other agents'.
struct DepthScene {
  TriangleMesh static_mesh;
  std::vector<TriangleMesh> agent_meshes;
};

inline Mat render_agent_depth(const DepthScene& scene, int agent_id, const CameraModel& cam, const CameraPose& pose) {
  require(agent_id >= 0 && agent_id < static_cast<int>(scene.agent_meshes.size()), "render: agent id out of range");
  return render_depth(scene.static_mesh, &scene.agent_meshes[static_cast<size_t>(agent_id)], cam, pose);
}

// ---------------------------------------------------------------------------
// Camera randomization and depth augmentation

struct CameraDrConfig {
  Range pos_jitter{-0.05, 0.05};  // m, per axis
  Range pitch_deg{-10.0, 5.0};
  Range roll_deg{-1.0, 1.0};
  Range yaw_deg{-1.0, 1.0};
  Range fov_shift_deg{-10.0, 10.0};
};

inline CameraModel randomize_camera(const CameraModel& cam, const CameraDrConfig& cfg, RandomStream& rng) {
  CameraModel out = cam;
  for (int i = 0; i < 3; ++i) out.pos_offset(i) += cfg.pos_jitter.sample(rng);
  const double d2r = M_PI / 180.0;
  out.rpy_offset.x() += cfg.roll_deg.sample(rng) * d2r;
  out.rpy_offset.y() += cfg.pitch_deg.sample(rng) * d2r;
  out.rpy_offset.z() += cfg.yaw_deg.sample(rng) * d2r;
  out.fov_h_deg += cfg.fov_shift_deg.sample(rng);
  out.validate();
  return out;
}

struct AugmentConfig {
  double noise_sigma = 0.02;  // m
  double blur_sigma = 1.0;
  bool enable_blur = true;
};

/// 3x3 Gaussian blur with border renormalization (constant images unchanged).
inline Mat gaussian_blur3(const Mat& img, double sigma) {
  require(sigma > 0.0, "blur: sigma must be positive");
  double w[3][3];
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) w[dy + 1][dx + 1] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  Mat out(img.rows(), img.cols());
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j) {
      double acc = 0.0, norm = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int r = i + dy, c = j + dx;
          if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) continue;
          acc += w[dy + 1][dx + 1] * img(r, c);
          norm += w[dy + 1][dx + 1];
        }
      out(i, j) = acc / norm;
    }
  return out;
}

/// Additive Gaussian noise, then blur, then clamp to the camera's range.
inline Mat augment_depth(const Mat& img, const AugmentConfig& cfg, RandomStream& rng, double near_clip = 0.05,
                         double max_range = 6.0) {
  require(all_finite(img), "augment: non-finite image");
  Mat out = img;
  if (cfg.noise_sigma > 0.0)
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) += cfg.noise_sigma * rng.normal();
  if (cfg.enable_blur) out = gaussian_blur3(out, cfg.blur_sigma);
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) = clampd(out(i, j), near_clip, max_range);
  return out;
}

/// Invalid pixels (NaN or negative) take the nearest valid value by BFS, then
/// the standard 3x3 blur unless disabled. All-invalid images read max_range.
inline Mat hole_fill(const Mat& img, double max_range, double blur_sigma = 1.0, bool apply_blur = true) {
  const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  Mat out = img;
  std::queue<std::pair<int, int>> frontier;
  std::vector<char> valid(static_cast<size_t>(rows * cols), 0);
  int n_valid = 0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const bool ok = std::isfinite(img(i, j)) && img(i, j) >= 0.0;
      valid[static_cast<size_t>(i * cols + j)] = ok;
      if (ok) {
        frontier.emplace(i, j);
        ++n_valid;
      }
    }
  if (n_valid == 0) {
    out.setConstant(max_range);  // nothing to smooth
    return out;
  }
  const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
  while (!frontier.empty()) {
    const auto [i, j] = frontier.front();
    frontier.pop();
    for (int k = 0; k < 4; ++k) {
      const int r = i + di[k], c = j + dj[k];
      if (r < 0 || c < 0 || r >= rows || c >= cols) continue;
      if (valid[static_cast<size_t>(r * cols + c)]) continue;
      valid[static_cast<size_t>(r * cols + c)] = 1;
      out(r, c) = out(i, j);
      frontier.emplace(r, c);
    }
  }
  return apply_blur ? gaussian_blur3(out, blur_sigma) : out;
}

// ---------------------------------------------------------------------------
// Export

/// 8-bit binary PGM; depth maps linearly onto [0, 255] over [0, max_range].
inline void save_pgm(const Mat& img, const std::string& path, double max_range) {
  require(max_range > 0.0, "save_pgm: max_range must be positive");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_pgm: cannot open " + path);
  f << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j) {
      const double v = clampd(img(i, j) / max_range, 0.0, 1.0);
      const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
      f.write(reinterpret_cast<const char*>(&byte), 1);
    }
  require(f.good(), "save_pgm: write failed");
}

inline void save_raw_f32(const Mat& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_raw_f32: cannot open " + path);
  const uint32_t rows = static_cast<uint32_t>(img.rows()), cols = static_cast<uint32_t>(img.cols());
  f.write(reinterpret_cast<const char*>(&rows), 4);
  f.write(reinterpret_cast<const char*>(&cols), 4);
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j) {
      const float v = static_cast<float>(img(i, j));
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  require(f.good(), "save_raw_f32: write failed");
}

inline Mat load_raw_f32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_raw_f32: cannot open " + path);
  uint32_t rows = 0, cols = 0;
  f.read(reinterpret_cast<char*>(&rows), 4);
  f.read(reinterpret_cast<char*>(&cols), 4);
  require(f.good() && rows > 0 && cols > 0, "load_raw_f32: bad header");
  Mat img(rows, cols);
  for (uint32_t i = 0; i < rows; ++i)
    for (uint32_t j = 0; j < cols; ++j) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), 4);
      img(i, j) = v;
    }
  require(f.good(), "load_raw_f32: truncated file");
  return img;
}

}  // namespace xloco
