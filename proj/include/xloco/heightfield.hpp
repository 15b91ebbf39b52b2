#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/rng.hpp"

namespace xloco {

enum class TerrainType { flat, slope, pit, stairs, hanging_bar, box, gap };

inline const char* terrain_name(TerrainType t) {
  switch (t) {
    case TerrainType::flat: return "flat";
    case TerrainType::slope: return "slope";
    case TerrainType::pit: return "pit";
    case TerrainType::stairs: return "stairs";
    case TerrainType::hanging_bar: return "hanging_bar";
    case TerrainType::box: return "box";
    case TerrainType::gap: return "gap";
  }
  return "?";
}

inline TerrainType terrain_from_name(const std::string& s) {
  for (TerrainType t : {TerrainType::flat, TerrainType::slope, TerrainType::pit, TerrainType::stairs,
                        TerrainType::hanging_bar, TerrainType::box, TerrainType::gap})
    if (s == terrain_name(t)) return t;
  throw ConfigError("unknown terrain type: " + s);
}

/// One 8m x 8m course patch. Geometry is a function of local forward
/// coordinate only (obstacles are full-width bands), which keeps the
/// surrogate contact model and the reward oracles closed-form.
struct PatchMeta {
  TerrainType type = TerrainType::flat;
  double difficulty = 0.0;
  int context_id = 0;  // 1 = box (climb), 2 = hanging bar (traverse under), 0 otherwise

  double slope_angle = 0.0;    // rad (slope)
  double pit_depth = 0.0;      // m (pit)
  double step_height = 0.0;    // m (stairs)
  double box_height = 0.0;     // m (box)
  double bar_clearance = 0.0;  // m, underside of the bar above ground (hanging_bar)
  double gap_width = 0.0;      // m (gap)

  // Fixed obstacle placement along local x (m). See patch_elevation().
  double box_x = 3.0;
  double box_len = 2.5;
  double bar_x = 4.0;
  double bar_half_thickness = 0.05;  // bar slab is [bar_x - t, bar_x + t] in x
  double bar_slab_height = 0.3;      // vertical extent of the slab above the clearance plane
};

struct TerrainRanges {
  // Curriculum parameter ranges, linear in difficulty.
  double slope_deg_max = 20.0;
  double pit_min = 0.05, pit_max = 0.30;
  double bar_clear_easy = 0.72, bar_clear_hard = 0.67;  // clearance shrinks with difficulty
  double stair_max = 0.15;
  double box_min = 0.45, box_max = 0.65;
  double gap_min = 0.10, gap_max = 0.80;
};

inline int terrain_context_id(TerrainType t) {
  if (t == TerrainType::box) return 1;
  if (t == TerrainType::hanging_bar) return 2;
  return 0;
}

/// Difficulty in [0,1] -> physical obstacle parameters.
inline PatchMeta make_patch_meta(TerrainType type, double difficulty, const TerrainRanges& r = {}) {
  require(difficulty >= 0.0 && difficulty <= 1.0, "terrain difficulty must lie in [0,1]");
  PatchMeta m;
  m.type = type;
  m.difficulty = difficulty;
  m.context_id = terrain_context_id(type);
  switch (type) {
    case TerrainType::flat: break;
    case TerrainType::slope: m.slope_angle = difficulty * r.slope_deg_max * M_PI / 180.0; break;
    case TerrainType::pit: m.pit_depth = r.pit_min + difficulty * (r.pit_max - r.pit_min); break;
    case TerrainType::stairs: m.step_height = difficulty * r.stair_max; break;
    case TerrainType::hanging_bar:
      m.bar_clearance = r.bar_clear_easy + difficulty * (r.bar_clear_hard - r.bar_clear_easy);
      break;
    case TerrainType::box: m.box_height = r.box_min + difficulty * (r.box_max - r.box_min); break;
    case TerrainType::gap: m.gap_width = r.gap_min + difficulty * (r.gap_max - r.gap_min); break;
  }
  return m;
}

/// Direct physical parameter (used by the evaluation terrain sampler).
inline PatchMeta make_patch_meta_param(TerrainType type, double param) {
  PatchMeta m;
  m.type = type;
  m.context_id = terrain_context_id(type);
  switch (type) {
    case TerrainType::flat: break;
    case TerrainType::slope: m.slope_angle = param * M_PI / 180.0; break;
    case TerrainType::pit: m.pit_depth = param; break;
    case TerrainType::stairs: m.step_height = param; break;
    case TerrainType::hanging_bar: m.bar_clearance = param; break;
    case TerrainType::box: m.box_height = param; break;
    case TerrainType::gap: m.gap_width = param; break;
  }
  return m;
}

/// Ground elevation of a patch at local forward coordinate lx in [0, L].
/// Layout (L = 8 m): 0-2 m start zone, obstacle band, exit zone.
inline double patch_elevation(const PatchMeta& m, double lx, double patch_size = 8.0) {
  const double L = patch_size;
  lx = clampd(lx, 0.0, L);
  switch (m.type) {
    case TerrainType::flat:
    case TerrainType::hanging_bar:
      return 0.0;
    case TerrainType::slope: {
      // Ramp up 1->4 m, crest 4->5 m, ramp down 5->8 m.
      const double t = std::tan(m.slope_angle);
      if (lx < 1.0) return 0.0;
      if (lx < 4.0) return (lx - 1.0) * t;
      if (lx < 5.0) return 3.0 * t;
      return std::max(0.0, 3.0 * t - (lx - 5.0) * t);
    }
    case TerrainType::pit:
      // Depression 3->5 m: step down pit_depth, climb back out.
      return (lx >= 3.0 && lx < 5.0) ? -m.pit_depth : 0.0;
    case TerrainType::stairs: {
      // 5 steps up (run 0.3 m), landing, 5 steps down.
      const double run = 0.3;
      if (lx < 2.0) return 0.0;
      if (lx < 3.5) return (std::floor((lx - 2.0) / run) + 1.0) * m.step_height;
      if (lx < 4.5) return 5.0 * m.step_height;
      if (lx < 6.0) return (5.0 - std::floor((lx - 4.5) / run) - 1.0) * m.step_height;
      return 0.0;
    }
    case TerrainType::box:
      return (lx >= m.box_x && lx < m.box_x + m.box_len) ? m.box_height : 0.0;
    case TerrainType::gap: {
      const double half = 0.5 * m.gap_width;
      return (lx >= 4.0 - half && lx < 4.0 + half) ? -1.0 : 0.0;
    }
  }
  return 0.0;
}

struct TerrainGridConfig {
  double cell_size = 0.1;   // m
  double patch_size = 8.0;  // m
};

/// Regular-grid terrain. elevations(r, c) is the ground height at
/// world (origin.x + c * cell, origin.y + r * cell). Forward progress on a
/// course runs along +x, i.e. along columns.
struct Heightfield {
  Mat elevations;  // rows x cols of m
  double cell_size = 0.1;
  Vec2 origin = Vec2::Zero();
  int patch_rows = 1, patch_cols = 1;
  double patch_size = 8.0;
  std::vector<PatchMeta> patches;  // row-major (patch_rows x patch_cols)

  int rows() const { return static_cast<int>(elevations.rows()); }
  int cols() const { return static_cast<int>(elevations.cols()); }
  double extent_x() const { return (cols() - 1) * cell_size; }
  double extent_y() const { return (rows() - 1) * cell_size; }

  void validate() const {
    require(rows() >= 2 && cols() >= 2, "heightfield needs at least a 2x2 grid");
    require(cell_size > 0.0, "heightfield cell_size must be positive");
    require(elevations.allFinite(), "heightfield elevations must be finite");
    require(static_cast<int>(patches.size()) == patch_rows * patch_cols,
            "heightfield patch list does not match patch grid dims");
  }

  /// Bilinear ground height; queries outside the grid clamp to the border.
  double height_at(double x, double y) const {
    const double gx = clampd((x - origin.x()) / cell_size, 0.0, static_cast<double>(cols() - 1));
    const double gy = clampd((y - origin.y()) / cell_size, 0.0, static_cast<double>(rows() - 1));
    const int c0 = std::min(static_cast<int>(gx), cols() - 2);
    const int r0 = std::min(static_cast<int>(gy), rows() - 2);
    const double fx = gx - c0, fy = gy - r0;
    const double z00 = elevations(r0, c0), z01 = elevations(r0, c0 + 1);
    const double z10 = elevations(r0 + 1, c0), z11 = elevations(r0 + 1, c0 + 1);
    return (1 - fy) * ((1 - fx) * z00 + fx * z01) + fy * ((1 - fx) * z10 + fx * z11);
  }

  const PatchMeta& patch_at(double x, double y) const {
    int pc = static_cast<int>(std::floor((x - origin.x()) / patch_size));
    int pr = static_cast<int>(std::floor((y - origin.y()) / patch_size));
    pc = std::clamp(pc, 0, patch_cols - 1);
    pr = std::clamp(pr, 0, patch_rows - 1);
    return patches[static_cast<size_t>(pr * patch_cols + pc)];
  }

  double min_elevation() const { return elevations.minCoeff(); }
  double max_elevation() const { return elevations.maxCoeff(); }
};

/// Build the grid for an arbitrary patch arrangement.
inline Heightfield generate_field(const std::vector<PatchMeta>& patches, int patch_rows, int patch_cols,
                                  const TerrainGridConfig& cfg = {}) {
  require(static_cast<int>(patches.size()) == patch_rows * patch_cols, "patch list does not match grid dims");
  Heightfield hf;
  hf.cell_size = cfg.cell_size;
  hf.patch_size = cfg.patch_size;
  hf.patch_rows = patch_rows;
  hf.patch_cols = patch_cols;
  hf.patches = patches;
  const int cells_per_patch = static_cast<int>(std::llround(cfg.patch_size / cfg.cell_size));
  require(std::abs(cells_per_patch * cfg.cell_size - cfg.patch_size) < 1e-9,
          "patch_size must be an integer number of cells");
  const int rows = patch_rows * cells_per_patch + 1;
  const int cols = patch_cols * cells_per_patch + 1;
  hf.elevations = Mat::Zero(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double x = c * cfg.cell_size, y = r * cfg.cell_size;
      int pc = std::min(static_cast<int>(x / cfg.patch_size), patch_cols - 1);
      int pr = std::min(static_cast<int>(y / cfg.patch_size), patch_rows - 1);
      const PatchMeta& m = patches[static_cast<size_t>(pr * patch_cols + pc)];
      hf.elevations(r, c) = patch_elevation(m, x - pc * cfg.patch_size, cfg.patch_size);
    }
  }
  return hf;
}

/// Single-patch course of the given type and difficulty.
inline Heightfield generate_terrain(TerrainType type, double difficulty, RandomStream& rng,
                                    const TerrainGridConfig& cfg = {}, const TerrainRanges& ranges = {}) {
  (void)rng;  // geometry is deterministic; stochastic variation enters through start poses and DR
  return generate_field({make_patch_meta(type, difficulty, ranges)}, 1, 1, cfg);
}

// ---------------------------------------------------------------------------
// Terrain curriculum

/// Promote on >= 50% traversal; demote on early termination below 25%.
inline int curriculum_update(int level, double distance_fraction, bool terminated_early, int max_level) {
  require(level >= 0 && level <= max_level, "curriculum level out of range");
  if (distance_fraction >= 0.5)
    ++level;
  else if (terminated_early && distance_fraction < 0.25)
    --level;
  return std::clamp(level, 0, max_level);
}

inline double curriculum_difficulty(int level, int max_level) {
  return max_level > 0 ? static_cast<double>(level) / max_level : 0.0;
}

// ---------------------------------------------------------------------------
// Elevation scan

/// Pelvis-centered, yaw-aligned scan grid; 13 x 11 at 0.1 m covers
/// 1.2 m x 1.0 m and yields the default 143-sample map.
struct HeightScanConfig {
  int nx = 13;
  int ny = 11;
  double spacing = 0.1;  // m
  int count() const { return nx * ny; }
};

/// Terrain heights under the scan grid, relative to base height:
/// sample_k = ground(p_k) - base_z.
inline Vec height_samples(const Heightfield& hf, const Vec3& base_pos, double yaw,
                          const HeightScanConfig& grid = {}) {
  Vec out(grid.count());
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  int k = 0;
  for (int ix = 0; ix < grid.nx; ++ix) {
    const double ox = (ix - 0.5 * (grid.nx - 1)) * grid.spacing;
    for (int iy = 0; iy < grid.ny; ++iy, ++k) {
      const double oy = (iy - 0.5 * (grid.ny - 1)) * grid.spacing;
      const double wx = base_pos.x() + cy * ox - sy * oy;
      const double wy = base_pos.y() + sy * ox + cy * oy;
      out[k] = hf.height_at(wx, wy) - base_pos.z();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Portable grid file: "XLGR", u32 rows, u32 cols, f32 cell_size,
// f32 origin_x, f32 origin_y, then rows*cols little-endian f32 row-major.

inline void save_grid(const Heightfield& hf, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open grid file for writing: " + path);
  f.write("XLGR", 4);
  auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_f32 = [&](float v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(static_cast<uint32_t>(hf.rows()));
  put_u32(static_cast<uint32_t>(hf.cols()));
  put_f32(static_cast<float>(hf.cell_size));
  put_f32(static_cast<float>(hf.origin.x()));
  put_f32(static_cast<float>(hf.origin.y()));
  for (int r = 0; r < hf.rows(); ++r)
    for (int c = 0; c < hf.cols(); ++c) put_f32(static_cast<float>(hf.elevations(r, c)));
  require(f.good(), "grid file write failed: " + path);
}

inline Heightfield load_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open grid file: " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "XLGR", 4) == 0, "bad grid file magic: " + path);
  auto get_u32 = [&] { uint32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; };
  auto get_f32 = [&] { float v; f.read(reinterpret_cast<char*>(&v), 4); return v; };
  const uint32_t rows = get_u32(), cols = get_u32();
  require(rows >= 2 && cols >= 2 && rows < (1u << 20) && cols < (1u << 20), "grid file dims out of range");
  Heightfield hf;
  hf.cell_size = get_f32();
  const double ox = get_f32();
  const double oy = get_f32();
  hf.origin = Vec2(ox, oy);
  hf.elevations.resize(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) hf.elevations(r, c) = get_f32();
  require(f.good(), "grid file truncated: " + path);
  hf.patch_rows = 1;
  hf.patch_cols = 1;
  hf.patch_size = std::max(hf.extent_x(), hf.extent_y());
  hf.patches = {PatchMeta{}};
  return hf;
}

}  // namespace xloco
