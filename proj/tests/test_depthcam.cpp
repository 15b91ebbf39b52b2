#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "xloco/depthcam.hpp"
#include "support/testutil.hpp"

using namespace xloco;

namespace {

Heightfield flat_field(int patch_rows = 1, int patch_cols = 1) {
  std::vector<PatchMeta> metas(static_cast<size_t>(patch_rows * patch_cols),
                               make_patch_meta(TerrainType::flat, 0.0, TerrainRanges{}));
  return generate_field(metas, patch_rows, patch_cols, TerrainGridConfig{});
}

TriangleMesh random_soup(RandomStream& rng, int n_tris) {
  TriangleMesh m;
  for (int i = 0; i < n_tris; ++i) {
    const Vec3 a(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const Vec3 e1(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 e2(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    m.add_triangle(a, a + e1, a + e2);
  }
  m.build();
  return m;
}

}  // namespace

TEST_CASE("static mesh has two triangles per cell and shared vertices") {
  const Heightfield hf = flat_field();
  const TriangleMesh mesh = build_static_mesh(hf);
  const int n = hf.rows(), m = hf.cols();
  REQUIRE(mesh.triangle_count() == 2 * (n - 1) * (m - 1));
  REQUIRE(static_cast<int>(mesh.vertices.size()) == n * m);
  for (const Vec3& v : mesh.vertices) REQUIRE(v.z() == 0.0);
}

TEST_CASE("hanging bar patches add a slab to the static mesh") {
  std::vector<PatchMeta> metas{make_patch_meta_param(TerrainType::hanging_bar, 0.8)};
  const Heightfield hf = generate_field(metas, 1, 1, TerrainGridConfig{});
  const TriangleMesh mesh = build_static_mesh(hf);
  const int n = hf.rows(), m = hf.cols();
  REQUIRE(mesh.triangle_count() == 2 * (n - 1) * (m - 1) + 12);

  // a ray straight down over the bar x sees the slab top, not the ground
  const PatchMeta& meta = hf.patch_at(4.0, 4.0);
  const Vec3 o(hf.origin.x() + meta.bar_x, hf.origin.y() + 4.0, 3.0);
  const MeshHit hit = mesh.intersect(o, Vec3(0, 0, -1));
  REQUIRE(hit.valid());
  const double slab_top = meta.bar_clearance + meta.bar_slab_height;
  REQUIRE(std::abs((3.0 - hit.t) - slab_top) < 1e-9);
}

TEST_CASE("degenerate triangles are dropped at build") {
  TriangleMesh m;
  m.add_triangle(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0));
  m.add_triangle(Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(1, 1, 1));  // repeated vertex
  m.add_triangle(Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2));  // collinear
  m.build();
  REQUIRE(m.triangle_count() == 1);
}

TEST_CASE("bvh intersection matches brute force on random scenes") {
  RandomStream rng(20240931ull);
  int hits = 0;
  for (int scene = 0; scene < 50; ++scene) {
    const TriangleMesh mesh = random_soup(rng, 1 + rng.uniform_index(100));
    for (int r = 0; r < 200; ++r) {
      const Vec3 o(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      if (d.norm() < 1e-6) d = Vec3(1, 0, 0);
      d.normalize();
      const MeshHit a = mesh.intersect(o, d);
      const MeshHit b = mesh.intersect_brute(o, d);
      REQUIRE(a.valid() == b.valid());
      if (a.valid()) {
        REQUIRE(a.tri == b.tri);
        REQUIRE(std::abs(a.t - b.t) < 1e-6);
        ++hits;
      }
    }
  }
  REQUIRE(hits > 300);  // the comparison must not be vacuous
}

TEST_CASE("grid mesh is watertight: straight-down rays never fall through shared edges") {
  const Heightfield hf = flat_field();
  const TriangleMesh mesh = build_static_mesh(hf);
  RandomStream rng(7u);
  for (int k = 0; k < 3000; ++k) {
    double x = hf.origin.x() + rng.uniform(0.5, 7.5);
    double y = hf.origin.y() + rng.uniform(0.5, 7.5);
    if (k % 3 == 0) {  // snap onto grid lines and vertices
      x = hf.origin.x() + 0.1 * std::floor((x - hf.origin.x()) / 0.1);
      if (k % 6 == 0) y = hf.origin.y() + 0.1 * std::floor((y - hf.origin.y()) / 0.1);
    }
    const MeshHit hit = mesh.intersect(Vec3(x, y, 2.0), Vec3(0, 0, -1));
    REQUIRE(hit.valid());
    REQUIRE(std::abs(hit.t - 2.0) < 1e-9);
  }
}

TEST_CASE("downward camera over a flat plane matches the pinhole closed form") {
  const Heightfield hf = flat_field();
  const TriangleMesh mesh = build_static_mesh(hf);
  CameraModel cam;
  cam.fov_h_deg = 90.0;
  CameraPose pose;
  pose.position = Vec3(hf.origin.x() + 4.0, hf.origin.y() + 4.0, 2.0);
  pose.rpy = Vec3(0.0, M_PI / 2.0, 0.0);  // pitch straight down

  const Mat img = render_depth(mesh, nullptr, cam, pose);
  const double tan_h = std::tan(0.25 * M_PI);
  for (int i = 0; i < cam.height; ++i)
    for (int j = 0; j < cam.width; ++j) {
      const double u = (2.0 * (j + 0.5) / cam.width - 1.0) * tan_h;
      const double v = (1.0 - 2.0 * (i + 0.5) / cam.height) * tan_h;
      const double expect = 2.0 * std::sqrt(1.0 + u * u + v * v);
      REQUIRE(std::abs(img(i, j) - expect) < 1e-9);
    }

  // odd resolution has an exact centre ray
  CameraModel odd = cam;
  odd.width = odd.height = 65;
  const Mat img2 = render_depth(mesh, nullptr, odd, pose);
  REQUIRE(std::abs(img2(32, 32) - 2.0) < 1e-12);
}

TEST_CASE("empty scene reads max_range everywhere") {
  TriangleMesh mesh;
  mesh.build();
  CameraModel cam;
  const Mat img = render_depth(mesh, nullptr, cam, CameraPose{});
  REQUIRE(img.rows() == 64);
  REQUIRE(img.cols() == 64);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) REQUIRE(img(i, j) == cam.max_range);
}

TEST_CASE("hits inside the near plane clamp to near_clip") {
  TriangleMesh wall;
  wall.add_triangle(Vec3(0.01, -5, -5), Vec3(0.01, 5, -5), Vec3(0.01, 0, 5));
  wall.build();
  CameraModel cam;
  const Mat img = render_depth(wall, nullptr, cam, CameraPose{});
  REQUIRE(img(32, 32) == cam.near_clip);
}

TEST_CASE("centre depth strictly decreases while approaching a wall until the near clip") {
  TriangleMesh wall;
  wall.add_triangle(Vec3(2.0, -4, -4), Vec3(2.0, 4, -4), Vec3(2.0, -4, 4));
  wall.add_triangle(Vec3(2.0, 4, -4), Vec3(2.0, 4, 4), Vec3(2.0, -4, 4));
  wall.build();
  CameraModel cam;
  cam.width = cam.height = 65;  // exact centre ray
  double prev = kInf;
  bool clipped = false;
  for (double x = -3.0; x < 1.99; x += 0.05) {
    CameraPose pose;
    pose.position = Vec3(x, 0.0, 0.0);
    const Mat img = render_depth(wall, nullptr, cam, pose);
    const double d = img(32, 32);
    if (d <= cam.near_clip + 1e-12) {
      clipped = true;
      REQUIRE(std::abs(d - cam.near_clip) < 1e-12);
      break;
    }
    if (prev < kInf) REQUIRE(d < prev);
    if (prev < cam.max_range) REQUIRE(std::abs((prev - d) - 0.05) < 1e-9);
    prev = d;
  }
  REQUIRE(clipped);
}

TEST_CASE("agents never see other agents' dynamic meshes") {
  const Heightfield hf = flat_field();
  DepthScene scene;
  scene.static_mesh = build_static_mesh(hf);

  RobotState self;
  self.base_pos = Vec3(hf.origin.x() + 2.0, hf.origin.y() + 4.0, 0.78);
  RobotState other = self;
  other.base_pos.x() += 1.5;  // directly in front of the camera
  scene.agent_meshes.push_back(make_agent_mesh(self));
  scene.agent_meshes.push_back(make_agent_mesh(other));

  CameraModel cam;
  const CameraPose pose = camera_world_pose(cam, self.base_pos + Vec3(0, 0, 0.55), Vec3::Zero());
  const Mat with_other = render_agent_depth(scene, 0, cam, pose);

  DepthScene alone;
  alone.static_mesh = build_static_mesh(hf);
  alone.agent_meshes.push_back(make_agent_mesh(self));
  const Mat solo = render_agent_depth(alone, 0, cam, pose);

  REQUIRE(with_other == solo);  // pixel-exact isolation

  // sanity: the other agent's mesh would be visible if it were static
  TriangleMesh as_static = scene.static_mesh;
  const TriangleMesh other_mesh = make_agent_mesh(other);
  for (const auto& t : other_mesh.triangles)
    as_static.add_triangle(other_mesh.vertices[static_cast<size_t>(t[0])],
                           other_mesh.vertices[static_cast<size_t>(t[1])],
                           other_mesh.vertices[static_cast<size_t>(t[2])]);
  as_static.build();
  const Mat occluded = render_depth(as_static, &scene.agent_meshes[0], cam, pose);
  REQUIRE(occluded != solo);
  REQUIRE(occluded(32, 32) < solo(32, 32));
}

TEST_CASE("own mesh is part of the render") {
  TriangleMesh empty;
  empty.build();
  TriangleMesh own;
  own.add_triangle(Vec3(1.0, -2, -2), Vec3(1.0, 2, -2), Vec3(1.0, 0, 2));
  own.build();
  CameraModel cam;
  cam.width = cam.height = 65;
  const Mat img = render_depth(empty, &own, cam, CameraPose{});
  REQUIRE(std::abs(img(32, 32) - 1.0) < 1e-12);
}

TEST_CASE("camera randomization respects the published ranges") {
  CameraModel base;
  CameraDrConfig cfg;
  RandomStream rng(11u);
  const double d2r = M_PI / 180.0;
  double lo_pitch = kInf, hi_pitch = -kInf;
  for (int i = 0; i < 100000; ++i) {
    const CameraModel c = randomize_camera(base, cfg, rng);
    for (int k = 0; k < 3; ++k) {
      const double dp = c.pos_offset(k) - base.pos_offset(k);
      REQUIRE(dp >= -0.05);
      REQUIRE(dp <= 0.05);
    }
    const double droll = c.rpy_offset.x() - base.rpy_offset.x();
    const double dpitch = c.rpy_offset.y() - base.rpy_offset.y();
    const double dyaw = c.rpy_offset.z() - base.rpy_offset.z();
    REQUIRE(droll >= -1.0 * d2r);
    REQUIRE(droll <= 1.0 * d2r);
    REQUIRE(dpitch >= -10.0 * d2r);
    REQUIRE(dpitch <= 5.0 * d2r);
    REQUIRE(dyaw >= -1.0 * d2r);
    REQUIRE(dyaw <= 1.0 * d2r);
    REQUIRE(c.fov_h_deg >= base.fov_h_deg - 10.0);
    REQUIRE(c.fov_h_deg <= base.fov_h_deg + 10.0);
    lo_pitch = std::min(lo_pitch, dpitch);
    hi_pitch = std::max(hi_pitch, dpitch);
  }
  // the asymmetric pitch range is actually exercised on both sides
  REQUIRE(lo_pitch < -9.5 * d2r);
  REQUIRE(hi_pitch > 4.5 * d2r);
}

TEST_CASE("collapsed randomization ranges leave the camera unchanged") {
  CameraModel base;
  CameraDrConfig cfg;
  cfg.pos_jitter = Range{0.0, 0.0};
  cfg.pitch_deg = Range{0.0, 0.0};
  cfg.roll_deg = Range{0.0, 0.0};
  cfg.yaw_deg = Range{0.0, 0.0};
  cfg.fov_shift_deg = Range{0.0, 0.0};
  RandomStream rng(3u);
  const CameraModel c = randomize_camera(base, cfg, rng);
  REQUIRE(c.pos_offset == base.pos_offset);
  REQUIRE(c.rpy_offset == base.rpy_offset);
  REQUIRE(c.fov_h_deg == base.fov_h_deg);
}

TEST_CASE("augmentation with zero noise and no blur is the identity") {
  RandomStream rng(5u);
  Mat img(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) img(i, j) = rng.uniform(0.1, 5.9);
  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.enable_blur = false;
  const Mat out = augment_depth(img, cfg, rng);
  REQUIRE(out == img);
}

TEST_CASE("renormalized blur leaves constant images unchanged") {
  Mat img = Mat::Constant(32, 32, 3.7);
  const Mat blurred = gaussian_blur3(img, 1.0);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) REQUIRE(std::abs(blurred(i, j) - 3.7) < 1e-12);

  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  RandomStream rng(6u);
  const Mat out = augment_depth(img, cfg, rng);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) REQUIRE(std::abs(out(i, j) - 3.7) < 1e-12);
}

TEST_CASE("blur matches a hand-computed 3x3 stencil at an interior pixel") {
  Mat img = Mat::Zero(5, 5);
  img(2, 2) = 1.0;
  const Mat out = gaussian_blur3(img, 1.0);
  const double w0 = 1.0, w1 = std::exp(-0.5), w2 = std::exp(-1.0);
  const double norm = w0 + 4.0 * w1 + 4.0 * w2;
  REQUIRE(std::abs(out(2, 2) - w0 / norm) < 1e-12);
  REQUIRE(std::abs(out(1, 2) - w1 / norm) < 1e-12);
  REQUIRE(std::abs(out(1, 1) - w2 / norm) < 1e-12);
  REQUIRE(out(0, 0) == 0.0);
}

TEST_CASE("depth noise standard deviation matches its parameter within 5%") {
  AugmentConfig cfg;
  cfg.enable_blur = false;
  RandomStream rng(12u);
  double sum = 0.0, sum_sq = 0.0;
  long n = 0;
  const Mat img = Mat::Constant(100, 100, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const Mat out = augment_depth(img, cfg, rng, 0.0, 100.0);  // wide clamp
    for (int i = 0; i < 100; ++i)
      for (int j = 0; j < 100; ++j) {
        const double d = out(i, j) - img(i, j);
        sum += d;
        sum_sq += d * d;
        ++n;
      }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  REQUIRE(std::abs(sd - cfg.noise_sigma) < 0.05 * cfg.noise_sigma);
  REQUIRE(std::abs(mean) < 1e-3);
}

TEST_CASE("augmentation clamps into the camera depth range") {
  Mat img = Mat::Constant(8, 8, 5.99);
  AugmentConfig cfg;
  cfg.noise_sigma = 1.0;  // large noise to force clipping
  cfg.enable_blur = false;
  RandomStream rng(9u);
  bool saw_max = false, saw_min = false;
  for (int rep = 0; rep < 200; ++rep) {
    const Mat out = augment_depth(img, cfg, rng, 0.05, 6.0);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        REQUIRE(out(i, j) >= 0.05);
        REQUIRE(out(i, j) <= 6.0);
        if (out(i, j) == 6.0) saw_max = true;
      }
    const Mat low = augment_depth(Mat::Constant(8, 8, 0.06), cfg, rng, 0.05, 6.0);
    if ((low.array() == 0.05).any()) saw_min = true;
  }
  REQUIRE(saw_max);
  REQUIRE(saw_min);
}

TEST_CASE("hole fill with no holes equals the plain blur") {
  RandomStream rng(14u);
  Mat img(20, 20);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) img(i, j) = rng.uniform(0.1, 5.9);
  const Mat filled = hole_fill(img, 6.0);
  const Mat blurred = gaussian_blur3(img, 1.0);
  REQUIRE(filled == blurred);
}

TEST_CASE("holes inside a constant image fill to that constant") {
  Mat img = Mat::Constant(16, 16, 2.5);
  img(7, 7) = std::numeric_limits<double>::quiet_NaN();
  img(2, 9) = -1.0;  // negative also counts as invalid
  const Mat filled = hole_fill(img, 6.0);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) REQUIRE(std::abs(filled(i, j) - 2.5) < 1e-12);
}

TEST_CASE("half-plane of holes floods with the valid side before blurring") {
  Mat img = Mat::Constant(12, 12, 1.7);
  for (int i = 0; i < 12; ++i)
    for (int j = 6; j < 12; ++j) img(i, j) = std::numeric_limits<double>::quiet_NaN();
  const Mat filled = hole_fill(img, 6.0, 1.0, /*apply_blur=*/false);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) REQUIRE(filled(i, j) == 1.7);
}

TEST_CASE("hole fill takes the first valid neighbour in scan order") {
  Mat img(3, 3);
  int v = 1;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) img(i, j) = v++;
  img(1, 1) = std::numeric_limits<double>::quiet_NaN();
  const Mat filled = hole_fill(img, 6.0, 1.0, false);
  REQUIRE(filled(1, 1) == 2.0);  // top-middle reaches it first
}

TEST_CASE("fully invalid images read max_range") {
  Mat img = Mat::Constant(10, 10, std::numeric_limits<double>::quiet_NaN());
  const Mat filled = hole_fill(img, 6.0);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) REQUIRE(filled(i, j) == 6.0);
}

TEST_CASE("pgm export writes a valid 8-bit grayscale file") {
  Mat img = Mat::Constant(4, 6, 3.0);
  img(0, 0) = 0.0;
  img(3, 5) = 6.0;
  img(1, 2) = 7.5;  // clamps to white
  const std::string path = "depth_test.pgm";
  save_pgm(img, path, 6.0);
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  f.get();  // single whitespace after header
  REQUIRE(magic == "P5");
  REQUIRE(w == 6);
  REQUIRE(h == 4);
  REQUIRE(maxval == 255);
  std::vector<unsigned char> bytes(24);
  f.read(reinterpret_cast<char*>(bytes.data()), 24);
  REQUIRE(f.gcount() == 24);
  REQUIRE(bytes[0] == 0);
  REQUIRE(bytes[2] == 128);  // 3.0 / 6.0 -> round(127.5)
  REQUIRE(bytes[1 * 6 + 2] == 255);
  REQUIRE(bytes[3 * 6 + 5] == 255);
  std::remove(path.c_str());
}

TEST_CASE("raw float export round trips") {
  RandomStream rng(21u);
  Mat img(9, 7);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 7; ++j) img(i, j) = rng.uniform(0.05, 6.0);
  const std::string path = "depth_test.f32";
  save_raw_f32(img, path);
  const Mat back = load_raw_f32(path);
  REQUIRE(back.rows() == 9);
  REQUIRE(back.cols() == 7);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 7; ++j) REQUIRE(back(i, j) == static_cast<double>(static_cast<float>(img(i, j))));
  std::remove(path.c_str());
  REQUIRE_THROWS_AS(load_raw_f32("no_such_depth_file.f32"), ConfigError);
}

TEST_CASE("renders are deterministic for a fixed pose") {
  const Heightfield hf = flat_field();
  const TriangleMesh mesh = build_static_mesh(hf);
  CameraModel cam;
  CameraPose pose;
  pose.position = Vec3(hf.origin.x() + 4.0, hf.origin.y() + 4.0, 1.5);
  pose.rpy = Vec3(0.02, 0.4, -0.3);
  const Mat a = render_depth(mesh, nullptr, cam, pose);
  const Mat b = render_depth(mesh, nullptr, cam, pose);
  REQUIRE(a == b);
}
