#include <catch2/catch_amalgamated.hpp>

#include "support/testutil.hpp"
#include "xloco/amp.hpp"
#include "xloco/core.hpp"

using namespace xloco;
using testutil::max_grad_rel_err;
using testutil::rel_err;

namespace {

Mlp make_disc(int in, RandomStream& rng) { return Mlp::make(in, {16, 16}, 1, rng); }

Mat gaussian_batch(int dim, int n, RandomStream& rng, double shift = 0.0, double scale = 1.0) {
  Mat x(dim, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < dim; ++r) x(r, c) = shift + scale * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("discriminator loss fixtures") {
  CHECK(discriminator_loss(1.0, -1.0, 0.0, 10.0) == 0.0);
  CHECK(discriminator_loss(0.0, 0.0, 0.0, 10.0) == 2.0);
  CHECK(discriminator_loss(0.0, 0.0, 0.01, 10.0) == Catch::Approx(2.05).margin(1e-12));
  // doubling alpha_d doubles exactly the penalty contribution
  const double base = discriminator_loss(0.3, -0.2, 0.04, 10.0);
  const double twice = discriminator_loss(0.3, -0.2, 0.04, 20.0);
  CHECK(twice - base == Catch::Approx(0.5 * 10.0 * 0.04).margin(1e-12));
  CHECK_THROWS_AS(discriminator_loss(0.0, 0.0, 0.0, -1.0), ConfigError);
}

TEST_CASE("style reward fixtures and bounds") {
  const double w = 3.0;
  CHECK(style_reward(1.0, w) == w);
  CHECK(style_reward(-1.0, w) == 0.0);
  CHECK(style_reward(0.0, 3.0) == Catch::Approx(2.25).margin(1e-12));
  CHECK(style_reward(3.0, w) == 0.0);  // clipped beyond d = 3
  RandomStream rng(99);
  for (int i = 0; i < 500; ++i) {
    const double d = rng.uniform(-5.0, 5.0);
    const double r = style_reward(d, w);
    CHECK(r >= 0.0);
    CHECK(r <= w);
    if (std::abs(d - 1.0) > 1e-6) CHECK(r < w);  // maximum only at d = 1
  }
}

TEST_CASE("input gradient matches finite differences") {
  RandomStream rng(41);
  Mlp disc = make_disc(10, rng);
  Mat x = gaussian_batch(10, 4, rng);
  const Mat g = discriminator_input_grad(disc, x);
  REQUIRE(g.rows() == 10);
  REQUIRE(g.cols() == 4);
  const double eps = 1e-5;
  double worst = 0.0;
  for (int c = 0; c < x.cols(); ++c) {
    for (int r = 0; r < x.rows(); ++r) {
      Mat xp = x, xm = x;
      xp(r, c) += eps;
      xm(r, c) -= eps;
      const double fd = (disc.forward(xp)(0, c) - disc.forward(xm)(0, c)) / (2.0 * eps);
      worst = std::max(worst, rel_err(g(r, c), fd));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("penalty value equals mean squared input-gradient norm") {
  RandomStream rng(42);
  Mlp disc = make_disc(8, rng);
  Mat x = gaussian_batch(8, 6, rng);
  const double pen = penalty_backward(disc, x, 0.0);
  const Mat g = discriminator_input_grad(disc, x);
  CHECK(pen == Catch::Approx(g.colwise().squaredNorm().mean()).margin(1e-12));
}

TEST_CASE("penalty parameter gradients match finite differences") {
  RandomStream rng(43);
  Mlp disc = make_disc(6, rng);
  Mat x = gaussian_batch(6, 5, rng);

  std::vector<TensorRef> refs;
  disc.collect(refs, "d");
  zero_grads(refs);
  penalty_backward(disc, x, 1.0);
  // scale = 0 accumulates exact zeros, so the loss lambda is value-pure
  auto loss = [&]() { return penalty_backward(disc, x, 0.0); };
  CHECK(max_grad_rel_err(refs, loss) < 1e-3);
}

TEST_CASE("full discriminator objective gradients match finite differences") {
  RandomStream rng(44);
  const double alpha_d = 10.0;
  Mlp disc = make_disc(6, rng);
  Mat ref = gaussian_batch(6, 5, rng, 0.5);
  Mat pol = gaussian_batch(6, 7, rng, -0.5);

  std::vector<TensorRef> refs;
  disc.collect(refs, "d");
  zero_grads(refs);
  {
    const Mat d_ref = disc.forward(ref);
    disc.backward(2.0 * (d_ref.array() - 1.0).matrix() / ref.cols());
    const Mat d_pol = disc.forward(pol);
    disc.backward(2.0 * (d_pol.array() + 1.0).matrix() / pol.cols());
    penalty_backward(disc, ref, 0.5 * alpha_d);
  }
  auto loss = [&]() {
    const double a = (disc.forward(ref).array() - 1.0).square().mean();
    const double b = (disc.forward(pol).array() + 1.0).square().mean();
    return a + b + 0.5 * alpha_d * penalty_backward(disc, ref, 0.0);
  };
  CHECK(max_grad_rel_err(refs, loss) < 1e-4);
}

TEST_CASE("zero learning rate leaves the discriminator bit-identical") {
  RandomStream rng(45);
  Mlp disc = make_disc(12, rng);
  const Mlp before = disc;
  Adam opt(0.0);
  Mat ref = gaussian_batch(12, 8, rng, 0.3);
  Mat pol = gaussian_batch(12, 8, rng, -0.3);
  const AmpStats st = discriminator_update(disc, ref, pol, 10.0, opt);
  CHECK(std::isfinite(st.loss));
  for (size_t l = 0; l < disc.layers.size(); ++l) {
    CHECK(disc.layers[l].W == before.layers[l].W);
    CHECK(disc.layers[l].b == before.layers[l].b);
  }
}

TEST_CASE("matched distributions drive the output toward zero") {
  RandomStream rng(46);
  const int dim = 8;
  Mlp disc = make_disc(dim, rng);
  Adam opt(1e-3);
  for (int it = 0; it < 400; ++it) {
    Mat ref = gaussian_batch(dim, 64, rng, 0.2, 0.7);
    Mat pol = gaussian_batch(dim, 64, rng, 0.2, 0.7);
    discriminator_update(disc, ref, pol, 10.0, opt);
  }
  Mat probe = gaussian_batch(dim, 512, rng, 0.2, 0.7);
  const Mat d = disc.forward(probe);
  CHECK(std::abs(d.mean()) < 0.2);
  const double w = 3.0;
  double style = 0.0;
  for (int c = 0; c < d.cols(); ++c) style += style_reward(d(0, c), w);
  style /= d.cols();
  CHECK(style == Catch::Approx(0.75 * w).margin(0.35 * w));
}

TEST_CASE("separable distributions are classified above 95 percent") {
  RandomStream rng(47);
  const int dim = 8;
  Mlp disc = make_disc(dim, rng);
  Adam opt(1e-3);
  for (int it = 0; it < 500; ++it) {
    Mat ref = gaussian_batch(dim, 64, rng, 1.5, 0.4);
    Mat pol = gaussian_batch(dim, 64, rng, -1.5, 0.4);
    discriminator_update(disc, ref, pol, 10.0, opt);
  }
  Mat ref = gaussian_batch(dim, 400, rng, 1.5, 0.4);
  Mat pol = gaussian_batch(dim, 400, rng, -1.5, 0.4);
  const Mat dr = disc.forward(ref);
  int correct = 0;
  for (int c = 0; c < dr.cols(); ++c) correct += dr(0, c) > 0.0;
  const Mat dp = disc.forward(pol);
  for (int c = 0; c < dp.cols(); ++c) correct += dp(0, c) < 0.0;
  CHECK(correct >= static_cast<int>(0.95 * 800));
}

TEST_CASE("update aborts on non-finite batches") {
  RandomStream rng(48);
  Mlp disc = make_disc(4, rng);
  Adam opt(1e-3);
  Mat ref = gaussian_batch(4, 4, rng);
  Mat pol = ref;
  pol(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(discriminator_update(disc, ref, pol, 10.0, opt), NumericFault);
}

TEST_CASE("motion store windows are consecutive frames, oldest first") {
  ReferenceMotionStore store;
  ReferenceTrajectory tr;
  tr.skill = Skill::walk;
  tr.joints.resize(3, 20);
  for (int j = 0; j < 3; ++j)
    for (int t = 0; t < 20; ++t) tr.joints(j, t) = j + 100.0 * t;
  tr.base = Mat::Zero(6, 20);
  store.trajectories.push_back(tr);

  RandomStream rng(49);
  for (int i = 0; i < 50; ++i) {
    const Vec w = store.sample_window(rng);
    REQUIRE(w.size() == 15);
    const double start = (w(0) - 0.0) / 100.0;
    CHECK(start == Catch::Approx(std::round(start)).margin(1e-12));
    CHECK(start >= 0.0);
    CHECK(start <= 15.0);
    for (int k = 0; k < 5; ++k)
      for (int j = 0; j < 3; ++j) CHECK(w(k * 3 + j) == Catch::Approx(j + 100.0 * (start + k)).margin(1e-12));
  }
  const Mat batch = store.sample_windows(7, rng);
  CHECK(batch.rows() == 15);
  CHECK(batch.cols() == 7);

  ReferenceMotionStore empty;
  CHECK_THROWS_AS(empty.sample_window(rng), ConfigError);
}

TEST_CASE("amp window flattens the last five frames") {
  std::deque<Vec> hist;
  for (int t = 0; t < 7; ++t) hist.push_back(Vec::Constant(2, static_cast<double>(t)));
  const Vec w = amp_window(hist, 5);
  REQUIRE(w.size() == 10);
  for (int k = 0; k < 5; ++k) {
    CHECK(w(2 * k) == 2.0 + k);
    CHECK(w(2 * k + 1) == 2.0 + k);
  }
  std::deque<Vec> shorthist(3, Vec::Zero(2));
  CHECK_THROWS_AS(amp_window(shorthist, 5), ConfigError);
}

TEST_CASE("generated motions are smooth and inside joint limits") {
  const JointLayout layout = make_layout("compact8");
  const JointLayout full = make_layout("g1_23");
  RandomStream rng(50);
  for (Skill s : {Skill::walk, Skill::recover, Skill::roll, Skill::climb}) {
    for (const JointLayout* lay : {&layout, &full}) {
      auto trajs = generate_reference_motions(s, 3, rng, *lay);
      REQUIRE(trajs.size() == 3);
      for (const auto& tr : trajs) {
        REQUIRE(tr.joints.rows() == lay->dof());
        REQUIRE(tr.frames() == 150);
        for (int j = 0; j < lay->dof(); ++j) {
          const auto& info = lay->joint(j);
          for (int t = 0; t < tr.frames(); ++t) {
            CHECK(tr.joints(j, t) >= info.q_min - 1e-9);
            CHECK(tr.joints(j, t) <= info.q_max + 1e-9);
            if (t > 0) CHECK(std::abs(tr.joints(j, t) - tr.joints(j, t - 1)) < 0.2);
          }
        }
      }
    }
  }
  CHECK(generate_reference_motions(Skill::walk, 0, rng, layout).empty());
}

TEST_CASE("generated motions are deterministic in the seed") {
  const JointLayout layout = make_layout("compact8");
  RandomStream a(51), b(51);
  auto ta = generate_reference_motions(Skill::roll, 2, a, layout);
  auto tb = generate_reference_motions(Skill::roll, 2, b, layout);
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].joints == tb[i].joints);
    CHECK(ta[i].base == tb[i].base);
  }
}

TEST_CASE("skill base curves carry the expected shape") {
  const JointLayout layout = make_layout("compact8");
  RandomStream rng(52);
  auto walk = generate_reference_motions(Skill::walk, 1, rng, layout);
  CHECK(walk[0].base(0, 149) > walk[0].base(0, 0));   // forward progress
  CHECK(walk[0].base(2, 0) == Catch::Approx(0.78));   // nominal height
  auto rec = generate_reference_motions(Skill::recover, 1, rng, layout);
  CHECK(rec[0].base(2, 0) == Catch::Approx(0.25));
  CHECK(rec[0].base(2, 149) == Catch::Approx(0.78));
  CHECK(rec[0].base(4, 0) > rec[0].base(4, 149));     // pitch flattens
  auto roll = generate_reference_motions(Skill::roll, 1, rng, layout);
  CHECK(roll[0].base(4, 149) == Catch::Approx(2.0 * M_PI));
}

TEST_CASE("motion store round trips through disk") {
  const JointLayout layout = make_layout("compact8");
  RandomStream rng(53);
  ReferenceMotionStore store;
  for (Skill s : {Skill::walk, Skill::climb})
    for (auto& tr : generate_reference_motions(s, 2, rng, layout)) store.trajectories.push_back(std::move(tr));

  const std::string path = "amp_store_test.bin";
  save_motion_store(store, path);
  const ReferenceMotionStore back = load_motion_store(path);
  REQUIRE(back.trajectories.size() == store.trajectories.size());
  CHECK(back.window == store.window);
  for (size_t i = 0; i < store.trajectories.size(); ++i) {
    CHECK(back.trajectories[i].skill == store.trajectories[i].skill);
    REQUIRE(back.trajectories[i].joints.rows() == store.trajectories[i].joints.rows());
    REQUIRE(back.trajectories[i].joints.cols() == store.trajectories[i].joints.cols());
    CHECK((back.trajectories[i].joints - store.trajectories[i].joints).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.trajectories[i].base - store.trajectories[i].base).cwiseAbs().maxCoeff() < 1e-6);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_motion_store("does_not_exist.bin"), ConfigError);
}

TEST_CASE("skill names round trip") {
  for (Skill s : {Skill::walk, Skill::recover, Skill::roll, Skill::climb}) CHECK(skill_from_name(skill_name(s)) == s);
  CHECK_THROWS_AS(skill_from_name("moonwalk"), ConfigError);
}
