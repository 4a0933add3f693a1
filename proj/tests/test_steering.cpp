#include <doctest.h>

#include <random>

#include "steerlab/pde/regimes.hpp"
#include "steerlab/pde/solvers.hpp"
#include "steerlab/steering/steering.hpp"

using namespace steerlab;
using namespace steerlab::steering;

namespace {

Tensor4<double> random_tensor(Shape4 s, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0, 1);
  Tensor4<double> t(s[0], s[1], s[2], s[3]);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

Tensor4<float> from(std::initializer_list<float> v) {
  Tensor4<float> t(1, static_cast<Index>(v.size()), 1, 1);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

}  // namespace

TEST_SUITE("steering") {
TEST_CASE("steer on a two-element example") {
  const auto a = from({3, 4});
  const auto d = from({1, 0});
  const auto pre = steer_pre(a, d, 0.1);
  CHECK(pre(0, 0, 0, 0) == doctest::Approx(5.5));
  CHECK(pre(0, 1, 0, 0) == doctest::Approx(4.0));
  const auto s = steer(a, d, 0.1);
  const double n = std::hypot(5.5, 4.0);
  CHECK(s(0, 0, 0, 0) == doctest::Approx(5.5 * 5 / n).epsilon(1e-6));
  CHECK(s(0, 1, 0, 0) == doctest::Approx(4.0 * 5 / n).epsilon(1e-6));
  CHECK(s(0, 0, 0, 0) == doctest::Approx(4.0437).epsilon(1e-4));
  CHECK(s(0, 1, 0, 0) == doctest::Approx(2.9409).epsilon(1e-4));
}

TEST_CASE("steer identities") {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({2, 3, 4, 4}, rng);
  const auto d = random_tensor({2, 3, 4, 4}, rng);
  CHECK(bitwise_equal(steer(a, d, 0.0), a));
  for (double alpha : {0.3, 2.0, -0.5}) {
    const auto same = steer(a, a, alpha);
    CHECK((flat(same) - flat(a)).cwiseAbs().maxCoeff() < 1e-6);
  }
  const auto plus = steering_perturbation(a, d, 0.4);
  const auto minus = steering_perturbation(a, d, -0.4);
  CHECK(flat(plus) == -flat(minus));
  CHECK((flat(steer_pre(a, d, 0.4)) - flat(a) - flat(plus)).cwiseAbs().maxCoeff() < 1e-12);

  Tensor4<double> zero(d.dimensions());
  zero.setZero();
  try {
    steer(a, zero, 0.2);
    FAIL("expected ZeroDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroDirection);
  }
  CHECK(bitwise_equal(steer(a, zero, 0.0), a));
  Tensor4<double> other(2, 3, 4, 5);
  CHECK_THROWS_AS(steer(a, other, 0.2), Error);
}

TEST_CASE("per-token renormalization keeps each token norm") {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({2, 5, 3, 3}, rng);
  const auto d = random_tensor({2, 5, 3, 3}, rng);
  const auto s = steer_per_token(a, d, 0.7);
  for (Index t = 0; t < 2; ++t)
    for (Index w = 0; w < 3; ++w)
      for (Index h = 0; h < 3; ++h) {
        double na = 0, ns = 0;
        for (Index c = 0; c < 5; ++c) {
          na += a(t, c, w, h) * a(t, c, w, h);
          ns += s(t, c, w, h) * s(t, c, w, h);
        }
        CHECK(std::sqrt(ns) == doctest::Approx(std::sqrt(na)).epsilon(1e-9));
      }
}

TEST_CASE("broadcast_channel") {
  const Shape4 shape{2, 3, 4, 5};
  CHECK(flat(broadcast_channel(Eigen::VectorXf::Zero(3).eval(), shape)).squaredNorm() == 0.0f);
  const Eigen::VectorXf one_hot = Eigen::Vector3f(0, 1, 0);
  const auto b = broadcast_channel(one_hot, shape);
  for (Index t = 0; t < 2; ++t)
    for (Index w = 0; w < 4; ++w)
      for (Index h = 0; h < 5; ++h) {
        CHECK(b(t, 0, w, h) == 0.0f);
        CHECK(b(t, 1, w, h) == 1.0f);
        CHECK(b(t, 2, w, h) == 0.0f);
      }
  const Eigen::VectorXf v = Eigen::Vector3f(0.25f, -1.5f, 3.0f);
  CHECK(concepts::channel_mean(broadcast_channel(v, shape)) == v);
  try {
    broadcast_channel(v, Shape4{2, 4, 4, 5});
    FAIL("expected ChannelMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ChannelMismatch);
  }
}

TEST_CASE("align_spatial") {
  std::mt19937_64 rng(3);
  const Tensor4<float> d = random_tensor({4, 3, 8, 8}, rng).cast<float>();
  CHECK(bitwise_equal(align_spatial(d, {4, 3, 8, 8}, Align::Pad), d));

  const auto padded = align_spatial(d, {4, 3, 8, 9}, Align::Pad);
  for (Index t = 0; t < 4; ++t)
    for (Index c = 0; c < 3; ++c)
      for (Index w = 0; w < 8; ++w) {
        CHECK(padded(t, c, w, 8) == 0.0f);
        for (Index h = 0; h < 8; ++h) CHECK(padded(t, c, w, h) == d(t, c, w, h));
      }
  const auto cropped = align_spatial(d, {3, 3, 7, 8}, Align::Pad);
  CHECK(cropped(2, 1, 6, 7) == d(2, 1, 6, 7));

  const auto interp = align_spatial(d, {4, 3, 8, 9}, Align::Interpolate);
  for (Index t = 0; t < 4; ++t)
    for (Index c = 0; c < 3; ++c)
      for (Index w = 0; w < 8; ++w)
        for (Index h = 0; h < 9; ++h) {
          const double pos = h * 7.0 / 8.0;
          const auto lo = static_cast<Index>(pos);
          const Index hi = std::min<Index>(lo + 1, 7);
          const double oracle = (1 - (pos - lo)) * d(t, c, w, lo) + (pos - lo) * d(t, c, w, hi);
          CHECK(std::abs(interp(t, c, w, h) - oracle) < 1e-6);
        }

  for (auto bad : {Shape4{4, 3, 8, 10}, Shape4{4, 2, 8, 8}, Shape4{6, 3, 8, 8}}) {
    try {
      align_spatial(d, bad, Align::Interpolate);
      FAIL("expected IncompatibleShapes");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IncompatibleShapes);
    }
  }
  CHECK_THROWS_AS(align_spatial(d, {4, 3, 8, 9}, Align::None), Error);
}

TEST_CASE("steering config guard rails") {
  concepts::ConceptDirection<float> dir{"x", std::nullopt, Eigen::VectorXf::Ones(4), "", {0}};
  SteeringConfig sc{dir, 11.0, {0}, Mode::ChannelBroadcast};
  CHECK_THROWS_AS(sc.validate(), Error);
  sc.alpha_limit = 20;
  CHECK_NOTHROW(sc.validate());
  sc.alpha = std::nan("");
  CHECK_THROWS_AS(sc.validate(), Error);
  sc.alpha = 0.5;
  sc.mode = Mode::FullSpatial;
  try {
    sc.validate();
    FAIL("expected MissingFullDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFullDirection);
  }
}

TEST_CASE("rollout") {
  surrogate::ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.window_T = 2;
  c.field_count = 2;
  c.grid_height = 8;
  c.grid_width = 8;
  auto p = pde::presets::gray_scott_params(0.014, 0.054);
  p.save_stride = 10;
  const auto traj = pde::simulate_gray_scott(p, {8, 8}, 10, 1);
  surrogate::TrainOptions o;
  o.steps = 5;
  o.batch = 2;
  const auto ckpt = surrogate::train({traj, traj}, c, o);
  const auto model = ckpt.model();

  const auto empty = rollout(ckpt, traj, 0);
  CHECK(empty.length() == 0);

  const auto base = rollout(model, ckpt.normalizer, traj, 6);
  CHECK(base.length() == 6);
  CHECK(all_finite(base.frames));
  CHECK(bitwise_equal(base.frames, rollout(model, ckpt.normalizer, traj, 6).frames));

  concepts::ConceptDirection<float> dir{"x", std::nullopt, Eigen::VectorXf::LinSpaced(8, -1, 1), "", {1}};
  SteeringConfig sc{dir, 0.0, {1}, Mode::ChannelBroadcast};
  const auto zero = rollout(model, ckpt.normalizer, traj, 6, &sc);
  CHECK(bitwise_equal(zero.frames, base.frames));
  sc.alpha = 0.5;
  const auto steered = rollout(model, ckpt.normalizer, traj, 6, &sc);
  CHECK_FALSE(bitwise_equal(steered.frames, base.frames));
  CHECK(steered.steering->at("alpha") == 0.5);

  const auto t = to_trajectory(steered, traj);
  CHECK(t.frames() == 6);
  CHECK(t.annotations.at("steering").at("direction_hash") == direction_hash(dir));

  sc.layer = {4};
  try {
    rollout(model, ckpt.normalizer, traj, 2, &sc);
    FAIL("expected UnknownLayer");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownLayer);
  }
  auto wild = ckpt;
  wild.normalizer.delta_std.assign(2, std::numeric_limits<double>::infinity());
  try {
    rollout(wild, traj, 3);
    FAIL("expected NonFiniteState");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteState);
    CHECK(std::string(e.what()).find("frame 0") != std::string::npos);
  }
  CHECK_THROWS_AS(rollout(ckpt, pde::slice_frames(traj, 0, 1), 2), Error);
}
}
