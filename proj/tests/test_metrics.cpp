#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "steerlab/metrics/metrics.hpp"
#include "steerlab/pde/solvers.hpp"

using namespace steerlab;
using namespace steerlab::metrics;

namespace {

pde::SimulationTrajectory velocity_trajectory(Index frames, Index n,
                                              const std::function<std::pair<float, float>(Index, Index, Index)>& uv) {
  pde::SimulationTrajectory t;
  t.field_names = {"tracer", "pressure", "velocity_x", "velocity_y"};
  t.grid = {n, n};
  for (int f = 0; f < 4; ++f) {
    Array3f a(frames, n, n);
    a.setZero();
    t.fields.push_back(a);
  }
  for (Index i = 0; i < frames; ++i)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        const auto [u, v] = uv(i, y, x);
        t.fields[2](i, y, x) = u;
        t.fields[3](i, y, x) = v;
        t.fields[0](i, y, x) = static_cast<float>(x < n / 2 ? 1 : 0);
      }
  return t;
}

}  // namespace

TEST_SUITE("metrics") {
TEST_CASE("vorticity of simple fields") {
  Eigen::ArrayXXd u = Eigen::ArrayXXd::Constant(8, 8, 2.0), v = Eigen::ArrayXXd::Constant(8, 8, -1.0);
  CHECK(vorticity_field(u, v, 0.1).abs().maxCoeff() == 0.0);

  const Index n = 16;
  Eigen::ArrayXXd ru(n, n), rv(n, n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      ru(y, x) = -(static_cast<double>(y) - n / 2);
      rv(y, x) = static_cast<double>(x) - n / 2;
    }
  const auto w = vorticity_field(ru, rv, 1.0);
  for (Index y = 1; y < n - 1; ++y)
    for (Index x = 1; x < n - 1; ++x) CHECK(std::abs(w(y, x) - 2.0) < 1e-2);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1, 1);
  Eigen::ArrayXXd a(n, n), b(n, n);
  for (Index i = 0; i < a.size(); ++i) {
    a.data()[i] = d(rng);
    b.data()[i] = d(rng);
  }
  const auto got = vorticity_field(a, b, 0.5);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      const double oracle = (b(y, (x + 1) % n) - b(y, (x + n - 1) % n)) / 1.0 -
                            (a((y + 1) % n, x) - a((y + n - 1) % n, x)) / 1.0;
      CHECK(got(y, x) == oracle);
    }

  Eigen::ArrayXXd phi(n, n), gx(n, n), gy(n, n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) phi(y, x) = std::sin(2 * M_PI * x / n) * std::cos(4 * M_PI * y / n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      gx(y, x) = (phi(y, (x + 1) % n) - phi(y, (x + n - 1) % n)) / 2;
      gy(y, x) = (phi((y + 1) % n, x) - phi((y + n - 1) % n, x)) / 2;
    }
  CHECK(vorticity_field(gx, gy, 1.0).abs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(vorticity_field(a, Eigen::ArrayXXd(n, n + 1), 1.0), Error);
}

TEST_CASE("vorticity series scale with the velocity") {
  auto swirl = [](float s) {
    return [s](Index i, Index y, Index x) {
      return std::pair<float, float>{s * std::sin(0.4f * y + i), s * std::cos(0.3f * x)};
    };
  };
  const auto one = velocity_trajectory(3, 16, swirl(1));
  const auto two = velocity_trajectory(3, 16, swirl(2));
  const auto m1 = mean_abs_vorticity(one), m2 = mean_abs_vorticity(two);
  const auto e1 = enstrophy(one), e2 = enstrophy(two);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m2.values[i] == doctest::Approx(2 * m1.values[i]).epsilon(1e-6));
    CHECK(e2.values[i] == doctest::Approx(4 * e1.values[i]).epsilon(1e-6));
    CHECK(e1.values[i] >= 0);
  }
  const auto still = velocity_trajectory(2, 8, [](Index, Index, Index) { return std::pair<float, float>{0, 0}; });
  CHECK(mean_abs_vorticity(still).values == std::vector<double>{0, 0});
  CHECK(enstrophy(still).values == std::vector<double>{0, 0});
  pde::SimulationTrajectory gs;
  gs.field_names = {"species_A", "species_B"};
  gs.fields = {Array3f(1, 4, 4), Array3f(1, 4, 4)};
  try {
    mean_abs_vorticity(gs);
    FAIL("expected MissingField");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingField);
  }
}

TEST_CASE("interface sharpness") {
  auto t = velocity_trajectory(1, 16, [](Index, Index, Index) { return std::pair<float, float>{0, 0}; });
  const double hard = interface_sharpness(t).values[0];
  auto smooth = t;
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) smooth.fields[0](0, y, x) = 0.5f + 0.5f * std::cos(2 * float(M_PI) * (x + 4) / 16);
  CHECK(hard > interface_sharpness(smooth).values[0]);
  auto shifted = t;
  flat(shifted.fields[0]).array() += 3.0f;
  CHECK(interface_sharpness(shifted).values[0] == doctest::Approx(hard).epsilon(1e-6));
  t.fields[0].setConstant(2.0f);
  CHECK(interface_sharpness(t).values[0] == 0.0);
  CHECK_THROWS_AS(interface_sharpness(t, "dye"), Error);
}

TEST_CASE("time to threshold") {
  MetricSeries flat_low{"m", {1, 1, 1}, ""};
  CHECK_FALSE(time_to_threshold(flat_low, 2.0));
  MetricSeries ramp{"m", {}, ""};
  for (int i = 0; i < 20; ++i) ramp.values.push_back(i);
  CHECK(time_to_threshold(ramp, 10.0) == 10);
  CHECK(time_to_threshold(ramp, 10.5) == 11);
  Index last = 0;
  for (double th = 0; th < 19; th += 0.7) {
    const auto idx = time_to_threshold(ramp, th);
    REQUIRE(idx);
    CHECK(*idx >= last);
    last = *idx;
  }
  MetricSeries down{"m", {5, 4, 3, 2}, ""};
  CHECK(time_to_threshold(down, 3.0, Crossing::Falling) == 2);
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
}

TEST_CASE("steering report") {
  const auto base = velocity_trajectory(4, 8, [](Index i, Index y, Index x) {
    return std::pair<float, float>{std::sin(0.7f * y) * (1 + 0.1f * i), std::cos(0.5f * x)};
  });
  auto as_rollout = [&](float scale) {
    steering::RolloutResult r;
    r.field_names = base.field_names;
    r.frames = Tensor4<float>(4, 4, 8, 8);
    for (Index i = 0; i < 4; ++i)
      for (Index f = 0; f < 4; ++f)
        for (Index y = 0; y < 8; ++y)
          for (Index x = 0; x < 8; ++x) r.frames(i, f, y, x) = base.fields[f](i, y, x) * (f >= 2 ? scale : 1.0f);
    return r;
  };
  std::map<double, steering::RolloutResult> rs{{-0.5, as_rollout(0.5f)}, {0.0, as_rollout(1.0f)},
                                               {0.5, as_rollout(1.5f)}};
  const auto report = steering_report(rs, base, "vortex", "mean_abs_vorticity");
  CHECK(report.sign_pattern == "pos>base>neg");
  CHECK(report.sign_pattern_holds);
  CHECK(report.monotone);
  CHECK_FALSE(report.no_effect);
  CHECK(report.spearman == doctest::Approx(1.0));
  CHECK(report.to_text() == steering_report(rs, base, "vortex", "mean_abs_vorticity").to_text());

  std::map<double, steering::RolloutResult> same{{-0.5, as_rollout(1)}, {0.0, as_rollout(1)}, {0.5, as_rollout(1)}};
  const auto flat_report = steering_report(same, base, "vortex", "mean_abs_vorticity");
  CHECK(flat_report.no_effect);
  CHECK(flat_report.monotone);
  CHECK(flat_report.spread == 0.0);

  std::map<double, steering::RolloutResult> missing{{0.5, as_rollout(1)}};
  CHECK_THROWS_AS(steering_report(missing, base, "vortex", "mean_abs_vorticity"), Error);
  auto short_one = as_rollout(1);
  short_one.frames = Tensor4<float>(3, 4, 8, 8);
  std::map<double, steering::RolloutResult> ragged{{0.0, as_rollout(1)}, {0.5, short_one}};
  try {
    steering_report(ragged, base, "vortex", "mean_abs_vorticity");
    FAIL("expected InconsistentRollouts");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InconsistentRollouts);
  }
}

TEST_CASE("render frames") {
  const auto dir = std::filesystem::temp_directory_path() / "steerlab_test_render";
  std::filesystem::remove_all(dir);
  auto t = velocity_trajectory(64, 8, [](Index i, Index y, Index) { return std::pair<float, float>{float(i), float(y)}; });
  const auto paths = render_frames(t, "velocity_x", "viridis", (dir / "a").string());
  CHECK(paths.size() == 64);
  CHECK(std::filesystem::path(paths.front()).filename() == "velocity_x_0000.png");
  CHECK(std::filesystem::path(paths.back()).filename() == "velocity_x_0063.png");
  const auto again = render_frames(t, "velocity_x", "viridis", (dir / "b").string());
  auto bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  for (std::size_t i = 0; i < paths.size(); i += 9) CHECK(bytes(paths[i]) == bytes(again[i]));

  t.fields[0].setConstant(0.3f);
  const auto uniform = render_frames(t, "tracer", "gray", (dir / "c").string());
  CHECK(bytes(uniform[0]) == bytes(uniform[5]));
  CHECK_THROWS_AS(render_frames(t, "dye", "gray", (dir / "d").string()), Error);
  CHECK_THROWS_AS(render_frames(t, "tracer", "gray", "/proc/steerlab_no_such_dir/x"), Error);
}
}
