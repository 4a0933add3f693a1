#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "steerlab/core/error.hpp"
#include "steerlab/metrics/metrics.hpp"
#include "steerlab/pde/regimes.hpp"
#include "steerlab/pde/solvers.hpp"

using namespace steerlab;
using namespace steerlab::pde;

namespace {

PhysicsParams small_shear() {
  PhysicsParams p;
  p.viscosity = 2.5e-3;
  p.tracer_diffusivity = 2.5e-3;
  p.save_stride = 4;
  return p;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("steerlab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("pde") {
TEST_CASE("shear flow has the expected layout and is deterministic") {
  const auto a = simulate_shear_flow(small_shear(), {32, 32}, 6, 11);
  const auto b = simulate_shear_flow(small_shear(), {32, 32}, 6, 11);
  CHECK(a.field_names == std::vector<std::string>{"tracer", "pressure", "velocity_x", "velocity_y"});
  CHECK(a.frames() == 6);
  for (std::size_t f = 0; f < a.fields.size(); ++f) CHECK(bitwise_equal(a.fields[f], b.fields[f]));
  const auto c = simulate_shear_flow(small_shear(), {32, 32}, 6, 12);
  CHECK_FALSE(bitwise_equal(a.fields[2], c.fields[2]));
}

TEST_CASE("shear flow rest state is a fixed point") {
  auto p = small_shear();
  p.initial = InitialCondition::Rest;
  const auto t = simulate_shear_flow(p, {16, 16}, 4, 0);
  for (const auto& f : t.fields)
    for (Index i = 1; i < 4; ++i)
      for (Index y = 0; y < 16; ++y)
        for (Index x = 0; x < 16; ++x) CHECK(f(i, y, x) == f(0, y, x));
}

TEST_CASE("shear flow divergence and energy decay") {
  const auto t = simulate_shear_flow(small_shear(), {32, 32}, 8, 3);
  for (Index i = 0; i < t.frames(); ++i) CHECK(max_divergence(t, i) <= 1e-4);
  for (Index i = 1; i < t.frames(); ++i) CHECK(kinetic_energy(t, i) <= kinetic_energy(t, i - 1) + 1e-6);
}

TEST_CASE("Taylor-Green energy decays as exp(-4 nu t)") {
  PhysicsParams p;
  p.initial = InitialCondition::TaylorGreen;
  p.viscosity = 0.01;
  p.tracer_diffusivity = 0.01;
  p.domain_length = 2 * std::numbers::pi;
  p.dt = 0.01;
  p.save_stride = 10;
  const auto t = simulate_shear_flow(p, {32, 32}, 11, 0);
  const double e0 = kinetic_energy(t, 0);
  for (Index i = 1; i < t.frames(); ++i) {
    const double time = static_cast<double>(i) * p.save_stride * p.dt;
    CHECK(kinetic_energy(t, i) / e0 == doctest::Approx(std::exp(-4 * p.viscosity * time)).epsilon(0.01));
  }
}

TEST_CASE("shear flow rejects bad grids and blow-ups") {
  CHECK_THROWS_AS(simulate_shear_flow(small_shear(), {30, 32}, 2, 0), Error);
  try {
    simulate_shear_flow(small_shear(), {24, 32}, 2, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidGrid);
  }
  auto p = small_shear();
  p.viscosity = 1e-9;
  p.tracer_diffusivity = 1e-9;
  p.dt = 5.0;
  try {
    simulate_shear_flow(p, {16, 16}, 6, 0);
    FAIL("expected a blow-up");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SolverBlowUp);
  }
}

TEST_CASE("Gray-Scott bounds, fixed point and pattern formation") {
  auto p = presets::gray_scott_params(0.014, 0.054);
  const auto t = simulate_gray_scott(p, {64, 64}, 16, 5);
  CHECK(t.field_names == std::vector<std::string>{"species_A", "species_B"});
  for (const auto& f : t.fields) {
    CHECK(flat(f).minCoeff() >= 0.0f);
    CHECK(flat(f).maxCoeff() <= 1.5f);
  }
  const auto& b = t.field("species_B");
  float lo = 1e9f, hi = -1e9f;
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      lo = std::min(lo, b(15, y, x));
      hi = std::max(hi, b(15, y, x));
    }
  CHECK(hi - lo > 0.1f);

  p.initial = InitialCondition::Rest;
  p.save_stride = 500;
  const auto rest = simulate_gray_scott(p, {16, 16}, 2, 0);
  CHECK((flat(rest.field("species_A")).array() - 1.0f).abs().maxCoeff() < 1e-6f);
  CHECK(flat(rest.field("species_B")).array().abs().maxCoeff() < 1e-6f);

  auto ode = presets::gray_scott_params(0.014, 0.054);
  ode.diffusion_a = 0.0;
  ode.diffusion_b = 0.0;
  ode.initial = InitialCondition::Rest;
  const auto fixed = simulate_gray_scott(ode, {8, 8}, 3, 0);
  CHECK((flat(fixed.field("species_A")).array() - 1.0f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("diffusion-only Gray-Scott smooths the interface") {
  auto p = presets::gray_scott_params(0.014, 0.054);
  p.reactions = false;
  const auto t = simulate_gray_scott(p, {32, 32}, 8, 1);
  const auto s = metrics::interface_sharpness(t, "species_B");
  for (std::size_t i = 1; i < s.values.size(); ++i) CHECK(s.values[i] < s.values[i - 1]);
}

TEST_CASE("subsample_stride") {
  const auto t = simulate_gray_scott(presets::gray_scott_params(0.014, 0.054), {16, 16}, 16, 2);
  const auto same = subsample_stride(t, 1);
  CHECK(bitwise_equal(same.fields[0], t.fields[0]));
  const auto two = subsample_stride(t, 2);
  CHECK(two.frames() == 8);
  CHECK(two.params.save_stride == 2 * t.params.save_stride);
  for (Index i = 0; i < 8; ++i)
    for (Index y = 0; y < 16; ++y) CHECK(two.fields[1](i, y, 3) == t.fields[1](2 * i, y, 3));
  const auto twice = subsample_stride(two, 2);
  const auto four = subsample_stride(t, 4);
  CHECK(twice.params == four.params);
  for (std::size_t f = 0; f < t.fields.size(); ++f) CHECK(bitwise_equal(twice.fields[f], four.fields[f]));
  CHECK_THROWS_AS(subsample_stride(t, 16), Error);
}

TEST_CASE("trajectory file round trip") {
  const auto dir = temp_dir("straj");
  auto t = simulate_shear_flow(small_shear(), {16, 16}, 3, 9);
  t.annotations = {{"note", "x"}};
  const auto path = (dir / "t.straj").string();
  save_trajectory(t, path);
  const auto back = load_trajectory(path);
  CHECK(back.field_names == t.field_names);
  CHECK(back.params == t.params);
  CHECK(back.seed == t.seed);
  CHECK(back.annotations == t.annotations);
  for (std::size_t f = 0; f < t.fields.size(); ++f) CHECK(bitwise_equal(back.fields[f], t.fields[f]));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
  try {
    load_trajectory(path);
    FAIL("expected corruption");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptFile);
  }
}

TEST_CASE("regime groups validate, cache and annotate") {
  RegimeGroupSpec empty{"vortex", {{small_shear(), 1}}, {}, 1, 1};
  CHECK_THROWS_AS(empty.validate(), Error);

  const auto speed = presets::concept_groups("speed", 50);
  CHECK(speed.stride_f == 2);
  CHECK(speed.stride_not_f == 1);
  REQUIRE(speed.group_f.size() == speed.group_not_f.size());
  for (std::size_t i = 0; i < speed.group_f.size(); ++i) {
    CHECK(speed.group_f[i].params == speed.group_not_f[i].params);
    CHECK(speed.group_f[i].seed == speed.group_not_f[i].seed);
  }
  const auto vortex = presets::concept_groups("vortex", 50);
  double max_f = 0, min_not_f = 1e9;
  for (const auto& m : vortex.group_f) max_f = std::max(max_f, m.params.viscosity);
  for (const auto& m : vortex.group_not_f) min_not_f = std::min(min_not_f, m.params.viscosity);
  CHECK(max_f < min_not_f);
  CHECK(vortex.group_f.size() + vortex.group_not_f.size() == 28);

  const auto dir = temp_dir("cache");
  TrajectoryCache cache(dir.string());
  RegimeGroupSpec spec{"speed", {{small_shear(), 4}}, {{small_shear(), 4}}, 2, 1};
  const auto [f, nf] = build_regime_groups(spec, {16, 16}, 8, &cache);
  CHECK(f.front().frames() == 4);
  CHECK(nf.front().frames() == 8);
  CHECK(cache.misses() == 1);
  CHECK(cache.hits() == 1);

  auto bad = small_shear();
  bad.viscosity = 1e-9;
  bad.tracer_diffusivity = 1e-9;
  bad.dt = 5.0;
  RegimeGroupSpec failing{"vortex", {{small_shear(), 1}}, {{bad, 2}}, 1, 1};
  try {
    build_regime_groups(failing, {16, 16}, 6, nullptr);
    FAIL("expected a solver error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SolverBlowUp);
    CHECK(std::string(e.what()).find("group_not_f") != std::string::npos);
  }
}
}
