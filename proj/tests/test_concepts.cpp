#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "steerlab/concepts/concepts.hpp"
#include "steerlab/core/binary_io.hpp"

using namespace steerlab;
using namespace steerlab::concepts;

namespace {

std::vector<Tensor4<float>> random_set(std::size_t n, std::uint64_t seed, Shape4 s = {2, 3, 4, 5}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.5, 2.0);
  std::vector<Tensor4<float>> out;
  for (std::size_t k = 0; k < n; ++k) {
    Tensor4<float> t(s[0], s[1], s[2], s[3]);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(d(rng));
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_SUITE("concepts") {
TEST_CASE("normalization statistics") {
  Tensor4<float> one(1, 1, 1, 1), three(1, 1, 1, 1);
  one.setConstant(1);
  three.setConstant(3);
  const auto s = fit_normalization_stats<float>({one, three});
  CHECK(s.mean(0, 0, 0, 0) == 2.0f);
  CHECK(s.std(0, 0, 0, 0) == 1.0f);

  const auto same = fit_normalization_stats<float>({three, three});
  CHECK(same.std(0, 0, 0, 0) == 0.0f);
  CHECK(normalize(one, same)(0, 0, 0, 0) == doctest::Approx(-2.0 / 1e-6));

  CHECK_THROWS_AS(fit_normalization_stats<float>({one}), Error);
  Tensor4<float> other(1, 1, 1, 2);
  try {
    fit_normalization_stats<float>({one, other});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("normalize edge cases and inverse") {
  const auto set = random_set(4, 1);
  auto s = fit_normalization_stats(set);
  const auto at_mean = normalize(s.mean, s);
  CHECK(flat(at_mean).cwiseAbs().maxCoeff() == 0.0f);

  NormalizationStats<float> unit{set[0], set[0], 0.0, ""};
  unit.mean.setZero();
  unit.std.setConstant(1.0f);
  CHECK(bitwise_equal(normalize(set[1], unit), set[1]));

  const auto back = denormalize(normalize(set[2], s), s);
  CHECK(((flat(back) - flat(set[2])).cwiseAbs().array() / (flat(set[2]).cwiseAbs().array() + 1e-3f)).maxCoeff() <
        1e-5f);
}

TEST_CASE("group means and delta") {
  const auto set = random_set(2, 2);
  const auto g = group_means<float>({set[0]}, {set[1]});
  CHECK(bitwise_equal(g.mu, set[0]));
  CHECK(bitwise_equal(g.nu, set[1]));
  CHECK(g.count_f == 1);

  Tensor4<float> neg = set[0];
  flat(neg) = -flat(set[0]);
  const auto zero = group_means<float>({set[0], neg}, {set[1]});
  CHECK(flat(zero.mu).cwiseAbs().maxCoeff() == 0.0f);

  const auto d = concept_delta(g, "x");
  const auto swapped = concept_delta(group_means<float>({set[1]}, {set[0]}), "x");
  CHECK(flat(*d.full) == -flat(*swapped.full));
  CHECK_FALSE(d.channel);
  const auto same = concept_delta(group_means<float>({set[0]}, {set[0]}), "x");
  CHECK(flat(*same.full).squaredNorm() == 0.0f);

  CHECK_THROWS_AS(group_means<float>({}, {set[0]}), Error);
}

TEST_CASE("spatial average") {
  Tensor4<float> full(2, 3, 2, 2);
  for (Index c = 0; c < 3; ++c)
    for (Index t = 0; t < 2; ++t)
      for (Index w = 0; w < 2; ++w)
        for (Index h = 0; h < 2; ++h) full(t, c, w, h) = static_cast<float>(c + 1);
  ConceptDirection<float> d{"x", full, std::nullopt, "", {}};
  const auto avg = spatial_average(d);
  CHECK(*avg.channel == Eigen::Vector3f(1, 2, 3));

  for (Index t = 0; t < 2; ++t)
    for (Index w = 0; w < 2; ++w) {
      full(t, 1, w, 0) = static_cast<float>(t + 3 * w + 1);
      full(t, 1, w, 1) = -full(t, 1, w, 0);
    }
  d.full = full;
  CHECK(spatial_average(d).channel->coeff(1) == 0.0f);

  ConceptDirection<float> empty{"x", std::nullopt, Eigen::VectorXf::Ones(3), "", {}};
  try {
    spatial_average(empty);
    FAIL("expected MissingFullDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFullDirection);
  }
}

TEST_CASE("spatial average is linear") {
  const auto set = random_set(2, 3);
  Tensor4<float> sum(set[0].dimensions());
  flat(sum) = flat(set[0]) + flat(set[1]);
  CHECK((channel_mean(sum) - channel_mean(set[0]) - channel_mean(set[1])).cwiseAbs().maxCoeff() < 1e-6f);
  Tensor4<float> scaled(set[0].dimensions());
  flat(scaled) = 3.0f * flat(set[0]);
  CHECK((channel_mean(scaled) - 3.0f * channel_mean(set[0])).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("direction file round trip") {
  const auto set = random_set(2, 4);
  auto d = spatial_average(concept_delta(group_means<float>({set[0]}, {set[1]}), "vortex"));
  d.layer = LayerId{3};
  d.stats_ref = "abc";
  const auto dir = std::filesystem::temp_directory_path() / "steerlab_test_dir";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "d.scdir").string();
  save_direction(d, path);
  const auto back = load_direction(path);
  CHECK(back.name == "vortex");
  CHECK(back.layer == LayerId{3});
  CHECK(back.stats_ref == "abc");
  CHECK(bitwise_equal(*back.full, *d.full));
  CHECK(*back.channel == *d.channel);

  {
    std::ofstream out(dir / "empty.scdir", std::ios::binary);
    io::write_header(out, "SDIR", 1,
                     R"({"name":"x","layer":"blocks.0","has_full":false,"has_channel":false})");
  }
  try {
    load_direction((dir / "empty.scdir").string());
    FAIL("expected CorruptDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptDirection);
  }
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(load_direction(path), Error);
}
}
