#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "steerlab/core/error.hpp"
#include "steerlab/pde/regimes.hpp"
#include "steerlab/pde/solvers.hpp"
#include "steerlab/surrogate/training.hpp"

using namespace steerlab;
using namespace steerlab::surrogate;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.window_T = 2;
  c.field_count = 2;
  c.grid_height = 8;
  c.grid_width = 8;
  return c;
}

template <typename S>
Tensor4<S> random_window(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Tensor4<S> w(c.window_T, c.field_count, c.grid_height, c.grid_width);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(n(rng));
  return w;
}

std::vector<pde::SimulationTrajectory> tiny_corpus(int count, Index frames) {
  std::vector<pde::SimulationTrajectory> out;
  for (int i = 0; i < count; ++i) {
    auto p = pde::presets::gray_scott_params(0.014 + 0.01 * i, 0.054);
    p.save_stride = 10;
    out.push_back(pde::simulate_gray_scott(p, {8, 8}, frames, static_cast<std::uint64_t>(i)));
  }
  return out;
}

}  // namespace

TEST_SUITE("surrogate") {
TEST_CASE("config validation and layer parsing") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.grid_width = 10;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.window_T = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  CHECK(LayerId::parse("blocks.1", c).block == 1);
  CHECK(LayerId::parse("last", c).block == 1);
  CHECK(LayerId::parse("-2", c).block == 0);
  try {
    LayerId::parse("blocks.7", c);
    FAIL("expected UnknownLayer");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownLayer);
  }
  CHECK(model_config_from_json(to_json(c)) == c);
}

TEST_CASE("tap shape for the reference tiny config") {
  ModelConfig c;
  c.embed_dim = 32;
  c.n_blocks = 2;
  const auto model = Model<float>::initialize(c, 1);
  ForwardOptions<float> opt;
  opt.taps = {LayerId{1}};
  const auto r = model.forward(random_window<float>(c, 2), opt);
  CHECK(shape_of(r.taps.at(LayerId{1}).data) == Shape4{4, 32, 8, 8});
  CHECK(shape_of(r.delta) == Shape3{4, 64, 64});
}

TEST_CASE("forward determinism, identity injection and causality") {
  const ModelConfig c = tiny_config();
  const auto model = Model<float>::initialize(c, 3);
  const auto w = random_window<float>(c, 4);
  const auto base = model.forward(w);
  CHECK(bitwise_equal(base.delta, model.forward(w).delta));

  const Injector<float> identity{LayerId{1}, [](Tensor4<float>&) {}};
  ForwardOptions<float> opt;
  opt.injector = &identity;
  CHECK(bitwise_equal(base.delta, model.forward(w, opt).delta));

  const Injector<float> zero{LayerId{1}, [](Tensor4<float>& a) { a.setZero(); }};
  opt.injector = &zero;
  opt.taps = {LayerId{1}};
  const auto zeroed = model.forward(w, opt);
  CHECK_FALSE(bitwise_equal(base.delta, zeroed.delta));
  CHECK(flat(zeroed.taps.at(LayerId{1}).data).squaredNorm() == 0.0f);

  const Injector<float> nudge{LayerId{1}, [](Tensor4<float>& a) { flat(a) *= 1.1f; }};
  opt.injector = &nudge;
  CHECK((flat(model.forward(w, opt).delta) - flat(base.delta)).norm() > 0.0f);

  const Injector<float> bad{LayerId{5}, [](Tensor4<float>&) {}};
  opt.injector = &bad;
  try {
    model.forward(w, opt);
    FAIL("expected UnknownLayer");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownLayer);
  }
  Tensor4<float> wrong(c.window_T, c.field_count, 4, 4);
  CHECK_THROWS_AS(model.forward(wrong), Error);
}

TEST_CASE("tap equals the input of the next block") {
  const ModelConfig c = tiny_config();
  const auto model = Model<float>::initialize(c, 5);
  const auto w = random_window<float>(c, 6);
  std::map<int, Tensor4<float>> inputs;
  ForwardOptions<float> opt;
  opt.taps = {LayerId{0}};
  opt.block_input_probe = [&](int b, const Tensor4<float>& x) { inputs[b] = x; };
  const auto r = model.forward(w, opt);
  CHECK(bitwise_equal(r.taps.at(LayerId{0}).data, inputs.at(1)));
}

TEST_CASE("loss") {
  Tensor3<float> a(2, 3, 4), b(2, 3, 4);
  a.setRandom();
  b = a;
  CHECK(mse_loss(a, b) == 0.0f);
  flat(b).array() += 1.0f;
  CHECK(mse_loss(a, b) == doctest::Approx(1.0));
  b.setRandom();
  double oracle = 0;
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k) oracle += double(a(i, j, k) - b(i, j, k)) * (a(i, j, k) - b(i, j, k));
  CHECK(mse_loss(a, b) == doctest::Approx(oracle / 24).epsilon(1e-6));
  Tensor3<float> c(2, 3, 5);
  CHECK_THROWS_AS(mse_loss(a, c), Error);
}

TEST_CASE("float and double models agree") {
  const ModelConfig c = tiny_config();
  const auto mf = Model<float>::initialize(c, 9);
  const auto md = Model<double>::initialize(c, 9);
  const auto w = random_window<double>(c, 1);
  const Tensor4<float> wf = w.cast<float>();
  const auto df = mf.forward(wf).delta;
  const auto dd = md.forward(w).delta;
  CHECK((flat(df).cast<double>() - flat(dd)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("gradient check") {
  ModelConfig c = tiny_config();
  CHECK(gradient_check(c, 0).probes.empty());
  const auto full = gradient_check(c, 60);
  CHECK(full.probes.size() == 60);
  CHECK(full.max_rel_error < 1e-3);
  c.linear_only = true;
  CHECK(gradient_check(c, 60).max_rel_error < 1e-5);
  ModelConfig big;
  CHECK_THROWS_AS(gradient_check(big, 5), Error);
}

TEST_CASE("training: zero steps, determinism and progress") {
  ModelConfig c = tiny_config();
  const auto corpus = tiny_corpus(2, 24);
  TrainOptions o;
  o.steps = 0;
  o.seed = 4;
  const auto init = train(corpus, c, o);
  CHECK_FALSE(init.meta.heldout_checked);
  CHECK_FALSE(init.meta.heldout_beats_baseline());

  o.steps = 200;
  o.batch = 4;
  o.lr = 0.05;
  o.log_every = 20;
  const auto a = train(corpus, c, o);
  const auto b = train(corpus, c, o);
  for (std::size_t i = 0; i < a.parameters.values.size(); ++i) {
    CHECK(a.parameters.values[i] == b.parameters.values[i]);
  }
  CHECK(a.meta.final_loss < a.meta.initial_loss);
  CHECK(a.meta.heldout_checked);
  bool moved = false;
  for (std::size_t i = 0; i < a.parameters.values.size(); ++i) {
    moved = moved || a.parameters.values[i] != init.parameters.values[i];
  }
  CHECK(moved);

  o.lr = 1e6;
  o.clip_norm = 0;
  try {
    train(corpus, c, o);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Diverged);
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  const ModelConfig c = tiny_config();
  TrainOptions o;
  o.steps = 3;
  o.batch = 2;
  const auto ckpt = train(tiny_corpus(2, 12), c, o);
  const auto dir = std::filesystem::temp_directory_path() / "steerlab_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.sckpt").string();
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);
  CHECK(back.config == ckpt.config);
  CHECK(back.parameters.names == ckpt.parameters.names);
  for (std::size_t i = 0; i < ckpt.parameters.values.size(); ++i) {
    CHECK(std::memcmp(back.parameters.values[i].data(), ckpt.parameters.values[i].data(),
                      sizeof(float) * static_cast<std::size_t>(ckpt.parameters.values[i].size())) == 0);
  }
  CHECK(back.normalizer.mean == ckpt.normalizer.mean);

  const auto truncated = (dir / "trunc.sckpt").string();
  std::filesystem::copy_file(path, truncated, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(truncated, std::filesystem::file_size(truncated) - 9);
  try {
    load_checkpoint(truncated);
    FAIL("expected CorruptCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptCheckpoint);
  }

  const auto versioned = (dir / "v2.sckpt").string();
  std::filesystem::copy_file(path, versioned, std::filesystem::copy_options::overwrite_existing);
  {
    std::fstream f(versioned, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint16_t v = 2;
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
  try {
    load_checkpoint(versioned);
    FAIL("expected CorruptCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptCheckpoint);
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}
}
