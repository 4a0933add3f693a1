#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "steerlab/core/error.hpp"
#include "steerlab/pipeline/config.hpp"
#include "steerlab/pipeline/pipeline.hpp"

using namespace steerlab;
using namespace steerlab::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool has_diag(const std::vector<Diagnostic>& ds, const std::string& path, const std::string& needle) {
  for (const auto& d : ds) {
    if (d.path == path && d.message.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path d = fs::temp_directory_path() / ("steerlab_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

json tiny_doc(const fs::path& out) {
  return {{"extends", "vortex-shear"},
          {"name", "tiny"},
          {"data", {{"grid", {32, 32}}, {"frames", 16}}},
          {"model",
           {{"config", {{"patch_size", 8}, {"embed_dim", 16}, {"n_blocks", 2}, {"n_heads", 2}, {"window_T", 2}}},
            {"training", {{"steps", 12}, {"batch", 2}}}}},
          {"steering", {{"rollout_steps", 4}, {"inits", {"not_f"}}}},
          {"outputs", {{"dir", out.string()}}}};
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("every preset validates and round-trips through JSON") {
    for (const auto& name : preset_names()) {
      CAPTURE(name);
      const auto c = preset(name);
      CHECK(validate(c).empty());
      const auto again = config_from_json(to_json(c));
      CHECK(to_json(again) == to_json(c));
      CHECK(validate_document({{"extends", name}}).empty());
    }
    CHECK(preset("vortex-shear").alpha_grid == std::vector<double>{-0.5, -0.25, 0.0, 0.25, 0.5});
    CHECK(preset("vortex-shear").mode == steering::Mode::ChannelBroadcast);
    CHECK(preset("vortex-to-grayscott").mode == steering::Mode::ChannelBroadcast);
    CHECK(preset("vortex-to-grayscott").target.has_value());
    CHECK(preset("speed-shear").concept_name == "speed");
  }

  TEST_CASE("alpha grid missing 0 names the rule") {
    const auto ds = validate_document({{"extends", "vortex-shear"}, {"steering", {{"alpha_grid", {-0.5, 0.5}}}}});
    CHECK(has_diag(ds, "steering.alpha_grid", "must contain 0"));
  }

  TEST_CASE("unknown concept suggests the nearest preset") {
    const auto ds = validate_document({{"extends", "vortex-shear"}, {"data", {{"concept", "vortx"}}}});
    CHECK(has_diag(ds, "data.concept", "did you mean 'vortex'"));
  }

  TEST_CASE("structural errors carry the path to the field") {
    CHECK(has_diag(validate_document({{"steering", {{"alpha_gird", {0}}}}}), "steering.alpha_gird",
                   "did you mean 'alpha_grid'"));
    CHECK(has_diag(validate_document({{"data", {{"frames", "many"}}}}), "data.frames", "wrong type"));
    CHECK(has_diag(validate_document({{"steering", {{"mode", "diagonal"}}}}), "steering.mode", "full, channel"));
    CHECK(has_diag(validate_document({{"extends", "vortex-sheer"}}), "extends", "did you mean 'vortex-shear'"));
    CHECK(has_diag(validate_document({{"steering", {{"alpha_grid", {0, 20}}}}}), "steering.alpha_grid", "limit"));
    CHECK(has_diag(validate_document({{"concept", {{"layer", 9}}}}), "concept.layer", ""));
    CHECK_THROWS_AS(config_from_json({{"data", {{"frames", "many"}}}}), Error);
    CHECK_THROWS_AS(preset("nope"), Error);
  }

  TEST_CASE("nearest_name") {
    CHECK(nearest_name("difusion", {"vortex", "diffusion", "speed"}) == "diffusion");
    CHECK_FALSE(nearest_name("zzzzzzzzzz", {"vortex", "speed"}));
  }

  TEST_CASE("alpha labels are file-safe and distinct") {
    CHECK(alpha_label(0.0) == "0");
    CHECK(alpha_label(0.25) == "p0.25");
    CHECK(alpha_label(-0.5) == "m0.5");
  }

  TEST_CASE("activation sets round-trip and reject corruption") {
    const fs::path dir = scratch_dir("acts");
    std::vector<Tensor4<float>> acts(3, Tensor4<float>(2, 3, 2, 2));
    for (std::size_t i = 0; i < acts.size(); ++i) acts[i].setConstant(static_cast<float>(i) + 0.5f);
    save_activation_set(acts, {{"group", "g"}}, (dir / "a.sacts").string());
    json meta;
    const auto back = load_activation_set((dir / "a.sacts").string(), &meta);
    REQUIRE(back.size() == 3);
    CHECK(meta.at("group") == "g");
    CHECK(back[2](1, 2, 1, 1) == 2.5f);
    fs::resize_file(dir / "a.sacts", fs::file_size(dir / "a.sacts") - 4);
    CHECK_THROWS_AS(load_activation_set((dir / "a.sacts").string()), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("stage ordering, idempotence, staleness, isolation, determinism") {
    const fs::path a = scratch_dir("run_a");
    const fs::path b = scratch_dir("run_b");
    Pipeline p(config_from_json(tiny_doc(a)));

    // steer before delta
    p.generate();
    p.train();
    p.extract();
    try {
      p.steer();
      FAIL("steer ran without a concept direction");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingArtifact);
      CHECK(std::string(e.what()).find("concept direction") != std::string::npos);
    }
    p.delta();
    p.steer();
    p.report();

    // second full run is all hash hits
    for (const auto& r : p.all()) {
      CAPTURE(r.stage);
      CHECK(r.cached);
    }

    // deleting only the report directory recomputes the report and nothing else
    std::map<std::string, std::string> before;
    for (const auto& s : stage_names()) before[s] = slurp(p.manifest_path(s));
    fs::remove_all(p.stage_dir("report"));
    const auto outcomes = p.all();
    for (const auto& r : outcomes) CHECK(r.cached == (r.stage != "report"));
    for (const auto& s : stage_names()) CHECK(slurp(p.manifest_path(s)) == before[s]);

    // a fresh run elsewhere reproduces every manifest byte for byte
    Pipeline q(config_from_json(tiny_doc(b)));
    q.all();
    for (const auto& s : stage_names()) {
      CAPTURE(s);
      CHECK(slurp(q.manifest_path(s)) == before[s]);
    }

    // tampering with an upstream artifact is caught downstream
    const fs::path dir_file = fs::path(p.stage_dir("delta")) / "vortex.scdir";
    {
      std::fstream f(dir_file, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(-1, std::ios::end);
      f.put('\x7f');
    }
    try {
      p.steer();
      FAIL("tampered direction was accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StaleArtifact);
    }
    // rerunning delta repairs it
    CHECK_FALSE(p.delta().cached);
    CHECK(slurp(p.manifest_path("delta")) == before["delta"]);

    // changing the seed retrains
    auto doc = tiny_doc(a);
    doc["seed"] = 2;
    Pipeline r(config_from_json(doc));
    CHECK(r.generate().cached);
    CHECK_FALSE(r.train().cached);

    fs::remove_all(a);
    fs::remove_all(b);
  }
}
