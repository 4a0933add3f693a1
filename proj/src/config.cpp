#include "steerlab/pipeline/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "steerlab/core/error.hpp"
#include "steerlab/metrics/metrics.hpp"
#include "steerlab/pde/regimes.hpp"

namespace steerlab::pipeline {

using nlohmann::json;

std::string_view to_string(Corpus c) { return c == Corpus::Shear ? "shear" : "gray_scott"; }

Corpus corpus_from_string(std::string_view s) {
  if (s == "shear") return Corpus::Shear;
  if (s == "gray_scott") return Corpus::GrayScott;
  fail(ErrorCode::ConfigInvalid, "unknown corpus '" + std::string(s) + "'");
}

namespace {

Index field_count(Corpus c) { return c == Corpus::Shear ? 4 : 2; }

json model_json(const surrogate::ModelConfig& m) {
  return {{"patch_size", m.patch_size}, {"embed_dim", m.embed_dim}, {"n_blocks", m.n_blocks},
          {"n_heads", m.n_heads},       {"window_T", m.window_T},   {"mlp_ratio", m.mlp_ratio}};
}

json surrogate_json(const SurrogateSpec& s) {
  // The training seed is derived from the experiment seed, not configured.
  json training = surrogate::to_json(s.training);
  training.erase("seed");
  return {{"corpus", to_string(s.corpus)}, {"config", model_json(s.model)}, {"training", training}};
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
  return out;
}

// Collects every problem in a document instead of stopping at the first.
class Reader {
 public:
  std::vector<Diagnostic> diags;

  void error(const std::string& path, const std::string& message) { diags.push_back({path, message}); }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    error(path, "expected an object");
    return false;
  }

  void keys(const json& j, const std::string& path, const std::vector<std::string>& allowed) {
    for (const auto& [k, v] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), k) != allowed.end()) continue;
      std::string msg = "unknown key";
      if (auto near = nearest_name(k, allowed)) msg += "; did you mean '" + *near + "'?";
      error(join_path(path, k), msg);
    }
  }

  template <typename T>
  void get(const json& j, const std::string& path, const std::string& key, T& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      error(join_path(path, key), "wrong type");
    }
  }

  static std::string join_path(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
};

void read_model(Reader& r, const json& j, const std::string& path, surrogate::ModelConfig& m) {
  if (!r.object(j, path)) return;
  r.keys(j, path, {"patch_size", "embed_dim", "n_blocks", "n_heads", "window_T", "mlp_ratio"});
  r.get(j, path, "patch_size", m.patch_size);
  r.get(j, path, "embed_dim", m.embed_dim);
  r.get(j, path, "n_blocks", m.n_blocks);
  r.get(j, path, "n_heads", m.n_heads);
  r.get(j, path, "window_T", m.window_T);
  r.get(j, path, "mlp_ratio", m.mlp_ratio);
}

void read_training(Reader& r, const json& j, const std::string& path, surrogate::TrainOptions& o) {
  if (!r.object(j, path)) return;
  r.keys(j, path,
         {"steps", "batch", "lr", "momentum", "clip_norm", "holdout_fraction", "strides", "input_noise"});
  r.get(j, path, "steps", o.steps);
  r.get(j, path, "batch", o.batch);
  r.get(j, path, "lr", o.lr);
  r.get(j, path, "momentum", o.momentum);
  r.get(j, path, "clip_norm", o.clip_norm);
  r.get(j, path, "holdout_fraction", o.holdout_fraction);
  r.get(j, path, "strides", o.strides);
  r.get(j, path, "input_noise", o.input_noise);
}

void read_surrogate(Reader& r, const json& j, const std::string& path, SurrogateSpec& s) {
  if (!r.object(j, path)) return;
  r.keys(j, path, {"corpus", "config", "training"});
  if (j.contains("corpus")) {
    std::string name;
    r.get(j, path, "corpus", name);
    if (name == "shear" || name == "gray_scott") {
      s.corpus = corpus_from_string(name);
    } else {
      std::string msg = "unknown corpus '" + name + "'";
      if (auto near = nearest_name(name, {"shear", "gray_scott"})) msg += "; did you mean '" + *near + "'?";
      r.error(path + ".corpus", msg);
    }
  }
  if (j.contains("config")) read_model(r, j.at("config"), path + ".config", s.model);
  if (j.contains("training")) read_training(r, j.at("training"), path + ".training", s.training);
}

template <typename E, typename F>
void read_enum(Reader& r, const json& j, const std::string& path, const std::string& key, E& out, F parse,
               const std::vector<std::string>& names) {
  if (!j.contains(key)) return;
  std::string text;
  r.get(j, path, key, text);
  if (std::find(names.begin(), names.end(), text) == names.end()) {
    r.error(path + "." + key, "must be one of: " + join(names));
    return;
  }
  out = parse(text);
}

void finalize(ExperimentConfig& c) {
  auto fix = [&](SurrogateSpec& s) {
    s.model.grid_height = c.grid.height;
    s.model.grid_width = c.grid.width;
    s.model.field_count = field_count(s.corpus);
  };
  fix(c.source);
  if (c.target) fix(*c.target);
  std::sort(c.alpha_grid.begin(), c.alpha_grid.end());
}

ExperimentConfig parse(const json& doc, Reader& r) {
  ExperimentConfig c;
  if (!r.object(doc, "")) return c;
  json j = doc;
  if (j.contains("extends")) {
    if (!j.at("extends").is_string()) {
      r.error("extends", "expected a preset name");
      return c;
    }
    const std::string base = j.at("extends").get<std::string>();
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), base) == names.end()) {
      std::string msg = "unknown preset '" + base + "'";
      if (auto near = nearest_name(base, names)) msg += "; did you mean '" + *near + "'?";
      r.error("extends", msg);
      return c;
    }
    json merged = to_json(preset(base));
    j.erase("extends");
    merged.merge_patch(j);
    j = std::move(merged);
  }

  r.keys(j, "", {"name", "seed", "data", "model", "target_model", "concept", "steering", "report", "outputs"});
  r.get(j, "", "name", c.name);
  r.get(j, "", "seed", c.seed);

  if (j.contains("data") && r.object(j.at("data"), "data")) {
    const json& d = j.at("data");
    r.keys(d, "data", {"concept", "grid", "frames", "seed_base"});
    r.get(d, "data", "concept", c.concept_name);
    if (d.contains("grid")) {
      std::vector<Index> g;
      r.get(d, "data", "grid", g);
      if (g.size() == 2) {
        c.grid = {g[0], g[1]};
      } else {
        r.error("data.grid", "expected [height, width]");
      }
    }
    r.get(d, "data", "frames", c.frames);
    r.get(d, "data", "seed_base", c.seed_base);
  }
  if (j.contains("model")) read_surrogate(r, j.at("model"), "model", c.source);
  if (j.contains("target_model") && !j.at("target_model").is_null()) {
    SurrogateSpec t;
    read_surrogate(r, j.at("target_model"), "target_model", t);
    c.target = t;
  }
  if (j.contains("concept") && r.object(j.at("concept"), "concept")) {
    const json& k = j.at("concept");
    r.keys(k, "concept", {"layer", "epsilon"});
    if (k.contains("layer")) {
      const json& l = k.at("layer");
      if (l.is_number_integer()) {
        c.layer = std::to_string(l.get<int>());
      } else {
        r.get(k, "concept", "layer", c.layer);
      }
    }
    r.get(k, "concept", "epsilon", c.epsilon);
  }
  if (j.contains("steering") && r.object(j.at("steering"), "steering")) {
    const json& s = j.at("steering");
    r.keys(s, "steering",
           {"alpha_grid", "mode", "align", "per_token", "alpha_limit", "rollout_steps", "inits", "init_seed_offset",
            "compare_modes"});
    r.get(s, "steering", "alpha_grid", c.alpha_grid);
    read_enum(r, s, "steering", "mode", c.mode, steering::mode_from_string, {"full", "channel"});
    read_enum(r, s, "steering", "align", c.align, steering::align_from_string, {"none", "pad", "interpolate"});
    r.get(s, "steering", "per_token", c.per_token);
    r.get(s, "steering", "alpha_limit", c.alpha_limit);
    r.get(s, "steering", "rollout_steps", c.rollout_steps);
    r.get(s, "steering", "inits", c.inits);
    r.get(s, "steering", "init_seed_offset", c.init_seed_offset);
    r.get(s, "steering", "compare_modes", c.compare_modes);
  }
  if (j.contains("report") && r.object(j.at("report"), "report")) {
    const json& p = j.at("report");
    r.keys(p, "report", {"metrics", "metric_frame", "threshold_frame"});
    r.get(p, "report", "metrics", c.metrics);
    r.get(p, "report", "metric_frame", c.metric_frame);
    if (p.contains("threshold_frame")) {
      if (p.at("threshold_frame").is_null()) {
        c.threshold_frame.reset();
      } else {
        Index f = 0;
        r.get(p, "report", "threshold_frame", f);
        c.threshold_frame = f;
      }
    }
  }
  if (j.contains("outputs") && r.object(j.at("outputs"), "outputs")) {
    const json& o = j.at("outputs");
    r.keys(o, "outputs", {"dir", "render", "palette", "render_field"});
    r.get(o, "outputs", "dir", c.out_dir);
    r.get(o, "outputs", "render", c.render);
    r.get(o, "outputs", "palette", c.palette);
    r.get(o, "outputs", "render_field", c.render_field);
  }
  finalize(c);
  return c;
}

bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

void check_surrogate(std::vector<Diagnostic>& out, const SurrogateSpec& s, const std::string& path) {
  try {
    s.model.validate();
  } catch (const Error& e) {
    out.push_back({path + ".config", e.what()});
  }
  const auto& t = s.training;
  if (t.steps < 0) out.push_back({path + ".training.steps", "must be >= 0"});
  if (t.batch < 1) out.push_back({path + ".training.batch", "must be >= 1"});
  if (!(t.lr > 0) || !std::isfinite(t.lr)) out.push_back({path + ".training.lr", "must be positive"});
  if (t.momentum < 0 || t.momentum >= 1) out.push_back({path + ".training.momentum", "must be in [0, 1)"});
  if (!(t.holdout_fraction > 0 && t.holdout_fraction < 1)) {
    out.push_back({path + ".training.holdout_fraction", "must be in (0, 1)"});
  }
  if (t.strides.empty()) out.push_back({path + ".training.strides", "must not be empty"});
  for (int st : t.strides) {
    if (st < 1) out.push_back({path + ".training.strides", "strides must be >= 1"});
  }
  if (t.input_noise < 0) out.push_back({path + ".training.input_noise", "must be >= 0"});
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j = {
      {"name", c.name},
      {"seed", c.seed},
      {"data", {{"concept", c.concept_name}, {"grid", {c.grid.height, c.grid.width}}, {"frames", c.frames},
                {"seed_base", c.seed_base}}},
      {"model", surrogate_json(c.source)},
      {"target_model", c.target ? surrogate_json(*c.target) : json(nullptr)},
      {"concept", {{"layer", c.layer}, {"epsilon", c.epsilon}}},
      {"steering",
       {{"alpha_grid", c.alpha_grid},
        {"mode", steering::to_string(c.mode)},
        {"align", steering::to_string(c.align)},
        {"per_token", c.per_token},
        {"alpha_limit", c.alpha_limit},
        {"rollout_steps", c.rollout_steps},
        {"inits", c.inits},
        {"init_seed_offset", c.init_seed_offset},
        {"compare_modes", c.compare_modes}}},
      {"report",
       {{"metrics", c.metrics},
        {"metric_frame", c.metric_frame},
        {"threshold_frame", c.threshold_frame ? json(*c.threshold_frame) : json(nullptr)}}},
      {"outputs", {{"dir", c.out_dir}, {"render", c.render}, {"palette", c.palette}, {"render_field", c.render_field}}},
  };
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  Reader r;
  ExperimentConfig c = parse(j, r);
  if (!r.diags.empty()) {
    std::string msg;
    for (const auto& d : r.diags) msg += (msg.empty() ? "" : "; ") + (d.path.empty() ? "<root>" : d.path) + ": " + d.message;
    fail(ErrorCode::ConfigInvalid, msg);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<Diagnostic> validate(const ExperimentConfig& c) {
  std::vector<Diagnostic> out;
  auto add = [&](std::string path, std::string msg) { out.push_back({std::move(path), std::move(msg)}); };

  if (c.name.empty()) add("name", "must not be empty");
  for (char ch : c.name) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') {
      add("name", "may only contain letters, digits, '-', '_' and '.'");
      break;
    }
  }

  const auto concepts = pde::presets::concept_names();
  if (std::find(concepts.begin(), concepts.end(), c.concept_name) == concepts.end()) {
    std::string msg = "unknown concept preset '" + c.concept_name + "'";
    if (auto near = nearest_name(c.concept_name, concepts)) msg += "; did you mean '" + *near + "'?";
    add("data.concept", msg);
  }
  if (!is_power_of_two(c.grid.height) || !is_power_of_two(c.grid.width)) {
    add("data.grid", "height and width must be powers of two");
  }
  if (c.source.corpus != Corpus::Shear) add("model.corpus", "the source surrogate must be trained on shear flow");
  check_surrogate(out, c.source, "model");
  if (c.target) check_surrogate(out, *c.target, "target_model");

  const Index window = c.target_spec().model.window_T;
  if (c.frames < 2 * (c.source.model.window_T + 1)) add("data.frames", "too short for the model window");

  try {
    surrogate::LayerId::parse(c.layer, c.source.model);
    surrogate::LayerId::parse(c.layer, c.target_spec().model);
  } catch (const Error& e) {
    add("concept.layer", e.what());
  }
  if (!(c.epsilon >= 0)) add("concept.epsilon", "must be >= 0");

  if (std::find(c.alpha_grid.begin(), c.alpha_grid.end(), 0.0) == c.alpha_grid.end()) {
    add("steering.alpha_grid", "alpha grid must contain 0 (the unsteered baseline)");
  }
  if (std::set<double>(c.alpha_grid.begin(), c.alpha_grid.end()).size() != c.alpha_grid.size()) {
    add("steering.alpha_grid", "alpha values must be distinct");
  }
  for (double a : c.alpha_grid) {
    if (!std::isfinite(a) || std::abs(a) > c.alpha_limit) {
      add("steering.alpha_grid", "alpha " + std::to_string(a) + " exceeds the limit " + std::to_string(c.alpha_limit));
    }
  }
  if (c.rollout_steps < 1) add("steering.rollout_steps", "must be >= 1");
  if (c.inits.empty()) add("steering.inits", "must not be empty");
  const std::vector<std::string> init_names = c.target ? std::vector<std::string>{"target"}
                                                      : std::vector<std::string>{"f", "not_f"};
  for (const auto& i : c.inits) {
    if (std::find(init_names.begin(), init_names.end(), i) == init_names.end()) {
      add("steering.inits", "unknown init '" + i + "'; expected one of: " + join(init_names));
    }
  }
  if (c.target && c.target->corpus == Corpus::Shear && c.target->model == c.source.model) {
    add("target_model", "a target surrogate identical to the source is redundant; omit it");
  }
  if (c.target && c.target->model.embed_dim != c.source.model.embed_dim) {
    add("target_model.config.embed_dim", "must match the source so channel directions transfer");
  }
  if (c.target && c.mode == steering::Mode::FullSpatial && c.align == steering::Align::None &&
      c.target->model.activation_shape() != c.source.model.activation_shape()) {
    add("steering.align", "full-spatial transfer across different activation shapes needs pad or interpolate");
  }

  const auto names = metrics::metric_names();
  for (const auto& m : c.metrics) {
    if (std::find(names.begin(), names.end(), m) == names.end()) {
      std::string msg = "unknown metric '" + m + "'";
      if (auto near = nearest_name(m, names)) msg += "; did you mean '" + *near + "'?";
      add("report.metrics", msg);
    } else if (c.target_spec().corpus == Corpus::GrayScott) {
      add("report.metrics", "metric '" + m + "' needs shear-flow fields");
    }
  }
  if (c.metric_frame < -1 || c.metric_frame >= c.rollout_steps) {
    add("report.metric_frame", "must be -1 or a rollout frame index");
  }
  if (c.threshold_frame && (*c.threshold_frame < 0 || *c.threshold_frame >= c.rollout_steps)) {
    add("report.threshold_frame", "must be a rollout frame index");
  }
  if (c.threshold_frame && c.source.corpus != c.target_spec().corpus) {
    add("report.threshold_frame", "time-to-threshold is only defined within one system");
  }
  if (c.threshold_frame && c.frames < window + c.rollout_steps) {
    add("report.threshold_frame", "data.frames too short to calibrate against the ground-truth continuation");
  }

  if (c.out_dir.empty()) add("outputs.dir", "must not be empty");
  const std::vector<std::string> palettes{"gray", "viridis", "coolwarm"};
  if (std::find(palettes.begin(), palettes.end(), c.palette) == palettes.end()) {
    add("outputs.palette", "must be one of: " + join(palettes));
  }
  const auto fields = pde::field_names_for(c.target_spec().corpus == Corpus::Shear ? pde::System::ShearFlow
                                                                                    : pde::System::GrayScott);
  if (std::find(fields.begin(), fields.end(), c.render_field) == fields.end()) {
    add("outputs.render_field", "must be one of: " + join(fields));
  }
  return out;
}

std::vector<Diagnostic> validate_document(const json& j) {
  Reader r;
  ExperimentConfig c = parse(j, r);
  if (!r.diags.empty()) return r.diags;
  return validate(c);
}

std::vector<std::string> preset_names() {
  return {"vortex-shear", "diffusion-shear", "speed-shear", "vortex-to-grayscott"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "vortex-shear") {
    c.concept_name = "vortex";
    c.mode = steering::Mode::ChannelBroadcast;
  } else if (name == "diffusion-shear") {
    c.concept_name = "diffusion";
    c.mode = steering::Mode::FullSpatial;
    c.alpha_grid = {-0.25, 0.0, 0.25};
    c.inits = {"not_f", "f"};
    c.metrics = {"interface_sharpness"};
    c.metric_frame = 20;
  } else if (name == "speed-shear") {
    c.concept_name = "speed";
    c.mode = steering::Mode::FullSpatial;
    c.alpha_grid = {-0.25, 0.0, 0.25};
    c.inits = {"not_f"};
    c.metrics = {"mean_abs_vorticity"};
    c.threshold_frame = 20;
  } else if (name == "vortex-to-grayscott") {
    c.concept_name = "vortex";
    c.mode = steering::Mode::ChannelBroadcast;
    c.alpha_grid = {-0.1, -0.05, 0.0, 0.05, 0.1};
    SurrogateSpec t;
    t.corpus = Corpus::GrayScott;
    c.target = t;
    c.inits = {"target"};
    c.metrics = {};
    c.compare_modes = false;
    c.render_field = "species_B";
    c.palette = "viridis";
  } else {
    std::string msg = "unknown preset '" + name + "'";
    if (auto near = nearest_name(name, preset_names())) msg += "; did you mean '" + *near + "'?";
    fail(ErrorCode::ConfigInvalid, msg);
  }
  finalize(c);
  return c;
}

std::optional<std::string> nearest_name(const std::string& name, const std::vector<std::string>& candidates) {
  auto distance = [](const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
      cur[0] = i;
      for (std::size_t j = 1; j <= b.size(); ++j) {
        cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
      }
      std::swap(prev, cur);
    }
    return prev[b.size()];
  };
  std::optional<std::string> best;
  std::size_t best_d = 0;
  for (const auto& c : candidates) {
    const std::size_t d = distance(name, c);
    if (!best || d < best_d) {
      best = c;
      best_d = d;
    }
  }
  if (!best || best_d > std::max<std::size_t>(2, best->size() / 2)) return std::nullopt;
  return best;
}

}  // namespace steerlab::pipeline
