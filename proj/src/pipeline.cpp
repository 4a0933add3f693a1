#include "steerlab/pipeline/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "steerlab/concepts/concepts.hpp"
#include "steerlab/core/binary_io.hpp"
#include "steerlab/core/error.hpp"
#include "steerlab/core/hash.hpp"
#include "steerlab/core/parallel.hpp"
#include "steerlab/metrics/metrics.hpp"
#include "steerlab/pde/regimes.hpp"
#include "steerlab/steering/steering.hpp"
#include "steerlab/surrogate/training.hpp"

namespace steerlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kActsMagic = "SACS";
constexpr std::uint16_t kActsVersion = 1;

// What a downstream stage calls each upstream output in MissingArtifact.
const std::map<std::string, std::string, std::less<>> kStageProduct = {
    {"generate", "trajectories"}, {"train", "trained surrogate"}, {"extract", "activations"},
    {"delta", "concept direction"}, {"steer", "rollouts"},        {"report", "report"},
};

struct Artifact {
  std::string name;
  std::string path;  // relative to the output root
  std::string sha256;
};

struct Manifest {
  std::string stage;
  std::string inputs;
  std::vector<Artifact> artifacts;
  json summary = json::object();

  json to_json() const {
    json arts = json::array();
    for (const auto& a : artifacts) arts.push_back({{"name", a.name}, {"path", a.path}, {"sha256", a.sha256}});
    return {{"stage", stage}, {"inputs", inputs}, {"artifacts", arts}, {"summary", summary}};
  }

  static Manifest from_json(const json& j) {
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.inputs = j.at("inputs").get<std::string>();
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("name").get<std::string>(), a.at("path").get<std::string>(),
                             a.at("sha256").get<std::string>()});
    }
    m.summary = j.value("summary", json::object());
    return m;
  }

  const Artifact& at(const std::string& name) const {
    for (const auto& a : artifacts) {
      if (a.name == name) return a;
    }
    fail(ErrorCode::StaleArtifact, "manifest for stage '" + stage + "' has no artifact '" + name + "'");
  }

  std::vector<const Artifact*> with_prefix(const std::string& prefix) const {
    std::vector<const Artifact*> out;
    for (const auto& a : artifacts) {
      if (a.name.starts_with(prefix)) out.push_back(&a);
    }
    return out;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

json nullable(const std::optional<Index>& v) { return v ? json(*v) : json(nullptr); }

// Stage-local context shared by the stage implementations.
class Stages {
 public:
  Stages(const ExperimentConfig& c, const std::function<void(const std::string&)>& log) : c_(c), log_(log) {}

  fs::path root() const { return c_.out_dir; }
  fs::path stage_dir(std::string_view stage) const { return root() / c_.name / std::string(stage); }
  fs::path manifest_path(std::string_view stage) const { return stage_dir(stage) / "manifest.json"; }

  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  std::string rel(const fs::path& p) const { return fs::relative(p, root()).generic_string(); }
  fs::path abs(const std::string& rel_path) const { return root() / rel_path; }

  Artifact record(const std::string& name, const fs::path& path) const {
    return {name, rel(path), sha256_file(path.string())};
  }

  // Upstream manifest whose artifacts all still match their digests.
  Manifest upstream(std::string_view stage) const {
    const fs::path mp = manifest_path(stage);
    if (!fs::exists(mp)) {
      fail(ErrorCode::MissingArtifact, kStageProduct.find(stage)->second + " (run the '" + std::string(stage) +
                                           "' stage first; expected " + mp.string() + ")");
    }
    Manifest m;
    try {
      m = Manifest::from_json(json::parse(read_text(mp)));
    } catch (const json::exception& e) {
      fail(ErrorCode::StaleArtifact, "unreadable manifest " + mp.string() + ": " + e.what());
    }
    for (const auto& a : m.artifacts) {
      const fs::path p = abs(a.path);
      if (!fs::exists(p)) fail(ErrorCode::StaleArtifact, a.path + " listed by stage '" + m.stage + "' is missing");
      if (sha256_file(p.string()) != a.sha256) {
        fail(ErrorCode::StaleArtifact, a.path + " no longer matches the '" + m.stage + "' manifest");
      }
    }
    return m;
  }

  std::string upstream_hash(std::string_view stage) const { return sha256_hex(read_text(manifest_path(stage))); }

  // True when the stage's own manifest already covers `inputs`.
  bool fresh(std::string_view stage, const std::string& inputs) const {
    const fs::path mp = manifest_path(stage);
    if (!fs::exists(mp)) return false;
    try {
      const Manifest m = Manifest::from_json(json::parse(read_text(mp)));
      if (m.inputs != inputs) return false;
      for (const auto& a : m.artifacts) {
        const fs::path p = abs(a.path);
        if (!fs::exists(p) || sha256_file(p.string()) != a.sha256) return false;
      }
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  StageOutcome finish(Manifest m) const {
    const fs::path mp = manifest_path(m.stage);
    write_text(mp, m.to_json().dump(2) + "\n");
    return {m.stage, false, mp.string()};
  }

  StageOutcome hit(std::string_view stage) const {
    say(std::string(stage) + ": up to date");
    return {std::string(stage), true, manifest_path(stage).string()};
  }

  pde::RegimeGroupSpec concept_spec() const { return pde::presets::concept_groups(c_.concept_name, c_.seed_base); }
  pde::RegimeGroupSpec training_spec() const { return pde::presets::concept_groups("vortex", c_.seed_base); }

  std::vector<pde::GroupMember> target_corpus() const { return pde::presets::gray_scott_corpus(c_.seed_base + 500); }

  struct InitSpec {
    pde::GroupMember member;
    int stride = 1;
  };

  InitSpec init_spec(const std::string& name) const {
    const std::uint64_t seed = c_.seed_base + c_.init_seed_offset;
    if (name == "target") return {{pde::presets::gray_scott_params(0.014, 0.054), seed + 2}, 1};
    const auto spec = concept_spec();
    if (name == "f") return {{spec.group_f.back().params, seed}, spec.stride_f};
    return {{spec.group_not_f.back().params, seed + 1}, spec.stride_not_f};
  }

  surrogate::TrainOptions train_options(const SurrogateSpec& s, const std::string& role) const {
    surrogate::TrainOptions o = s.training;
    o.seed = derive_seed(c_.seed, "train." + role);
    return o;
  }

  const ExperimentConfig& c_;
  const std::function<void(const std::string&)>& log_;
};

std::string input_hash(const json& j) { return sha256_hex(j.dump()); }

json surrogate_key_doc(const SurrogateSpec& s, const surrogate::TrainOptions& o) {
  const json t = surrogate::to_json(o);
  return {{"corpus", to_string(s.corpus)}, {"model", surrogate::to_json(s.model)}, {"training", t}};
}

pde::SimulationTrajectory load_strided(const Stages& st, const Artifact& a, int stride) {
  auto t = pde::load_trajectory(st.abs(a.path).string());
  return stride > 1 ? pde::subsample_stride(t, stride) : t;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate", "train", "extract", "delta", "steer", "report"};
  return names;
}

std::string alpha_label(double alpha) {
  if (alpha == 0.0) return "0";
  return (alpha > 0 ? "p" : "m") + format_double(std::abs(alpha));
}

void save_activation_set(const std::vector<Tensor4<float>>& acts, const json& meta, const std::string& path) {
  if (acts.empty()) fail(ErrorCode::InsufficientData, "empty activation set");
  const Shape4 shape = shape_of(acts.front());
  json m = meta;
  m["count"] = acts.size();
  m["shape"] = shape;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  io::write_header(out, kActsMagic, kActsVersion, m.dump());
  for (const auto& a : acts) {
    if (shape_of(a) != shape) fail(ErrorCode::ShapeMismatch, "activation set members differ in shape");
    io::write_floats(out, {a.data(), static_cast<std::size_t>(a.size())});
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

std::vector<Tensor4<float>> load_activation_set(const std::string& path, json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  json m;
  try {
    m = json::parse(io::read_header(in, kActsMagic, kActsVersion));
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, path + ": bad metadata: " + e.what());
  }
  const auto count = m.at("count").get<std::size_t>();
  const auto shape = m.at("shape").get<Shape4>();
  std::vector<Tensor4<float>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor4<float> a(shape[0], shape[1], shape[2], shape[3]);
    io::read_floats(in, {a.data(), static_cast<std::size_t>(a.size())}, path);
    out.push_back(std::move(a));
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::CorruptFile, path + ": trailing bytes");
  if (meta) *meta = std::move(m);
  return out;
}

Pipeline::Pipeline(ExperimentConfig config) : config_(std::move(config)) {
  const auto diags = validate(config_);
  if (!diags.empty()) {
    std::string msg;
    for (const auto& d : diags) msg += (msg.empty() ? "" : "; ") + d.path + ": " + d.message;
    fail(ErrorCode::ConfigInvalid, msg);
  }
}

std::string Pipeline::stage_dir(std::string_view stage) const {
  return Stages(config_, log).stage_dir(stage).string();
}

std::string Pipeline::manifest_path(std::string_view stage) const {
  return Stages(config_, log).manifest_path(stage).string();
}

StageOutcome Pipeline::generate() {
  const Stages st(config_, log);
  const auto& c = config_;
  const json inputs = {
      {"stage", "generate"},
      {"concept", c.concept_name},
      {"grid", {c.grid.height, c.grid.width}},
      {"frames", c.frames},
      {"seed_base", c.seed_base},
      {"target", c.target.has_value()},
      {"inits", c.inits},
      {"init_seed_offset", c.init_seed_offset},
  };
  const std::string key = input_hash(inputs);
  if (st.fresh("generate", key)) return st.hit("generate");

  pde::TrajectoryCache cache((st.root() / "cache" / "trajectories").string());
  Manifest m{"generate", key, {}, json::object()};
  auto add_members = [&](const std::vector<pde::GroupMember>& members, const std::string& prefix) {
    st.say("generate: " + prefix + " (" + std::to_string(members.size()) + " trajectories)");
    generate_members(members, c.grid, c.frames, &cache, prefix);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto path = cache.path_for(pde::TrajectoryCache::key(members[i].params, c.grid, c.frames, members[i].seed));
      char idx[8];
      std::snprintf(idx, sizeof idx, "%03zu", i);
      m.artifacts.push_back(st.record(prefix + "/" + idx, path));
    }
  };
  const auto concept_spec = st.concept_spec();
  const auto corpus = st.training_spec();
  add_members(concept_spec.group_f, "group_f");
  add_members(concept_spec.group_not_f, "group_not_f");
  std::vector<pde::GroupMember> source_corpus = corpus.group_f;
  source_corpus.insert(source_corpus.end(), corpus.group_not_f.begin(), corpus.group_not_f.end());
  add_members(source_corpus, "corpus_source");
  if (c.target) add_members(st.target_corpus(), "corpus_target");
  for (const auto& name : c.inits) add_members({st.init_spec(name).member}, "init_" + name);

  m.summary = {{"trajectories", m.artifacts.size()},
               {"stride_f", concept_spec.stride_f},
               {"stride_not_f", concept_spec.stride_not_f}};
  return st.finish(std::move(m));
}

StageOutcome Pipeline::train() {
  const Stages st(config_, log);
  const Manifest gen = st.upstream("generate");
  const auto& c = config_;

  std::vector<std::pair<std::string, const SurrogateSpec*>> roles{{"source", &c.source}};
  if (c.target) roles.push_back({"target", &*c.target});

  // Model keys hash the training inputs only, so presets share models.
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [role, spec] : roles) {
    json doc = surrogate_key_doc(*spec, st.train_options(*spec, role));
    json digests = json::array();
    for (const auto* a : gen.with_prefix("corpus_" + role + "/")) digests.push_back(a->sha256);
    doc["corpus_digests"] = digests;
    keys.push_back({role, input_hash(doc)});
  }
  const std::string key = input_hash({{"stage", "train"}, {"models", keys}});
  if (st.fresh("train", key)) return st.hit("train");

  Manifest m{"train", key, {}, json::object()};
  for (std::size_t r = 0; r < roles.size(); ++r) {
    const auto& [role, spec] = roles[r];
    const fs::path path = st.root() / "cache" / "models" / (keys[r].second + ".sckpt");
    surrogate::Checkpoint ckpt;
    bool reuse = false;
    if (fs::exists(path)) {
      try {
        ckpt = surrogate::load_checkpoint(path.string());
        reuse = true;
        st.say("train: " + role + " model found in cache");
      } catch (const Error&) {
      }
    }
    if (!reuse) {
      std::vector<pde::SimulationTrajectory> trajs;
      for (const auto* a : gen.with_prefix("corpus_" + role + "/")) trajs.push_back(load_strided(st, *a, 1));
      auto options = st.train_options(*spec, role);
      st.say("train: " + role + " model, " + std::to_string(options.steps) + " steps on " +
             std::to_string(trajs.size()) + " trajectories");
      ckpt = surrogate::train(trajs, spec->model, options);
      fs::create_directories(path.parent_path());
      const fs::path tmp = path.string() + ".tmp";
      surrogate::save_checkpoint(ckpt, tmp.string());
      fs::rename(tmp, path);
    }
    m.artifacts.push_back(st.record(role, path));
    const auto& meta = ckpt.meta;
    m.summary[role] = {
        {"steps", meta.steps},
        {"final_loss", meta.final_loss},
        {"heldout_checked", meta.heldout_checked},
        {"heldout_mse", meta.heldout_mse},
        {"baseline_mse", meta.baseline_mse},
        {"ratio_to_baseline", meta.baseline_mse > 0 ? meta.heldout_mse / meta.baseline_mse : 0.0},
        {"beats_baseline", meta.heldout_beats_baseline()},
    };
  }
  return st.finish(std::move(m));
}

StageOutcome Pipeline::extract() {
  const Stages st(config_, log);
  const Manifest gen = st.upstream("generate");
  const Manifest trn = st.upstream("train");
  const auto& c = config_;
  const std::string key = input_hash({{"stage", "extract"},
                                      {"generate", st.upstream_hash("generate")},
                                      {"train", st.upstream_hash("train")},
                                      {"layer", c.layer}});
  if (st.fresh("extract", key)) return st.hit("extract");

  const auto ckpt = surrogate::load_checkpoint(st.abs(trn.at("source").path).string());
  const auto model = ckpt.model();
  const auto layer = surrogate::LayerId::parse(c.layer, ckpt.config);
  const auto spec = st.concept_spec();

  Manifest m{"extract", key, {}, json::object()};
  for (const auto& [group, stride] : {std::pair<std::string, int>{"group_f", spec.stride_f},
                                      std::pair<std::string, int>{"group_not_f", spec.stride_not_f}}) {
    std::vector<Tensor4<float>> acts;
    for (const auto* a : gen.with_prefix(group + "/")) {
      const auto traj = load_strided(st, *a, stride);
      for (auto& x : concepts::extract_activations(model, ckpt.normalizer, traj, layer)) acts.push_back(std::move(x));
    }
    st.say("extract: " + group + " -> " + std::to_string(acts.size()) + " activation windows at " + layer.name());
    const fs::path path = st.stage_dir("extract") / (group + ".sacts");
    save_activation_set(acts, {{"group", group}, {"layer", layer.name()}, {"concept", c.concept_name}}, path.string());
    m.artifacts.push_back(st.record(group, path));
    m.summary[group] = acts.size();
  }
  m.summary["layer"] = layer.name();
  return st.finish(std::move(m));
}

StageOutcome Pipeline::delta() {
  const Stages st(config_, log);
  const Manifest ext = st.upstream("extract");
  const auto& c = config_;
  const std::string key =
      input_hash({{"stage", "delta"}, {"extract", st.upstream_hash("extract")}, {"epsilon", c.epsilon}});
  if (st.fresh("delta", key)) return st.hit("delta");

  json meta;
  const auto acts_f = load_activation_set(st.abs(ext.at("group_f").path).string(), &meta);
  const auto acts_n = load_activation_set(st.abs(ext.at("group_not_f").path).string());
  std::vector<Tensor4<float>> all = acts_f;
  all.insert(all.end(), acts_n.begin(), acts_n.end());
  auto stats = concepts::fit_normalization_stats(all, c.epsilon);
  stats.source = c.concept_name + " groups at " + meta.at("layer").get<std::string>();

  std::vector<Tensor4<float>> norm_f, norm_n;
  for (const auto& a : acts_f) norm_f.push_back(concepts::normalize(a, stats));
  for (const auto& a : acts_n) norm_n.push_back(concepts::normalize(a, stats));
  auto dir = concepts::spatial_average(concepts::concept_delta(concepts::group_means(norm_f, norm_n), c.concept_name));
  dir.stats_ref = concepts::stats_hash(stats);
  dir.layer = surrogate::LayerId::parse(meta.at("layer").get<std::string>(), c.source.model);

  const fs::path path = st.stage_dir("delta") / (c.concept_name + ".scdir");
  concepts::save_direction(dir, path.string());

  // How hard a unit alpha pushes: |a| / |direction| for each payload.
  double mean_norm = 0.0;
  for (const auto& a : all) mean_norm += std::sqrt(flat(a).cast<double>().squaredNorm());
  mean_norm /= static_cast<double>(all.size());
  const double full_norm = std::sqrt(flat(*dir.full).cast<double>().squaredNorm());
  const double chan_norm =
      std::sqrt(flat(steering::broadcast_channel(*dir.channel, shape_of(*dir.full))).cast<double>().squaredNorm());

  Manifest m{"delta", key, {}, json::object()};
  m.artifacts.push_back(st.record("direction", path));
  m.summary = {{"layer", dir.layer.name()},
               {"direction_hash", steering::direction_hash(dir)},
               {"stats_hash", dir.stats_ref},
               {"mean_activation_norm", mean_norm},
               {"full_norm", full_norm},
               {"channel_norm", chan_norm},
               {"push_per_alpha_full", full_norm > 0 ? mean_norm / full_norm : 0.0},
               {"push_per_alpha_channel", chan_norm > 0 ? mean_norm / chan_norm : 0.0}};
  st.say("delta: wrote " + st.rel(path));
  return st.finish(std::move(m));
}

StageOutcome Pipeline::steer() {
  const Stages st(config_, log);
  const Manifest gen = st.upstream("generate");
  const Manifest trn = st.upstream("train");
  const Manifest dlt = st.upstream("delta");
  const auto& c = config_;
  const std::string key = input_hash({{"stage", "steer"},
                                      {"generate", st.upstream_hash("generate")},
                                      {"train", st.upstream_hash("train")},
                                      {"delta", st.upstream_hash("delta")},
                                      {"steering", to_json(c).at("steering")}});
  if (st.fresh("steer", key)) return st.hit("steer");

  const auto ckpt = surrogate::load_checkpoint(st.abs(trn.at(c.target ? "target" : "source").path).string());
  const auto model = ckpt.model();
  const auto direction = concepts::load_direction(st.abs(dlt.at("direction").path).string());
  const auto layer = surrogate::LayerId::parse(c.layer, ckpt.config);

  struct Job {
    std::string init;
    steering::Mode mode;
    double alpha;
    fs::path path;
  };
  std::vector<Job> jobs;
  const steering::Mode other =
      c.mode == steering::Mode::FullSpatial ? steering::Mode::ChannelBroadcast : steering::Mode::FullSpatial;
  for (const auto& init : c.inits) {
    const fs::path dir = st.stage_dir("steer") / init;
    for (double alpha : c.alpha_grid) {
      if (alpha == 0.0) {
        jobs.push_back({init, c.mode, 0.0, dir / "baseline.straj"});
        continue;
      }
      jobs.push_back({init, c.mode, alpha, dir / (std::string(steering::to_string(c.mode)) + "_" + alpha_label(alpha) + ".straj")});
      if (c.compare_modes) {
        jobs.push_back({init, other, alpha, dir / (std::string(steering::to_string(other)) + "_" + alpha_label(alpha) + ".straj")});
      }
    }
  }

  std::map<std::string, pde::SimulationTrajectory> prefixes;
  for (const auto& init : c.inits) {
    const auto spec = st.init_spec(init);
    const auto traj = load_strided(st, gen.at("init_" + init + "/000"), spec.stride);
    prefixes[init] = pde::slice_frames(traj, 0, ckpt.config.window_T);
  }

  st.say("steer: " + std::to_string(jobs.size()) + " rollouts of " + std::to_string(c.rollout_steps) + " steps");
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto& prefix = prefixes.at(job.init);
    steering::RolloutResult r;
    if (job.alpha == 0.0) {
      r = steering::rollout(model, ckpt.normalizer, prefix, c.rollout_steps);
    } else {
      steering::SteeringConfig sc;
      sc.direction = direction;
      sc.alpha = job.alpha;
      sc.layer = layer;
      sc.mode = job.mode;
      sc.align = c.align;
      sc.per_token = c.per_token;
      sc.alpha_limit = c.alpha_limit;
      r = steering::rollout(model, ckpt.normalizer, prefix, c.rollout_steps, &sc);
    }
    pde::save_trajectory(steering::to_trajectory(r, prefix), job.path.string());
  });

  Manifest m{"steer", key, {}, json::object()};
  for (const auto& job : jobs) {
    const std::string name = job.init + "/" +
                             (job.alpha == 0.0 ? std::string("baseline")
                                               : std::string(steering::to_string(job.mode)) + "_" + alpha_label(job.alpha));
    m.artifacts.push_back(st.record(name, job.path));
  }
  m.summary = {{"rollouts", jobs.size()},
               {"layer", layer.name()},
               {"mode", steering::to_string(c.mode)},
               {"compare_modes", c.compare_modes}};
  return st.finish(std::move(m));
}

StageOutcome Pipeline::report() {
  const Stages st(config_, log);
  const Manifest gen = st.upstream("generate");
  const Manifest str = st.upstream("steer");
  const auto& c = config_;
  json outputs = to_json(c).at("outputs");
  outputs.erase("dir");
  const std::string key = input_hash({{"stage", "report"},
                                      {"generate", st.upstream_hash("generate")},
                                      {"steer", st.upstream_hash("steer")},
                                      {"report", to_json(c).at("report")},
                                      {"outputs", outputs}});
  if (st.fresh("report", key)) return st.hit("report");

  const fs::path out_dir = st.stage_dir("report");
  const Index window = c.target_spec().model.window_T;
  std::vector<steering::Mode> modes{c.mode};
  if (c.compare_modes) {
    modes.push_back(c.mode == steering::Mode::FullSpatial ? steering::Mode::ChannelBroadcast
                                                          : steering::Mode::FullSpatial);
  }

  auto as_rollout = [](const pde::SimulationTrajectory& t) {
    steering::RolloutResult r;
    const Index N = t.frames(), F = static_cast<Index>(t.fields.size()), H = t.grid.height, W = t.grid.width;
    r.frames = Tensor4<float>(N, F, H, W);
    for (Index f = 0; f < F; ++f)
      for (Index n = 0; n < N; ++n)
        std::copy_n(t.fields[f].data() + n * H * W, H * W, r.frames.data() + (n * F + f) * H * W);
    r.field_names = t.field_names;
    return r;
  };

  std::ostringstream text;
  text << "experiment: " << c.name << "\n";
  text << "concept: " << c.concept_name << "\n";
  text << "layer: " << c.layer << "\n";
  text << "primary_mode: " << steering::to_string(c.mode) << "\n";
  text << "rollout_steps: " << c.rollout_steps << "\n\n";

  json summary = {{"experiment", c.name}, {"concept", c.concept_name}, {"inits", json::object()}};
  Manifest m{"report", key, {}, json::object()};

  for (const auto& init : c.inits) {
    const auto spec = st.init_spec(init);
    const auto truth = load_strided(st, gen.at("init_" + init + "/000"), spec.stride);
    const auto prefix = pde::slice_frames(truth, 0, window);
    const auto baseline_traj = pde::load_trajectory(st.abs(str.at(init + "/baseline").path).string());
    const auto baseline = as_rollout(baseline_traj);
    json init_summary = {{"modes", json::object()}};

    // Threshold calibrated from the ground-truth continuation of this init.
    std::optional<double> threshold;
    metrics::Crossing crossing = metrics::Crossing::Rising;
    std::string threshold_metric = c.metrics.empty() ? "" : c.metrics.front();
    if (c.threshold_frame && !threshold_metric.empty()) {
      const auto truth_series = metrics::compute_metric(truth, threshold_metric);
      const Index at = std::min<Index>(window + *c.threshold_frame, truth.frames() - 1);
      threshold = truth_series.values[at];
      crossing = truth_series.values[at] < truth_series.values[window] ? metrics::Crossing::Falling
                                                                        : metrics::Crossing::Rising;
      init_summary["threshold"] = {{"metric", threshold_metric},
                                   {"value", *threshold},
                                   {"crossing", crossing == metrics::Crossing::Falling ? "falling" : "rising"},
                                   {"truth_frame", at}};
    }

    for (const auto mode : modes) {
      const std::string mode_name(steering::to_string(mode));
      std::map<double, steering::RolloutResult> rollouts;
      std::map<double, pde::SimulationTrajectory> trajs;
      for (double alpha : c.alpha_grid) {
        if (alpha == 0.0) {
          rollouts[alpha] = baseline;
          trajs[alpha] = baseline_traj;
          continue;
        }
        const auto t = pde::load_trajectory(st.abs(str.at(init + "/" + mode_name + "_" + alpha_label(alpha)).path).string());
        rollouts[alpha] = as_rollout(t);
        trajs[alpha] = t;
      }
      if (rollouts.size() < c.alpha_grid.size()) continue;

      json mode_summary = {{"alphas", c.alpha_grid}, {"metrics", json::object()}};
      text << "== init " << init << ", mode " << mode_name << (mode == c.mode ? " (primary)" : " (comparison)")
           << " ==\n";

      json distances = json::array();
      text << "final-frame distance from baseline:";
      for (double alpha : c.alpha_grid) {
        const double d = metrics::final_frame_distance(rollouts.at(alpha), baseline);
        distances.push_back(d);
        text << " " << format_double(alpha) << "=" << format_double(d);
      }
      text << "\n";
      mode_summary["distance"] = distances;

      for (const auto& metric : c.metrics) {
        const auto rep = metrics::steering_report(rollouts, prefix, c.concept_name, metric);
        text << rep.to_text();
        json finals = json::array(), at_frame = json::array();
        const Index frame = c.metric_frame < 0 ? c.rollout_steps - 1 : c.metric_frame;
        for (double alpha : c.alpha_grid) {
          const auto& s = rep.metric_by_alpha.at(alpha);
          finals.push_back(s.final());
          at_frame.push_back(s.values.at(frame));
        }
        text << "at frame " << frame << ":";
        for (std::size_t i = 0; i < c.alpha_grid.size(); ++i) {
          text << " " << format_double(c.alpha_grid[i]) << "=" << format_double(at_frame[i].get<double>());
        }
        text << "\n";
        json ms = {{"final", finals},
                   {"frame", frame},
                   {"at_frame", at_frame},
                   {"sign_pattern", rep.sign_pattern},
                   {"sign_pattern_holds", rep.sign_pattern_holds},
                   {"monotone", rep.monotone},
                   {"no_effect", rep.no_effect},
                   {"spearman", rep.spearman},
                   {"spread", rep.spread}};
        if (threshold && metric == threshold_metric) {
          json hits = json::array();
          text << "time to threshold " << format_double(*threshold) << ":";
          for (double alpha : c.alpha_grid) {
            const auto idx = metrics::time_to_threshold(rep.metric_by_alpha.at(alpha), *threshold, crossing);
            hits.push_back(nullable(idx));
            text << " " << format_double(alpha) << "=" << (idx ? std::to_string(*idx) : "none");
          }
          text << "\n";
          ms["time_to_threshold"] = hits;
        }
        mode_summary["metrics"][metric] = ms;
      }
      text << "\n";
      init_summary["modes"][mode_name] = mode_summary;

      if (c.render) {
        std::optional<std::pair<double, double>> range;
        for (const auto& [alpha, t] : trajs) {
          const auto r = metrics::field_range(t, c.render_field);
          range = range ? std::pair{std::min(range->first, r.first), std::max(range->second, r.second)} : r;
        }
        for (const auto& [alpha, t] : trajs) {
          if (alpha == 0.0 && mode != c.mode) continue;
          const std::string sub = alpha == 0.0 ? "baseline" : mode_name + "_" + alpha_label(alpha);
          const fs::path dir = out_dir / "render" / init / sub;
          const auto files = metrics::render_frames(t, c.render_field, c.palette, dir.string(), range);
          for (const auto& f : files) m.artifacts.push_back(st.record("render/" + st.rel(f), f));
        }
      }
    }
    summary["inits"][init] = init_summary;
  }

  const fs::path report_path = out_dir / "report.txt";
  const fs::path summary_path = out_dir / "summary.json";
  write_text(report_path, text.str());
  write_text(summary_path, summary.dump(2) + "\n");
  m.artifacts.insert(m.artifacts.begin(), st.record("summary", summary_path));
  m.artifacts.insert(m.artifacts.begin(), st.record("report", report_path));
  st.say("report: wrote " + st.rel(report_path));
  return st.finish(std::move(m));
}

StageOutcome Pipeline::run(std::string_view stage) {
  if (stage == "generate") return generate();
  if (stage == "train") return train();
  if (stage == "extract") return extract();
  if (stage == "delta") return delta();
  if (stage == "steer") return steer();
  if (stage == "report") return report();
  fail(ErrorCode::InvalidArgument, "unknown stage '" + std::string(stage) + "'");
}

std::vector<StageOutcome> Pipeline::all() {
  std::vector<StageOutcome> out;
  for (const auto& s : stage_names()) out.push_back(run(s));
  return out;
}

}  // namespace steerlab::pipeline
