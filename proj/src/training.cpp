#include "steerlab/surrogate/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "steerlab/core/binary_io.hpp"
#include "steerlab/core/error.hpp"
#include "steerlab/core/parallel.hpp"

namespace steerlab::surrogate {

namespace {

constexpr std::string_view kMagic = "SCKP";
constexpr std::uint16_t kVersion = 1;

void check_compatible(const std::vector<pde::SimulationTrajectory>& trajs) {
  if (trajs.empty()) fail(ErrorCode::InsufficientData, "no trajectories to train on");
  const auto& first = trajs.front();
  for (const auto& t : trajs) {
    if (t.field_names != first.field_names) fail(ErrorCode::ShapeMismatch, "trajectories disagree on field set");
    if (!(t.grid == first.grid)) fail(ErrorCode::ShapeMismatch, "trajectories disagree on grid");
  }
}

std::vector<pde::SimulationTrajectory> expand_strides(const std::vector<pde::SimulationTrajectory>& trajs,
                                                      const std::vector<int>& strides, Index min_frames) {
  std::vector<pde::SimulationTrajectory> out;
  for (const auto& t : trajs) {
    for (int s : strides) {
      if (t.frames() < min_frames * s) continue;
      auto sub = pde::subsample_stride(t, s);
      if (sub.frames() >= min_frames) out.push_back(std::move(sub));
    }
  }
  return out;
}

// Perturbs the window and shifts the target so that last + target still
// lands on the clean next frame.
void add_input_noise(Tensor4<float>& window, Tensor3<float>& target, const Normalizer& norm, double sigma,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  const Index T = window.dimension(0), F = window.dimension(1), plane = window.dimension(2) * window.dimension(3);
  for (Index t = 0; t < T; ++t)
    for (Index f = 0; f < F; ++f) {
      const auto fi = static_cast<std::size_t>(f);
      const double to_target = norm.std[fi] / norm.delta_std[fi];
      float* w = window.data() + (t * F + f) * plane;
      float* y = target.data() + f * plane;
      for (Index p = 0; p < plane; ++p) {
        const double e = noise(rng);
        w[p] += static_cast<float>(e);
        if (t == T - 1) y[p] -= static_cast<float>(e * to_target);
      }
    }
}

}  // namespace

Normalizer Normalizer::fit(const std::vector<pde::SimulationTrajectory>& trajs, const std::vector<int>& strides) {
  check_compatible(trajs);
  Normalizer n;
  n.field_names = trajs.front().field_names;
  const auto fields = n.field_names.size();
  n.mean.assign(fields, 0.0);
  n.std.assign(fields, 0.0);
  n.delta_std.assign(fields, 0.0);
  for (std::size_t f = 0; f < fields; ++f) {
    double sum = 0, count = 0;
    for (const auto& t : trajs) {
      sum += flat(t.fields[f]).cast<double>().sum();
      count += static_cast<double>(t.fields[f].size());
    }
    const double mu = sum / count;
    double sq = 0, dsq = 0, dcount = 0;
    for (const auto& t : trajs) {
      sq += (flat(t.fields[f]).cast<double>().array() - mu).square().sum();
      const Index frame = t.grid.height * t.grid.width;
      const Index T = t.frames();
      for (int s : strides) {
        if (T <= s) continue;
        const Eigen::Map<const VectorX<float>> x(t.fields[f].data(), T * frame);
        const auto later = x.tail((T - s) * frame).cast<double>();
        const auto earlier = x.head((T - s) * frame).cast<double>();
        dsq += (later - earlier).squaredNorm();
        dcount += static_cast<double>((T - s) * frame);
      }
    }
    n.mean[f] = mu;
    n.std[f] = std::max(std::sqrt(sq / count), 1e-8);
    n.delta_std[f] = dcount > 0 ? std::max(std::sqrt(dsq / dcount), 1e-8) : 1.0;
  }
  return n;
}

Tensor4<float> Normalizer::normalize_window(const Tensor4<float>& frames) const {
  if (frames.dimension(1) != field_count()) fail(ErrorCode::ShapeMismatch, "window field count");
  Tensor4<float> out(frames.dimensions());
  const Index plane = frames.dimension(2) * frames.dimension(3);
  for (Index t = 0; t < frames.dimension(0); ++t)
    for (Index f = 0; f < field_count(); ++f) {
      const Index off = (t * field_count() + f) * plane;
      const auto fi = static_cast<std::size_t>(f);
      Eigen::Map<VectorX<float>>(out.data() + off, plane) =
          ((Eigen::Map<const VectorX<float>>(frames.data() + off, plane).array().cast<double>() - mean[fi]) /
           std[fi])
              .cast<float>();
    }
  return out;
}

Tensor3<float> Normalizer::denormalize_delta(const Tensor3<float>& delta) const {
  Tensor3<float> out(delta.dimensions());
  const Index plane = delta.dimension(1) * delta.dimension(2);
  for (Index f = 0; f < delta.dimension(0); ++f) {
    Eigen::Map<VectorX<float>>(out.data() + f * plane, plane) =
        Eigen::Map<const VectorX<float>>(delta.data() + f * plane, plane) *
        static_cast<float>(delta_std[static_cast<std::size_t>(f)]);
  }
  return out;
}

Tensor3<float> Normalizer::normalize_delta(const Tensor3<float>& delta) const {
  Tensor3<float> out(delta.dimensions());
  const Index plane = delta.dimension(1) * delta.dimension(2);
  for (Index f = 0; f < delta.dimension(0); ++f) {
    Eigen::Map<VectorX<float>>(out.data() + f * plane, plane) =
        Eigen::Map<const VectorX<float>>(delta.data() + f * plane, plane) /
        static_cast<float>(delta_std[static_cast<std::size_t>(f)]);
  }
  return out;
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"fields", n.field_names}, {"mean", n.mean}, {"std", n.std}, {"delta_std", n.delta_std}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.field_names = j.at("fields").get<std::vector<std::string>>();
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  n.delta_std = j.at("delta_std").get<std::vector<double>>();
  const auto f = n.field_names.size();
  if (n.mean.size() != f || n.std.size() != f || n.delta_std.size() != f) {
    fail(ErrorCode::ShapeMismatch, "normalizer vectors disagree with field count");
  }
  return n;
}

Tensor4<float> stack_frames(const pde::SimulationTrajectory& traj, Index begin, Index count) {
  if (begin < 0 || begin + count > traj.frames()) fail(ErrorCode::InvalidArgument, "frame range out of bounds");
  const Index F = traj.field_count(), H = traj.grid.height, W = traj.grid.width, plane = H * W;
  Tensor4<float> out(count, F, H, W);
  for (Index t = 0; t < count; ++t)
    for (Index f = 0; f < F; ++f) {
      std::copy_n(traj.fields[static_cast<std::size_t>(f)].data() + (begin + t) * plane, plane,
                  out.data() + (t * F + f) * plane);
    }
  return out;
}

nlohmann::json to_json(const TrainOptions& o) {
  return {{"steps", o.steps},       {"batch", o.batch},
          {"lr", o.lr},             {"momentum", o.momentum},
          {"clip_norm", o.clip_norm}, {"seed", o.seed},
          {"holdout_fraction", o.holdout_fraction}, {"strides", o.strides},
          {"input_noise", o.input_noise}};
}

TrainOptions train_options_from_json(const nlohmann::json& j) {
  TrainOptions o;
  o.steps = j.value("steps", o.steps);
  o.batch = j.value("batch", o.batch);
  o.lr = j.value("lr", o.lr);
  o.momentum = j.value("momentum", o.momentum);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.seed = j.value("seed", o.seed);
  o.holdout_fraction = j.value("holdout_fraction", o.holdout_fraction);
  o.strides = j.value("strides", o.strides);
  o.input_noise = j.value("input_noise", o.input_noise);
  return o;
}

nlohmann::json to_json(const TrainingMeta& m) {
  return {{"steps", m.steps},
          {"seed", m.seed},
          {"initial_loss", m.initial_loss},
          {"final_loss", m.final_loss},
          {"loss_curve", m.loss_curve},
          {"train_samples", m.train_samples},
          {"heldout_samples", m.heldout_samples},
          {"heldout_checked", m.heldout_checked},
          {"heldout_mse", m.heldout_mse},
          {"baseline_mse", m.baseline_mse}};
}

TrainingMeta training_meta_from_json(const nlohmann::json& j) {
  TrainingMeta m;
  m.steps = j.at("steps").get<Index>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.initial_loss = j.at("initial_loss").get<double>();
  m.final_loss = j.at("final_loss").get<double>();
  m.loss_curve = j.value("loss_curve", std::vector<double>{});
  m.train_samples = j.value("train_samples", Index{0});
  m.heldout_samples = j.value("heldout_samples", Index{0});
  m.heldout_checked = j.at("heldout_checked").get<bool>();
  m.heldout_mse = j.at("heldout_mse").get<double>();
  m.baseline_mse = j.at("baseline_mse").get<double>();
  return m;
}

Model<float> Checkpoint::model() const {
  Model<float> m(config);
  auto& p = m.parameters();
  if (p.names != parameters.names) fail(ErrorCode::CorruptCheckpoint, "parameter names do not match the config");
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.values[i].rows() != parameters.values[i].rows() || p.values[i].cols() != parameters.values[i].cols()) {
      fail(ErrorCode::CorruptCheckpoint, "shape mismatch for " + p.names[i]);
    }
  }
  p = parameters;
  return m;
}

std::vector<Sample> enumerate_samples(const std::vector<pde::SimulationTrajectory>& trajs, Index window_T) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (Index s = 0; s + window_T < trajs[i].frames(); ++s) out.push_back({i, s});
  }
  return out;
}

std::pair<Tensor4<float>, Tensor3<float>> make_example(const pde::SimulationTrajectory& traj, Index start,
                                                       Index window_T, const Normalizer& norm) {
  const Tensor4<float> frames = stack_frames(traj, start, window_T + 1);
  const Index F = frames.dimension(1), H = frames.dimension(2), W = frames.dimension(3);
  Tensor4<float> inputs(window_T, F, H, W);
  std::copy_n(frames.data(), inputs.size(), inputs.data());
  Tensor3<float> delta(F, H, W);
  const Index frame = F * H * W;
  Eigen::Map<VectorX<float>>(delta.data(), frame) =
      Eigen::Map<const VectorX<float>>(frames.data() + window_T * frame, frame) -
      Eigen::Map<const VectorX<float>>(frames.data() + (window_T - 1) * frame, frame);
  return {norm.normalize_window(inputs), norm.normalize_delta(delta)};
}

std::pair<double, double> evaluate_one_step(const Model<float>& model, const Normalizer& norm,
                                            const std::vector<pde::SimulationTrajectory>& trajs,
                                            const std::vector<Sample>& samples, unsigned threads) {
  std::vector<double> mse(samples.size()), base(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const auto [window, target] = make_example(trajs[samples[i].trajectory], samples[i].start,
                                                   model.config().window_T, norm);
        const auto pred = model.forward(window).delta;
        mse[i] = mse_loss(pred, target);
        base[i] = flat(target).cast<double>().squaredNorm() / static_cast<double>(target.size());
      },
      threads);
  const double n = static_cast<double>(std::max<std::size_t>(1, samples.size()));
  return {std::accumulate(mse.begin(), mse.end(), 0.0) / n, std::accumulate(base.begin(), base.end(), 0.0) / n};
}

Checkpoint train(const std::vector<pde::SimulationTrajectory>& trajs, const ModelConfig& config,
                 const TrainOptions& options) {
  config.validate();
  check_compatible(trajs);
  const auto& first = trajs.front();
  if (first.field_count() != config.field_count || first.grid.height != config.grid_height ||
      first.grid.width != config.grid_width) {
    fail(ErrorCode::ShapeMismatch, "trajectory layout does not match the model config");
  }
  if (options.batch < 1 || options.steps < 0) fail(ErrorCode::InvalidArgument, "batch must be >= 1 and steps >= 0");

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(trajs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = 0;
  if (trajs.size() >= 2 && options.holdout_fraction > 0) {
    n_hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(options.holdout_fraction * static_cast<double>(trajs.size()))), 1,
        trajs.size() - 1);
  }
  std::vector<pde::SimulationTrajectory> train_set, hold_set;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? hold_set : train_set).push_back(trajs[order[i]]);

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.normalizer = Normalizer::fit(train_set, options.strides);
  const std::uint64_t init_seed = rng();
  Model<float> model = Model<float>::initialize(config, init_seed);
  ckpt.meta.seed = options.seed;
  ckpt.meta.steps = options.steps;

  const auto expanded = expand_strides(train_set, options.strides, config.window_T + 1);
  const auto samples = enumerate_samples(expanded, config.window_T);
  if (samples.empty() && options.steps > 0) fail(ErrorCode::InsufficientData, "no training windows");
  ckpt.meta.train_samples = static_cast<Index>(samples.size());

  auto& params = model.parameters();
  ParameterSet<float> velocity = params.zeros_like();
  const auto batch = static_cast<std::size_t>(options.batch);
  std::vector<ParameterSet<float>> grads(batch, params.zeros_like());
  std::vector<float> losses(batch);
  std::vector<std::size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = perm.size();
  double interval_sum = 0;
  Index interval_count = 0;
  const Index log_every = std::max<Index>(1, options.log_every);

  for (Index step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> picks(batch);
    std::vector<std::uint64_t> noise_seeds(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == perm.size()) {
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      picks[b] = perm[cursor++];
      if (options.input_noise > 0) noise_seeds[b] = rng();
    }
    parallel_for(
        batch,
        [&](std::size_t b) {
          grads[b].set_zero();
          const Sample& s = samples[picks[b]];
          auto [window, target] = make_example(expanded[s.trajectory], s.start, config.window_T, ckpt.normalizer);
          if (options.input_noise > 0) add_input_noise(window, target, ckpt.normalizer, options.input_noise,
                                                       noise_seeds[b]);
          losses[b] = model.loss_and_gradient(window, target, grads[b]);
        },
        options.threads);

    double loss = 0;
    for (float l : losses) loss += l;
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) fail(ErrorCode::Diverged, "non-finite loss at step " + std::to_string(step));

    double norm_sq = 0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      for (std::size_t b = 1; b < batch; ++b) grads[0].values[i] += grads[b].values[i];
      grads[0].values[i] /= static_cast<float>(batch);
      norm_sq += grads[0].values[i].template cast<double>().squaredNorm();
    }
    double scale = 1.0;
    if (options.clip_norm > 0 && std::sqrt(norm_sq) > options.clip_norm) scale = options.clip_norm / std::sqrt(norm_sq);
    const double lr = options.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                          static_cast<double>(options.steps)));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      velocity.values[i] = static_cast<float>(options.momentum) * velocity.values[i] +
                           static_cast<float>(scale) * grads[0].values[i];
      params.values[i] -= static_cast<float>(lr) * velocity.values[i];
    }

    interval_sum += loss;
    ++interval_count;
    if (interval_count == log_every || step + 1 == options.steps) {
      const double mean = interval_sum / static_cast<double>(interval_count);
      if (ckpt.meta.loss_curve.empty()) ckpt.meta.initial_loss = mean;
      ckpt.meta.loss_curve.push_back(mean);
      ckpt.meta.final_loss = mean;
      interval_sum = 0;
      interval_count = 0;
    }
  }

  if (options.steps > 0 && !hold_set.empty()) {
    const auto hold_expanded = expand_strides(hold_set, {1}, config.window_T + 1);
    const auto hold_samples = enumerate_samples(hold_expanded, config.window_T);
    const auto [mse, base] = evaluate_one_step(model, ckpt.normalizer, hold_expanded, hold_samples, options.threads);
    ckpt.meta.heldout_checked = true;
    ckpt.meta.heldout_samples = static_cast<Index>(hold_samples.size());
    ckpt.meta.heldout_mse = mse;
    ckpt.meta.baseline_mse = base;
  }
  ckpt.parameters = std::move(params);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json meta = {{"config", to_json(ckpt.config)},
                         {"normalizer", to_json(ckpt.normalizer)},
                         {"training_meta", to_json(ckpt.meta)}};
  auto& blobs = meta["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.parameters.values.size(); ++i) {
    blobs.push_back({{"name", ckpt.parameters.names[i]},
                     {"shape", {ckpt.parameters.values[i].rows(), ckpt.parameters.values[i].cols()}}});
  }
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  io::write_header(out, kMagic, kVersion, meta.dump());
  for (const auto& v : ckpt.parameters.values) io::write_floats(out, {v.data(), static_cast<std::size_t>(v.size())});
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  try {
    const auto meta = nlohmann::json::parse(io::read_header(in, kMagic, kVersion));
    Checkpoint ckpt;
    ckpt.config = model_config_from_json(meta.at("config"));
    ckpt.normalizer = normalizer_from_json(meta.at("normalizer"));
    ckpt.meta = training_meta_from_json(meta.at("training_meta"));
    const Model<float> reference(ckpt.config);
    const auto& expected = reference.parameters();
    const auto& blobs = meta.at("parameters");
    if (blobs.size() != expected.values.size()) fail(ErrorCode::CorruptCheckpoint, "parameter count mismatch");
    for (std::size_t i = 0; i < blobs.size(); ++i) {
      const auto name = blobs[i].at("name").get<std::string>();
      const auto shape = blobs[i].at("shape").get<std::vector<Index>>();
      const auto& ref = expected.values[i];
      if (name != expected.names[i] || shape.size() != 2 || shape[0] != ref.rows() || shape[1] != ref.cols()) {
        fail(ErrorCode::CorruptCheckpoint, "parameter " + name + " does not match the config layout");
      }
      MatrixX<float> v(ref.rows(), ref.cols());
      io::read_floats(in, {v.data(), static_cast<std::size_t>(v.size())}, name);
      ckpt.parameters.names.push_back(name);
      ckpt.parameters.values.push_back(std::move(v));
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("bad checkpoint metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile || e.code() == ErrorCode::ShapeMismatch ||
        e.code() == ErrorCode::InvalidArgument) {
      fail(ErrorCode::CorruptCheckpoint, std::string(e.what()) + " in " + path);
    }
    throw;
  }
}

GradientCheckReport gradient_check(const ModelConfig& config, Index probe_count, std::uint64_t seed,
                                   double tolerance, double step) {
  GradientCheckReport report;
  report.tolerance = tolerance;
  if (probe_count <= 0) return report;
  Model<double> model = Model<double>::initialize(config, seed);
  if (model.parameters().total_size() > 10000) {
    fail(ErrorCode::InvalidArgument, "gradient check expects a tiny config (<= 1e4 parameters)");
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor4<double> window(config.window_T, config.field_count, config.grid_height, config.grid_width);
  Tensor3<double> target(config.field_count, config.grid_height, config.grid_width);
  for (Index i = 0; i < window.size(); ++i) window.data()[i] = normal(rng);
  for (Index i = 0; i < target.size(); ++i) target.data()[i] = normal(rng);

  // Non-trivial biases and gains so every term of the backward pass is exercised.
  for (auto& v : model.parameters().values)
    for (Index i = 0; i < v.size(); ++i) v.data()[i] += 0.1 * normal(rng);

  auto grad = model.parameters().zeros_like();
  model.loss_and_gradient(window, target, grad);

  auto& params = model.parameters();
  const Index total = params.total_size();
  std::uniform_int_distribution<Index> pick(0, total - 1);
  std::vector<std::string> offenders;
  for (Index p = 0; p < probe_count; ++p) {
    Index flat_index = pick(rng);
    std::size_t t = 0;
    while (flat_index >= params.values[t].size()) flat_index -= params.values[t++].size();
    double& value = params.values[t].data()[flat_index];
    const double saved = value;
    value = saved + step;
    const double plus = mse_loss(model.forward(window).delta, target);
    value = saved - step;
    const double minus = mse_loss(model.forward(window).delta, target);
    value = saved;
    GradientProbe probe{params.names[t], flat_index, grad.values[t].data()[flat_index], (plus - minus) / (2 * step)};
    probe.rel_error =
        std::abs(probe.analytic - probe.numeric) / std::max({std::abs(probe.analytic), std::abs(probe.numeric), 1e-6});
    report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    if (!(probe.rel_error < tolerance)) offenders.push_back(probe.name + "[" + std::to_string(flat_index) + "]");
    report.probes.push_back(std::move(probe));
  }
  if (!offenders.empty()) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " at:";
    for (const auto& o : offenders) os << ' ' << o;
    fail(ErrorCode::GradientMismatch, os.str());
  }
  return report;
}

}  // namespace steerlab::surrogate
