#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerlab/pde/trajectory.hpp"
#include "steerlab/surrogate/model.hpp"

namespace steerlab::surrogate {

/// Per-field z-scoring of states and scaling of one-step deltas.
struct Normalizer {
  std::vector<std::string> field_names;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> delta_std;  // over every frame stride used in training

  static Normalizer fit(const std::vector<pde::SimulationTrajectory>& trajs, const std::vector<int>& strides);

  Index field_count() const { return static_cast<Index>(field_names.size()); }

  /// frames [N, F, H, W] in physical units -> normalized model window.
  Tensor4<float> normalize_window(const Tensor4<float>& frames) const;
  /// Model output -> physical delta.
  Tensor3<float> denormalize_delta(const Tensor3<float>& delta) const;
  /// Physical delta -> training target.
  Tensor3<float> normalize_delta(const Tensor3<float>& delta) const;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

/// Stacks trajectory frames [begin, begin+count) as [count, F, H, W].
Tensor4<float> stack_frames(const pde::SimulationTrajectory& traj, Index begin, Index count);

struct TrainOptions {
  Index steps = 3000;
  Index batch = 8;
  double lr = 0.05;
  double momentum = 0.9;
  double clip_norm = 1.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 0;
  double holdout_fraction = 0.15;
  std::vector<int> strides{1, 2};
  /// Std of Gaussian noise added to input windows (normalized units); the
  /// target becomes clean_next - noisy_last so the model learns to undo it.
  double input_noise = 0.0;
  unsigned threads = 0;
  Index log_every = 100;
};

nlohmann::json to_json(const TrainOptions& o);
TrainOptions train_options_from_json(const nlohmann::json& j);

struct TrainingMeta {
  Index steps = 0;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;  // mean over the first logging interval
  double final_loss = 0.0;    // mean over the last logging interval
  std::vector<double> loss_curve;
  Index train_samples = 0;
  Index heldout_samples = 0;
  bool heldout_checked = false;
  double heldout_mse = 0.0;
  double baseline_mse = 0.0;

  bool heldout_beats_baseline() const { return heldout_checked && heldout_mse < baseline_mse; }
};

nlohmann::json to_json(const TrainingMeta& m);
TrainingMeta training_meta_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig config;
  Normalizer normalizer;
  TrainingMeta meta;
  ParameterSet<float> parameters;

  Model<float> model() const;
};

/// One training example: window start within a (possibly subsampled) trajectory.
struct Sample {
  std::size_t trajectory = 0;
  Index start = 0;
};

std::vector<Sample> enumerate_samples(const std::vector<pde::SimulationTrajectory>& trajs, Index window_T);

/// Normalized (window, target) for a sample.
std::pair<Tensor4<float>, Tensor3<float>> make_example(const pde::SimulationTrajectory& traj, Index start,
                                                       Index window_T, const Normalizer& norm);

/// Mean one-step MSE of the model and of the zero-delta predictor over the
/// given samples, in normalized target units.
std::pair<double, double> evaluate_one_step(const Model<float>& model, const Normalizer& norm,
                                            const std::vector<pde::SimulationTrajectory>& trajs,
                                            const std::vector<Sample>& samples, unsigned threads = 0);

/// Deterministic SGD training. Throws Diverged on a non-finite loss and
/// ShapeMismatch when trajectories disagree on grid or fields.
Checkpoint train(const std::vector<pde::SimulationTrajectory>& trajs, const ModelConfig& config,
                 const TrainOptions& options);

/// Throws CorruptCheckpoint on bad magic, version, truncation, or shapes.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct GradientProbe {
  std::string name;
  Index offset = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientProbe> probes;
  double max_rel_error = 0.0;
  double tolerance = 1e-3;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Compares analytic gradients with central differences for `probe_count`
/// random parameters of a double-precision model. Throws GradientMismatch
/// naming the offending parameters.
GradientCheckReport gradient_check(const ModelConfig& config, Index probe_count, std::uint64_t seed = 7,
                                   double tolerance = 1e-3, double step = 1e-5);

}  // namespace steerlab::surrogate
