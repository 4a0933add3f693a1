#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerlab/pde/trajectory.hpp"
#include "steerlab/steering/steering.hpp"
#include "steerlab/surrogate/training.hpp"

namespace steerlab::pipeline {

/// Which trajectories a surrogate is trained on.
enum class Corpus { Shear, GrayScott };

std::string_view to_string(Corpus c);
Corpus corpus_from_string(std::string_view s);

struct SurrogateSpec {
  Corpus corpus = Corpus::Shear;
  surrogate::ModelConfig model;
  surrogate::TrainOptions training;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;

  // data
  std::string concept_name = "vortex";
  pde::Grid grid{64, 64};
  Index frames = 64;
  std::uint64_t seed_base = 1000;

  // surrogates: `source` supplies activations for the direction; `target`
  // is steered. They coincide unless `target` is set (cross-system transfer).
  SurrogateSpec source;
  std::optional<SurrogateSpec> target;

  // concept extraction
  std::string layer = "last";
  double epsilon = 1e-6;

  // steering
  std::vector<double> alpha_grid{-0.5, -0.25, 0.0, 0.25, 0.5};
  steering::Mode mode = steering::Mode::ChannelBroadcast;
  steering::Align align = steering::Align::None;
  bool per_token = false;
  double alpha_limit = 10.0;
  Index rollout_steps = 40;
  std::vector<std::string> inits{"not_f", "f"};
  std::uint64_t init_seed_offset = 7919;
  std::vector<std::string> metrics{"mean_abs_vorticity"};
  Index metric_frame = -1;  // frame for mid-rollout comparisons; -1 = final
  // Threshold for time-to-threshold, read off the ground-truth continuation
  // of each init at this rollout frame; unset disables the measurement.
  std::optional<Index> threshold_frame;
  bool compare_modes = true;

  // outputs
  std::string out_dir = "out";
  bool render = false;
  std::string palette = "coolwarm";
  std::string render_field = "tracer";

  const SurrogateSpec& target_spec() const { return target ? *target : source; }
};

struct Diagnostic {
  std::string path;
  std::string message;
};

nlohmann::json to_json(const ExperimentConfig& c);

/// Parses a config document. Keys may include "extends": <preset name>, in
/// which case the document overrides that preset. Throws ConfigInvalid with
/// the offending path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Static checks; empty result means valid.
std::vector<Diagnostic> validate(const ExperimentConfig& c);
std::vector<Diagnostic> validate_document(const nlohmann::json& j);

std::vector<std::string> preset_names();
/// Throws ConfigInvalid with a nearest-name suggestion.
ExperimentConfig preset(const std::string& name);

/// Closest candidate by edit distance, if reasonably close.
std::optional<std::string> nearest_name(const std::string& name, const std::vector<std::string>& candidates);

}  // namespace steerlab::pipeline
