#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerlab/core/tensor.hpp"
#include "steerlab/pipeline/config.hpp"

namespace steerlab::pipeline {

/// Ordered stage names: generate, train, extract, delta, steer, report.
const std::vector<std::string>& stage_names();

struct StageOutcome {
  std::string stage;
  bool cached = false;  // inputs and artifacts matched the manifest; nothing recomputed
  std::string manifest_path;
};

/// Runs the experiment stages. Every stage writes its artifacts plus
/// <out>/<name>/<stage>/manifest.json (relative paths, sha256 digests, the
/// input hash). A stage whose input hash and artifacts still match its
/// manifest is skipped. Trajectories and trained models live in shared
/// content-addressed caches under <out>/cache so presets can share them.
class Pipeline {
 public:
  /// Throws ConfigInvalid if the config does not validate.
  explicit Pipeline(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  std::string stage_dir(std::string_view stage) const;
  std::string manifest_path(std::string_view stage) const;

  /// Each throws MissingArtifact naming the absent upstream stage output, or
  /// StaleArtifact if an upstream artifact no longer matches its manifest.
  StageOutcome generate();
  StageOutcome train();
  StageOutcome extract();
  StageOutcome delta();
  StageOutcome steer();
  StageOutcome report();
  StageOutcome run(std::string_view stage);
  std::vector<StageOutcome> all();

  /// Progress sink; defaults to silence.
  std::function<void(const std::string&)> log;

 private:
  ExperimentConfig config_;
};

/// Stacked activation tensors for one contrast group ("SACS" v1).
void save_activation_set(const std::vector<Tensor4<float>>& acts, const nlohmann::json& meta,
                         const std::string& path);
std::vector<Tensor4<float>> load_activation_set(const std::string& path, nlohmann::json* meta = nullptr);

/// File-safe alpha label: 0.25 -> "p0.25", -0.5 -> "m0.5", 0 -> "0".
std::string alpha_label(double alpha);

}  // namespace steerlab::pipeline
