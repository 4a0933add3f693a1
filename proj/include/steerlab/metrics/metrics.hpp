#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/core/tensor.hpp"
#include "steerlab/pde/trajectory.hpp"
#include "steerlab/steering/steering.hpp"

namespace steerlab::metrics {

struct MetricSeries {
  std::string name;
  std::vector<double> values;
  std::string units;

  double final() const { return values.empty() ? 0.0 : values.back(); }
};

/// dvy/dx - dvx/dy with periodic central differences; arrays are [H, W].
/// Throws ShapeMismatch.
Eigen::ArrayXXd vorticity_field(const Eigen::ArrayXXd& vx, const Eigen::ArrayXXd& vy, double dx);

/// Grid spacing of a trajectory (domain length / W for shear flow, 1 otherwise).
double grid_spacing(const pde::SimulationTrajectory& traj);

/// Per-frame mean |w| and mean w^2. Throw MissingField.
MetricSeries mean_abs_vorticity(const pde::SimulationTrajectory& traj);
MetricSeries enstrophy(const pde::SimulationTrajectory& traj);

/// Per-frame mean periodic central-difference gradient magnitude.
MetricSeries interface_sharpness(const pde::SimulationTrajectory& traj, const std::string& field = "tracer");

/// Mean |w(0)| - mean |w(t)|: how far the flow has spun down.
MetricSeries vorticity_decay(const pde::SimulationTrajectory& traj);

MetricSeries compute_metric(const pde::SimulationTrajectory& traj, const std::string& metric);
std::vector<std::string> metric_names();

enum class Crossing { Rising, Falling };

/// First frame with series >= threshold (Rising) or <= threshold (Falling).
std::optional<Index> time_to_threshold(const MetricSeries& series, double threshold,
                                       Crossing crossing = Crossing::Rising);

struct SteeringReport {
  std::string concept_name;
  std::string metric;
  std::vector<double> alpha_grid;  // ascending, contains 0
  std::map<double, MetricSeries> metric_by_alpha;
  std::string baseline_hash;

  bool monotone = false;      // final-frame metric non-decreasing in alpha
  bool no_effect = false;     // every rollout bit-identical to the baseline
  std::string sign_pattern;   // e.g. "pos>base>neg"
  bool sign_pattern_holds = false;
  double spearman = 0.0;
  double spread = 0.0;        // max - min of the final-frame metric

  double final_at(double alpha) const { return metric_by_alpha.at(alpha).final(); }
  std::string to_text() const;
};

/// Throws InconsistentRollouts (length/shape mismatch or missing alpha = 0).
SteeringReport steering_report(const std::map<double, steering::RolloutResult>& rollouts,
                               const pde::SimulationTrajectory& init, const std::string& concept_name,
                               const std::string& metric);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Relative L2 distance between the final frames of two rollouts.
double final_frame_distance(const steering::RolloutResult& a, const steering::RolloutResult& b);

/// Writes <out_dir>/<field>_NNNN.png per frame, scaled into `range` (or the
/// trajectory's own min/max). Throws MissingField, IoError.
std::vector<std::string> render_frames(const pde::SimulationTrajectory& traj, const std::string& field,
                                       const std::string& palette, const std::string& out_dir,
                                       std::optional<std::pair<double, double>> range = std::nullopt);

std::pair<double, double> field_range(const pde::SimulationTrajectory& traj, const std::string& field);

}  // namespace steerlab::metrics
