#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerlab/core/tensor.hpp"

namespace steerlab::pde {

enum class System { ShearFlow, GrayScott };

enum class InitialCondition {
  Default,      // double shear layer / seeded squares, depending on the system
  TaylorGreen,  // shear flow only
  Rest,         // zero velocity, constant tracer / uniform A=1, B=0
};

struct Grid {
  Index height = 64;
  Index width = 64;
  friend bool operator==(const Grid&, const Grid&) = default;
};

struct PhysicsParams {
  System system = System::ShearFlow;
  double viscosity = 2.5e-3;
  double tracer_diffusivity = 2.5e-3;  // Schmidt = viscosity / tracer_diffusivity
  double feed_F = 0.014;
  double kill_k = 0.054;
  double diffusion_a = 0.2;  // Gray-Scott, grid units
  double diffusion_b = 0.1;
  double dt = 0.005;
  int save_stride = 12;
  double domain_length = 1.0;  // shear flow periodic box side
  double layer_width = 0.04;   // shear-layer thickness
  double perturbation = 0.05;  // velocity perturbation / seeded B level
  InitialCondition initial = InitialCondition::Default;
  bool reactions = true;

  double schmidt() const { return viscosity / tracer_diffusivity; }

  /// Throws InvalidArgument on violated invariants.
  void validate() const;

  friend bool operator==(const PhysicsParams&, const PhysicsParams&) = default;
};

std::vector<std::string> field_names_for(System system);

/// Time-ordered multi-field states. Every field is [T, H, W] float32.
struct SimulationTrajectory {
  std::vector<std::string> field_names;
  std::vector<Array3f> fields;
  PhysicsParams params;
  std::uint64_t seed = 0;
  Grid grid;
  int frame_stride = 1;  // cumulative subsampling factor
  nlohmann::json annotations = nlohmann::json::object();

  Index frames() const { return fields.empty() ? 0 : fields.front().dimension(0); }
  Index field_count() const { return static_cast<Index>(fields.size()); }

  /// Throws MissingField.
  const Array3f& field(std::string_view name) const;
  bool has_field(std::string_view name) const;

  /// Checks shared shapes and finiteness.
  void validate() const;
};

nlohmann::json to_json(const PhysicsParams& p);
PhysicsParams params_from_json(const nlohmann::json& j);
std::string_view to_string(System s);
System system_from_string(std::string_view s);

/// Returns frames 0, stride, 2*stride, ... Throws EmptyResult when fewer
/// than two frames survive.
SimulationTrajectory subsample_stride(const SimulationTrajectory& traj, int stride);

/// Keeps frames [begin, begin + count).
SimulationTrajectory slice_frames(const SimulationTrajectory& traj, Index begin, Index count);

void save_trajectory(const SimulationTrajectory& traj, const std::string& path);
SimulationTrajectory load_trajectory(const std::string& path);

}  // namespace steerlab::pde
