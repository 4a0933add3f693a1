#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/pde/trajectory.hpp"

namespace steerlab::pde {

struct GroupMember {
  PhysicsParams params;
  std::uint64_t seed = 0;
};

struct RegimeGroupSpec {
  std::string concept_name;
  std::vector<GroupMember> group_f;
  std::vector<GroupMember> group_not_f;
  int stride_f = 1;
  int stride_not_f = 1;

  /// Throws InvalidArgument (empty group, bad stride, invalid params).
  void validate() const;
};

/// Content-addressed on-disk store for generated trajectories. Keys hash the
/// generation inputs; concurrent writers of distinct keys never collide and
/// writers of the same key race benignly (atomic rename of identical bytes).
class TrajectoryCache {
 public:
  explicit TrajectoryCache(std::string directory);

  static std::string key(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed);
  std::string path_for(const std::string& key) const;

  SimulationTrajectory get_or_simulate(const PhysicsParams& params, Grid grid, Index frames,
                                       std::uint64_t seed);

  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }

 private:
  std::string dir_;
  std::atomic<std::size_t> hits_{0}, misses_{0};
};

using TrajectoryList = std::vector<SimulationTrajectory>;

/// Simulates (or loads) both groups and applies each group's frame stride.
/// Errors are rethrown annotated with the failing group member.
std::pair<TrajectoryList, TrajectoryList> build_regime_groups(const RegimeGroupSpec& spec, Grid grid,
                                                              Index frames, TrajectoryCache* cache = nullptr);

/// Simulates (or loads) a flat member list, preserving order.
TrajectoryList generate_members(const std::vector<GroupMember>& members, Grid grid, Index frames,
                                TrajectoryCache* cache = nullptr, const std::string& label = "member");

namespace presets {

/// Desk-scale stand-ins for the regime tables: Schmidt numbers are kept,
/// Reynolds levels map to viscosities inside each regime's band.
std::vector<GroupMember> vortex_regime(std::uint64_t seed_base);
std::vector<GroupMember> laminar_regime(std::uint64_t seed_base);
std::vector<GroupMember> gray_scott_corpus(std::uint64_t seed_base);

PhysicsParams shear_params(double viscosity, double schmidt);
PhysicsParams gray_scott_params(double feed, double kill);

/// Concept presets: "vortex", "diffusion", "speed".
RegimeGroupSpec concept_groups(const std::string& concept_name, std::uint64_t seed_base);
std::vector<std::string> concept_names();

}  // namespace presets

}  // namespace steerlab::pde
