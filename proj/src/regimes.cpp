#include "steerlab/pde/regimes.hpp"

#include <filesystem>

#include "steerlab/core/error.hpp"
#include "steerlab/core/hash.hpp"
#include "steerlab/core/parallel.hpp"
#include "steerlab/pde/solvers.hpp"

namespace steerlab::pde {

namespace {
// Bump when solver numerics change so stale cache entries are not reused.
constexpr int kGeneratorVersion = 1;
}  // namespace

void RegimeGroupSpec::validate() const {
  if (group_f.empty() || group_not_f.empty()) {
    fail(ErrorCode::InvalidArgument, "regime groups for '" + concept_name + "' must both be non-empty");
  }
  if (stride_f < 1 || stride_not_f < 1) fail(ErrorCode::InvalidArgument, "strides must be >= 1");
  for (const auto& m : group_f) m.params.validate();
  for (const auto& m : group_not_f) m.params.validate();
}

TrajectoryCache::TrajectoryCache(std::string directory) : dir_(std::move(directory)) {
  std::filesystem::create_directories(dir_);
}

std::string TrajectoryCache::key(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed) {
  const nlohmann::json doc = {
      {"generator", kGeneratorVersion},
      {"params", to_json(params)},
      {"grid", {grid.height, grid.width}},
      {"frames", frames},
      {"seed", seed},
  };
  return sha256_hex(doc.dump());
}

std::string TrajectoryCache::path_for(const std::string& key) const {
  return (std::filesystem::path(dir_) / (key + ".straj")).string();
}

SimulationTrajectory TrajectoryCache::get_or_simulate(const PhysicsParams& params, Grid grid, Index frames,
                                                      std::uint64_t seed) {
  const std::string path = path_for(key(params, grid, frames, seed));
  if (std::filesystem::exists(path)) {
    try {
      auto traj = load_trajectory(path);
      ++hits_;
      return traj;
    } catch (const Error&) {
      // fall through and regenerate a corrupt entry
    }
  }
  ++misses_;
  auto traj = simulate(params, grid, frames, seed);
  save_trajectory(traj, path);
  return traj;
}

TrajectoryList generate_members(const std::vector<GroupMember>& members, Grid grid, Index frames,
                                TrajectoryCache* cache, const std::string& label) {
  TrajectoryList out(members.size());
  parallel_for(members.size(), [&](std::size_t i) {
    try {
      const auto& m = members[i];
      out[i] = cache ? cache->get_or_simulate(m.params, grid, frames, m.seed)
                     : simulate(m.params, grid, frames, m.seed);
    } catch (const Error& e) {
      throw Error(e.code(), label + "[" + std::to_string(i) + "] (seed " + std::to_string(members[i].seed) +
                                "): " + e.what());
    }
  });
  return out;
}

std::pair<TrajectoryList, TrajectoryList> build_regime_groups(const RegimeGroupSpec& spec, Grid grid,
                                                              Index frames, TrajectoryCache* cache) {
  spec.validate();
  auto with_f = generate_members(spec.group_f, grid, frames, cache, spec.concept_name + ".group_f");
  auto without_f = generate_members(spec.group_not_f, grid, frames, cache, spec.concept_name + ".group_not_f");
  if (spec.stride_f > 1) {
    for (auto& t : with_f) t = subsample_stride(t, spec.stride_f);
  }
  if (spec.stride_not_f > 1) {
    for (auto& t : without_f) t = subsample_stride(t, spec.stride_not_f);
  }
  return {std::move(with_f), std::move(without_f)};
}

namespace presets {

namespace {

struct TableRow {
  double reynolds;
  double schmidt;
};

// Regime tables (Reynolds, Schmidt) for the vortex and laminar groups.
constexpr TableRow kVortexRows[] = {
    {1e4, 1e-1}, {1e4, 2e-1}, {1e4, 2e0}, {1e4, 5e-1}, {1e4, 5e0}, {1e5, 1e-1},
    {1e5, 1e0},  {1e5, 2e0},  {1e5, 5e-1}, {5e4, 1e-1}, {5e4, 1e0}, {5e4, 1e1},
    {5e4, 2e0},  {5e4, 5e-1}, {5e4, 5e0}, {5e5, 1e0},  {5e5, 2e-1}, {5e5, 5e0},
};
constexpr TableRow kLaminarRows[] = {
    {1e4, 1e0}, {1e4, 1e1}, {1e5, 1e1}, {1e5, 2e-1}, {1e5, 5e0},
    {5e4, 2e-1}, {5e5, 1e-1}, {5e5, 1e1}, {5e5, 2e0}, {5e5, 5e-1},
};

// Reynolds level -> desk-scale viscosity, per regime band.
double vortex_viscosity(double re) {
  if (re <= 1e4) return 4e-3;
  if (re <= 5e4) return 2.5e-3;
  if (re <= 1e5) return 1.5e-3;
  return 1e-3;
}

double laminar_viscosity(double re) {
  if (re <= 1e4) return 2e-2;
  if (re <= 5e4) return 1.6e-2;
  if (re <= 1e5) return 1.3e-2;
  return 1e-2;
}

template <std::size_t N>
std::vector<GroupMember> from_rows(const TableRow (&rows)[N], double (*visc)(double), std::uint64_t seed_base) {
  std::vector<GroupMember> out;
  for (std::size_t i = 0; i < N; ++i) out.push_back({shear_params(visc(rows[i].reynolds), rows[i].schmidt), seed_base + i});
  return out;
}

}  // namespace

PhysicsParams shear_params(double viscosity, double schmidt) {
  PhysicsParams p;
  p.system = System::ShearFlow;
  p.viscosity = viscosity;
  p.tracer_diffusivity = viscosity / schmidt;
  return p;
}

PhysicsParams gray_scott_params(double feed, double kill) {
  PhysicsParams p;
  p.system = System::GrayScott;
  p.feed_F = feed;
  p.kill_k = kill;
  p.diffusion_a = 0.2;
  p.diffusion_b = 0.1;
  p.dt = 1.0;
  p.save_stride = 40;
  p.perturbation = 0.25;
  return p;
}

std::vector<GroupMember> vortex_regime(std::uint64_t seed_base) {
  return from_rows(kVortexRows, vortex_viscosity, seed_base);
}

std::vector<GroupMember> laminar_regime(std::uint64_t seed_base) {
  return from_rows(kLaminarRows, laminar_viscosity, seed_base);
}

std::vector<GroupMember> gray_scott_corpus(std::uint64_t seed_base) {
  // gliders, spirals, spots, maze, worms, bubbles
  constexpr std::pair<double, double> kRegimes[] = {
      {0.014, 0.054}, {0.018, 0.051}, {0.030, 0.062}, {0.029, 0.057}, {0.058, 0.065}, {0.098, 0.057},
  };
  std::vector<GroupMember> out;
  std::uint64_t seed = seed_base;
  for (const auto& [f, k] : kRegimes) {
    for (int rep = 0; rep < 2; ++rep) out.push_back({gray_scott_params(f, k), seed++});
  }
  return out;
}

RegimeGroupSpec concept_groups(const std::string& concept_name, std::uint64_t seed_base) {
  RegimeGroupSpec spec;
  spec.concept_name = concept_name;
  if (concept_name == "vortex") {
    spec.group_f = vortex_regime(seed_base);
    spec.group_not_f = laminar_regime(seed_base + 100);
  } else if (concept_name == "diffusion") {
    // Same viscosity, high vs low tracer diffusivity.
    for (std::uint64_t i = 0; i < 4; ++i) {
      spec.group_f.push_back({shear_params(2.5e-3, 2e-1), seed_base + 200 + i});
      spec.group_not_f.push_back({shear_params(2.5e-3, 1e1), seed_base + 200 + i});
    }
  } else if (concept_name == "speed") {
    // Physically identical members, sampled at different frame rates.
    spec.group_f = laminar_regime(seed_base + 100);
    spec.group_not_f = spec.group_f;
    spec.stride_f = 2;
    spec.stride_not_f = 1;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown concept preset '" + concept_name + "'");
  }
  return spec;
}

std::vector<std::string> concept_names() { return {"vortex", "diffusion", "speed"}; }

}  // namespace presets

}  // namespace steerlab::pde
