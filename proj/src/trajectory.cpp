#include "steerlab/pde/trajectory.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <unistd.h>

#include "steerlab/core/binary_io.hpp"
#include "steerlab/core/error.hpp"

namespace steerlab::pde {

namespace {
constexpr std::string_view kMagic = "STLB";
constexpr std::uint16_t kVersion = 1;

std::string_view to_string(InitialCondition ic) {
  switch (ic) {
    case InitialCondition::Default: return "default";
    case InitialCondition::TaylorGreen: return "taylor-green";
    case InitialCondition::Rest: return "rest";
  }
  return "default";
}

InitialCondition initial_from_string(std::string_view s) {
  if (s == "default") return InitialCondition::Default;
  if (s == "taylor-green") return InitialCondition::TaylorGreen;
  if (s == "rest") return InitialCondition::Rest;
  fail(ErrorCode::InvalidArgument, "unknown initial condition '" + std::string(s) + "'");
}
}  // namespace

std::string_view to_string(System s) {
  return s == System::ShearFlow ? "shear-flow" : "gray-scott";
}

System system_from_string(std::string_view s) {
  if (s == "shear-flow") return System::ShearFlow;
  if (s == "gray-scott") return System::GrayScott;
  fail(ErrorCode::InvalidArgument, "unknown system '" + std::string(s) + "'");
}

void PhysicsParams::validate() const {
  if (save_stride < 1) fail(ErrorCode::InvalidArgument, "save_stride must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::InvalidArgument, "dt must be positive");
  if (system == System::ShearFlow) {
    if (!(viscosity > 0.0)) fail(ErrorCode::InvalidArgument, "viscosity must be > 0");
    if (!(tracer_diffusivity > 0.0)) fail(ErrorCode::InvalidArgument, "tracer_diffusivity must be > 0");
    if (!(domain_length > 0.0)) fail(ErrorCode::InvalidArgument, "domain_length must be > 0");
  } else {
    if (feed_F < 0.0 || feed_F > 0.1) fail(ErrorCode::InvalidArgument, "feed_F must lie in [0, 0.1]");
    if (kill_k < 0.0 || kill_k > 0.1) fail(ErrorCode::InvalidArgument, "kill_k must lie in [0, 0.1]");
    if (diffusion_a < 0.0 || diffusion_b < 0.0) fail(ErrorCode::InvalidArgument, "negative diffusion");
  }
}

std::vector<std::string> field_names_for(System system) {
  if (system == System::ShearFlow) return {"tracer", "pressure", "velocity_x", "velocity_y"};
  return {"species_A", "species_B"};
}

const Array3f& SimulationTrajectory::field(std::string_view name) const {
  for (std::size_t i = 0; i < field_names.size(); ++i) {
    if (field_names[i] == name) return fields[i];
  }
  fail(ErrorCode::MissingField, "trajectory has no field '" + std::string(name) + "'");
}

bool SimulationTrajectory::has_field(std::string_view name) const {
  for (const auto& n : field_names) {
    if (n == name) return true;
  }
  return false;
}

void SimulationTrajectory::validate() const {
  if (fields.size() != field_names.size() || fields.empty()) {
    fail(ErrorCode::ShapeMismatch, "field list and name list disagree");
  }
  const auto ref = fields.front().dimensions();
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].dimensions() != ref) {
      fail(ErrorCode::ShapeMismatch, "field '" + field_names[i] + "' has shape " +
                                         shape_string(shape_of(fields[i])));
    }
    if (!all_finite(fields[i])) fail(ErrorCode::SolverBlowUp, "non-finite values in " + field_names[i]);
  }
  if (ref[1] != grid.height || ref[2] != grid.width) {
    fail(ErrorCode::ShapeMismatch, "fields do not match the declared grid");
  }
}

nlohmann::json to_json(const PhysicsParams& p) {
  return {
      {"system", to_string(p.system)},
      {"viscosity", p.viscosity},
      {"tracer_diffusivity", p.tracer_diffusivity},
      {"feed_F", p.feed_F},
      {"kill_k", p.kill_k},
      {"diffusion_a", p.diffusion_a},
      {"diffusion_b", p.diffusion_b},
      {"dt", p.dt},
      {"save_stride", p.save_stride},
      {"domain_length", p.domain_length},
      {"layer_width", p.layer_width},
      {"perturbation", p.perturbation},
      {"initial", to_string(p.initial)},
      {"reactions", p.reactions},
  };
}

PhysicsParams params_from_json(const nlohmann::json& j) {
  PhysicsParams p;
  p.system = system_from_string(j.at("system").get<std::string>());
  p.viscosity = j.value("viscosity", p.viscosity);
  p.tracer_diffusivity = j.value("tracer_diffusivity", p.tracer_diffusivity);
  p.feed_F = j.value("feed_F", p.feed_F);
  p.kill_k = j.value("kill_k", p.kill_k);
  p.diffusion_a = j.value("diffusion_a", p.diffusion_a);
  p.diffusion_b = j.value("diffusion_b", p.diffusion_b);
  p.dt = j.value("dt", p.dt);
  p.save_stride = j.value("save_stride", p.save_stride);
  p.domain_length = j.value("domain_length", p.domain_length);
  p.layer_width = j.value("layer_width", p.layer_width);
  p.perturbation = j.value("perturbation", p.perturbation);
  p.initial = initial_from_string(j.value("initial", std::string("default")));
  p.reactions = j.value("reactions", p.reactions);
  return p;
}

SimulationTrajectory subsample_stride(const SimulationTrajectory& traj, int stride) {
  if (stride < 1) fail(ErrorCode::InvalidArgument, "stride must be >= 1");
  const Index frames = traj.frames();
  const Index kept = frames <= 0 ? 0 : (frames - 1) / stride + 1;
  if (kept < 2) {
    fail(ErrorCode::EmptyResult, "stride " + std::to_string(stride) + " leaves " + std::to_string(kept) +
                                     " frame(s) of " + std::to_string(frames));
  }
  SimulationTrajectory out = traj;
  for (std::size_t f = 0; f < traj.fields.size(); ++f) {
    const Array3f& src = traj.fields[f];
    Array3f dst(kept, src.dimension(1), src.dimension(2));
    const Index plane = src.dimension(1) * src.dimension(2);
    for (Index t = 0; t < kept; ++t) {
      std::copy_n(src.data() + t * stride * plane, plane, dst.data() + t * plane);
    }
    out.fields[f] = std::move(dst);
  }
  out.params.save_stride = traj.params.save_stride * stride;
  out.frame_stride = traj.frame_stride * stride;
  return out;
}

SimulationTrajectory slice_frames(const SimulationTrajectory& traj, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > traj.frames()) {
    fail(ErrorCode::InvalidArgument, "frame slice out of range");
  }
  SimulationTrajectory out = traj;
  for (std::size_t f = 0; f < traj.fields.size(); ++f) {
    const Array3f& src = traj.fields[f];
    const Index plane = src.dimension(1) * src.dimension(2);
    Array3f dst(count, src.dimension(1), src.dimension(2));
    std::copy_n(src.data() + begin * plane, count * plane, dst.data());
    out.fields[f] = std::move(dst);
  }
  return out;
}

void save_trajectory(const SimulationTrajectory& traj, const std::string& path) {
  traj.validate();
  nlohmann::json meta = {
      {"fields", traj.field_names},
      {"dims", {traj.frames(), traj.grid.height, traj.grid.width}},
      {"params", to_json(traj.params)},
      {"seed", traj.seed},
      {"stride", traj.frame_stride},
      {"annotations", traj.annotations},
  };
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  // Write-then-rename keeps concurrent writers of the same key from exposing
  // a half-written file.
  const auto tmp = target.string() + ".tmp" + std::to_string(::getpid()) + "_" +
                   std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp);
    io::write_header(out, kMagic, kVersion, meta.dump());
    for (const auto& f : traj.fields) io::write_floats(out, {f.data(), static_cast<std::size_t>(f.size())});
    if (!out) fail(ErrorCode::IoError, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

SimulationTrajectory load_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  const std::string doc = io::read_header(in, kMagic, kVersion);
  SimulationTrajectory traj;
  try {
    const auto meta = nlohmann::json::parse(doc);
    traj.field_names = meta.at("fields").get<std::vector<std::string>>();
    const auto dims = meta.at("dims").get<std::vector<Index>>();
    if (dims.size() != 3) fail(ErrorCode::CorruptFile, "dims must have three entries");
    traj.params = params_from_json(meta.at("params"));
    traj.seed = meta.at("seed").get<std::uint64_t>();
    traj.frame_stride = meta.value("stride", 1);
    traj.annotations = meta.value("annotations", nlohmann::json::object());
    traj.grid = {dims[1], dims[2]};
    for (const auto& name : traj.field_names) {
      Array3f f(dims[0], dims[1], dims[2]);
      io::read_floats(in, {f.data(), static_cast<std::size_t>(f.size())}, name);
      traj.fields.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("bad trajectory metadata: ") + e.what());
  }
  return traj;
}

}  // namespace steerlab::pde
