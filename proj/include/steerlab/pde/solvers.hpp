#pragma once

#include <cstdint>

#include "steerlab/pde/trajectory.hpp"

namespace steerlab::pde {

/// 2D incompressible Navier-Stokes with a passive tracer on a periodic box,
/// pseudo-spectral vorticity/streamfunction form, 2/3-rule dealiasing and
/// integrating-factor RK4. Saves frames 0, save_stride, 2*save_stride, ...
///
/// Throws InvalidGrid for non power-of-two dims and SolverBlowUp when any
/// field exceeds 1e6 in magnitude or turns non-finite.
SimulationTrajectory simulate_shear_flow(const PhysicsParams& params, Grid grid, Index frames,
                                         std::uint64_t seed);

/// Gray-Scott reaction-diffusion, forward Euler with a periodic 5-point
/// Laplacian in grid units. Throws SolverBlowUp if a concentration leaves
/// [0, 1.5] or turns non-finite.
SimulationTrajectory simulate_gray_scott(const PhysicsParams& params, Grid grid, Index frames,
                                         std::uint64_t seed);

/// Dispatches on params.system.
SimulationTrajectory simulate(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed);

/// 0.5 * mean(u^2 + v^2) for one frame.
double kinetic_energy(const SimulationTrajectory& traj, Index frame);

/// Max pointwise |div u| for one frame, computed with spectral derivatives.
double max_divergence(const SimulationTrajectory& traj, Index frame);

}  // namespace steerlab::pde
