#include "steerlab/pde/solvers.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "spectral.hpp"
#include "steerlab/core/error.hpp"

namespace steerlab::pde {

namespace {

using detail::Complex;
using detail::Field;
using detail::Spectral;
using detail::Spectrum;

constexpr double kBlowUp = 1e6;

bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

void check_frames(Index frames) {
  if (frames < 1) fail(ErrorCode::InvalidArgument, "frames must be >= 1");
}

void store_frame(Array3f& dst, Index t, const Field& src) {
  const Index plane = dst.dimension(1) * dst.dimension(2);
  for (Index i = 0; i < plane; ++i) dst.data()[t * plane + i] = static_cast<float>(src[static_cast<std::size_t>(i)]);
}

void guard_field(const Field& f, const char* name, Index frame) {
  for (double v : f) {
    if (!std::isfinite(v) || std::abs(v) > kBlowUp) {
      fail(ErrorCode::SolverBlowUp, std::string(name) + " exceeded bounds at frame " + std::to_string(frame));
    }
  }
}

struct ShearState {
  Spectrum vorticity;
  Spectrum tracer;
};

class ShearFlowIntegrator {
 public:
  ShearFlowIntegrator(const PhysicsParams& p, Grid g) : p_(p), sp_(g.height, g.width, p.domain_length) {
    const std::size_t n = sp_.size();
    ew_half_.resize(n);
    es_half_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      ew_half_[i] = std::exp(-p.viscosity * sp_.k2()[i] * p.dt / 2.0);
      es_half_[i] = std::exp(-p.tracer_diffusivity * sp_.k2()[i] * p.dt / 2.0);
    }
  }

  Spectral& spectral() { return sp_; }

  ShearState initial_state(std::uint64_t seed) {
    const Index h = sp_.height(), w = sp_.width();
    const double len = p_.domain_length;
    Field u(sp_.size(), 0.0), v(sp_.size(), 0.0), s(sp_.size(), 0.0);
    switch (p_.initial) {
      case InitialCondition::Default: {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        std::uniform_real_distribution<double> weight(0.2, 1.0);
        std::array<double, 3> amp{}, phi{};
        double total = 0.0;
        for (int m = 0; m < 3; ++m) {
          amp[m] = weight(rng);
          phi[m] = phase(rng);
          total += amp[m];
        }
        const double delta = p_.layer_width * len;
        const double sigma = 0.1 * len;
        for (Index y = 0; y < h; ++y) {
          const double yy = len * static_cast<double>(y) / static_cast<double>(h);
          const double lower = (yy - 0.25 * len) / delta, upper = (yy - 0.75 * len) / delta;
          const double profile = std::tanh(lower) - std::tanh(upper) - 1.0;
          const double envelope = std::exp(-std::pow((yy - 0.25 * len) / sigma, 2)) +
                                  std::exp(-std::pow((yy - 0.75 * len) / sigma, 2));
          for (Index x = 0; x < w; ++x) {
            const double xx = static_cast<double>(x) / static_cast<double>(w);
            double wave = 0.0;
            for (int m = 0; m < 3; ++m) wave += amp[m] / total * std::sin(2.0 * std::numbers::pi * (m + 1) * xx + phi[m]);
            const std::size_t i = static_cast<std::size_t>(y * w + x);
            u[i] = profile;
            v[i] = p_.perturbation * wave * envelope;
            s[i] = 0.5 * (profile + 1.0);
          }
        }
        break;
      }
      case InitialCondition::TaylorGreen: {
        const double k = 2.0 * std::numbers::pi / len;
        for (Index y = 0; y < h; ++y) {
          for (Index x = 0; x < w; ++x) {
            const double xx = len * static_cast<double>(x) / static_cast<double>(w);
            const double yy = len * static_cast<double>(y) / static_cast<double>(h);
            const std::size_t i = static_cast<std::size_t>(y * w + x);
            u[i] = std::sin(k * xx) * std::cos(k * yy);
            v[i] = -std::cos(k * xx) * std::sin(k * yy);
          }
        }
        break;
      }
      case InitialCondition::Rest:
        std::fill(s.begin(), s.end(), 0.5);
        break;
    }
    const Spectrum uh = sp_.forward(u), vh = sp_.forward(v);
    Spectrum vx = sp_.dx(vh), uy = sp_.dy(uh);
    ShearState st{Spectrum(sp_.size()), sp_.forward(s)};
    for (std::size_t i = 0; i < sp_.size(); ++i) {
      st.vorticity[i] = (vx[i] - uy[i]) * sp_.dealias()[i];
      st.tracer[i] *= sp_.dealias()[i];
    }
    return st;
  }

  void step(ShearState& st) {
    const std::size_t n = sp_.size();
    const double dt = p_.dt;
    Spectrum k1w, k1s, k2w, k2s, k3w, k3s, k4w, k4s;
    ShearState tmp{Spectrum(n), Spectrum(n)};

    nonlinear(st, k1w, k1s);
    for (std::size_t i = 0; i < n; ++i) {
      k1w[i] *= dt; k1s[i] *= dt;
      tmp.vorticity[i] = ew_half_[i] * (st.vorticity[i] + 0.5 * k1w[i]);
      tmp.tracer[i] = es_half_[i] * (st.tracer[i] + 0.5 * k1s[i]);
    }
    nonlinear(tmp, k2w, k2s);
    for (std::size_t i = 0; i < n; ++i) {
      k2w[i] *= dt; k2s[i] *= dt;
      tmp.vorticity[i] = ew_half_[i] * st.vorticity[i] + 0.5 * k2w[i];
      tmp.tracer[i] = es_half_[i] * st.tracer[i] + 0.5 * k2s[i];
    }
    nonlinear(tmp, k3w, k3s);
    for (std::size_t i = 0; i < n; ++i) {
      k3w[i] *= dt; k3s[i] *= dt;
      const double ew = ew_half_[i] * ew_half_[i], es = es_half_[i] * es_half_[i];
      tmp.vorticity[i] = ew * st.vorticity[i] + ew_half_[i] * k3w[i];
      tmp.tracer[i] = es * st.tracer[i] + es_half_[i] * k3s[i];
    }
    nonlinear(tmp, k4w, k4s);
    for (std::size_t i = 0; i < n; ++i) {
      k4w[i] *= dt; k4s[i] *= dt;
      const double eh = ew_half_[i], e = eh * eh;
      st.vorticity[i] = e * st.vorticity[i] + (e * k1w[i] + 2.0 * eh * (k2w[i] + k3w[i]) + k4w[i]) / 6.0;
      const double sh = es_half_[i], se = sh * sh;
      st.tracer[i] = se * st.tracer[i] + (se * k1s[i] + 2.0 * sh * (k2s[i] + k3s[i]) + k4s[i]) / 6.0;
    }
  }

  /// Physical tracer, pressure, u, v for the current state.
  std::array<Field, 4> observe(const ShearState& st) {
    const auto [uh, vh] = velocity(st.vorticity);
    Field u = sp_.inverse(uh), v = sp_.inverse(vh);
    const Field ux = sp_.inverse(sp_.dx(uh)), uy = sp_.inverse(sp_.dy(uh));
    const Field vx = sp_.inverse(sp_.dx(vh)), vy = sp_.inverse(sp_.dy(vh));
    Field q(sp_.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = ux[i] * ux[i] + 2.0 * uy[i] * vx[i] + vy[i] * vy[i];
    Spectrum ph = sp_.forward(q);
    for (std::size_t i = 0; i < ph.size(); ++i) ph[i] = sp_.k2()[i] > 0.0 ? ph[i] / sp_.k2()[i] : Complex(0.0);
    return {sp_.inverse(st.tracer), sp_.inverse(ph), std::move(u), std::move(v)};
  }

 private:
  std::pair<Spectrum, Spectrum> velocity(const Spectrum& w) const {
    Spectrum psi(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) psi[i] = sp_.k2()[i] > 0.0 ? w[i] / sp_.k2()[i] : Complex(0.0);
    Spectrum uh = sp_.dy(psi), vh = sp_.dx(psi);
    for (auto& c : vh) c = -c;
    return {std::move(uh), std::move(vh)};
  }

  void nonlinear(const ShearState& st, Spectrum& nw, Spectrum& ns) {
    const auto [uh, vh] = velocity(st.vorticity);
    const Field u = sp_.inverse(uh), v = sp_.inverse(vh);
    const Field wx = sp_.inverse(sp_.dx(st.vorticity)), wy = sp_.inverse(sp_.dy(st.vorticity));
    const Field sx = sp_.inverse(sp_.dx(st.tracer)), sy = sp_.inverse(sp_.dy(st.tracer));
    Field fw(sp_.size()), fs(sp_.size());
    for (std::size_t i = 0; i < fw.size(); ++i) {
      fw[i] = -(u[i] * wx[i] + v[i] * wy[i]);
      fs[i] = -(u[i] * sx[i] + v[i] * sy[i]);
    }
    nw = sp_.forward(fw);
    ns = sp_.forward(fs);
    for (std::size_t i = 0; i < nw.size(); ++i) {
      nw[i] *= sp_.dealias()[i];
      ns[i] *= sp_.dealias()[i];
    }
  }

  PhysicsParams p_;
  Spectral sp_;
  std::vector<double> ew_half_, es_half_;
};

SimulationTrajectory empty_trajectory(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed) {
  SimulationTrajectory traj;
  traj.params = params;
  traj.seed = seed;
  traj.grid = grid;
  traj.field_names = field_names_for(params.system);
  for (std::size_t i = 0; i < traj.field_names.size(); ++i) traj.fields.emplace_back(frames, grid.height, grid.width);
  return traj;
}

}  // namespace

SimulationTrajectory simulate_shear_flow(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed) {
  if (params.system != System::ShearFlow) fail(ErrorCode::InvalidArgument, "params are not for a shear flow");
  params.validate();
  check_frames(frames);
  if (!is_power_of_two(grid.height) || !is_power_of_two(grid.width)) {
    fail(ErrorCode::InvalidGrid, "grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                                     " is not a power of two");
  }
  SimulationTrajectory traj = empty_trajectory(params, grid, frames, seed);
  ShearFlowIntegrator integrator(params, grid);
  ShearState state = integrator.initial_state(seed);
  static constexpr const char* kNames[] = {"tracer", "pressure", "velocity_x", "velocity_y"};
  for (Index t = 0; t < frames; ++t) {
    if (t > 0) {
      for (int s = 0; s < params.save_stride; ++s) integrator.step(state);
    }
    const auto observed = integrator.observe(state);
    for (std::size_t f = 0; f < 4; ++f) {
      guard_field(observed[f], kNames[f], t);
      store_frame(traj.fields[f], t, observed[f]);
    }
  }
  return traj;
}

SimulationTrajectory simulate_gray_scott(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed) {
  if (params.system != System::GrayScott) fail(ErrorCode::InvalidArgument, "params are not for Gray-Scott");
  params.validate();
  check_frames(frames);
  if (grid.height < 3 || grid.width < 3) fail(ErrorCode::InvalidGrid, "Gray-Scott grid must be at least 3x3");
  const Index h = grid.height, w = grid.width;
  const std::size_t n = static_cast<std::size_t>(h * w);
  Field a(n, 1.0), b(n, 0.0);

  if (params.initial == InitialCondition::Default && params.perturbation > 0.0) {
    std::mt19937_64 rng(seed);
    const Index side = std::max<Index>(4, w / 8);
    std::uniform_int_distribution<Index> py(0, h - 1), px(0, w - 1);
    std::uniform_real_distribution<double> noise(-0.01, 0.01);
    for (int square = 0; square < 2; ++square) {
      const Index y0 = py(rng), x0 = px(rng);
      for (Index dy = 0; dy < side; ++dy) {
        for (Index dx = 0; dx < side; ++dx) {
          const std::size_t i = static_cast<std::size_t>(((y0 + dy) % h) * w + (x0 + dx) % w);
          a[i] = 0.5 + noise(rng);
          b[i] = params.perturbation + noise(rng);
        }
      }
    }
  } else if (params.initial == InitialCondition::TaylorGreen) {
    fail(ErrorCode::InvalidArgument, "Taylor-Green initial condition is shear-flow only");
  }

  SimulationTrajectory traj = empty_trajectory(params, grid, frames, seed);
  Field na(n), nb(n);
  const double fa = params.diffusion_a, fb = params.diffusion_b, feed = params.feed_F, kill = params.kill_k;
  const double dt = params.dt;
  auto lap = [&](const Field& f, Index y, Index x) {
    const Index yu = (y + h - 1) % h, yd = (y + 1) % h, xl = (x + w - 1) % w, xr = (x + 1) % w;
    return f[static_cast<std::size_t>(yu * w + x)] + f[static_cast<std::size_t>(yd * w + x)] +
           f[static_cast<std::size_t>(y * w + xl)] + f[static_cast<std::size_t>(y * w + xr)] -
           4.0 * f[static_cast<std::size_t>(y * w + x)];
  };
  auto check = [&](Index frame) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!(a[i] >= 0.0 && a[i] <= 1.5 && b[i] >= 0.0 && b[i] <= 1.5)) {
        fail(ErrorCode::SolverBlowUp, "concentration out of [0, 1.5] near frame " + std::to_string(frame));
      }
    }
  };
  for (Index t = 0; t < frames; ++t) {
    if (t > 0) {
      for (int s = 0; s < params.save_stride; ++s) {
        for (Index y = 0; y < h; ++y) {
          for (Index x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y * w + x);
            double da = fa * lap(a, y, x), db = fb * lap(b, y, x);
            if (params.reactions) {
              const double r = a[i] * b[i] * b[i];
              da += -r + feed * (1.0 - a[i]);
              db += r - (feed + kill) * b[i];
            }
            na[i] = a[i] + dt * da;
            nb[i] = b[i] + dt * db;
          }
        }
        a.swap(na);
        b.swap(nb);
      }
    }
    check(t);
    store_frame(traj.fields[0], t, a);
    store_frame(traj.fields[1], t, b);
  }
  return traj;
}

SimulationTrajectory simulate(const PhysicsParams& params, Grid grid, Index frames, std::uint64_t seed) {
  return params.system == System::ShearFlow ? simulate_shear_flow(params, grid, frames, seed)
                                            : simulate_gray_scott(params, grid, frames, seed);
}

double kinetic_energy(const SimulationTrajectory& traj, Index frame) {
  const Array3f& u = traj.field("velocity_x");
  const Array3f& v = traj.field("velocity_y");
  const Index plane = traj.grid.height * traj.grid.width;
  double sum = 0.0;
  for (Index i = 0; i < plane; ++i) {
    const double a = u.data()[frame * plane + i], b = v.data()[frame * plane + i];
    sum += a * a + b * b;
  }
  return 0.5 * sum / static_cast<double>(plane);
}

double max_divergence(const SimulationTrajectory& traj, Index frame) {
  Spectral sp(traj.grid.height, traj.grid.width, traj.params.domain_length);
  const Index plane = traj.grid.height * traj.grid.width;
  Field u(static_cast<std::size_t>(plane)), v(static_cast<std::size_t>(plane));
  const Array3f& uf = traj.field("velocity_x");
  const Array3f& vf = traj.field("velocity_y");
  for (Index i = 0; i < plane; ++i) {
    u[static_cast<std::size_t>(i)] = uf.data()[frame * plane + i];
    v[static_cast<std::size_t>(i)] = vf.data()[frame * plane + i];
  }
  const Spectrum ux = sp.dx(sp.forward(u)), vy = sp.dy(sp.forward(v));
  Spectrum div(ux.size());
  for (std::size_t i = 0; i < div.size(); ++i) div[i] = ux[i] + vy[i];
  const Field d = sp.inverse(div);
  double worst = 0.0;
  for (double x : d) worst = std::max(worst, std::abs(x));
  return worst;
}

}  // namespace steerlab::pde
