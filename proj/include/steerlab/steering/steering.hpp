#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "steerlab/concepts/concepts.hpp"
#include "steerlab/core/error.hpp"
#include "steerlab/core/tensor.hpp"
#include "steerlab/pde/trajectory.hpp"
#include "steerlab/surrogate/training.hpp"

namespace steerlab::steering {

using surrogate::LayerId;

enum class Mode { FullSpatial, ChannelBroadcast };
enum class Align { None, Pad, Interpolate };

std::string_view to_string(Mode m);
std::string_view to_string(Align a);
Mode mode_from_string(std::string_view s);
Align align_from_string(std::string_view s);

struct SteeringConfig {
  concepts::ConceptDirection<float> direction;
  double alpha = 0.0;
  LayerId layer;
  Mode mode = Mode::FullSpatial;
  Align align = Align::None;
  bool per_token = false;     // renormalize each (t, w, h) channel vector instead of the whole tensor
  double alpha_limit = 10.0;  // guard rail on |alpha|

  /// Throws InvalidArgument (alpha) or MissingFullDirection (mode).
  void validate() const;
};

/// alpha * |a|^2 * delta / |delta|^2 with global norms. Odd in alpha, exactly.
/// Throws ZeroDirection, ShapeMismatch.
template <typename Scalar>
Tensor4<Scalar> steering_perturbation(const Tensor4<Scalar>& a, const Tensor4<Scalar>& delta, double alpha) {
  if (shape_of(a) != shape_of(delta)) {
    fail(ErrorCode::ShapeMismatch, "activation " + shape_string(shape_of(a)) + " vs direction " +
                                       shape_string(shape_of(delta)));
  }
  Tensor4<Scalar> out(a.dimensions());
  if (alpha == 0.0) {
    out.setZero();
    return out;
  }
  const double dd = flat(delta).template cast<double>().squaredNorm();
  if (dd == 0.0) fail(ErrorCode::ZeroDirection, "direction has zero norm");
  const double coef = alpha * flat(a).template cast<double>().squaredNorm() / dd;
  flat(out) = (coef * flat(delta).template cast<double>()).template cast<Scalar>();
  return out;
}

/// a + steering_perturbation(a, delta, alpha), before rescaling.
template <typename Scalar>
Tensor4<Scalar> steer_pre(const Tensor4<Scalar>& a, const Tensor4<Scalar>& delta, double alpha) {
  const Tensor4<Scalar> p = steering_perturbation(a, delta, alpha);
  if (alpha == 0.0) return a;
  Tensor4<Scalar> out(a.dimensions());
  flat(out) = flat(a) + flat(p);
  return out;
}

/// steer_pre followed by a global rescale back to |a|. alpha = 0 returns a unchanged.
template <typename Scalar>
Tensor4<Scalar> steer(const Tensor4<Scalar>& a, const Tensor4<Scalar>& delta, double alpha) {
  if (alpha == 0.0) {
    if (shape_of(a) != shape_of(delta)) fail(ErrorCode::ShapeMismatch, "activation vs direction shape");
    return a;
  }
  const Tensor4<Scalar> pre = steer_pre(a, delta, alpha);
  const double na = flat(a).template cast<double>().norm();
  const double np = flat(pre).template cast<double>().norm();
  Tensor4<Scalar> out(a.dimensions());
  const double scale = np > 0 ? na / np : 0.0;
  flat(out) = (flat(pre).template cast<double>() * scale).template cast<Scalar>();
  return out;
}

/// Variant that restores each token's channel-vector norm separately.
template <typename Scalar>
Tensor4<Scalar> steer_per_token(const Tensor4<Scalar>& a, const Tensor4<Scalar>& delta, double alpha) {
  if (alpha == 0.0) return steer(a, delta, alpha);
  Tensor4<Scalar> out = steer_pre(a, delta, alpha);
  const Index T = a.dimension(0), C = a.dimension(1), plane = a.dimension(2) * a.dimension(3);
  for (Index t = 0; t < T; ++t)
    for (Index p = 0; p < plane; ++p) {
      double na = 0, np = 0;
      for (Index c = 0; c < C; ++c) {
        const Index i = (t * C + c) * plane + p;
        na += double(a.data()[i]) * a.data()[i];
        np += double(out.data()[i]) * out.data()[i];
      }
      const double scale = np > 0 ? std::sqrt(na / np) : 0.0;
      for (Index c = 0; c < C; ++c) {
        Scalar& v = out.data()[(t * C + c) * plane + p];
        v = static_cast<Scalar>(v * scale);
      }
    }
  return out;
}

/// direction[t, c, w, h] = channel[c]. Throws ChannelMismatch.
template <typename Scalar>
Tensor4<Scalar> broadcast_channel(const VectorX<Scalar>& channel, const Shape4& target) {
  if (channel.size() != target[1]) {
    fail(ErrorCode::ChannelMismatch, "direction has " + std::to_string(channel.size()) + " channels, target " +
                                         shape_string(target));
  }
  Tensor4<Scalar> out(target[0], target[1], target[2], target[3]);
  const Index plane = target[2] * target[3];
  for (Index t = 0; t < target[0]; ++t)
    for (Index c = 0; c < target[1]; ++c)
      Eigen::Map<VectorX<Scalar>>(out.data() + (t * target[1] + c) * plane, plane).setConstant(channel(c));
  return out;
}

/// Matches the full direction to target_shape when T, W, H differ by at most
/// one. Pad zero-fills or crops trailing planes; Interpolate resamples
/// linearly with matched end points. Throws IncompatibleShapes.
Tensor4<float> align_spatial(const Tensor4<float>& direction, const Shape4& target, Align align);

/// Direction tensor actually injected for `config` at activation shape `target`.
Tensor4<float> resolve_direction(const SteeringConfig& config, const Shape4& target);

std::string direction_hash(const concepts::ConceptDirection<float>& dir);

struct RolloutResult {
  Tensor4<float> frames;  // [N, F, H, W]
  std::vector<std::string> field_names;
  std::optional<nlohmann::json> steering;  // alpha, mode, layer, direction hash
  std::string baseline_ref;

  Index length() const { return frames.dimension(0); }
};

/// Autoregressive rollout from the last window_T frames of `init`.
/// Throws UnknownLayer, NonFiniteState (with frame index).
RolloutResult rollout(const surrogate::Checkpoint& ckpt, const pde::SimulationTrajectory& init, Index steps,
                      const SteeringConfig* steering = nullptr);
RolloutResult rollout(const surrogate::Model<float>& model, const surrogate::Normalizer& normalizer,
                      const pde::SimulationTrajectory& init, Index steps, const SteeringConfig* steering = nullptr);

/// Trajectory view of a non-empty rollout (params and grid from `init`,
/// steering metadata in the annotations).
pde::SimulationTrajectory to_trajectory(const RolloutResult& r, const pde::SimulationTrajectory& init);

std::string frames_hash(const Tensor4<float>& frames);

}  // namespace steerlab::steering
