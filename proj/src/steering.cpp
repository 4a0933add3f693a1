#include "steerlab/steering/steering.hpp"

#include <array>

#include "steerlab/core/hash.hpp"

namespace steerlab::steering {

std::string_view to_string(Mode m) { return m == Mode::FullSpatial ? "full" : "channel"; }

std::string_view to_string(Align a) {
  switch (a) {
    case Align::None: return "none";
    case Align::Pad: return "pad";
    case Align::Interpolate: return "interpolate";
  }
  return "none";
}

Mode mode_from_string(std::string_view s) {
  if (s == "full") return Mode::FullSpatial;
  if (s == "channel") return Mode::ChannelBroadcast;
  fail(ErrorCode::InvalidArgument, "unknown steering mode '" + std::string(s) + "' (full, channel)");
}

Align align_from_string(std::string_view s) {
  if (s == "none") return Align::None;
  if (s == "pad") return Align::Pad;
  if (s == "interpolate") return Align::Interpolate;
  fail(ErrorCode::InvalidArgument, "unknown alignment '" + std::string(s) + "' (none, pad, interpolate)");
}

void SteeringConfig::validate() const {
  if (!std::isfinite(alpha)) fail(ErrorCode::InvalidArgument, "alpha must be finite");
  if (std::abs(alpha) > alpha_limit) {
    fail(ErrorCode::InvalidArgument, "|alpha| = " + std::to_string(std::abs(alpha)) + " exceeds the limit " +
                                         std::to_string(alpha_limit));
  }
  if (mode == Mode::FullSpatial && !direction.full) {
    fail(ErrorCode::MissingFullDirection, "full-spatial steering needs the full direction tensor");
  }
  if (mode == Mode::ChannelBroadcast && !direction.channel && !direction.full) {
    fail(ErrorCode::MissingFullDirection, "direction has no payload");
  }
}

namespace {

// Resamples one axis of a row-major rank-4 tensor.
Tensor4<float> resample_axis(const Tensor4<float>& x, int axis, Index n_out, Align align) {
  Shape4 s = shape_of(x);
  const Index n_in = s[static_cast<std::size_t>(axis)];
  Shape4 o = s;
  o[static_cast<std::size_t>(axis)] = n_out;
  Tensor4<float> out(o[0], o[1], o[2], o[3]);
  out.setZero();
  std::array<Index, 4> idx{};
  for (idx[0] = 0; idx[0] < o[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < o[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < o[2]; ++idx[2])
        for (idx[3] = 0; idx[3] < o[3]; ++idx[3]) {
          const Index i = idx[static_cast<std::size_t>(axis)];
          auto at = [&](Index j) {
            auto src = idx;
            src[static_cast<std::size_t>(axis)] = j;
            return x(src[0], src[1], src[2], src[3]);
          };
          float v = 0.0f;
          if (align == Align::Pad) {
            v = i < n_in ? at(i) : 0.0f;
          } else {
            const double pos = n_out > 1 ? static_cast<double>(i) * static_cast<double>(n_in - 1) /
                                               static_cast<double>(n_out - 1)
                                         : 0.0;
            const Index lo = std::min<Index>(static_cast<Index>(pos), n_in - 1);
            const Index hi = std::min<Index>(lo + 1, n_in - 1);
            const double w = pos - static_cast<double>(lo);
            v = static_cast<float>((1.0 - w) * at(lo) + w * at(hi));
          }
          out(idx[0], idx[1], idx[2], idx[3]) = v;
        }
  return out;
}

}  // namespace

Tensor4<float> align_spatial(const Tensor4<float>& direction, const Shape4& target, Align align) {
  const Shape4 s = shape_of(direction);
  if (s == target) return direction;
  if (s[1] != target[1]) {
    fail(ErrorCode::IncompatibleShapes, "channel count " + std::to_string(s[1]) + " vs " + std::to_string(target[1]));
  }
  if (align == Align::None) {
    fail(ErrorCode::IncompatibleShapes, "direction " + shape_string(s) + " vs activation " + shape_string(target) +
                                            " and no alignment requested");
  }
  for (std::size_t ax : {0u, 2u, 3u}) {
    if (std::abs(s[ax] - target[ax]) > 1) {
      fail(ErrorCode::IncompatibleShapes, "direction " + shape_string(s) + " differs from " + shape_string(target) +
                                              " by more than one element");
    }
  }
  Tensor4<float> out = direction;
  for (int ax : {0, 2, 3}) {
    if (shape_of(out)[static_cast<std::size_t>(ax)] != target[static_cast<std::size_t>(ax)]) {
      out = resample_axis(out, ax, target[static_cast<std::size_t>(ax)], align);
    }
  }
  return out;
}

Tensor4<float> resolve_direction(const SteeringConfig& config, const Shape4& target) {
  config.validate();
  if (config.mode == Mode::ChannelBroadcast) {
    const VectorX<float> channel =
        config.direction.channel ? *config.direction.channel : concepts::channel_mean(*config.direction.full);
    return broadcast_channel(channel, target);
  }
  return align_spatial(*config.direction.full, target, config.align);
}

std::string direction_hash(const concepts::ConceptDirection<float>& dir) {
  Hasher h;
  h.update(dir.name).update(dir.layer.name());
  if (dir.full) {
    h.update(shape_string(shape_of(*dir.full)));
    h.update(std::as_bytes(std::span<const float>(dir.full->data(), static_cast<std::size_t>(dir.full->size()))));
  }
  if (dir.channel) {
    h.update("channel");
    h.update(std::as_bytes(std::span<const float>(dir.channel->data(), static_cast<std::size_t>(dir.channel->size()))));
  }
  return h.hex();
}

std::string frames_hash(const Tensor4<float>& frames) {
  Hasher h;
  h.update(shape_string(shape_of(frames)));
  h.update(std::as_bytes(std::span<const float>(frames.data(), static_cast<std::size_t>(frames.size()))));
  return h.hex();
}

RolloutResult rollout(const surrogate::Checkpoint& ckpt, const pde::SimulationTrajectory& init, Index steps,
                      const SteeringConfig* steering) {
  return rollout(ckpt.model(), ckpt.normalizer, init, steps, steering);
}

RolloutResult rollout(const surrogate::Model<float>& model, const surrogate::Normalizer& normalizer,
                      const pde::SimulationTrajectory& init, Index steps, const SteeringConfig* steering) {
  const auto& cfg = model.config();
  const Index T = cfg.window_T;
  if (steps < 0) fail(ErrorCode::InvalidArgument, "negative rollout length");
  if (init.frames() < T) {
    fail(ErrorCode::InsufficientData, "rollout needs " + std::to_string(T) + " initial frames, got " +
                                          std::to_string(init.frames()));
  }
  if (init.field_names != normalizer.field_names) fail(ErrorCode::ShapeMismatch, "init fields differ from the model's");

  RolloutResult result;
  result.field_names = init.field_names;
  const Index F = init.field_count(), H = init.grid.height, W = init.grid.width, frame = F * H * W;
  result.frames = Tensor4<float>(steps, F, H, W);

  std::optional<surrogate::Injector<float>> injector;
  if (steering) {
    if (cfg.linear_only || steering->layer.block < 0 || steering->layer.block >= cfg.n_blocks) {
      fail(ErrorCode::UnknownLayer, "steering layer " + steering->layer.name() + " is not in the model");
    }
    result.steering = nlohmann::json{{"alpha", steering->alpha},
                                     {"mode", to_string(steering->mode)},
                                     {"align", to_string(steering->align)},
                                     {"layer", steering->layer.name()},
                                     {"per_token", steering->per_token},
                                     {"direction", steering->direction.name},
                                     {"direction_hash", direction_hash(steering->direction)}};
    if (steering->alpha != 0.0) {
      auto delta = std::make_shared<Tensor4<float>>(resolve_direction(*steering, cfg.activation_shape()));
      const double alpha = steering->alpha;
      const bool per_token = steering->per_token;
      injector = surrogate::Injector<float>{steering->layer, [delta, alpha, per_token](Tensor4<float>& a) {
                                              a = per_token ? steer_per_token(a, *delta, alpha)
                                                            : steer(a, *delta, alpha);
                                            }};
    } else {
      steering->validate();
    }
  }
  surrogate::ForwardOptions<float> opt;
  if (injector) opt.injector = &*injector;

  Tensor4<float> window = surrogate::stack_frames(init, init.frames() - T, T);
  for (Index s = 0; s < steps; ++s) {
    const auto delta = normalizer.denormalize_delta(model.forward(normalizer.normalize_window(window), opt).delta);
    float* next = result.frames.data() + s * frame;
    Eigen::Map<VectorX<float>>(next, frame) =
        Eigen::Map<const VectorX<float>>(window.data() + (T - 1) * frame, frame) +
        Eigen::Map<const VectorX<float>>(delta.data(), frame);
    if (!Eigen::Map<const VectorX<float>>(next, frame).allFinite()) {
      fail(ErrorCode::NonFiniteState, "rollout produced a non-finite state at frame " + std::to_string(s));
    }
    std::copy(window.data() + frame, window.data() + T * frame, window.data());
    std::copy_n(next, frame, window.data() + (T - 1) * frame);
  }
  return result;
}

pde::SimulationTrajectory to_trajectory(const RolloutResult& r, const pde::SimulationTrajectory& init) {
  if (r.length() < 1) fail(ErrorCode::EmptyResult, "rollout has no frames");
  pde::SimulationTrajectory t;
  t.field_names = r.field_names;
  t.params = init.params;
  t.seed = init.seed;
  t.grid = init.grid;
  t.frame_stride = init.frame_stride;
  const Index N = r.length(), F = r.frames.dimension(1), H = r.frames.dimension(2), W = r.frames.dimension(3);
  for (Index f = 0; f < F; ++f) {
    Array3f field(N, H, W);
    for (Index n = 0; n < N; ++n)
      std::copy_n(r.frames.data() + (n * F + f) * H * W, H * W, field.data() + n * H * W);
    t.fields.push_back(std::move(field));
  }
  t.annotations = {{"rollout", true}, {"steering", r.steering.value_or(nlohmann::json())}};
  if (!r.baseline_ref.empty()) t.annotations["baseline"] = r.baseline_ref;
  return t;
}

}  // namespace steerlab::steering
