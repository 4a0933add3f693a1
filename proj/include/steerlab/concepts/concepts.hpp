#pragma once

#include <optional>
#include <string>
#include <vector>

#include "steerlab/core/error.hpp"
#include "steerlab/core/tensor.hpp"
#include "steerlab/pde/trajectory.hpp"
#include "steerlab/surrogate/model.hpp"
#include "steerlab/surrogate/training.hpp"

namespace steerlab::concepts {

using surrogate::LayerId;

constexpr double kDefaultEpsilon = 1e-6;

/// Per-position (t, c, w, h) mean and population standard deviation.
template <typename Scalar = float>
struct NormalizationStats {
  Tensor4<Scalar> mean;
  Tensor4<Scalar> std;
  double epsilon = kDefaultEpsilon;
  std::string source;
};

template <typename Scalar = float>
struct GroupStatistics {
  Tensor4<Scalar> mu;
  Tensor4<Scalar> nu;
  Index count_f = 0;
  Index count_not_f = 0;
};

template <typename Scalar = float>
struct ConceptDirection {
  std::string name;
  std::optional<Tensor4<Scalar>> full;     // [T, C, W, H]
  std::optional<VectorX<Scalar>> channel;  // [C]
  std::string stats_ref;
  LayerId layer;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const std::vector<Tensor4<Scalar>>& xs, const Shape4& shape, const char* what) {
  for (const auto& x : xs) {
    if (shape_of(x) != shape) {
      fail(ErrorCode::ShapeMismatch,
           std::string(what) + ": " + shape_string(shape_of(x)) + " vs " + shape_string(shape));
    }
  }
}

template <typename Scalar>
Tensor4<Scalar> mean_of(const std::vector<Tensor4<Scalar>>& xs) {
  VectorX<double> sum = VectorX<double>::Zero(xs.front().size());
  for (const auto& x : xs) sum += flat(x).template cast<double>();
  Tensor4<Scalar> out(xs.front().dimensions());
  flat(out) = (sum / static_cast<double>(xs.size())).template cast<Scalar>();
  return out;
}

}  // namespace detail

/// Throws InsufficientData for fewer than two tensors, ShapeMismatch.
template <typename Scalar>
NormalizationStats<Scalar> fit_normalization_stats(const std::vector<Tensor4<Scalar>>& acts,
                                                   double epsilon = kDefaultEpsilon, std::string source = {}) {
  if (acts.size() < 2) fail(ErrorCode::InsufficientData, "normalization needs at least two activation tensors");
  if (!(epsilon >= 0)) fail(ErrorCode::InvalidArgument, "epsilon must be non-negative");
  detail::require_same_shape(acts, shape_of(acts.front()), "normalization set");
  NormalizationStats<Scalar> s;
  s.epsilon = epsilon;
  s.source = std::move(source);
  s.mean = detail::mean_of(acts);
  const VectorX<double> mu = flat(s.mean).template cast<double>();
  VectorX<double> sq = VectorX<double>::Zero(mu.size());
  for (const auto& a : acts) sq += (flat(a).template cast<double>() - mu).array().square().matrix();
  s.std = Tensor4<Scalar>(s.mean.dimensions());
  flat(s.std) = (sq / static_cast<double>(acts.size())).array().sqrt().matrix().template cast<Scalar>();
  return s;
}

/// (a - mean) / (std + epsilon), elementwise.
template <typename Scalar>
Tensor4<Scalar> normalize(const Tensor4<Scalar>& a, const NormalizationStats<Scalar>& s) {
  if (shape_of(a) != shape_of(s.mean)) {
    fail(ErrorCode::ShapeMismatch, "activation " + shape_string(shape_of(a)) + " vs stats " +
                                       shape_string(shape_of(s.mean)));
  }
  Tensor4<Scalar> out(a.dimensions());
  flat(out) = ((flat(a).template cast<double>() - flat(s.mean).template cast<double>()).array() /
               (flat(s.std).template cast<double>().array() + s.epsilon))
                  .matrix()
                  .template cast<Scalar>();
  return out;
}

template <typename Scalar>
Tensor4<Scalar> denormalize(const Tensor4<Scalar>& a_hat, const NormalizationStats<Scalar>& s) {
  if (shape_of(a_hat) != shape_of(s.mean)) fail(ErrorCode::ShapeMismatch, "activation vs stats shape");
  Tensor4<Scalar> out(a_hat.dimensions());
  flat(out) = (flat(a_hat).template cast<double>().array() * (flat(s.std).template cast<double>().array() + s.epsilon) +
               flat(s.mean).template cast<double>().array())
                  .matrix()
                  .template cast<Scalar>();
  return out;
}

/// Throws InsufficientData for an empty group, ShapeMismatch.
template <typename Scalar>
GroupStatistics<Scalar> group_means(const std::vector<Tensor4<Scalar>>& group_f,
                                    const std::vector<Tensor4<Scalar>>& group_not_f) {
  if (group_f.empty() || group_not_f.empty()) fail(ErrorCode::InsufficientData, "both groups need members");
  const Shape4 shape = shape_of(group_f.front());
  detail::require_same_shape(group_f, shape, "group f");
  detail::require_same_shape(group_not_f, shape, "group not f");
  return {detail::mean_of(group_f), detail::mean_of(group_not_f), static_cast<Index>(group_f.size()),
          static_cast<Index>(group_not_f.size())};
}

template <typename Scalar>
ConceptDirection<Scalar> concept_delta(const GroupStatistics<Scalar>& stats, std::string name) {
  if (shape_of(stats.mu) != shape_of(stats.nu)) fail(ErrorCode::ShapeMismatch, "group mean shapes differ");
  ConceptDirection<Scalar> d;
  d.name = std::move(name);
  d.full = Tensor4<Scalar>(stats.mu.dimensions());
  flat(*d.full) = flat(stats.mu) - flat(stats.nu);
  return d;
}

/// Mean over (t, w, h) for each channel of a [T, C, W, H] tensor.
template <typename Scalar>
VectorX<Scalar> channel_mean(const Tensor4<Scalar>& x) {
  const Index T = x.dimension(0), C = x.dimension(1), plane = x.dimension(2) * x.dimension(3);
  VectorX<double> sum = VectorX<double>::Zero(C);
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c) {
      sum(c) += Eigen::Map<const VectorX<Scalar>>(x.data() + (t * C + c) * plane, plane).template cast<double>().sum();
    }
  return (sum / static_cast<double>(T * plane)).template cast<Scalar>();
}

/// Adds the channel direction. Throws MissingFullDirection.
template <typename Scalar>
ConceptDirection<Scalar> spatial_average(const ConceptDirection<Scalar>& dir) {
  if (!dir.full) fail(ErrorCode::MissingFullDirection, "direction '" + dir.name + "' has no full tensor");
  ConceptDirection<Scalar> out = dir;
  out.channel = channel_mean(*dir.full);
  return out;
}

template <typename Scalar>
ConceptDirection<Scalar> negate(const ConceptDirection<Scalar>& dir) {
  ConceptDirection<Scalar> out = dir;
  if (out.full) flat(*out.full) = -flat(*out.full);
  if (out.channel) *out.channel = -*out.channel;
  return out;
}

/// Throws CorruptDirection on bad magic, version, truncation, or payload flags.
void save_direction(const ConceptDirection<float>& dir, const std::string& path);
ConceptDirection<float> load_direction(const std::string& path);

std::string stats_hash(const NormalizationStats<float>& stats);

/// Post-block activations at `layer` for every non-overlapping window of the
/// trajectory (starts 0, T, 2T, ...).
std::vector<Tensor4<float>> extract_activations(const surrogate::Model<float>& model,
                                                const surrogate::Normalizer& normalizer,
                                                const pde::SimulationTrajectory& traj, LayerId layer,
                                                unsigned threads = 0);

}  // namespace steerlab::concepts
