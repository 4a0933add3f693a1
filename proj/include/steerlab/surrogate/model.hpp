#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "steerlab/core/tensor.hpp"
#include "steerlab/surrogate/config.hpp"

namespace steerlab::surrogate {

/// Captured post-block activation, [T, C, W, H] over the token grid.
template <typename Scalar = float>
struct ActivationTensor {
  Tensor4<Scalar> data;
  LayerId layer;
  std::string source;
};

/// Ordered, named parameter matrices. Vectors are stored as 1 x n.
template <typename Scalar>
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<MatrixX<Scalar>> values;

  int add(std::string name, Index rows, Index cols) {
    names.push_back(std::move(name));
    values.push_back(MatrixX<Scalar>::Zero(rows, cols));
    return static_cast<int>(values.size()) - 1;
  }
  Index total_size() const {
    Index n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }
  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    for (auto& v : out.values) v.setZero();
    return out;
  }
  void set_zero() {
    for (auto& v : values) v.setZero();
  }
  /// Throws InvalidArgument for an unknown name.
  int index_of(const std::string& name) const;

  template <typename To>
  ParameterSet<To> cast() const {
    ParameterSet<To> out;
    out.names = names;
    for (const auto& v : values) out.values.push_back(v.template cast<To>());
    return out;
  }
};

/// Replaces a block's post-block activation in place.
template <typename Scalar>
struct Injector {
  LayerId layer;
  std::function<void(Tensor4<Scalar>&)> transform;
};

template <typename Scalar>
struct ForwardOptions {
  const Injector<Scalar>* injector = nullptr;
  std::vector<LayerId> taps;
  /// Instrumentation: called with the residual stream entering each block.
  std::function<void(int block, const Tensor4<Scalar>& input)> block_input_probe;
};

template <typename Scalar>
struct ForwardResult {
  Tensor3<Scalar> delta;  // [field_count, H, W]
  std::map<LayerId, ActivationTensor<Scalar>> taps;
};

/// Patch-based spatiotemporal transformer predicting the next-frame delta.
/// Each block: axial attention over W, over H, temporal attention over T,
/// then an MLP; all pre-norm with residuals. The decoder reads the last
/// time step through a final norm and a per-patch linear map.
template <typename Scalar>
class Model {
 public:
  explicit Model(const ModelConfig& config);

  /// Deterministic initialization from a seed (drawn in double, then cast,
  /// so float and double models start from the same values).
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }
  ParameterSet<Scalar>& parameters() { return params_; }

  /// window: [window_T, field_count, H, W], already normalized.
  /// Throws ShapeMismatch or UnknownLayer.
  ForwardResult<Scalar> forward(const Tensor4<Scalar>& window, const ForwardOptions<Scalar>& options = {}) const;

  /// Mean squared error against target_delta; accumulates dLoss/dparams into
  /// `grad` (which must share this model's layout) and returns the loss.
  Scalar loss_and_gradient(const Tensor4<Scalar>& window, const Tensor3<Scalar>& target_delta,
                           ParameterSet<Scalar>& grad) const;

  template <typename To>
  Model<To> cast() const {
    Model<To> out(config_);
    out.parameters() = params_.template cast<To>();
    return out;
  }

 private:
  struct Impl;
  ModelConfig config_;
  ParameterSet<Scalar> params_;
};

/// Mean squared error over all elements. Throws ShapeMismatch.
template <typename Scalar>
Scalar mse_loss(const Tensor3<Scalar>& prediction, const Tensor3<Scalar>& target);

/// [T, C, W, H] <-> token matrix (rows ordered (t, w, h), C columns).
template <typename Scalar>
Tensor4<Scalar> tokens_to_activation(const MatrixX<Scalar>& tokens, const ModelConfig& config);
template <typename Scalar>
MatrixX<Scalar> activation_to_tokens(const Tensor4<Scalar>& activation, const ModelConfig& config);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace steerlab::surrogate
