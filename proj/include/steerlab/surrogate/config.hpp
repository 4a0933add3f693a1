#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "steerlab/core/tensor.hpp"

namespace steerlab::surrogate {

struct ModelConfig {
  Index patch_size = 8;
  Index embed_dim = 64;
  Index n_blocks = 4;
  Index n_heads = 4;
  Index window_T = 4;
  Index field_count = 4;
  Index grid_height = 64;
  Index grid_width = 64;
  Index mlp_ratio = 2;
  /// Bypasses every block and the head norm: patch embedding straight into
  /// the decoder. Used to isolate the linear path in gradient checks.
  bool linear_only = false;

  Index tokens_w() const { return grid_width / patch_size; }
  Index tokens_h() const { return grid_height / patch_size; }
  Index tokens_per_frame() const { return tokens_w() * tokens_h(); }
  Index tokens() const { return window_T * tokens_per_frame(); }
  Index patch_features() const { return field_count * patch_size * patch_size; }
  Index head_dim() const { return embed_dim / n_heads; }

  /// [T, C, W, H] of every block tap.
  Shape4 activation_shape() const { return {window_T, embed_dim, tokens_w(), tokens_h()}; }

  /// Throws InvalidArgument.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Post-block residual-stream location, printed as "blocks.N".
struct LayerId {
  int block = -1;

  static LayerId parse(std::string_view text, const ModelConfig& config);
  std::string name() const { return "blocks." + std::to_string(block); }
  friend bool operator==(const LayerId&, const LayerId&) = default;
  friend auto operator<=>(const LayerId&, const LayerId&) = default;
};

inline LayerId last_block(const ModelConfig& c) { return {static_cast<int>(c.n_blocks) - 1}; }

}  // namespace steerlab::surrogate
