#include "steerlab/surrogate/config.hpp"

#include <charconv>

#include "steerlab/core/error.hpp"

namespace steerlab::surrogate {

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "model config: " + what); };
  if (patch_size < 1) bad("patch_size must be >= 1");
  if (grid_height % patch_size != 0 || grid_width % patch_size != 0) bad("grid not divisible by patch_size");
  if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0) bad("embed_dim must be divisible by n_heads");
  if (window_T < 2) bad("window_T must be >= 2");
  if (field_count < 1) bad("field_count must be >= 1");
  if (n_blocks < 0) bad("n_blocks must be >= 0");
  if (mlp_ratio < 1) bad("mlp_ratio must be >= 1");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},     {"n_blocks", c.n_blocks},
      {"n_heads", c.n_heads},       {"window_T", c.window_T},       {"field_count", c.field_count},
      {"grid_height", c.grid_height}, {"grid_width", c.grid_width}, {"mlp_ratio", c.mlp_ratio},
      {"linear_only", c.linear_only},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.window_T = j.value("window_T", c.window_T);
  c.field_count = j.value("field_count", c.field_count);
  c.grid_height = j.value("grid_height", c.grid_height);
  c.grid_width = j.value("grid_width", c.grid_width);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.linear_only = j.value("linear_only", c.linear_only);
  return c;
}

LayerId LayerId::parse(std::string_view text, const ModelConfig& config) {
  std::string_view digits = text;
  if (text == "last") return last_block(config);
  if (digits.starts_with("blocks.")) digits.remove_prefix(7);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    fail(ErrorCode::UnknownLayer, "cannot parse layer '" + std::string(text) + "'");
  }
  if (value < 0) value += static_cast<int>(config.n_blocks);
  if (value < 0 || value >= config.n_blocks) {
    fail(ErrorCode::UnknownLayer, "layer '" + std::string(text) + "' not in blocks.0..blocks." +
                                      std::to_string(config.n_blocks - 1));
  }
  return {value};
}

}  // namespace steerlab::surrogate
