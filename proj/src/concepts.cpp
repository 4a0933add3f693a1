#include "steerlab/concepts/concepts.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "steerlab/core/binary_io.hpp"
#include "steerlab/core/hash.hpp"
#include "steerlab/core/parallel.hpp"

namespace steerlab::concepts {

namespace {
constexpr std::string_view kMagic = "SDIR";
constexpr std::uint16_t kVersion = 1;
}  // namespace

void save_direction(const ConceptDirection<float>& dir, const std::string& path) {
  if (!dir.full && !dir.channel) fail(ErrorCode::InvalidArgument, "direction has neither full nor channel payload");
  nlohmann::json meta = {{"name", dir.name},
                         {"layer", dir.layer.name()},
                         {"has_full", dir.full.has_value()},
                         {"has_channel", dir.channel.has_value()},
                         {"stats", dir.stats_ref}};
  if (dir.full) meta["shape"] = shape_of(*dir.full);
  if (dir.channel) meta["channels"] = dir.channel->size();
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  io::write_header(out, kMagic, kVersion, meta.dump());
  if (dir.full) io::write_floats(out, {dir.full->data(), static_cast<std::size_t>(dir.full->size())});
  if (dir.channel) io::write_floats(out, {dir.channel->data(), static_cast<std::size_t>(dir.channel->size())});
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

ConceptDirection<float> load_direction(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  try {
    const auto meta = nlohmann::json::parse(io::read_header(in, kMagic, kVersion));
    ConceptDirection<float> dir;
    dir.name = meta.at("name").get<std::string>();
    const auto layer = meta.at("layer").get<std::string>();
    if (!layer.starts_with("blocks.")) fail(ErrorCode::CorruptDirection, "bad layer name " + layer);
    dir.layer.block = std::stoi(layer.substr(7));
    dir.stats_ref = meta.value("stats", "");
    const bool has_full = meta.at("has_full").get<bool>();
    const bool has_channel = meta.at("has_channel").get<bool>();
    if (!has_full && !has_channel) fail(ErrorCode::CorruptDirection, "neither full nor channel payload in " + path);
    if (has_full) {
      const auto s = meta.at("shape").get<Shape4>();
      for (Index d : s)
        if (d <= 0) fail(ErrorCode::CorruptDirection, "non-positive dimension");
      dir.full = Tensor4<float>(s[0], s[1], s[2], s[3]);
      io::read_floats(in, {dir.full->data(), static_cast<std::size_t>(dir.full->size())}, "full direction");
    }
    if (has_channel) {
      const auto c = meta.at("channels").get<Index>();
      if (c <= 0) fail(ErrorCode::CorruptDirection, "non-positive channel count");
      dir.channel = VectorX<float>(c);
      io::read_floats(in, {dir.channel->data(), static_cast<std::size_t>(c)}, "channel direction");
    }
    return dir;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptDirection, std::string("bad direction metadata: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::CorruptDirection, "bad layer index in " + path);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile) fail(ErrorCode::CorruptDirection, std::string(e.what()) + " in " + path);
    throw;
  }
}

std::string stats_hash(const NormalizationStats<float>& stats) {
  Hasher h;
  h.update(shape_string(shape_of(stats.mean)));
  h.update_pod(stats.epsilon);
  h.update(std::as_bytes(std::span<const float>(stats.mean.data(), static_cast<std::size_t>(stats.mean.size()))));
  h.update(std::as_bytes(std::span<const float>(stats.std.data(), static_cast<std::size_t>(stats.std.size()))));
  return h.hex();
}

std::vector<Tensor4<float>> extract_activations(const surrogate::Model<float>& model,
                                                const surrogate::Normalizer& normalizer,
                                                const pde::SimulationTrajectory& traj, LayerId layer,
                                                unsigned threads) {
  const Index T = model.config().window_T;
  const Index windows = traj.frames() / T;
  if (windows < 1) fail(ErrorCode::InsufficientData, "trajectory shorter than one window");
  std::vector<Tensor4<float>> out(static_cast<std::size_t>(windows));
  surrogate::ForwardOptions<float> opt;
  opt.taps = {layer};
  parallel_for(
      out.size(),
      [&](std::size_t w) {
        const auto window = normalizer.normalize_window(surrogate::stack_frames(traj, static_cast<Index>(w) * T, T));
        auto result = model.forward(window, opt);
        out[w] = std::move(result.taps.at(layer).data);
      },
      threads);
  return out;
}

}  // namespace steerlab::concepts
