#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "steerlab/core/error.hpp"
#include "steerlab/pipeline/config.hpp"
#include "steerlab/pipeline/pipeline.hpp"
#include "steerlab/protocol/protocol.hpp"

using namespace steerlab;

namespace {

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingArtifact:
    case ErrorCode::StaleArtifact:
    case ErrorCode::CorruptFile:
    case ErrorCode::CorruptCheckpoint:
    case ErrorCode::CorruptDirection:
    case ErrorCode::IoError:
      return 2;
    case ErrorCode::NonFiniteState:
    case ErrorCode::Diverged:
    case ErrorCode::SolverBlowUp:
    case ErrorCode::GradientMismatch:
    case ErrorCode::ZeroDirection:
      return 3;
    default:
      return 1;
  }
}

struct Overrides {
  std::string config;
  std::string layer;
  std::string alpha;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool render = false;
  bool quiet = false;
};

// A config argument is a file path, or a preset name when no such file exists.
nlohmann::json config_document(const std::string& arg) {
  if (std::filesystem::exists(arg)) {
    std::ifstream in(arg);
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ConfigInvalid, arg + ": " + e.what());
    }
  }
  const auto names = pipeline::preset_names();
  if (std::find(names.begin(), names.end(), arg) != names.end()) return {{"extends", arg}};
  std::string msg = "no config file or preset named '" + arg + "'";
  if (auto near = pipeline::nearest_name(arg, names)) msg += "; did you mean '" + *near + "'?";
  fail(ErrorCode::ConfigInvalid, msg);
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigInvalid, "--alpha: cannot parse '" + item + "'");
    }
  }
  return out;
}

nlohmann::json apply_overrides(nlohmann::json doc, const Overrides& o) {
  if (!o.layer.empty()) doc["concept"]["layer"] = o.layer;
  if (!o.alpha.empty()) doc["steering"]["alpha_grid"] = parse_alphas(o.alpha);
  if (!o.out.empty()) doc["outputs"]["dir"] = o.out;
  if (o.seed) doc["seed"] = *o.seed;
  if (o.render) doc["outputs"]["render"] = true;
  return doc;
}

void print_diagnostics(const std::vector<pipeline::Diagnostic>& diags) {
  for (const auto& d : diags) std::cerr << (d.path.empty() ? "<root>" : d.path) << ": " << d.message << "\n";
}

int run_stage(const std::string& stage, const Overrides& o) {
  const auto doc = apply_overrides(config_document(o.config), o);
  const auto diags = pipeline::validate_document(doc);
  if (!diags.empty()) {
    print_diagnostics(diags);
    return 1;
  }
  pipeline::Pipeline p(pipeline::config_from_json(doc));
  if (!o.quiet) p.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const auto outcomes = stage == "all" ? p.all() : std::vector<pipeline::StageOutcome>{p.run(stage)};
  for (const auto& r : outcomes) {
    std::cout << r.stage << (r.cached ? " cached " : " done ") << r.manifest_path << "\n";
  }
  if (stage == "report" || stage == "all") {
    std::ifstream in(std::filesystem::path(p.stage_dir("report")) / "report.txt");
    if (!o.quiet && in) std::cout << "\n" << in.rdbuf();
  }
  return 0;
}

int run_validate(const Overrides& o) {
  const auto doc = apply_overrides(config_document(o.config), o);
  const auto diags = pipeline::validate_document(doc);
  if (diags.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  print_diagnostics(diags);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerlab: concept-direction steering for PDE surrogates"};
  app.require_subcommand(1);

  Overrides o;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "config file or preset name")->required();
    cmd->add_option("--layer", o.layer, "block to extract from and steer at (index, blocks.N, or last)");
    cmd->add_option("--alpha", o.alpha, "comma-separated alpha grid, e.g. -0.5,0,0.5");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_flag("--render", o.render, "write PNG frames in the report stage");
    cmd->add_flag("--quiet,-q", o.quiet, "suppress progress output");
  };

  std::string stage;
  for (const auto& name : pipeline::stage_names()) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
    add_common(cmd);
    cmd->callback([&stage, name] { stage = name; });
  }
  auto* all = app.add_subcommand("all", "run every stage in order");
  add_common(all);
  all->callback([&stage] { stage = "all"; });

  auto* validate = app.add_subcommand("validate", "check a config without running anything");
  add_common(validate);
  validate->callback([&stage] { stage = "validate"; });

  app.add_subcommand("presets", "list built-in presets")->callback([&stage] { stage = "presets"; });

  std::uint16_t port = 7341;
  std::string direction_path, mode = "channel", align = "none";
  double alpha = 0.0;
  std::size_t sessions = 0;
  bool per_token = false;
  auto* serve = app.add_subcommand("serve-protocol", "serve the activation wire protocol on 127.0.0.1");
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--direction", direction_path, "concept direction file; omit for echo mode");
  serve->add_option("--alpha", alpha, "steering strength");
  serve->add_option("--mode", mode, "full or channel")->check(CLI::IsMember({"full", "channel"}));
  serve->add_option("--align", align, "none, pad or interpolate")->check(CLI::IsMember({"none", "pad", "interpolate"}));
  serve->add_flag("--per-token", per_token, "renormalize per token");
  serve->add_option("--sessions", sessions, "exit after this many sessions (0 = forever)");
  serve->callback([&stage] { stage = "serve-protocol"; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (stage == "validate") return run_validate(o);
    if (stage == "presets") {
      for (const auto& n : pipeline::preset_names()) std::cout << n << "\n";
      return 0;
    }
    if (stage == "serve-protocol") {
      protocol::SessionHandler::Options opts;
      if (!direction_path.empty()) opts.direction = concepts::load_direction(direction_path);
      opts.alpha = alpha;
      opts.mode = steering::mode_from_string(mode);
      opts.align = steering::align_from_string(align);
      opts.per_token = per_token;
      protocol::serve(port, opts, sessions, [&](std::uint16_t p) {
        std::cout << "listening on 127.0.0.1:" << p << (opts.direction ? "" : " (echo)") << std::endl;
      });
      return 0;
    }
    return run_stage(stage, o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
