#include "steerlab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <png.h>

#include "steerlab/core/error.hpp"

namespace steerlab::metrics {

namespace {

Eigen::ArrayXXd frame_of(const Array3f& field, Index t) {
  const Index H = field.dimension(1), W = field.dimension(2);
  Eigen::ArrayXXd out(H, W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) out(y, x) = field(t, y, x);
  return out;
}

// Periodic central differences along x (columns) and y (rows).
Eigen::ArrayXXd ddx(const Eigen::ArrayXXd& f, double dx) {
  const Index H = f.rows(), W = f.cols();
  Eigen::ArrayXXd out(H, W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) out(y, x) = (f(y, (x + 1) % W) - f(y, (x + W - 1) % W)) / (2 * dx);
  return out;
}

Eigen::ArrayXXd ddy(const Eigen::ArrayXXd& f, double dx) {
  const Index H = f.rows(), W = f.cols();
  Eigen::ArrayXXd out(H, W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) out(y, x) = (f((y + 1) % H, x) - f((y + H - 1) % H, x)) / (2 * dx);
  return out;
}

template <typename Fn>
MetricSeries per_frame(const pde::SimulationTrajectory& traj, std::string name, std::string units, Fn fn) {
  MetricSeries s{std::move(name), {}, std::move(units)};
  s.values.reserve(static_cast<std::size_t>(traj.frames()));
  for (Index t = 0; t < traj.frames(); ++t) s.values.push_back(fn(t));
  return s;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

struct Rgb {
  unsigned char r, g, b;
};

Rgb palette_color(const std::string& palette, double u) {
  u = std::clamp(u, 0.0, 1.0);
  auto lerp = [u](const std::vector<std::array<double, 3>>& stops) {
    const double pos = u * static_cast<double>(stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), stops.size() - 2);
    const double w = pos - static_cast<double>(i);
    Rgb c{};
    unsigned char* out[3] = {&c.r, &c.g, &c.b};
    for (int k = 0; k < 3; ++k) {
      *out[k] = static_cast<unsigned char>(std::lround(255.0 * ((1 - w) * stops[i][k] + w * stops[i + 1][k])));
    }
    return c;
  };
  if (palette == "gray") return lerp({{0, 0, 0}, {1, 1, 1}});
  if (palette == "coolwarm") {
    return lerp({{0.23, 0.30, 0.75}, {0.55, 0.69, 1.0}, {0.87, 0.87, 0.87}, {0.96, 0.6, 0.48}, {0.71, 0.02, 0.15}});
  }
  if (palette == "viridis") {
    return lerp({{0.267, 0.005, 0.329}, {0.229, 0.322, 0.546}, {0.128, 0.567, 0.551}, {0.369, 0.789, 0.383},
                 {0.993, 0.906, 0.144}});
  }
  fail(ErrorCode::InvalidArgument, "unknown palette '" + palette + "' (gray, viridis, coolwarm)");
}

void write_png(const std::string& path, Index width, Index height, const std::vector<unsigned char>& rgb) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(ErrorCode::IoError, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorCode::IoError, "png encoding failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) fail(ErrorCode::IoError, "close failed for " + path);
}

}  // namespace

Eigen::ArrayXXd vorticity_field(const Eigen::ArrayXXd& vx, const Eigen::ArrayXXd& vy, double dx) {
  if (vx.rows() != vy.rows() || vx.cols() != vy.cols()) fail(ErrorCode::ShapeMismatch, "velocity components differ");
  if (!(dx > 0)) fail(ErrorCode::InvalidArgument, "dx must be positive");
  return ddx(vy, dx) - ddy(vx, dx);
}

double grid_spacing(const pde::SimulationTrajectory& traj) {
  if (traj.params.system == pde::System::ShearFlow) {
    return traj.params.domain_length / static_cast<double>(traj.grid.width);
  }
  return 1.0;
}

MetricSeries mean_abs_vorticity(const pde::SimulationTrajectory& traj) {
  const auto& vx = traj.field("velocity_x");
  const auto& vy = traj.field("velocity_y");
  const double dx = grid_spacing(traj);
  return per_frame(traj, "mean_abs_vorticity", "1/time",
                   [&](Index t) { return vorticity_field(frame_of(vx, t), frame_of(vy, t), dx).abs().mean(); });
}

MetricSeries enstrophy(const pde::SimulationTrajectory& traj) {
  const auto& vx = traj.field("velocity_x");
  const auto& vy = traj.field("velocity_y");
  const double dx = grid_spacing(traj);
  return per_frame(traj, "enstrophy", "1/time^2",
                   [&](Index t) { return vorticity_field(frame_of(vx, t), frame_of(vy, t), dx).square().mean(); });
}

MetricSeries interface_sharpness(const pde::SimulationTrajectory& traj, const std::string& field) {
  const auto& f = traj.field(field);
  const double dx = grid_spacing(traj);
  return per_frame(traj, "interface_sharpness", field + " units/length", [&](Index t) {
    const auto a = frame_of(f, t);
    return (ddx(a, dx).square() + ddy(a, dx).square()).sqrt().mean();
  });
}

MetricSeries vorticity_decay(const pde::SimulationTrajectory& traj) {
  MetricSeries s = mean_abs_vorticity(traj);
  const double first = s.values.empty() ? 0.0 : s.values.front();
  for (auto& v : s.values) v = first - v;
  s.name = "vorticity_decay";
  return s;
}

std::vector<std::string> metric_names() {
  return {"mean_abs_vorticity", "enstrophy", "interface_sharpness", "vorticity_decay"};
}

MetricSeries compute_metric(const pde::SimulationTrajectory& traj, const std::string& metric) {
  if (metric == "mean_abs_vorticity") return mean_abs_vorticity(traj);
  if (metric == "enstrophy") return enstrophy(traj);
  if (metric == "interface_sharpness") return interface_sharpness(traj);
  if (metric == "vorticity_decay") return vorticity_decay(traj);
  fail(ErrorCode::InvalidArgument, "unknown metric '" + metric + "'");
}

std::optional<Index> time_to_threshold(const MetricSeries& series, double threshold, Crossing crossing) {
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    const double v = series.values[i];
    if (crossing == Crossing::Rising ? v >= threshold : v <= threshold) return static_cast<Index>(i);
  }
  return std::nullopt;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return 0.0;
  const auto rx = ranks(x), ry = ranks(y);
  const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Index>(rx.size()));
  const Eigen::Map<const Eigen::VectorXd> b(ry.data(), static_cast<Index>(ry.size()));
  const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  const double denom = ca.norm() * cb.norm();
  return denom > 0 ? ca.dot(cb) / denom : 0.0;
}

double final_frame_distance(const steering::RolloutResult& a, const steering::RolloutResult& b) {
  if (shape_of(a.frames) != shape_of(b.frames) || a.length() == 0) {
    fail(ErrorCode::InconsistentRollouts, "rollouts differ in shape or are empty");
  }
  const Index frame = a.frames.size() / a.length();
  const Eigen::Map<const VectorX<float>> fa(a.frames.data() + (a.length() - 1) * frame, frame);
  const Eigen::Map<const VectorX<float>> fb(b.frames.data() + (b.length() - 1) * frame, frame);
  const double base = fb.cast<double>().norm();
  return (fa.cast<double>() - fb.cast<double>()).norm() / (base > 0 ? base : 1.0);
}

SteeringReport steering_report(const std::map<double, steering::RolloutResult>& rollouts,
                               const pde::SimulationTrajectory& init, const std::string& concept_name,
                               const std::string& metric) {
  if (!rollouts.contains(0.0)) fail(ErrorCode::InconsistentRollouts, "alpha grid must contain 0");
  const auto& base = rollouts.at(0.0);
  SteeringReport r;
  r.concept_name = concept_name;
  r.metric = metric;
  r.baseline_hash = steering::frames_hash(base.frames);
  r.no_effect = true;
  for (const auto& [alpha, ro] : rollouts) {
    if (shape_of(ro.frames) != shape_of(base.frames) || ro.field_names != base.field_names) {
      fail(ErrorCode::InconsistentRollouts, "rollout for alpha " + std::to_string(alpha) + " has shape " +
                                                shape_string(shape_of(ro.frames)) + ", baseline " +
                                                shape_string(shape_of(base.frames)));
    }
    r.alpha_grid.push_back(alpha);
    r.no_effect = r.no_effect && bitwise_equal(ro.frames, base.frames);
    r.metric_by_alpha[alpha] = ro.length() > 0 ? compute_metric(steering::to_trajectory(ro, init), metric)
                                               : MetricSeries{metric, {}, ""};
  }
  std::vector<double> finals;
  for (double a : r.alpha_grid) finals.push_back(r.final_at(a));
  r.monotone = std::is_sorted(finals.begin(), finals.end());
  const auto [lo, hi] = std::minmax_element(finals.begin(), finals.end());
  r.spread = *hi - *lo;
  r.spearman = spearman(r.alpha_grid, finals);

  const double b = r.final_at(0.0);
  auto side = [&](bool positive) {
    bool all_above = true, all_below = true, any = false;
    for (double a : r.alpha_grid) {
      if (a == 0.0 || (a > 0) != positive) continue;
      any = true;
      all_above = all_above && r.final_at(a) > b;
      all_below = all_below && r.final_at(a) < b;
    }
    if (!any) return '?';
    return all_above ? '>' : all_below ? '<' : '~';
  };
  const char pos = side(true), neg = side(false);
  // neg is compared as base ? neg, so flip its relation.
  const char neg_rel = neg == '>' ? '<' : neg == '<' ? '>' : neg;
  r.sign_pattern = std::string("pos") + (pos == '>' ? '>' : pos == '<' ? '<' : '~') + "base" + neg_rel + "neg";
  r.sign_pattern_holds = pos == '>' && neg_rel == '>';
  return r;
}

std::string SteeringReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "concept: " << concept_name << "\n";
  os << "metric: " << metric << "\n";
  os << "baseline_hash: " << baseline_hash << "\n";
  os << "alpha_grid:";
  for (double a : alpha_grid) os << ' ' << a;
  os << "\n";
  os << "sign_pattern: " << sign_pattern << "\n";
  os << "sign_pattern_holds: " << (sign_pattern_holds ? "true" : "false") << "\n";
  os << "monotone_final: " << (monotone ? "true" : "false") << "\n";
  os << "no_effect: " << (no_effect ? "true" : "false") << "\n";
  os << "spearman: " << spearman << "\n";
  os << "spread: " << spread << "\n";
  os << "\n[final]\nalpha\tvalue\trelative_to_base\n";
  const double b = final_at(0.0);
  for (double a : alpha_grid) {
    os << a << '\t' << final_at(a) << '\t' << (b != 0 ? (final_at(a) - b) / std::abs(b) : 0.0) << "\n";
  }
  os << "\n[series]\nframe";
  for (double a : alpha_grid) os << "\talpha=" << a;
  os << "\n";
  const std::size_t n = metric_by_alpha.begin()->second.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    os << i;
    for (double a : alpha_grid) os << '\t' << metric_by_alpha.at(a).values[i];
    os << "\n";
  }
  return os.str();
}

std::pair<double, double> field_range(const pde::SimulationTrajectory& traj, const std::string& field) {
  const auto v = flat(traj.field(field));
  return {v.minCoeff(), v.maxCoeff()};
}

std::vector<std::string> render_frames(const pde::SimulationTrajectory& traj, const std::string& field,
                                       const std::string& palette, const std::string& out_dir,
                                       std::optional<std::pair<double, double>> range) {
  const auto& f = traj.field(field);
  const auto [lo, hi] = range.value_or(field_range(traj, field));
  palette_color(palette, 0.0);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + out_dir + ": " + ec.message());
  const Index T = f.dimension(0), H = f.dimension(1), W = f.dimension(2);
  const int digits = std::max(4, static_cast<int>(std::to_string(T).size()));
  std::vector<std::string> paths;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(H * W * 3));
  for (Index t = 0; t < T; ++t) {
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double u = hi > lo ? (f(t, y, x) - lo) / (hi - lo) : 0.5;
        const Rgb c = palette_color(palette, u);
        // Row 0 of the image is the top, so flip y to keep the origin bottom-left.
        const auto o = static_cast<std::size_t>(((H - 1 - y) * W + x) * 3);
        rgb[o] = c.r;
        rgb[o + 1] = c.g;
        rgb[o + 2] = c.b;
      }
    std::ostringstream name;
    name << field << '_' << std::setw(digits) << std::setfill('0') << t << ".png";
    const auto path = (std::filesystem::path(out_dir) / name.str()).string();
    write_png(path, W, H, rgb);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace steerlab::metrics
