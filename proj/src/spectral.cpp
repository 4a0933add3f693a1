#include "spectral.hpp"

#include <cmath>
#include <numbers>

namespace steerlab::pde::detail {

namespace {
// Signed mode index for position i of an n-point FFT.
Index mode(Index i, Index n) { return i <= n / 2 ? i : i - n; }
}  // namespace

Spectral::Spectral(Index height, Index width, double length) : h_(height), w_(width) {
  const double base = 2.0 * std::numbers::pi / length;
  kx_.resize(size());
  ky_.resize(size());
  k2_.resize(size());
  mask_.resize(size());
  for (Index y = 0; y < h_; ++y) {
    for (Index x = 0; x < w_; ++x) {
      const Index my = mode(y, h_), mx = mode(x, w_);
      const std::size_t i = static_cast<std::size_t>(y * w_ + x);
      const double fy = base * static_cast<double>(my), fx = base * static_cast<double>(mx);
      k2_[i] = fx * fx + fy * fy;
      kx_[i] = (2 * mx == w_) ? 0.0 : fx;
      ky_[i] = (2 * my == h_) ? 0.0 : fy;
      const bool keep = 3 * std::abs(mx) < w_ && 3 * std::abs(my) < h_;
      mask_[i] = keep ? 1.0 : 0.0;
    }
  }
}

void Spectral::transform(Spectrum& data, bool inverse) {
  line_in_.resize(static_cast<std::size_t>(std::max(h_, w_)));
  for (Index y = 0; y < h_; ++y) {
    line_in_.assign(data.begin() + y * w_, data.begin() + (y + 1) * w_);
    if (inverse) fft_.inv(line_out_, line_in_); else fft_.fwd(line_out_, line_in_);
    std::copy(line_out_.begin(), line_out_.end(), data.begin() + y * w_);
  }
  line_in_.resize(static_cast<std::size_t>(h_));
  for (Index x = 0; x < w_; ++x) {
    for (Index y = 0; y < h_; ++y) line_in_[static_cast<std::size_t>(y)] = data[static_cast<std::size_t>(y * w_ + x)];
    if (inverse) fft_.inv(line_out_, line_in_); else fft_.fwd(line_out_, line_in_);
    for (Index y = 0; y < h_; ++y) data[static_cast<std::size_t>(y * w_ + x)] = line_out_[static_cast<std::size_t>(y)];
  }
}

Spectrum Spectral::forward(const Field& f) {
  Spectrum s(f.begin(), f.end());
  transform(s, false);
  return s;
}

Field Spectral::inverse(const Spectrum& s) {
  Spectrum tmp = s;
  transform(tmp, true);
  Field out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = tmp[i].real();
  return out;
}

Spectrum Spectral::dx(const Spectrum& s) const {
  Spectrum out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = Complex(0.0, kx_[i]) * s[i];
  return out;
}

Spectrum Spectral::dy(const Spectrum& s) const {
  Spectrum out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = Complex(0.0, ky_[i]) * s[i];
  return out;
}

}  // namespace steerlab::pde::detail
