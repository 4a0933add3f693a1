#pragma once

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "steerlab/core/tensor.hpp"

namespace steerlab::pde::detail {

using Complex = std::complex<double>;
using Field = std::vector<double>;     // row-major [H, W]
using Spectrum = std::vector<Complex>; // row-major [H, W]

/// Periodic-box spectral operators for an H x W grid of side L.
class Spectral {
 public:
  Spectral(Index height, Index width, double length);

  Index height() const { return h_; }
  Index width() const { return w_; }
  std::size_t size() const { return static_cast<std::size_t>(h_ * w_); }

  Spectrum forward(const Field& f);
  Field inverse(const Spectrum& s);

  /// i*kx*s and i*ky*s with Nyquist modes zeroed.
  Spectrum dx(const Spectrum& s) const;
  Spectrum dy(const Spectrum& s) const;

  const std::vector<double>& k2() const { return k2_; }
  const std::vector<double>& kx() const { return kx_; }
  const std::vector<double>& ky() const { return ky_; }
  /// 2/3-rule mask, 1 for retained modes.
  const std::vector<double>& dealias() const { return mask_; }

 private:
  void transform(Spectrum& data, bool inverse);

  Index h_, w_;
  std::vector<double> kx_, ky_, k2_, mask_;
  Eigen::FFT<double> fft_;
  std::vector<Complex> line_in_, line_out_;
};

}  // namespace steerlab::pde::detail
