#pragma once

#include <array>
#include <cstring>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <unsupported/Eigen/CXX11/Tensor>

namespace steerlab {

using Index = Eigen::Index;

/// Dense C-order (row-major) tensors. Layouts follow the file formats:
/// fields are [T, H, W], activations are [T, C, W, H].
template <typename Scalar, int Rank>
using TensorR = Eigen::Tensor<Scalar, Rank, Eigen::RowMajor>;

template <typename Scalar>
using Tensor4 = TensorR<Scalar, 4>;
template <typename Scalar>
using Tensor3 = TensorR<Scalar, 3>;

using Array3f = Tensor3<float>;
using Array4f = Tensor4<float>;

using Shape4 = std::array<Index, 4>;
using Shape3 = std::array<Index, 3>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Derived>
auto shape_of(const Eigen::TensorBase<Derived, Eigen::ReadOnlyAccessors>& t) {
  const auto& d = static_cast<const Derived&>(t).dimensions();
  std::array<Index, Derived::NumDimensions> s{};
  for (int i = 0; i < Derived::NumDimensions; ++i) s[i] = d[i];
  return s;
}

template <std::size_t N>
std::string shape_string(const std::array<Index, N>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < N; ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Flat Eigen views over tensor storage so that norms, dots and axpy-style
/// updates can be written as ordinary Eigen expressions.
template <typename Scalar, int Rank>
Eigen::Map<VectorX<Scalar>> flat(TensorR<Scalar, Rank>& t) {
  return {t.data(), t.size()};
}

template <typename Scalar, int Rank>
Eigen::Map<const VectorX<Scalar>> flat(const TensorR<Scalar, Rank>& t) {
  return {t.data(), t.size()};
}

template <typename Scalar, int Rank>
bool bitwise_equal(const TensorR<Scalar, Rank>& a, const TensorR<Scalar, Rank>& b) {
  if (a.dimensions() != b.dimensions()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename Scalar, int Rank>
bool all_finite(const TensorR<Scalar, Rank>& t) {
  return flat(t).allFinite();
}

template <typename To, typename From, int Rank>
TensorR<To, Rank> cast_tensor(const TensorR<From, Rank>& t) {
  return t.template cast<To>();
}

}  // namespace steerlab
