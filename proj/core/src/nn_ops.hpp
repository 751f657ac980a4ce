#pragma once

// Kernels shared by the inference forward and the trainer.

#include "dyvec/tensor.hpp"

#include <cmath>

namespace dyvec::nn {

inline constexpr float kLayerNormEps = 1e-5f;

// out = (x - mean) * rstd * gamma + beta, row-wise. Optionally keeps xhat and
// rstd for the backward pass.
template <typename In, typename Out, typename Gamma, typename Beta>
void layer_norm(const In& x, const Gamma& gamma, const Beta& beta, Out& out,
                Matrix* xhat = nullptr, Vector* rstd = nullptr) {
  const Eigen::Index rows = x.rows();
  const auto g = gamma.row(0).array();
  const auto b = beta.row(0).array();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.row(r).array();
    const float mean = row.mean();
    const float var = (row - mean).square().mean();
    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
    if (xhat) {
      xhat->row(r).array() = (row - mean) * inv;
      out.row(r).array() = xhat->row(r).array() * g + b;
    } else {
      out.row(r).array() = (row - mean) * inv * g + b;
    }
    if (rstd) (*rstd)(r) = inv;
  }
}

// Accumulates dx += d layer_norm / dx; dgamma, dbeta += parameter grads.
template <typename DGamma, typename DBeta, typename Gamma>
void layer_norm_backward(const Matrix& dout, const Matrix& xhat, const Vector& rstd,
                         const Gamma& gamma, Matrix& dx, DGamma& dgamma, DBeta& dbeta) {
  dgamma.row(0) += (dout.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dout.colwise().sum();
  const auto g = gamma.row(0).array();
  Eigen::ArrayXf dn(dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    dn = dout.row(r).array().transpose() * g.transpose();
    const auto xh = xhat.row(r).array().transpose();
    const float mean_dn = dn.mean();
    const float mean_dn_xhat = (dn * xh).mean();
    dx.row(r).array() += (rstd(r) * (dn - mean_dn - xh * mean_dn_xhat)).transpose();
  }
}

inline constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
inline constexpr float kGeluK = 0.044715f;

// tanh-approximated GELU, vectorised through Eigen's packet tanh.
template <typename In>
Matrix gelu(const In& u) {
  const auto x = u.array();
  return (0.5f * x * (1.0f + (kGeluC * (x + kGeluK * x.cube())).tanh())).matrix();
}

template <typename In>
Matrix gelu_grad(const In& u) {
  const auto x = u.array();
  const Eigen::ArrayXXf t = (kGeluC * (x + kGeluK * x.cube())).tanh();
  const auto dinner = kGeluC * (1.0f + 3.0f * kGeluK * x.square());
  return (0.5f * (1.0f + t) + 0.5f * x * (1.0f - t.square()) * dinner).matrix();
}

// In-place causal softmax of a square score block (row t attends to <= t).
template <typename Scores>
void causal_softmax(Scores& s) {
  const Eigen::Index n = s.rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    auto live = s.row(r).head(r + 1);
    const float mx = live.maxCoeff();
    live = (live.array() - mx).exp().matrix();
    live /= live.sum();
    s.row(r).tail(n - r - 1).setZero();
  }
}

}  // namespace dyvec::nn
