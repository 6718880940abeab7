#pragma once

#include <cstdint>

#include "pscl/gar_config.hpp"
#include "pscl/layers.hpp"
#include "pscl/tensor.hpp"

namespace pscl {

// Activation bundle of the augmented softmax head for one batch:
//   F  (m x d)    latent, input of the final dense layer
//   Z  (m x n)    pre-softmax activities, n = np * ks
//   B  (m x n)    max(0, Z), the regularizer's view
//   S  (m x n)    softmax(Z) per row
//   Y  (m x np)   parent predictions, S pooled over each parent's duplicates
struct AcolActivations {
  Tensor F, Z, B, S, Y;
};

// Column j of the augmented softmax belongs to parent floor(j / ks):
// parent p owns the contiguous block [p*ks, (p+1)*ks).
inline std::int64_t column_parent(std::int64_t j, const GarConfig& cfg) {
  check_contract(j >= 0 && j < cfg.np * cfg.ks,
                 "column_parent: column " + std::to_string(j) + " out of range for np*ks = " +
                     std::to_string(cfg.np * cfg.ks));
  return j / cfg.ks;
}

// Constant 0/1 pooling matrix (n x np): row j has a single 1 in column
// column_parent(j). Never a tape leaf, so the optimizer cannot touch it.
inline Tensor pooling_matrix(const GarConfig& cfg) {
  const std::int64_t n = cfg.np * cfg.ks;
  Tensor w = Tensor::zeros({n, cfg.np});
  for (std::int64_t j = 0; j < n; ++j) w.at(j, j / cfg.ks) = 1.0;
  return w;
}

// Builds the bundle from an already-computed Z. Pooling is a linear map with
// constant weights: gradients flow through Y back into Z.
inline AcolActivations acol_from_z(const Tensor& f, const Tensor& z, const GarConfig& cfg) {
  if (z.dim(1) != cfg.np * cfg.ks)
    throw config_error("acol: Z width " + std::to_string(z.dim(1)) + " != np*ks = " +
                       std::to_string(cfg.np * cfg.ks));
  AcolActivations a;
  a.F = f;
  a.Z = z;
  a.B = relu(z);
  a.S = softmax_rows(z);
  a.Y = matmul(a.S, pooling_matrix(cfg));
  return a;
}

// Full head: Z = f * W + b, then the bundle.
inline AcolActivations acol_forward(const Tensor& f, const DenseLayer& head, const GarConfig& cfg) {
  if (head.weights.dim(1) != cfg.np * cfg.ks)
    throw config_error("acol: head width " + std::to_string(head.weights.dim(1)) +
                       " != np*ks = " + std::to_string(cfg.np * cfg.ks));
  Tensor z = add_rowvec(matmul(f, head.weights), head.bias);
  return acol_from_z(f, z, cfg);
}

}  // namespace pscl
