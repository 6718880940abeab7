#pragma once

#include <vector>

#include "pscl/gar_config.hpp"
#include "pscl/tensor.hpp"

namespace pscl {

// The unsupervised loss over B = max(0, Z). Affinity drives the off-diagonal
// of N = B^T B to zero (duplicates respond to disjoint example sets); balance
// drives the diagonal toward a constant (duplicates equally active). Both are
// built from tape primitives, so their gradients come from the chain rule.
//
// Every denominator carries +eps instead of a branch: the loss stays
// differentiable at the all-zero B a fresh network produces.

namespace detail {

// (sum_offdiag N) / ((cols-1) * trace N + eps) for N = b^T b of one block.
inline Tensor affinity_of_block(const Tensor& block, double eps) {
  const std::int64_t cols = block.dim(1);
  Tensor n = matmul(transpose(block), block);
  Tensor tr = sum_all(diag(n));
  Tensor off = sub(sum_all(n), tr);
  Tensor den = add_const(scalar_mul(tr, static_cast<double>(cols - 1)), eps);
  return div_scalars(off, den);
}

// Balance on the diagonal v of N: V = v^T v, so
// sum_offdiag V = (sum v)^2 - sum v^2 and trace V = sum v^2.
inline Tensor balance_of_block(const Tensor& block, double eps) {
  const std::int64_t cols = block.dim(1);
  Tensor v = diag(matmul(transpose(block), block));
  Tensor s1 = sum_all(v);
  Tensor s2 = sum_all(mul(v, v));
  Tensor off = sub(mul(s1, s1), s2);
  Tensor den = add_const(scalar_mul(s2, static_cast<double>(cols - 1)), eps);
  return div_scalars(off, den);
}

}  // namespace detail

inline Tensor affinity_original(const Tensor& b, double eps = 1e-8) {
  check_contract(b.rank() == 2, "affinity: expected (m x n)");
  check_contract(b.dim(1) >= 2, "affinity: needs at least 2 columns, got " + std::to_string(b.dim(1)));
  return detail::affinity_of_block(b, eps);
}

inline Tensor balance_original(const Tensor& b, double eps = 1e-8) {
  check_contract(b.rank() == 2, "balance: expected (m x n)");
  check_contract(b.dim(1) >= 2, "balance: needs at least 2 columns, got " + std::to_string(b.dim(1)));
  return detail::balance_of_block(b, eps);
}

namespace detail {

inline void check_modified_shape(const Tensor& b, const GarConfig& cfg, const char* what) {
  cfg.validate();
  if (b.rank() != 2 || b.dim(1) != cfg.np * cfg.ks)
    throw config_error(std::string(what) + ": B width " +
                       (b.rank() == 2 ? std::to_string(b.dim(1)) : shape_str(b.shape())) +
                       " != np*ks = " + std::to_string(cfg.np * cfg.ks));
  if (cfg.ks < 2)
    throw config_error(std::string(what) + ": modified terms need ks >= 2, got ks = " +
                       std::to_string(cfg.ks));
}

template <typename BlockTerm>
Tensor mean_over_parents(const Tensor& b, const GarConfig& cfg, BlockTerm term) {
  Tensor acc;
  for (std::int64_t p = 0; p < cfg.np; ++p) {
    Tensor blk = slice_cols(b, p * cfg.ks, (p + 1) * cfg.ks);
    Tensor t = term(blk, cfg.eps);
    acc = acc.defined() ? add(acc, t) : t;
  }
  return scalar_mul(acc, 1.0 / static_cast<double>(cfg.np));
}

}  // namespace detail

// Per-parent affinity: the original ratio on each intra-parent block of
// N (inter-parent entries discarded), averaged over parents.
inline Tensor affinity_modified(const Tensor& b, const GarConfig& cfg) {
  detail::check_modified_shape(b, cfg, "affinity_modified");
  return detail::mean_over_parents(b, cfg, detail::affinity_of_block);
}

inline Tensor balance_modified(const Tensor& b, const GarConfig& cfg) {
  detail::check_modified_shape(b, cfg, "balance_modified");
  return detail::mean_over_parents(b, cfg, detail::balance_of_block);
}

// All scalar terms of the unsupervised objective, on the tape.
// total = c_alpha * affinity + c_beta * (1 - balance) + c_frob * frob_sq,
// with frob_sq summed over the whole mini-batch. The batch-summed Frobenius
// term is what keeps B sparse enough for the duplicate-level graph to
// fragment; normalizing it per example weakens that pressure by the batch
// size and the fragmentation never appears.
struct GarTerms {
  Tensor affinity;      // in [0,1] when denominators dominate eps
  Tensor balance;       // in [0,1] likewise
  Tensor frobenius_sq;  // ||B||_F^2 over the batch, unnormalized
  Tensor total;
};

inline GarTerms gar_total(const Tensor& b, const GarConfig& cfg) {
  GarTerms t;
  if (cfg.np == 1) {
    t.affinity = affinity_original(b, cfg.eps);
    t.balance = balance_original(b, cfg.eps);
  } else {
    t.affinity = affinity_modified(b, cfg);
    t.balance = balance_modified(b, cfg);
  }
  t.frobenius_sq = sum_all(mul(b, b));
  Tensor one_minus_balance = add_const(scalar_mul(t.balance, -1.0), 1.0);
  t.total = add(add(scalar_mul(t.affinity, cfg.c_alpha), scalar_mul(one_minus_balance, cfg.c_beta)),
                scalar_mul(t.frobenius_sq, cfg.c_frob));
  return t;
}

// ---------------------------------------------------------------------------
// Intra-parent slice tensors for tests and diagnostics (plain values, no tape)
// ---------------------------------------------------------------------------

// n_slices[p] is the ks x ks block B_p^T B_p; v_slices[p] the outer product of
// its diagonal with itself.
struct NTensor {
  std::int64_t np = 0, ks = 0;
  std::vector<std::vector<double>> n_slices;
  std::vector<std::vector<double>> v_slices;
};

inline NTensor build_ntensor(const Tensor& b, const GarConfig& cfg) {
  detail::check_modified_shape(b, cfg, "ntensor");
  const std::int64_t m = b.dim(0), n = b.dim(1), ks = cfg.ks;
  NTensor out;
  out.np = cfg.np;
  out.ks = ks;
  for (std::int64_t p = 0; p < cfg.np; ++p) {
    std::vector<double> nk(static_cast<std::size_t>(ks * ks), 0.0);
    for (std::int64_t i = 0; i < ks; ++i)
      for (std::int64_t j = 0; j < ks; ++j) {
        double s = 0.0;
        for (std::int64_t r = 0; r < m; ++r)
          s += b.data()[r * n + p * ks + i] * b.data()[r * n + p * ks + j];
        nk[static_cast<std::size_t>(i * ks + j)] = s;
      }
    std::vector<double> vk(static_cast<std::size_t>(ks * ks), 0.0);
    for (std::int64_t i = 0; i < ks; ++i)
      for (std::int64_t j = 0; j < ks; ++j)
        vk[static_cast<std::size_t>(i * ks + j)] =
            nk[static_cast<std::size_t>(i * ks + i)] * nk[static_cast<std::size_t>(j * ks + j)];
    out.n_slices.push_back(std::move(nk));
    out.v_slices.push_back(std::move(vk));
  }
  return out;
}

}  // namespace pscl
