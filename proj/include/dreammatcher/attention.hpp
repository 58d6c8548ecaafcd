#pragma once

// Self-attention split into its structure path (softmax(QK^T / sqrt(d)))
// and appearance path (values), plus appearance matching self-attention,
// which swaps in warped reference values while keeping the target's
// structure path untouched.

#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

#include <Eigen/Dense>

#include "dreammatcher/eigen_views.hpp"
#include "dreammatcher/tensors.hpp"
#include "dreammatcher/warp.hpp"

namespace dm {

/// Row-stochastic token-to-token weights, one (H*W) x (H*W) matrix per head.
/// Tokens are pixels in row-major scan order.
struct AttentionWeights {
  std::vector<RowMatrix> heads;

  friend bool operator==(const AttentionWeights& a, const AttentionWeights& b) {
    if (a.heads.size() != b.heads.size()) return false;
    for (std::size_t h = 0; h < a.heads.size(); ++h) {
      if (a.heads[h].rows() != b.heads[h].rows() || a.heads[h].cols() != b.heads[h].cols()) return false;
      if (std::memcmp(a.heads[h].data(), b.heads[h].data(),
                      static_cast<std::size_t>(a.heads[h].size()) * sizeof(double)) != 0)
        return false;
    }
    return true;
  }
};

namespace detail {

inline void check_heads(const TensorGrid& g, std::size_t num_heads, std::string_view where) {
  require(num_heads >= 1 && g.channels() % num_heads == 0, ErrorKind::shape,
          std::string(where) + ": channels " + std::to_string(g.channels()) + " not divisible by " +
              std::to_string(num_heads) + " heads");
}

}  // namespace detail

inline AttentionWeights attention_weights(const TensorGrid& q, const TensorGrid& k, std::size_t num_heads) {
  require_same_shape(q, k, "attention_weights");
  detail::check_heads(q, num_heads, "attention_weights");
  const auto n = static_cast<Eigen::Index>(q.pixels());
  const auto head_dim = static_cast<Eigen::Index>(q.channels() / num_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const auto qm = detail::tokens(q);
  const auto km = detail::tokens(k);

  AttentionWeights weights;
  weights.heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto col = static_cast<Eigen::Index>(h) * head_dim;
    RowMatrix logits = (qm.middleCols(col, head_dim) * km.middleCols(col, head_dim).transpose()) * scale;
    require(logits.allFinite(), ErrorKind::validation, "attention_weights: non-finite logits");
    for (Eigen::Index r = 0; r < n; ++r) {
      auto row = logits.row(r);
      const double peak = row.maxCoeff();
      row = (row.array() - peak).exp();
      row /= row.sum();
    }
    weights.heads.push_back(std::move(logits));
  }
  return weights;
}

/// Appearance path: per head, out = W_h * V_h.
inline TensorGrid apply_attention(const AttentionWeights& weights, const TensorGrid& v) {
  const std::size_t num_heads = weights.heads.size();
  detail::check_heads(v, num_heads, "apply_attention");
  const auto n = static_cast<Eigen::Index>(v.pixels());
  for (const auto& w : weights.heads) {
    require(w.rows() == n && w.cols() == n, ErrorKind::shape, "apply_attention: weight/value token mismatch");
  }
  const auto head_dim = static_cast<Eigen::Index>(v.channels() / num_heads);
  const auto vm = detail::tokens(v);
  TensorGrid out(v.height(), v.width(), v.channels());
  Eigen::Map<RowMatrix> om(out.data().data(), n, static_cast<Eigen::Index>(v.channels()));
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto col = static_cast<Eigen::Index>(h) * head_dim;
    om.middleCols(col, head_dim).noalias() = weights.heads[h] * vm.middleCols(col, head_dim);
  }
  return out;
}

inline TensorGrid self_attention(const TensorGrid& q, const TensorGrid& k, const TensorGrid& v,
                                 std::size_t num_heads) {
  require_same_shape(q, v, "self_attention");
  require_finite(v, "self_attention");
  return apply_attention(attention_weights(q, k, num_heads), v);
}

struct AttentionInputs {
  TensorGrid q_tgt;
  TensorGrid k_tgt;
  TensorGrid v_tgt;
  TensorGrid v_ref;
  std::size_t num_heads = 1;
};

/// V^W = warp(v_ref, F) * M' + v_tgt * (1 - M'). One flow and mask serve all heads.
inline TensorGrid appearance_values(const TensorGrid& v_ref, const TensorGrid& v_tgt, const FlowField& flow_x_to_y,
                                    const MaskGrid& m_prime) {
  require_same_shape(v_ref, v_tgt, "appearance_values");
  require(flow_x_to_y.height() == v_tgt.height() && flow_x_to_y.width() == v_tgt.width(), ErrorKind::shape,
          "ama: flow resolution does not match attention grid");
  require(m_prime.height() == v_tgt.height() && m_prime.width() == v_tgt.width(), ErrorKind::shape,
          "ama: mask resolution does not match attention grid");
  return hadamard_blend(warp(v_ref, flow_x_to_y), v_tgt, m_prime);
}

struct AmaResult {
  TensorGrid output;
  AttentionWeights weights;  // the target structure path, as used
  TensorGrid values;         // V^W
};

inline AmaResult ama_diagnostic(const AttentionInputs& in, const FlowField& flow_x_to_y, const MaskGrid& m_prime) {
  require_same_shape(in.q_tgt, in.k_tgt, "ama");
  require_same_shape(in.q_tgt, in.v_tgt, "ama");
  require_same_shape(in.q_tgt, in.v_ref, "ama");
  AmaResult r;
  r.values = appearance_values(in.v_ref, in.v_tgt, flow_x_to_y, m_prime);
  r.weights = attention_weights(in.q_tgt, in.k_tgt, in.num_heads);
  r.output = apply_attention(r.weights, r.values);
  return r;
}

inline TensorGrid ama(const AttentionInputs& in, const FlowField& flow_x_to_y, const MaskGrid& m_prime) {
  return ama_diagnostic(in, flow_x_to_y, m_prime).output;
}

}  // namespace dm
