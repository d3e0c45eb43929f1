#pragma once

#include <cmath>

#include "ahstgnn/tape.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

// Spatial-Temporal Adaptive Module: per-node two-way attention between the
// temporal branch H_T and the spatial branch H_S, queried by the shared node
// embedding.
struct StamParams {
  Tensor w_q;   // [d, D]
  Tensor w_kt;  // [D, D]
  Tensor w_ks;  // [D, D]
};

struct StamAttention {
  Tensor att_t;  // [B,T,N,1], in (0,1)
  Tensor att_s;  // [B,T,N,1], att_t + att_s == 1
};

// Scores are per (batch, time, node): the inner product of the node's query
// Q_i = (E_G W_Q)_i with its own key at that time step, scaled by 1/sqrt(D).
// The two-way softmax over {T,S} reduces to a sigmoid of the score gap.
inline Tensor stam_forward(Tape& tape, const Tensor& h_t, const Tensor& h_s, const Tensor& e_g,
                           const StamParams& p, StamAttention* attention_out = nullptr) {
  if (h_t.shape() != h_s.shape()) {
    throw ShapeError("stam inputs differ: " + shape_str(h_t.shape()) + " vs " + shape_str(h_s.shape()));
  }
  const int64_t n = h_t.dim(-2);
  if (e_g.ndim() != 2 || e_g.dim(0) != n) {
    throw ShapeError("node embedding " + shape_str(e_g.shape()) + " does not match input " +
                     shape_str(h_t.shape()));
  }
  const int64_t d_hidden = h_t.dim(-1);
  const Tensor inv_sqrt_d = Tensor::scalar(1.0 / std::sqrt(static_cast<double>(d_hidden)));

  Tensor q = tape.matmul(e_g, p.w_q);        // [N,D], broadcast over batch and time
  Tensor k_t = tape.matmul(h_t, p.w_kt);     // [B,T,N,D]
  Tensor k_s = tape.matmul(h_s, p.w_ks);
  Tensor score_t = tape.mul(tape.reduce_sum(tape.mul(k_t, q), {-1}, true), inv_sqrt_d);  // [B,T,N,1]
  Tensor score_s = tape.mul(tape.reduce_sum(tape.mul(k_s, q), {-1}, true), inv_sqrt_d);

  Tensor att_t = tape.sigmoid(tape.sub(score_t, score_s));
  Tensor att_s = tape.sub(Tensor::scalar(1.0), att_t);
  if (attention_out) {
    attention_out->att_t = att_t;
    attention_out->att_s = att_s;
  }
  return tape.add(tape.mul(att_s, h_s), tape.mul(att_t, h_t));
}

}  // namespace ahst
