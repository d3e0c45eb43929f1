#pragma once

#include <cmath>
#include <vector>

#include "ahstgnn/tape.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

// ---- SAGL: graph convolution over the learned adaptive adjacency ----

struct SaglParams {
  std::vector<Tensor> theta;  // one [D,D] kernel per propagation hop
};

// A_adp = row-softmax(ReLU(E_G E_G^T)): row-stochastic, strictly positive,
// differentiable w.r.t. the node embedding.
inline Tensor adaptive_adjacency(Tape& tape, const Tensor& e_g) {
  Tensor gram = tape.matmul(e_g, tape.permute(e_g, {1, 0}));
  return tape.softmax(tape.relu(gram), -1);
}

// kernel_size propagation hops H <- (I_N + A) H Theta_i, ReLU between hops
// and none after the last. Node mixing acts independently per time step.
inline Tensor sagl_forward(Tape& tape, const Tensor& h_t, const Tensor& a_adp, const SaglParams& p) {
  const int64_t n = a_adp.dim(0);
  if (a_adp.ndim() != 2 || a_adp.dim(1) != n || h_t.dim(-2) != n) {
    throw ShapeError("sagl adjacency " + shape_str(a_adp.shape()) + " does not match input " +
                     shape_str(h_t.shape()));
  }
  std::vector<double> eye(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) eye[static_cast<size_t>(i * n + i)] = 1.0;
  Tensor prop = tape.add(a_adp, Tensor::from({n, n}, std::move(eye)));
  Tensor h = h_t;
  for (size_t i = 0; i < p.theta.size(); ++i) {
    h = tape.matmul(tape.matmul(prop, h), p.theta[i]);
    if (i + 1 < p.theta.size()) h = tape.relu(h);
  }
  return h;
}

// ---- DGL: multi-head graph attention over the distance graph ----

struct GatHead {
  Tensor w;      // [D,D]
  Tensor a_src;  // [D], first half of the attention vector a
  Tensor a_dst;  // [D], second half
};

struct GatParams {
  std::vector<GatHead> heads;
};

enum class DglAct { sigmoid, relu };

// Per time step and head: e_ij = LeakyReLU(a^T [W h_i || W h_j]) for
// j in N_i, masked softmax over the neighbor set, then
// out_i = act((1/K) sum_k sum_j a_ij W^k h_j). Non-neighbors get exactly
// zero attention. `mask` is the 0/1 neighbor matrix of the prior graph.
// When `attention_out` is non-null the per-head attention tensors
// [B,T,N,N] are appended to it (used by structural tests).
inline Tensor dgl_forward(Tape& tape, const Tensor& h_t, const Tensor& mask, const GatParams& p,
                          DglAct act = DglAct::sigmoid, std::vector<Tensor>* attention_out = nullptr) {
  if (p.heads.empty()) throw ContractError("dgl needs at least one head");
  const int64_t n = h_t.dim(-2);
  if (mask.ndim() != 2 || mask.dim(0) != n || mask.dim(1) != n) {
    throw ShapeError("dgl mask " + shape_str(mask.shape()) + " does not match input " +
                     shape_str(h_t.shape()));
  }
  Shape src_shape = h_t.shape();
  src_shape[src_shape.size() - 1] = 1;  // scores per source node: [B,T,N,1]
  Shape dst_shape = h_t.shape();
  dst_shape[dst_shape.size() - 2] = 1;
  dst_shape[dst_shape.size() - 1] = n;  // scores per destination node: [B,T,1,N]

  Tensor sum;
  for (const GatHead& head : p.heads) {
    Tensor wh = tape.matmul(h_t, head.w);  // [B,T,N,D]
    Tensor s_src = tape.reshape(tape.reduce_sum(tape.mul(wh, head.a_src), {-1}), src_shape);
    Tensor s_dst = tape.reshape(tape.reduce_sum(tape.mul(wh, head.a_dst), {-1}), dst_shape);
    Tensor scores = tape.leaky_relu(tape.add(s_src, s_dst), 0.2);  // [B,T,N,N]
    Tensor att = tape.masked_softmax(scores, mask);
    if (attention_out) attention_out->push_back(att);
    Tensor agg = tape.matmul(att, wh);  // [B,T,N,D]
    sum = sum.defined() ? tape.add(sum, agg) : agg;
  }
  Tensor scaled = tape.mul(sum, Tensor::scalar(1.0 / static_cast<double>(p.heads.size())));
  return act == DglAct::sigmoid ? tape.sigmoid(scaled) : tape.relu(scaled);
}

// ---- Spatial Gate Fusion ----

struct GateFusionParams {
  Tensor w_sg;  // [D,D]
  Tensor w_dg;  // [D,D]
  Tensor b;     // [D]
};

// gate = sigmoid(H_SG W_g1 + H_DG W_g2 + b); output is the elementwise
// convex combination gate*H_SG + (1-gate)*H_DG, so every element lies
// between its two inputs.
inline Tensor gate_fusion(Tape& tape, const Tensor& h_sg, const Tensor& h_dg,
                          const GateFusionParams& p) {
  if (h_sg.shape() != h_dg.shape()) {
    throw ShapeError("gate_fusion inputs differ: " + shape_str(h_sg.shape()) + " vs " +
                     shape_str(h_dg.shape()));
  }
  Tensor gate = tape.sigmoid(
      tape.add(tape.add(tape.matmul(h_sg, p.w_sg), tape.matmul(h_dg, p.w_dg)), p.b));
  Tensor one_minus = tape.sub(Tensor::scalar(1.0), gate);
  return tape.add(tape.mul(gate, h_sg), tape.mul(one_minus, h_dg));
}

}  // namespace ahst
