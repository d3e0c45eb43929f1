#pragma once

#include <vector>

#include "ahstgnn/tape.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

// One gated causal TCN branch: tanh(conv(H)+b1) ⊙ sigmoid(conv(H)+b2).
struct GatedTcnParams {
  Tensor w_filter;  // [k,Cin,Cout]
  Tensor b_filter;  // [Cout]
  Tensor w_gate;    // [k,Cin,Cout]
  Tensor b_gate;    // [Cout]
  int64_t dilation = 1;
};

// Temporal Convolution Module: recently/daily/weekly gated TCNs whose
// concatenated outputs pass through a one-layer ReLU MLP (3D -> D).
struct TcmParams {
  GatedTcnParams recently, daily, weekly;
  Tensor w_mlp;  // [3D, D]
  Tensor b_mlp;  // [D]
};

inline Tensor gated_tcn(Tape& tape, const Tensor& h, const GatedTcnParams& p) {
  Tensor filt = tape.add(tape.dilated_causal_conv1d(h, p.w_filter, p.dilation), p.b_filter);
  Tensor gate = tape.add(tape.dilated_causal_conv1d(h, p.w_gate, p.dilation), p.b_gate);
  return tape.mul(tape.tanh(filt), tape.sigmoid(gate));
}

struct TcmOut {
  Tensor h_t;                // fused output [B,T,N,D]
  Tensor h_r, h_d, h_w;      // per-component outputs that feed the next block
};

inline TcmOut tcm_forward(Tape& tape, const Tensor& h_r, const Tensor& h_d, const Tensor& h_w,
                          const TcmParams& p) {
  TcmOut out;
  out.h_r = gated_tcn(tape, h_r, p.recently);
  out.h_d = gated_tcn(tape, h_d, p.daily);
  out.h_w = gated_tcn(tape, h_w, p.weekly);
  Tensor cat = tape.concat({out.h_r, out.h_d, out.h_w}, -1);
  out.h_t = tape.relu(tape.add(tape.matmul(cat, p.w_mlp), p.b_mlp));
  return out;
}

}  // namespace ahst
