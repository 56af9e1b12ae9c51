#pragma once

#include "pat/tensor.hpp"

namespace pat {

// softmax(Q K^T / sqrt(d)) V.
// Q [Nq x d], K [Nk x d], V [Nk x dv] -> [Nq x dv].
Tensor attn(const Tensor& q, const Tensor& k, const Tensor& v);

// One von Mises-Fisher mean-shift step: each centroid row of Q moves to the
// unit-normalised kernel-weighted mean of V, with kernel
// exp(kappa * cos(q_i, k_j)).
// Q [C x d], K [N x d], V [N x dv] -> [C x dv], unit rows.
Tensor hs_attn(const Tensor& q, const Tensor& k, const Tensor& v, double kappa);

}  // namespace pat
