#include "pat/attention.hpp"

#include <cmath>

#include "pat/error.hpp"
#include "pat/ops.hpp"

namespace pat {

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* op) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError(std::string(op) + ": Q, K, V must be 2-D");
  }
  if (q.size(1) != k.size(1)) {
    throw DimensionError(std::string(op) + ": query width " + shape_str(q.shape()) +
                         " differs from key width " + shape_str(k.shape()));
  }
  if (k.size(0) != v.size(0)) {
    throw DimensionError(std::string(op) + ": " + shape_str(k.shape()) + " keys but " +
                         shape_str(v.shape()) + " values");
  }
}

}  // namespace

Tensor attn(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_qkv(q, k, v, "attn");
  trace_event("attn");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.size(1)));
  return scaled_attention(q, k, v, inv_sqrt_d);
}

Tensor hs_attn(const Tensor& q, const Tensor& k, const Tensor& v, double kappa) {
  check_qkv(q, k, v, "hs_attn");
  if (!(kappa >= 0.0)) {
    throw ConfigError("hs_attn: concentration must be non-negative");
  }
  trace_event("hs_attn");
  return l2_normalize(scaled_attention(l2_normalize(q, 1), l2_normalize(k, 1), v, kappa), 1);
}

}  // namespace pat
