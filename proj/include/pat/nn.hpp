#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pat/rng.hpp"
#include "pat/tensor.hpp"

namespace pat {

// Ordered, named set of trainable leaves. Layers hold handles into it, so
// optimizer updates and checkpoint loads are visible to every layer.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_full(const std::string& name, Shape shape, double value);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out] or undefined

  Linear() = default;
  Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;  // [N x in] -> [N x out]
};

struct Conv2d {
  Tensor weight;  // [out x in x k x k]
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

struct ConvTranspose2d {
  Tensor weight;  // [in x out x k x k]
  Tensor bias;
  std::size_t stride = 2;
  std::size_t pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng,
                  double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& params, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden,
      std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

// Single-head projections around attn().
struct AttentionProjections {
  Linear q, k, v, o;

  AttentionProjections() = default;
  AttentionProjections(ParamStore& params, const std::string& name, std::size_t query_dim,
                       std::size_t kv_dim, std::size_t inner_dim, Rng& rng);
};

// Pre-norm transformer layer over a token set. `pos` (same shape as x, or
// undefined) is added to the query/key inputs only.
struct TransformerLayer {
  LayerNorm ln1, ln2;
  AttentionProjections proj;
  Mlp mlp;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& params, const std::string& name, std::size_t dim,
                   std::size_t mlp_ratio, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& pos) const;
};

// query <- query + attn(LN(query) Wq, LN(kv) Wk, LN(kv) Wv) Wo
struct CrossAttention {
  LayerNorm ln_q, ln_kv;
  AttentionProjections proj;

  CrossAttention() = default;
  CrossAttention(ParamStore& params, const std::string& name, std::size_t query_dim,
                 std::size_t kv_dim, Rng& rng);
  Tensor operator()(const Tensor& query, const Tensor& kv) const;
};

// Three-layer perceptron: two layers across the token axis
// (n_in -> hidden -> n_out) and a linear channel map (d_in -> d_out).
struct TokenMixer {
  Linear token_in, token_out, channel;

  TokenMixer() = default;
  TokenMixer(ParamStore& params, const std::string& name, std::size_t n_in, std::size_t n_out,
             std::size_t d_in, std::size_t d_out, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& tokens) const;  // [n_in x d_in] -> [n_out x d_out]
};

// Fixed 2-D sinusoidal encoding, [H*W x dim], dim divisible by 4.
Tensor sinusoidal_position_2d(std::size_t height, std::size_t width, std::size_t dim);

}  // namespace pat
