#include "pat/nn.hpp"

#include <cmath>

#include "pat/attention.hpp"
#include "pat/error.hpp"
#include "pat/ops.hpp"

namespace pat {

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  items_.emplace_back(name, value);
  return value;
}

Tensor ParamStore::add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal(0.0, stddev);
  return add(name, Tensor::from_vector(std::move(shape), std::move(values)));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor ParamStore::add_full(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw IntegrityError("no parameter named '" + name + "'");
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.second.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& item : items_) item.second.zero_grad();
}

Linear::Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, bool with_bias, double gain) {
  weight = params.add_normal(name + ".weight", {in, out},
                             gain / std::sqrt(static_cast<double>(in)), rng);
  if (with_bias) bias = params.add_zeros(name + ".bias", {out});
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? bias_add(y, bias, 1) : y;
}

Conv2d::Conv2d(ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride_, std::size_t pad_, Rng& rng, double gain)
    : stride(stride_), pad(pad_) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  weight = params.add_normal(name + ".weight", {out, in, kernel, kernel},
                             gain / std::sqrt(fan_in), rng);
  bias = params.add_zeros(name + ".bias", {out});
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

ConvTranspose2d::ConvTranspose2d(ParamStore& params, const std::string& name, std::size_t in,
                                 std::size_t out, std::size_t kernel, std::size_t stride_,
                                 std::size_t pad_, Rng& rng, double gain)
    : stride(stride_), pad(pad_) {
  const double fan_in =
      static_cast<double>(in * kernel * kernel) / static_cast<double>(stride_ * stride_);
  weight = params.add_normal(name + ".weight", {in, out, kernel, kernel},
                             gain / std::sqrt(fan_in), rng);
  bias = params.add_zeros(name + ".bias", {out});
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, stride, pad);
}

LayerNorm::LayerNorm(ParamStore& params, const std::string& name, std::size_t dim) {
  gamma = params.add_full(name + ".gamma", {dim}, 1.0);
  beta = params.add_zeros(name + ".beta", {dim});
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

Mlp::Mlp(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden,
         std::size_t out, Rng& rng)
    : fc1(params, name + ".fc1", in, hidden, rng), fc2(params, name + ".fc2", hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

AttentionProjections::AttentionProjections(ParamStore& params, const std::string& name,
                                           std::size_t query_dim, std::size_t kv_dim,
                                           std::size_t inner_dim, Rng& rng)
    : q(params, name + ".q", query_dim, inner_dim, rng),
      k(params, name + ".k", kv_dim, inner_dim, rng),
      v(params, name + ".v", kv_dim, inner_dim, rng),
      o(params, name + ".o", inner_dim, query_dim, rng) {}

TransformerLayer::TransformerLayer(ParamStore& params, const std::string& name, std::size_t dim,
                                   std::size_t mlp_ratio, Rng& rng)
    : ln1(params, name + ".ln1", dim),
      ln2(params, name + ".ln2", dim),
      proj(params, name + ".attn", dim, dim, dim, rng),
      mlp(params, name + ".mlp", dim, dim * mlp_ratio, dim, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x, const Tensor& pos) const {
  const Tensor h = ln1(x);
  const Tensor qk_in = pos.defined() ? add(h, pos) : h;
  const Tensor a = attn(proj.q(qk_in), proj.k(qk_in), proj.v(h));
  const Tensor x1 = add(x, proj.o(a));
  return add(x1, mlp(ln2(x1)));
}

CrossAttention::CrossAttention(ParamStore& params, const std::string& name,
                               std::size_t query_dim, std::size_t kv_dim, Rng& rng)
    : ln_q(params, name + ".ln_q", query_dim),
      ln_kv(params, name + ".ln_kv", kv_dim),
      proj(params, name + ".attn", query_dim, kv_dim, query_dim, rng) {}

Tensor CrossAttention::operator()(const Tensor& query, const Tensor& kv) const {
  const Tensor hkv = ln_kv(kv);
  const Tensor a = attn(proj.q(ln_q(query)), proj.k(hkv), proj.v(hkv));
  return add(query, proj.o(a));
}

TokenMixer::TokenMixer(ParamStore& params, const std::string& name, std::size_t n_in,
                       std::size_t n_out, std::size_t d_in, std::size_t d_out,
                       std::size_t hidden, Rng& rng)
    : token_in(params, name + ".token_in", n_in, hidden, rng),
      token_out(params, name + ".token_out", hidden, n_out, rng),
      channel(params, name + ".channel", d_in, d_out, rng) {}

Tensor TokenMixer::operator()(const Tensor& tokens) const {
  trace_event("token_mixer");
  // Mix along the token axis on the transposed set, then map channels.
  const Tensor across = token_out(gelu(token_in(transpose(tokens))));  // [d_in x n_out]
  return channel(transpose(across));
}

Tensor sinusoidal_position_2d(std::size_t height, std::size_t width, std::size_t dim) {
  if (dim % 4 != 0) {
    throw ConfigError("sinusoidal_position_2d: width " + std::to_string(dim) +
                      " is not divisible by 4");
  }
  const std::size_t quarter = dim / 4;
  std::vector<double> out(height * width * dim);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double* row = out.data() + (y * width + x) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        row[i] = std::sin(static_cast<double>(y) * freq);
        row[quarter + i] = std::cos(static_cast<double>(y) * freq);
        row[2 * quarter + i] = std::sin(static_cast<double>(x) * freq);
        row[3 * quarter + i] = std::cos(static_cast<double>(x) * freq);
      }
    }
  return Tensor::from_vector({height * width, dim}, std::move(out));
}

}  // namespace pat
