#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "pat/config.hpp"
#include "pat/nn.hpp"

namespace pat {

// Spatially adaptive normalization: (1 + gamma(cond)) * norm(x) + beta(cond)
// with 3x3 condition convs. Both convs start at zero, making the block the
// plain normalization until trained.
struct Spade {
  Conv2d gamma, beta;

  Spade() = default;
  Spade(ParamStore& params, const std::string& name, std::size_t cond_dim, std::size_t dim,
        Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& cond) const;
};

Tensor spade(const Tensor& x, const Tensor& cond, const Conv2d& gamma, const Conv2d& beta);

struct DecoderOutput {
  Tensor features;  // [decoder_dim x H_e x W_e]
  Tensor e_global;  // [N_q x side_dim]
};

// Top-down decoder: late -> mid -> early, each step upsampling, applying SPADE
// with that stage's quantized map, one transformer layer, and a global-token
// refinement against the decoded features; then plain transformer layers.
class DecoderStack {
 public:
  DecoderStack(ParamStore& params, const std::string& name, const ModelConfig& config, Rng& rng);

  // stage_maps are early, mid, late; maps of stages disabled in fpn_stages
  // may be left undefined.
  DecoderOutput operator()(const Tensor& z_latent, const std::array<Tensor, 3>& stage_maps,
                           const Tensor& e_global) const;

  std::size_t output_resolution() const;

 private:
  ModelConfig config_;
  Linear in_proj_;
  std::array<Spade, 3> spade_;
  std::array<TransformerLayer, 3> layers_;
  std::array<CrossAttention, 3> refine_;
  std::vector<TransformerLayer> extra_;
};

// Transposed-conv upsampling head back to image resolution.
class ReconHead {
 public:
  ReconHead(ParamStore& params, const ModelConfig& config, std::size_t in_resolution, Rng& rng);
  Tensor operator()(const Tensor& features) const;  // -> [3 x H x W]

 private:
  std::vector<ConvTranspose2d> ups_;
  Conv2d out_;
};

struct SegOutput {
  Tensor mask_logits;   // [N_q x H_e*W_e]
  Tensor class_logits;  // [N_q x (K + 1)], last column is "no object"
  std::size_t height = 0;
  std::size_t width = 0;
};

// Per-query masks from the product of projected queries and projected pixel
// features, plus per-query class scores. With text embeddings loaded the
// classifier scores cosine similarity against them instead of a linear map.
class MaskHead {
 public:
  MaskHead(ParamStore& params, const ModelConfig& config, Rng& rng);
  SegOutput operator()(const Tensor& features, const Tensor& e_global) const;

  // text [K x text_dim], unit rows. Requires config.text_dim == text_dim.
  void set_text_embeddings(Tensor text);
  bool uses_text() const { return text_.defined(); }

 private:
  ModelConfig config_;
  Mlp proj_q_;
  Linear proj_z_;
  Linear classifier_;
  Linear text_proj_;
  Tensor void_embedding_;
  Tensor text_;
};

// Per-pixel label: argmax_k sum_q softmax(class_q)[k] * sigmoid(mask_q).
std::vector<std::size_t> semantic_labels(const SegOutput& seg, std::size_t num_classes);

}  // namespace pat
