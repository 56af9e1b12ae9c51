#include "pat/decoder.hpp"

#include <cmath>

#include "pat/attention.hpp"
#include "pat/error.hpp"
#include "pat/ops.hpp"

namespace pat {

namespace {

const char* kStage[3] = {"early", "mid", "late"};

}  // namespace

Spade::Spade(ParamStore& params, const std::string& name, std::size_t cond_dim, std::size_t dim,
             Rng& rng)
    : gamma(params, name + ".gamma", cond_dim, dim, 3, 1, 0, rng, 0.0),
      beta(params, name + ".beta", cond_dim, dim, 3, 1, 0, rng, 0.0) {}

Tensor Spade::operator()(const Tensor& x, const Tensor& cond) const {
  return spade(x, cond, gamma, beta);
}

Tensor spade(const Tensor& x, const Tensor& cond, const Conv2d& gamma, const Conv2d& beta) {
  if (x.rank() != 3 || cond.rank() != 3 || x.size(1) != cond.size(1) ||
      x.size(2) != cond.size(2)) {
    throw DimensionError("spade: feature map " + shape_str(x.shape()) + " and condition " +
                         shape_str(cond.shape()) + " differ in extent");
  }
  // Edge-replicated borders keep a constant condition constant after the convs.
  const Tensor padded = replicate_pad(cond, gamma.weight.size(2) / 2);
  const Tensor g = conv2d(padded, gamma.weight, gamma.bias, 1, 0);
  const Tensor b = conv2d(padded, beta.weight, beta.bias, 1, 0);
  return add(mul(add_scalar(g, 1.0), instance_norm(x)), b);
}

DecoderStack::DecoderStack(ParamStore& params, const std::string& name,
                           const ModelConfig& config, Rng& rng)
    : config_(config) {
  const std::size_t dd = config.decoder_dim;
  in_proj_ = Linear(params, name + ".in_proj", config.code_dim, dd, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string st = kStage[s];
    spade_[s] = Spade(params, name + ".spade." + st, config.code_dim, dd, rng);
    layers_[s] = TransformerLayer(params, name + ".layer." + st, dd, config.mlp_ratio, rng);
    refine_[s] = CrossAttention(params, name + ".refine." + st, config.side_dim, dd, rng);
  }
  for (std::size_t i = 0; i < config.decoder_extra_layers; ++i) {
    extra_.emplace_back(params, name + ".extra" + std::to_string(i), dd, config.mlp_ratio, rng);
  }
}

std::size_t DecoderStack::output_resolution() const { return config_.stage_resolution(0); }

DecoderOutput DecoderStack::operator()(const Tensor& z_latent,
                                       const std::array<Tensor, 3>& stage_maps,
                                       const Tensor& e_global) const {
  const auto& a = config_.ablation;
  std::size_t res = config_.base_grid();
  if (z_latent.rank() != 3 || z_latent.size(1) != res || z_latent.size(2) != res) {
    throw PipelineError("decoder latent " + shape_str(z_latent.shape()) +
                        " does not sit on the patch grid");
  }
  Tensor h = in_proj_(map_to_tokens(z_latent));
  Tensor global = e_global;
  std::size_t prev_scale = 1;
  for (int s = 2; s >= 0; --s) {
    const std::size_t factor = a.scale_schedule[s] / prev_scale;
    Tensor map = tokens_to_map(h, res, res);
    if (factor > 1) map = bilinear_upsample(map, factor);
    res *= factor;
    if (a.fpn_stages[s]) {
      const Tensor& cond = stage_maps[s];
      if (!cond.defined()) {
        throw PipelineError(std::string("decoder is missing the ") + kStage[s] +
                            " stage condition");
      }
      if (cond.rank() != 3 || cond.size(1) != res || cond.size(2) != res) {
        throw PipelineError(std::string("decoder ") + kStage[s] + " condition " +
                            shape_str(cond.shape()) + " does not match extent " +
                            std::to_string(res));
      }
      map = spade_[s](map, cond);
    }
    // The position code enters the token stream, so a spatially constant
    // input still yields distinct, non-degenerate tokens.
    const Tensor pos = sinusoidal_position_2d(res, res, config_.decoder_dim);
    h = layers_[s](add(map_to_tokens(map), pos), Tensor());
    global = refine_[s](global, h);
    prev_scale = a.scale_schedule[s];
  }
  if (!extra_.empty()) {
    const Tensor pos = sinusoidal_position_2d(res, res, config_.decoder_dim);
    for (const auto& layer : extra_) h = layer(h, pos);
  }
  return {tokens_to_map(h, res, res), global};
}

ReconHead::ReconHead(ParamStore& params, const ModelConfig& config, std::size_t in_resolution,
                     Rng& rng) {
  std::size_t res = in_resolution;
  std::size_t channels = config.decoder_dim;
  std::size_t step = 0;
  while (res < config.image_size) {
    ups_.emplace_back(params, "recon.up" + std::to_string(step++), channels, config.recon_hidden,
                      4, 2, 1, rng);
    channels = config.recon_hidden;
    res *= 2;
  }
  if (res != config.image_size) {
    throw ConfigError("decoder resolution " + std::to_string(in_resolution) +
                      " does not reach image_size by doubling");
  }
  out_ = Conv2d(params, "recon.out", channels, 3, 3, 1, 1, rng, 0.02);
  for (auto& b : out_.bias.leaf_values()) b = 0.5;
}

Tensor ReconHead::operator()(const Tensor& features) const {
  Tensor h = features;
  for (const auto& up : ups_) h = gelu(up(h));
  return out_(h);
}

MaskHead::MaskHead(ParamStore& params, const ModelConfig& config, Rng& rng) : config_(config) {
  proj_q_ = Mlp(params, "mask.proj_q", config.side_dim, config.side_dim, config.mask_dim, rng);
  proj_z_ = Linear(params, "mask.proj_z", config.decoder_dim, config.mask_dim, rng);
  if (config.text_dim == 0) {
    classifier_ = Linear(params, "mask.classifier", config.mask_dim, config.num_classes + 1, rng);
  } else {
    text_proj_ = Linear(params, "mask.text_proj", config.mask_dim, config.text_dim, rng);
    void_embedding_ = params.add_normal("mask.void_embedding", {1, config.text_dim},
                                        1.0 / std::sqrt(static_cast<double>(config.text_dim)),
                                        rng);
  }
}

void MaskHead::set_text_embeddings(Tensor text) {
  if (config_.text_dim == 0) {
    throw ConfigError("model was built without text_dim; cannot load text embeddings");
  }
  if (text.rank() != 2 || text.size(0) != config_.num_classes ||
      text.size(1) != config_.text_dim) {
    throw DataError("text embeddings " + shape_str(text.shape()) + " do not match [" +
                    std::to_string(config_.num_classes) + " x " +
                    std::to_string(config_.text_dim) + "]");
  }
  text_ = std::move(text);
}

SegOutput MaskHead::operator()(const Tensor& features, const Tensor& e_global) const {
  SegOutput out;
  out.height = features.size(1);
  out.width = features.size(2);
  const Tensor q = proj_q_(e_global);
  const Tensor z = proj_z_(map_to_tokens(features));
  out.mask_logits =
      scale(matmul_nt(q, z), 1.0 / std::sqrt(static_cast<double>(config_.mask_dim)));
  if (config_.text_dim == 0) {
    out.class_logits = classifier_(q);
  } else {
    if (!text_.defined()) throw PipelineError("text classifier has no embeddings loaded");
    const Tensor keys = l2_normalize(concat_rows({text_, void_embedding_}), 1);
    out.class_logits =
        scale(matmul_nt(l2_normalize(text_proj_(q), 1), keys), config_.text_scale);
  }
  return out;
}

std::vector<std::size_t> semantic_labels(const SegOutput& seg, std::size_t num_classes) {
  const std::size_t nq = seg.mask_logits.size(0);
  const std::size_t hw = seg.mask_logits.size(1);
  const std::size_t kc = seg.class_logits.size(1);
  if (seg.class_logits.size(0) != nq || kc < num_classes) {
    throw DimensionError("semantic_labels: class logits " + shape_str(seg.class_logits.shape()) +
                         " do not fit " + std::to_string(num_classes) + " classes");
  }
  const auto logits = seg.class_logits.values();
  const auto masks = seg.mask_logits.values();
  std::vector<double> probs(nq * num_classes);
  for (std::size_t q = 0; q < nq; ++q) {
    double mx = logits[q * kc];
    for (std::size_t k = 1; k < kc; ++k) mx = std::max(mx, logits[q * kc + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < kc; ++k) z += std::exp(logits[q * kc + k] - mx);
    for (std::size_t k = 0; k < num_classes; ++k) {
      probs[q * num_classes + k] = std::exp(logits[q * kc + k] - mx) / z;
    }
  }
  std::vector<double> score(hw * num_classes, 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double m = masks[q * hw + p];
      const double sig = m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
      for (std::size_t k = 0; k < num_classes; ++k) {
        score[p * num_classes + k] += probs[q * num_classes + k] * sig;
      }
    }
  }
  std::vector<std::size_t> labels(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 1; k < num_classes; ++k) {
      if (score[p * num_classes + k] > score[p * num_classes + labels[p]]) labels[p] = k;
    }
  }
  return labels;
}

}  // namespace pat
