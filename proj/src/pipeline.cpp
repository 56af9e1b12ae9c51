#include "pat/pipeline.hpp"

#include <cmath>

#include "pat/attention.hpp"
#include "pat/error.hpp"
#include "pat/ops.hpp"

namespace pat {

namespace {

const char* kStage[3] = {"early", "mid", "late"};

}  // namespace

std::array<std::size_t, 4> fusion_layers(const ModelConfig& config) {
  std::array<std::size_t, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = static_cast<std::size_t>(
        std::lround(config.fusion_depths[k] * static_cast<double>(config.side_layers)));
  }
  return out;
}

PatPipeline::PatPipeline(ParamStore& params, const ModelConfig& config, Rng& rng)
    : config_(config) {
  const auto& a = config.ablation;
  const std::size_t cd = config.code_dim;
  const std::size_t ds = config.side_dim;
  const double code_std = 1.0 / std::sqrt(static_cast<double>(cd));
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage stage = static_cast<Stage>(s);
    codebooks_[s] = Codebook(params.add_normal(std::string("codebook.") + stage_name(stage),
                                               {config.codebook_sizes[s], cd}, code_std, rng),
                             stage);
  }

  if (config.pixel_dim != cd) {
    throw ConfigError("pixel_dim must equal code_dim");
  }
  stem_ = Conv2d(params, "pixel.stem", 3, config.pixel_dim, 4, 2, 1, rng);
  for (std::size_t s = 1; s < 3; ++s) {
    const std::size_t stride = a.scale_schedule[s - 1] / a.scale_schedule[s];
    down_[s - 1] = Conv2d(params, std::string("pixel.down.") + kStage[s], config.pixel_dim,
                          config.pixel_dim, 3, stride, 1, rng);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    pixel_proj_[s] = Linear(params, std::string("pixel.proj.") + kStage[s], config.encoder_dim,
                            cd, rng);
  }

  const std::size_t g = config.base_grid();
  patch_embed_ = Conv2d(params, "side.patch_embed", 3, ds, config.patch, config.patch, 0, rng);
  position_ = params.add_normal("side.position", {g * g, ds}, 0.02, rng);
  if (a.unified_tokens) {
    unified_proj_ = Linear(params, "side.unified_proj", cd, ds, rng);
  } else {
    global_tokens_ = params.add_normal("side.global_tokens", {config.num_queries, ds}, 1.0, rng);
  }
  fusion_layers_ = fusion_layers(config);
  fuse_latent_ = Linear(params, "side.fuse.latent", config.encoder_dim, ds, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string st = kStage[s];
    fuse_stage_[s] = Linear(params, "side.fuse." + st, config.encoder_dim, ds, rng);
    key_proj_[s] = Linear(params, "side.key_proj." + st, ds, cd, rng);
    if (!a.no_tokenmixer) {
      if (s > 0) {
        local_mixer_[s] = TokenMixer(params, "side.local_mixer." + st, config.codebook_sizes[s - 1],
                                     config.codebook_sizes[s], cd, cd,
                                     config.token_mixer_hidden, rng);
      }
      global_mixer_[s] = TokenMixer(params, "side.global_mixer." + st, config.codebook_sizes[s],
                                    config.num_queries, cd, ds, config.token_mixer_hidden, rng);
    }
    global_attn_[s] = CrossAttention(params, "side.global_attn." + st, ds, ds, rng);
  }
  for (std::size_t l = 0; l < config.side_layers; ++l) {
    const std::string p = "side.block" + std::to_string(l);
    blocks_.push_back(SideBlock{LayerNorm(params, p + ".ln1", ds), LayerNorm(params, p + ".ln2", ds),
                                AttentionProjections(params, p + ".attn", ds, ds, ds, rng),
                                Mlp(params, p + ".mlp", ds, ds * config.mlp_ratio, ds, rng)});
  }
  out_norm_ = LayerNorm(params, "side.out_norm", ds);
  out_proj_ = Linear(params, "side.out_proj", ds, cd, rng);
}

Quantized PatPipeline::quantize(Codebook& codebook, const Tensor& tokens, bool record_usage) {
  return config_.ablation.no_vmf ? vq(codebook, tokens, record_usage)
                                 : vmf_vq(codebook, tokens, record_usage);
}

std::array<StageState, 3> PatPipeline::pixel_branch(const Tensor& image,
                                                     const FrozenPyramid& pyramid,
                                                     bool record_usage) {
  const auto& a = config_.ablation;
  std::array<StageState, 3> stages;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t res = config_.stage_resolution(s);
    const Tensor& f = pyramid.stages[s];
    if (f.rank() != 3 || f.size(1) != res || f.size(2) != res) {
      throw PipelineError(std::string("frozen ") + kStage[s] + " map " + shape_str(f.shape()) +
                          " does not match stage resolution " + std::to_string(res));
    }
    StageState& st = stages[s];
    st.resolution = res;
    if (a.no_pixel_residual) {
      st.x = Tensor::zeros({config_.pixel_dim, res, res});
    } else if (s == 0) {
      Tensor x = stem_(add_scalar(image, -0.5));
      const std::size_t pool = x.size(1) / res;
      if (pool * res != x.size(1)) {
        throw PipelineError("pixel stem extent does not divide into the early stage");
      }
      st.x = pool > 1 ? avg_pool2d(x, pool) : x;
    } else {
      st.x = down_[s - 1](stages[s - 1].x);
    }
    if (st.x.size(1) != res) {
      throw PipelineError(std::string("pixel residual at ") + kStage[s] + " has extent " +
                          std::to_string(st.x.size(1)) + ", expected " + std::to_string(res));
    }
    const Tensor pre_tokens = add(pixel_proj_[s](map_to_tokens(f)), map_to_tokens(st.x));
    st.pre_quant = tokens_to_map(pre_tokens, res, res);
    st.quant = quantize(codebooks_[s], pre_tokens, record_usage);
    st.z_q = tokens_to_map(st.quant.z_q, res, res);
  }
  return stages;
}

Tensor PatPipeline::initial_global_tokens() const {
  if (config_.ablation.unified_tokens) {
    return unified_proj_(slice_rows(codebooks_[3].tokens(), 0, config_.num_queries));
  }
  return global_tokens_;
}

void PatPipeline::side_block(const SideBlock& block, Tensor& patch, Tensor& global) const {
  // Patch tokens attend to patch tokens only; global tokens attend to both.
  // Keeping the two streams in separate tensors keeps the patch stream
  // independent of the global tokens down to the last bit.
  const Tensor hp = block.ln1(patch);
  const Tensor hg = block.ln1(global);
  const Tensor kp = block.proj.k(hp);
  const Tensor vp = block.proj.v(hp);
  const Tensor ap = attn(block.proj.q(hp), kp, vp);
  const Tensor ag = attn(block.proj.q(hg), concat_rows({block.proj.k(hg), kp}),
                         concat_rows({block.proj.v(hg), vp}));
  const Tensor p1 = add(patch, block.proj.o(ap));
  const Tensor g1 = add(global, block.proj.o(ag));
  patch = add(p1, block.mlp(block.ln2(p1)));
  global = add(g1, block.mlp(block.ln2(g1)));
}

void PatPipeline::semantic_stage(std::size_t s, const FrozenPyramid& pyramid, Tensor& patch,
                                 Tensor& global, std::array<StageState, 3>& stages) const {
  const auto& a = config_.ablation;
  StageState& st = stages[s];
  st.z = patch;
  Tensor centroids = codebooks_[s].tokens();
  if (s > 0 && !a.no_tokenmixer) {
    centroids = add(centroids, local_mixer_[s](stages[s - 1].e_local));
  }
  const Tensor keys = key_proj_[s](patch);
  st.e_local = a.no_vmf ? attn(centroids, keys, keys)
                        : hs_attn(centroids, keys, keys, config_.kappa);
  const Tensor query = a.no_tokenmixer ? global : add(global, global_mixer_[s](st.e_local));
  global = global_attn_[s](query, patch);
  patch = add(patch, fuse_stage_[s](map_to_tokens(pyramid.base[s])));
}

PipelineOutput PatPipeline::run(const Tensor& image, const FrozenPyramid& pyramid,
                                const PipelineOptions& options) {
  const std::size_t g = config_.base_grid();
  if (image.rank() != 3 || image.size(1) != config_.image_size ||
      image.size(2) != config_.image_size) {
    throw PipelineError("image " + shape_str(image.shape()) + " does not match image_size " +
                        std::to_string(config_.image_size));
  }
  if (pyramid.latent.rank() != 3 || pyramid.latent.size(1) != g ||
      pyramid.latent.size(0) != config_.encoder_dim) {
    throw PipelineError("frozen latent grid " + shape_str(pyramid.latent.shape()) +
                        " does not match the configuration");
  }
  PipelineOutput out;
  out.stages = pixel_branch(image, pyramid, options.record_usage);

  Tensor patch = add(map_to_tokens(patch_embed_(add_scalar(image, -0.5))), position_);
  Tensor global = options.global_override.defined() ? options.global_override
                                                    : initial_global_tokens();
  if (global.rank() != 2 || global.size(0) != config_.num_queries ||
      global.size(1) != config_.side_dim) {
    throw PipelineError("global tokens must be [num_queries x side_dim], got " +
                        shape_str(global.shape()));
  }
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (l == fusion_layers_[0]) {
      patch = add(patch, fuse_latent_(map_to_tokens(pyramid.latent)));
    }
    for (std::size_t s = 0; s < 3; ++s) {
      if (l == fusion_layers_[s + 1]) semantic_stage(s, pyramid, patch, global, out.stages);
    }
    side_block(blocks_[l], patch, global);
  }
  out.side_tokens = patch;
  out.e_global = global;
  out.latent_pre = out_proj_(out_norm_(patch));
  out.latent = quantize(codebooks_[3], out.latent_pre, options.record_usage);
  out.z_latent = tokens_to_map(out.latent.z_q, g, g);
  return out;
}

}  // namespace pat
