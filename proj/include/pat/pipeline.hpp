#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <vector>

#include "pat/codebook.hpp"
#include "pat/config.hpp"
#include "pat/encoder.hpp"
#include "pat/nn.hpp"

namespace pat {

// Values flowing out of one pyramid stage.
struct StageState {
  Tensor x;          // pixel residual [pixel_dim x H_s x W_s]
  Tensor pre_quant;  // proj(f) + x, [code_dim x H_s x W_s]
  Quantized quant;   // token-level quantization of pre_quant
  Tensor z_q;        // quantized map [code_dim x H_s x W_s]
  Tensor e_local;    // updated local tokens [C_s x code_dim]
  Tensor z;          // side patch tokens the stage read [N_patch x side_dim]
  std::size_t resolution = 0;
};

struct PipelineOutput {
  std::array<StageState, 3> stages;
  Tensor latent_pre;  // side output projected to code_dim, [N_patch x code_dim]
  Quantized latent;
  Tensor z_latent;    // [code_dim x g x g]
  Tensor e_global;    // [N_q x side_dim] after the last fusion
  Tensor side_tokens; // final side patch tokens
};

struct PipelineOptions {
  bool record_usage = true;
  // Replaces the learned initial global tokens when defined.
  Tensor global_override;
};

// Frozen pyramid -> quantized pyramid, side adapter and global tokens.
class PatPipeline {
 public:
  PatPipeline(ParamStore& params, const ModelConfig& config, Rng& rng);

  PipelineOutput run(const Tensor& image, const FrozenPyramid& pyramid,
                     const PipelineOptions& options = {});

  // Pixel branch only: residual chain and stage quantization. Needs neither
  // the side adapter nor the global tokens.
  std::array<StageState, 3> pixel_branch(const Tensor& image, const FrozenPyramid& pyramid,
                                         bool record_usage = true);

  // Initial global tokens as the side adapter sees them.
  Tensor initial_global_tokens() const;

  std::array<Codebook, 4>& codebooks() { return codebooks_; }
  const ModelConfig& config() const { return config_; }

 private:
  struct SideBlock {
    LayerNorm ln1, ln2;
    AttentionProjections proj;
    Mlp mlp;
  };

  Quantized quantize(Codebook& codebook, const Tensor& tokens, bool record_usage);
  void side_block(const SideBlock& block, Tensor& patch, Tensor& global) const;
  void semantic_stage(std::size_t s, const FrozenPyramid& pyramid, Tensor& patch,
                      Tensor& global, std::array<StageState, 3>& stages) const;

  ModelConfig config_;
  std::array<Codebook, 4> codebooks_;

  Conv2d stem_;
  std::array<Conv2d, 2> down_;   // into mid, into late
  std::array<Linear, 3> pixel_proj_;

  Conv2d patch_embed_;
  Tensor position_;
  Tensor global_tokens_;
  Linear unified_proj_;
  std::vector<SideBlock> blocks_;
  std::array<std::size_t, 4> fusion_layers_{};
  Linear fuse_latent_;
  std::array<Linear, 3> fuse_stage_;
  std::array<Linear, 3> key_proj_;
  std::array<TokenMixer, 3> local_mixer_;   // index 0 unused
  std::array<TokenMixer, 3> global_mixer_;
  std::array<CrossAttention, 3> global_attn_;
  LayerNorm out_norm_;
  Linear out_proj_;
};

// Layer indices at which the side adapter fuses frozen features.
std::array<std::size_t, 4> fusion_layers(const ModelConfig& config);

}  // namespace pat
