#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace pat {

// Toggles mirroring the ablation rows; defaults are the baseline model.
struct AblationFlags {
  bool no_vmf = false;
  std::array<std::size_t, 3> scale_schedule{4, 2, 1};  // early, mid, late
  bool no_spatial_align = false;
  bool no_tokenmixer = false;
  bool no_pixel_residual = false;
  bool unified_tokens = false;
  bool separate_decoding = false;
  std::array<bool, 3> fpn_stages{true, true, true};  // early, mid, late
};

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t encoder_dim = 32;
  std::uint64_t encoder_seed = 20240611;
  std::size_t side_dim = 64;
  std::size_t side_layers = 4;
  std::array<double, 4> fusion_depths{0.0, 0.25, 0.5, 0.75};
  std::size_t code_dim = 32;
  std::array<std::size_t, 4> codebook_sizes{32, 16, 8, 64};  // early, mid, late, latent
  std::size_t pixel_dim = 32;
  std::size_t num_queries = 32;
  std::size_t token_mixer_hidden = 64;
  std::size_t decoder_dim = 32;
  std::size_t decoder_extra_layers = 2;
  std::size_t mlp_ratio = 2;
  std::size_t mask_dim = 32;
  std::size_t recon_hidden = 16;
  std::size_t num_classes = 6;
  std::size_t text_dim = 0;  // 0: linear classifier; else width of imported text embeddings
  double text_scale = 10.0;
  double kappa = 20.0;
  double vq_beta = 0.25;
  double crf_sigma = 0.15;
  bool restart_dead_codes = false;
  AblationFlags ablation;

  std::size_t base_grid() const { return image_size / patch; }
  std::size_t stage_resolution(std::size_t stage) const {
    return base_grid() * ablation.scale_schedule[stage];
  }
};

struct LossConfig {
  double vq_weight = 0.1;
  double spatial_weight = 0.1;
  double recon_weight = 1.0;
  double seg_weight = 1.0;
  double lambda_ce = 2.0;
  double lambda_bce = 5.0;
  double lambda_dice = 5.0;
  double no_object_weight = 0.1;
  double bce_clamp = 30.0;
};

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 1;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation
  std::size_t eval_samples = 100;
  std::size_t repeats = 1;
  std::size_t smoothing_window = 100;
};

struct RunConfig {
  std::string preset = "toy";
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;
};

RunConfig toy_preset();
RunConfig paper_preset();
RunConfig preset_by_name(const std::string& name);

// Throws ConfigError on an inconsistent configuration.
void validate(const RunConfig& config);

std::string to_json_string(const RunConfig& config, int indent = 2);
// Keys absent from the JSON keep the values of the named preset ("preset"
// key, default toy). Unknown keys are rejected.
RunConfig parse_config(const std::string& json_text);
// Sets one schema key given as a dotted path, e.g. "model.kappa" or
// "ablation.no_vmf". Values are parsed as JSON, falling back to a string.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// Turns on one named ablation row ("no_vmf", "scale_444", "scale_111",
// "no_spatial_align", "no_tokenmixer", "no_pixel_residual", "unified_tokens",
// "separate_decoding", "fpn_mid_late", "fpn_late", "fpn_none").
void apply_ablation(RunConfig& config, const std::string& name);
std::string ablation_summary(const AblationFlags& flags);

}  // namespace pat
