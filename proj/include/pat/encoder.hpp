#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "pat/config.hpp"
#include "pat/tensor.hpp"

namespace pat {

// Frozen features for one image. `latent` and `base` sit on the patch grid
// (H/8 x W/8); `stages` are the base maps upscaled by the stage schedule,
// so early/mid/late are 4x/2x/1x the late extent by default.
struct FrozenPyramid {
  Tensor latent;                // [d_enc x g x g], fused at depth 0
  std::array<Tensor, 3> base;   // early, mid, late on the patch grid
  std::array<Tensor, 3> stages; // early, mid, late at stage resolution
  bool frozen = true;

  std::size_t dim() const { return latent.size(0); }
};

// Deterministic stand-in for the pretrained vision tower: an 8x8 patch
// embedding followed by three residual tanh conv blocks, whose outputs are the
// early, mid and late features. Weights never require gradients.
class FrozenEncoder {
 public:
  FrozenEncoder(std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  // image [3 x H x W] with H, W divisible by 8.
  FrozenPyramid encode(const Tensor& image, const AblationFlags& flags) const;

  const std::map<std::string, Tensor>& weights() const { return weights_; }

 private:
  std::size_t dim_;
  std::map<std::string, Tensor> weights_;
};

FrozenPyramid encode_frozen(const Tensor& image, const ModelConfig& config);

// Upscales patch-grid maps by the stage schedule.
FrozenPyramid build_pyramid(Tensor latent, std::array<Tensor, 3> base,
                            const AblationFlags& flags);

// Builds a pyramid from externally dumped features named f_clip_latent,
// f_clip_early, f_clip_mid and f_clip_late ([d x h x w] each). Maps whose grid
// differs from the image's patch grid are resized by an integer factor.
FrozenPyramid pyramid_from_features(const std::map<std::string, Tensor>& tensors,
                                    const ModelConfig& config);

}  // namespace pat
