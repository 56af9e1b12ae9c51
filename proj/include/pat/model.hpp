#pragma once

#include <array>
#include <memory>
#include <vector>

#include "pat/config.hpp"
#include "pat/dataset.hpp"
#include "pat/decoder.hpp"
#include "pat/encoder.hpp"
#include "pat/losses.hpp"
#include "pat/pipeline.hpp"

namespace pat {

struct ForwardResult {
  PipelineOutput pipe;
  DecoderOutput seg_decoder;
  DecoderOutput rec_decoder;  // same as seg_decoder unless decoding is separate
  Tensor recon;               // [3 x H x W]
  SegOutput seg;
};

// Trainable model: pipeline, shared (or separate) decoder, reconstruction and
// mask heads, all owning parameters in one store.
class PatModel {
 public:
  explicit PatModel(const RunConfig& config);
  PatModel(const PatModel&) = delete;
  PatModel& operator=(const PatModel&) = delete;

  const RunConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  PatPipeline& pipeline() { return pipeline_; }
  MaskHead& mask_head() { return mask_head_; }
  const FrozenEncoder& encoder() const { return encoder_; }

  // Frozen features from the stub, or from the sample's feature file when
  // `use_features` is set and the sample names one.
  FrozenPyramid pyramid_for(const Sample& sample, bool use_features = false) const;

  ForwardResult forward(const Tensor& image, const FrozenPyramid& pyramid,
                        const PipelineOptions& options = {});

  // Full-resolution labels -> mask resolution (nearest, centre sample).
  std::vector<std::size_t> mask_labels(const std::vector<std::size_t>& labels) const;
  // Mask-resolution prediction upsampled to image resolution.
  std::vector<std::size_t> predict_labels(const ForwardResult& result) const;

  LossReport loss(const ForwardResult& result, const Tensor& image,
                  const std::vector<std::size_t>& labels);

  // Per-stage code indices from the pixel branch only.
  std::array<std::vector<std::size_t>, 3> tokenize(const Tensor& image,
                                                   const FrozenPyramid& pyramid);

 private:
  RunConfig config_;
  ParamStore params_;
  Rng init_rng_;
  PatPipeline pipeline_;
  std::unique_ptr<DecoderStack> seg_decoder_;
  std::unique_ptr<DecoderStack> rec_decoder_;
  ReconHead recon_head_;
  MaskHead mask_head_;
  FrozenEncoder encoder_;
  PerceptualExtractor perceptual_;
};

// Parameter names the pixel branch needs (codebooks and pixel modules).
bool is_pixel_branch_param(const std::string& name);

}  // namespace pat
