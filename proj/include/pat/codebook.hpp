#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pat/rng.hpp"
#include "pat/tensor.hpp"

namespace pat {

enum class Stage { Early = 0, Mid = 1, Late = 2, Latent = 3 };

const char* stage_name(Stage stage);

// Learnable token set [count x dim] with an assignment tally since the last
// reset. The token tensor is shared with the parameter store that owns it.
class Codebook {
 public:
  Codebook() = default;
  Codebook(Tensor tokens, Stage stage);

  const Tensor& tokens() const { return tokens_; }
  Tensor& tokens() { return tokens_; }
  std::size_t size() const { return tokens_.size(0); }
  std::size_t dim() const { return tokens_.size(1); }
  Stage stage() const { return stage_; }

  const std::vector<std::uint64_t>& usage() const { return usage_; }
  void reset_usage();
  void record(const std::vector<std::size_t>& indices);

 private:
  Tensor tokens_;
  Stage stage_ = Stage::Early;
  std::vector<std::uint64_t> usage_;
};

struct Assignment {
  std::vector<std::size_t> indices;  // one code per feature row
  std::vector<double> similarity;    // winning score per row
};

struct Quantized {
  Tensor z_q;       // [N x d]; values are codebook rows, gradient straight to `features`
  Tensor features;  // quantizer input as compared: V, or g(V) for the vMF variant
  Tensor codes;     // assigned codebook rows, differentiable w.r.t. the codebook
  Assignment assignment;
};

// Nearest code by inner product, argmax over the code axis per feature row.
Quantized vq(Codebook& codebook, const Tensor& features, bool record_usage = true);
// Same with codes and features unit-normalised before assignment.
Quantized vmf_vq(Codebook& codebook, const Tensor& features, bool record_usage = true);

// |sg(V) - e|^2 + beta |V - sg(e)|^2, summed over the feature axis and
// averaged over rows.
Tensor vq_loss(const Tensor& features, const Tensor& codes, double beta = 0.25);

struct CodebookStats {
  std::size_t used = 0;
  double utilization = 0.0;  // used / count
  double entropy = 0.0;      // natural-log entropy of the usage distribution
};

CodebookStats codebook_stats(const Codebook& codebook);

// Re-seeds codes with zero usage from randomly chosen feature rows. Returns the
// number of codes replaced.
std::size_t restart_dead_codes(Codebook& codebook, const Tensor& features, Rng& rng);

}  // namespace pat
