#include "pat/codebook.hpp"

#include <cmath>

#include "pat/error.hpp"
#include "pat/ops.hpp"

namespace pat {

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Early: return "early";
    case Stage::Mid: return "mid";
    case Stage::Late: return "late";
    case Stage::Latent: return "latent";
  }
  return "unknown";
}

Codebook::Codebook(Tensor tokens, Stage stage) : tokens_(std::move(tokens)), stage_(stage) {
  if (tokens_.rank() != 2 || tokens_.size(0) == 0) {
    throw DimensionError("codebook tokens must be a non-empty [count x dim] tensor");
  }
  usage_.assign(tokens_.size(0), 0);
}

void Codebook::reset_usage() { usage_.assign(size(), 0); }

void Codebook::record(const std::vector<std::size_t>& indices) {
  for (auto i : indices) usage_.at(i) += 1;
}

namespace {

void check_width(const Codebook& codebook, const Tensor& features, const char* op) {
  if (features.rank() != 2 || features.size(1) != codebook.dim()) {
    throw DimensionError(std::string(op) + ": features " + shape_str(features.shape()) +
                         " do not match codebook " + shape_str(codebook.tokens().shape()));
  }
}

Quantized assign(Codebook& codebook, const Tensor& features, const Tensor& codes_all,
                 bool record_usage) {
  const Tensor sim = matmul_nt(detach(features), detach(codes_all));
  Quantized out;
  out.assignment.indices = argmax_rows(sim);
  const std::size_t c = codebook.size();
  out.assignment.similarity.reserve(out.assignment.indices.size());
  for (std::size_t r = 0; r < out.assignment.indices.size(); ++r) {
    out.assignment.similarity.push_back(sim.value(r * c + out.assignment.indices[r]));
  }
  out.features = features;
  out.codes = matmul(one_hot(out.assignment.indices, c), codes_all);
  out.z_q = straight_through(features, out.codes);
  if (record_usage && current_detach_mode() != DetachMode::Replay) {
    codebook.record(out.assignment.indices);
  }
  return out;
}

}  // namespace

Quantized vq(Codebook& codebook, const Tensor& features, bool record_usage) {
  check_width(codebook, features, "vq");
  trace_event("vq");
  return assign(codebook, features, codebook.tokens(), record_usage);
}

Quantized vmf_vq(Codebook& codebook, const Tensor& features, bool record_usage) {
  check_width(codebook, features, "vmf_vq");
  trace_event("vmf_vq");
  return assign(codebook, l2_normalize(features, 1), l2_normalize(codebook.tokens(), 1),
                record_usage);
}

Tensor vq_loss(const Tensor& features, const Tensor& codes, double beta) {
  if (features.shape() != codes.shape() || features.rank() != 2) {
    throw DimensionError("vq_loss: features " + shape_str(features.shape()) + " vs codes " +
                         shape_str(codes.shape()));
  }
  const double inv_rows = 1.0 / static_cast<double>(features.size(0));
  const Tensor codebook_term = sum(square(sub(detach(features), codes)));
  const Tensor commitment = sum(square(sub(features, detach(codes))));
  return scale(add(codebook_term, scale(commitment, beta)), inv_rows);
}

CodebookStats codebook_stats(const Codebook& codebook) {
  CodebookStats stats;
  std::uint64_t total = 0;
  for (auto u : codebook.usage()) {
    total += u;
    stats.used += u > 0 ? 1 : 0;
  }
  stats.utilization = static_cast<double>(stats.used) / static_cast<double>(codebook.size());
  if (total > 0) {
    for (auto u : codebook.usage()) {
      if (u == 0) continue;
      const double p = static_cast<double>(u) / static_cast<double>(total);
      stats.entropy -= p * std::log(p);
    }
  }
  return stats;
}

std::size_t restart_dead_codes(Codebook& codebook, const Tensor& features, Rng& rng) {
  check_width(codebook, features, "restart_dead_codes");
  auto tokens = codebook.tokens().leaf_values();
  const std::size_t d = codebook.dim();
  const std::size_t rows = features.size(0);
  std::size_t replaced = 0;
  for (std::size_t j = 0; j < codebook.size(); ++j) {
    if (codebook.usage()[j] != 0) continue;
    const std::size_t src = rng.index(rows);
    for (std::size_t c = 0; c < d; ++c) tokens[j * d + c] = features.value(src * d + c);
    ++replaced;
  }
  return replaced;
}

}  // namespace pat
