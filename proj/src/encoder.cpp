#include "pat/encoder.hpp"

#include <cmath>

#include "pat/error.hpp"
#include "pat/ops.hpp"
#include "pat/rng.hpp"

namespace pat {

namespace {

Tensor random_weight(Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal(0.0, stddev);
  return Tensor::from_vector(std::move(shape), std::move(values));
}

Tensor resize_to_grid(const Tensor& map, std::size_t grid, const std::string& name) {
  if (map.rank() != 3 || map.size(1) != map.size(2)) {
    throw DataError("feature '" + name + "' must be a square [d x h x w] map, got " +
                    shape_str(map.shape()));
  }
  const std::size_t h = map.size(1);
  if (h == grid) return map;
  if (grid % h == 0) return bilinear_upsample(map, grid / h);
  if (h % grid == 0) return avg_pool2d(map, h / grid);
  throw DataError("feature '" + name + "' grid " + std::to_string(h) +
                  " is not an integer multiple or divisor of " + std::to_string(grid));
}

}  // namespace

FrozenEncoder::FrozenEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  Rng rng(seed);
  weights_["patch.weight"] = random_weight({dim, 3, 8, 8}, 1.0 / std::sqrt(3.0 * 64.0), rng);
  weights_["patch.bias"] = random_weight({dim}, 0.1, rng);
  for (int b = 0; b < 3; ++b) {
    const std::string p = "block" + std::to_string(b);
    weights_[p + ".weight"] =
        random_weight({dim, dim, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(dim)), rng);
    weights_[p + ".bias"] = random_weight({dim}, 0.1, rng);
  }
}

FrozenPyramid FrozenEncoder::encode(const Tensor& image, const AblationFlags& flags) const {
  if (image.rank() != 3 || image.size(0) != 3) {
    throw DimensionError("encoder expects a [3 x H x W] image, got " + shape_str(image.shape()));
  }
  if (image.size(1) % 8 != 0 || image.size(2) % 8 != 0) {
    throw ConfigError("image extent " + shape_str(image.shape()) + " is not divisible by 8");
  }
  NoGradGuard no_grad;
  const Tensor centred = add_scalar(image, -0.5);
  Tensor h = conv2d(centred, weights_.at("patch.weight"), weights_.at("patch.bias"), 8, 0);
  const Tensor latent = h;
  std::array<Tensor, 3> base;
  for (int b = 0; b < 3; ++b) {
    const std::string p = "block" + std::to_string(b);
    h = add(h, tanh(conv2d(h, weights_.at(p + ".weight"), weights_.at(p + ".bias"), 1, 1)));
    base[b] = h;
  }
  return build_pyramid(latent, base, flags);
}

FrozenPyramid encode_frozen(const Tensor& image, const ModelConfig& config) {
  return FrozenEncoder(config.encoder_dim, config.encoder_seed).encode(image, config.ablation);
}

FrozenPyramid build_pyramid(Tensor latent, std::array<Tensor, 3> base,
                            const AblationFlags& flags) {
  NoGradGuard no_grad;
  FrozenPyramid out;
  out.latent = std::move(latent);
  for (std::size_t s = 0; s < 3; ++s) {
    if (base[s].shape() != out.latent.shape()) {
      throw DimensionError("pyramid base map " + shape_str(base[s].shape()) +
                           " does not match latent grid " + shape_str(out.latent.shape()));
    }
    out.base[s] = base[s];
    out.stages[s] = bilinear_upsample(base[s], flags.scale_schedule[s]);
  }
  return out;
}

FrozenPyramid pyramid_from_features(const std::map<std::string, Tensor>& tensors,
                                    const ModelConfig& config) {
  static const char* names[4] = {"f_clip_latent", "f_clip_early", "f_clip_mid", "f_clip_late"};
  std::array<Tensor, 4> maps;
  NoGradGuard no_grad;
  for (int i = 0; i < 4; ++i) {
    auto it = tensors.find(names[i]);
    if (it == tensors.end()) throw DataError(std::string("feature file lacks '") + names[i] + "'");
    if (it->second.rank() != 3 || it->second.size(0) != config.encoder_dim) {
      throw DataError(std::string("feature '") + names[i] + "' has shape " +
                      shape_str(it->second.shape()) + ", expected channel count " +
                      std::to_string(config.encoder_dim));
    }
    maps[i] = resize_to_grid(it->second, config.base_grid(), names[i]);
  }
  return build_pyramid(maps[0], {maps[1], maps[2], maps[3]}, config.ablation);
}

}  // namespace pat
