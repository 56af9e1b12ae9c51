#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pat/manifest.hpp"
#include "pat/tensor.hpp"

namespace pat {

// 8-bit raster, interleaved channels (1 for PGM, 3 for PPM).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

void write_netpbm(const std::string& path, const Raster& raster);
Raster read_netpbm(const std::string& path);

struct SyntheticSample {
  Raster image;  // RGB
  Raster label;  // one class id per pixel
};

// Coloured rectangles, circles and triangles on a faint textured background.
// Class 0 is background; class k >= 1 owns a fixed hue band. Deterministic
// per (seed, index).
SyntheticSample render_sample(std::size_t size, std::size_t num_classes, std::uint64_t seed,
                              std::size_t index);

std::vector<std::string> synthetic_class_names(std::size_t num_classes);

// Writes images/, labels/ and manifest.tsv under `directory`.
Manifest gen_dataset(const std::string& directory, std::size_t count, std::size_t size,
                     std::size_t num_classes, std::uint64_t seed);

struct Sample {
  std::string id;
  Tensor image;                     // [3 x H x W] in [0, 1]
  std::vector<std::size_t> labels;  // H*W, row-major
  std::string feature_path;         // optional external features
};

Sample load_sample(const Manifest& manifest, std::size_t index);
Tensor raster_to_tensor(const Raster& raster);
Raster tensor_to_raster(const Tensor& image);  // clamps to [0, 1]

}  // namespace pat
