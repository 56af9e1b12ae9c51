#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pat/tensor.hpp"

// FPT1 tensor container, little-endian throughout:
//   "FPT1" | version u16 (=1) | count u32 |
//   count x { name_len u16 | name | dtype u8 | rank u8 | dims u64[rank] | payload }
// dtype 0 = float32, 1 = float64, 2 = int32. Values are held as doubles in
// memory; float32 payloads widen exactly on read.
namespace pat {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I32 = 2 };

std::size_t dtype_size(DType dtype);

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  Tensor value;
};

using TensorList = std::vector<NamedTensor>;

std::vector<std::uint8_t> write_fpt1(const TensorList& tensors);
TensorList read_fpt1(std::span<const std::uint8_t> bytes);

void save_fpt1(const std::string& path, const TensorList& tensors);
TensorList load_fpt1(const std::string& path);

std::map<std::string, Tensor> tensor_map(const TensorList& tensors);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pat
