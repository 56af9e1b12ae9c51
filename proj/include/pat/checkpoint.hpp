#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "pat/fpt1.hpp"
#include "pat/model.hpp"
#include "pat/optim.hpp"

// Checkpoints are FPT1 files with reserved name prefixes:
//   param/<name>    float64 parameter values
//   adam_m/<name>   float64 first moments   (optional)
//   adam_v/<name>   float64 second moments  (optional)
//   meta/step       optimizer step count
//   meta/param_count number of parameter tensors
//   meta/config     run configuration JSON, one byte per int32 element
namespace pat {

enum class LoadScope {
  Full,         // every parameter must be present
  PixelBranch,  // only codebooks and pixel modules are required
};

struct LoadedCheckpoint {
  std::unique_ptr<PatModel> model;
  std::unique_ptr<AdamW> optimizer;  // null when the file has no moments
  std::size_t step = 0;
};

TensorList checkpoint_tensors(const PatModel& model, const AdamW* optimizer, std::size_t step);
void save_checkpoint(const std::string& path, const PatModel& model, const AdamW* optimizer,
                     std::size_t step);

RunConfig checkpoint_config(const TensorList& tensors);
LoadedCheckpoint load_checkpoint(const TensorList& tensors, LoadScope scope = LoadScope::Full);
LoadedCheckpoint load_checkpoint(const std::string& path, LoadScope scope = LoadScope::Full);

}  // namespace pat
