#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "pat/config.hpp"
#include "pat/manifest.hpp"
#include "pat/model.hpp"

namespace pat {

struct TrainOptions {
  std::string out_dir;       // checkpoint.fpt1, metrics.csv, config.json
  std::string resume;        // checkpoint to continue from
  bool use_features = false; // take frozen features from manifest feature files
  std::size_t max_samples = 0;  // 0 uses the whole manifest
  std::size_t log_every = 100;
  bool quiet = false;
};

struct TrainResult {
  std::vector<double> totals;  // total loss per step, index 0 = step 1
  std::size_t first_step = 1;
  std::string checkpoint;
  std::unique_ptr<PatModel> model;
};

// Mean of the `window` totals ending at `step` (1-based, inclusive).
double smoothed_loss(const std::vector<double>& totals, std::size_t step, std::size_t window);

// Serialized step loop. Throws DivergenceError (after writing
// diverged.fpt1) when the loss becomes non-finite.
TrainResult train(const RunConfig& config, const Manifest& manifest, const TrainOptions& options);

struct EvalOptions {
  std::size_t max_samples = 0;
  bool use_features = false;
  std::string dump_dir;  // per-image predictions when set
};

struct EvalReport {
  std::vector<double> per_class_iou;  // -1 for classes absent from the ground truth
  double miou = 0.0;
  double psnr = 0.0;       // mean per-image PSNR of the clamped reconstruction
  double gray_psnr = 0.0;  // same for an all-0.5 prediction
  std::size_t samples = 0;
};

EvalReport evaluate(PatModel& model, const Manifest& manifest, const EvalOptions& options);
// kind,key,name,value rows: one per class, then summary rows.
void write_eval_csv(const std::string& path, const EvalReport& report, const Manifest& manifest);

struct RepeatSummary {
  std::vector<double> miou;
  std::vector<double> psnr;
  double mean_miou = 0.0;
  double mean_psnr = 0.0;
};

// Trains `config.train.repeats` runs with seeds seed, seed+1, ... under
// out_dir/run<i>, evaluating each on the first eval_samples samples.
RepeatSummary train_repeats(const RunConfig& config, const Manifest& manifest,
                            const TrainOptions& options);

}  // namespace pat
