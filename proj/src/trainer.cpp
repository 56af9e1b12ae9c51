#include "pat/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pat/checkpoint.hpp"
#include "pat/error.hpp"
#include "pat/metrics.hpp"
#include "pat/ops.hpp"
#include "pat/optim.hpp"

namespace pat {

namespace fs = std::filesystem;

namespace {

struct CachedSample {
  Sample sample;
  FrozenPyramid pyramid;
};

void check_classes(const RunConfig& config, const Manifest& manifest) {
  if (manifest.classes.size() != config.model.num_classes) {
    throw DataError("manifest has " + std::to_string(manifest.classes.size()) +
                    " classes, model expects " + std::to_string(config.model.num_classes));
  }
}

std::size_t sample_count(const Manifest& manifest, std::size_t limit) {
  const std::size_t n = manifest.samples.size();
  return limit == 0 ? n : std::min(n, limit);
}

void log_row(std::ofstream& out, std::size_t step, const std::string& term, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << step << ',' << term << ',' << buf << '\n';
}

}  // namespace

double smoothed_loss(const std::vector<double>& totals, std::size_t step, std::size_t window) {
  if (step == 0 || step > totals.size()) {
    throw ConfigError("smoothed_loss: step " + std::to_string(step) + " outside the logged range");
  }
  const std::size_t begin = step > window ? step - window : 0;
  double total = 0.0;
  for (std::size_t i = begin; i < step; ++i) total += totals[i];
  return total / static_cast<double>(step - begin);
}

TrainResult train(const RunConfig& config, const Manifest& manifest, const TrainOptions& options) {
  validate(config);
  check_classes(config, manifest);
  const std::size_t n = sample_count(manifest, options.max_samples);
  if (n == 0) throw DataError("manifest has no samples");
  if (options.out_dir.empty()) throw ConfigError("train needs an output directory");
  fs::create_directories(options.out_dir);

  TrainResult result;
  std::unique_ptr<AdamW> optimizer;
  std::size_t start = 0;
  if (!options.resume.empty()) {
    auto loaded = load_checkpoint(options.resume);
    result.model = std::move(loaded.model);
    optimizer = std::move(loaded.optimizer);
    start = loaded.step;
  } else {
    result.model = std::make_unique<PatModel>(config);
  }
  PatModel& model = *result.model;
  const RunConfig& cfg = model.config();
  if (!optimizer) optimizer = std::make_unique<AdamW>(model.params(), cfg.optim);
  optimizer->set_steps(start);

  {
    std::ofstream cfg_out(fs::path(options.out_dir) / "config.json");
    cfg_out << to_json_string(cfg) << '\n';
  }
  const auto metrics_path = fs::path(options.out_dir) / "metrics.csv";
  const bool fresh = options.resume.empty() || !fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());
  if (fresh) {
    metrics << "step,term,value\n";
    const auto& a = cfg.model.ablation;
    log_row(metrics, start, "flag.no_vmf", a.no_vmf);
    log_row(metrics, start, "flag.no_spatial_align", a.no_spatial_align);
    log_row(metrics, start, "flag.no_tokenmixer", a.no_tokenmixer);
    log_row(metrics, start, "flag.no_pixel_residual", a.no_pixel_residual);
    log_row(metrics, start, "flag.unified_tokens", a.unified_tokens);
    log_row(metrics, start, "flag.separate_decoding", a.separate_decoding);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string st = stage_name(static_cast<Stage>(s));
      log_row(metrics, start, "flag.scale." + st, static_cast<double>(a.scale_schedule[s]));
      log_row(metrics, start, "flag.fpn." + st, a.fpn_stages[s]);
    }
  }

  std::vector<CachedSample> cache;
  cache.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CachedSample c{load_sample(manifest, i), {}};
    c.pyramid = model.pyramid_for(c.sample, options.use_features);
    cache.push_back(std::move(c));
  }

  result.first_step = start + 1;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t batch = cfg.train.batch;
  std::array<Tensor, 4> last_features;
  for (std::size_t step = start + 1; step <= cfg.train.steps; ++step) {
    model.params().zero_grad();
    std::map<std::string, double> terms;
    LossGroups groups;
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      Rng pick(Rng::derive_seed(cfg.train.seed, 1 + (step - 1) * batch + b));
      const CachedSample& c = cache[pick.index(n)];
      const ForwardResult fr = model.forward(c.sample.image, c.pyramid);
      const LossReport rep = model.loss(fr, c.sample.image, c.sample.labels);
      for (const auto& [k, v] : rep.terms) terms[k] += v / static_cast<double>(batch);
      groups.vq += rep.groups.vq / static_cast<double>(batch);
      groups.spatial += rep.groups.spatial / static_cast<double>(batch);
      groups.recon += rep.groups.recon / static_cast<double>(batch);
      groups.seg += rep.groups.seg / static_cast<double>(batch);
      total += rep.total / static_cast<double>(batch);
      if (!std::isfinite(rep.total)) break;
      scale(rep.total_tensor, 1.0 / static_cast<double>(batch)).backward();
      for (std::size_t s = 0; s < 3; ++s) last_features[s] = fr.pipe.stages[s].quant.features;
      last_features[3] = fr.pipe.latent.features;
    }
    if (!std::isfinite(total)) {
      const auto snap = (fs::path(options.out_dir) / "diverged.fpt1").string();
      save_checkpoint(snap, model, optimizer.get(), step - 1);
      log_row(metrics, step, "total", total);
      for (const auto& [k, v] : terms) log_row(metrics, step, k, v);
      metrics.flush();
      throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                            "; snapshot of the previous step written to " + snap);
    }
    const double grad_norm = optimizer->step();
    result.totals.push_back(total);

    log_row(metrics, step, "total", total);
    log_row(metrics, step, "group.vq", groups.vq);
    log_row(metrics, step, "group.spatial", groups.spatial);
    log_row(metrics, step, "group.recon", groups.recon);
    log_row(metrics, step, "group.seg", groups.seg);
    for (const auto& [k, v] : terms) log_row(metrics, step, k, v);
    log_row(metrics, step, "grad_norm", grad_norm);

    const std::size_t window = std::max<std::size_t>(1, cfg.train.smoothing_window);
    if (step % window == 0) {
      auto& books = model.pipeline().codebooks();
      Rng restart_rng(Rng::derive_seed(cfg.train.seed, 1000000 + step));
      for (std::size_t s = 0; s < 4; ++s) {
        const auto stats = codebook_stats(books[s]);
        const std::string st = stage_name(static_cast<Stage>(s));
        log_row(metrics, step, "util." + st, stats.utilization);
        log_row(metrics, step, "entropy." + st, stats.entropy);
        if (cfg.model.restart_dead_codes && last_features[s].defined()) {
          restart_dead_codes(books[s], last_features[s], restart_rng);
        }
        books[s].reset_usage();
      }
    }
    if (cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0) {
      EvalOptions eo;
      eo.max_samples = cfg.train.eval_samples;
      eo.use_features = options.use_features;
      const auto rep = evaluate(model, manifest, eo);
      log_row(metrics, step, "eval.miou", rep.miou);
      log_row(metrics, step, "eval.psnr", rep.psnr);
    }
    if (!options.quiet && options.log_every > 0 && step % options.log_every == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::size_t done = step - start;
      std::printf("step %zu/%zu  total %.4f  smoothed %.4f  (%.3f s/step)\n", step,
                  cfg.train.steps, total,
                  smoothed_loss(result.totals, result.totals.size(), window),
                  secs / static_cast<double>(done));
      std::fflush(stdout);
    }
  }
  metrics.flush();
  result.checkpoint = (fs::path(options.out_dir) / "checkpoint.fpt1").string();
  save_checkpoint(result.checkpoint, model, optimizer.get(),
                  std::max(start, cfg.train.steps));
  return result;
}

EvalReport evaluate(PatModel& model, const Manifest& manifest, const EvalOptions& options) {
  const auto& cfg = model.config();
  check_classes(cfg, manifest);
  const std::size_t n = sample_count(manifest, options.max_samples);
  if (n == 0) throw DataError("manifest has no samples to evaluate");
  if (!options.dump_dir.empty()) fs::create_directories(options.dump_dir);
  IouAccumulator acc(cfg.model.num_classes);
  EvalReport rep;
  NoGradGuard no_grad;
  PipelineOptions po;
  po.record_usage = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample s = load_sample(manifest, i);
    const auto pyramid = model.pyramid_for(s, options.use_features);
    const auto fr = model.forward(s.image, pyramid, po);
    const auto pred = model.predict_labels(fr);
    acc.add(pred, s.labels);
    const Tensor recon = clamp(fr.recon, 0.0, 1.0);
    rep.psnr += psnr(recon, s.image);
    rep.gray_psnr += psnr(Tensor::full(s.image.shape(), 0.5), s.image);
    if (!options.dump_dir.empty()) {
      Raster lab{cfg.model.image_size, cfg.model.image_size, 1, {}};
      lab.pixels.assign(pred.begin(), pred.end());
      write_netpbm((fs::path(options.dump_dir) / (s.id + "_pred.pgm")).string(), lab);
      write_netpbm((fs::path(options.dump_dir) / (s.id + "_recon.ppm")).string(),
                   tensor_to_raster(recon));
    }
  }
  rep.samples = n;
  rep.psnr /= static_cast<double>(n);
  rep.gray_psnr /= static_cast<double>(n);
  rep.per_class_iou = acc.per_class();
  rep.miou = acc.mean();
  return rep;
}

void write_eval_csv(const std::string& path, const EvalReport& report, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "kind,key,name,value\n";
  char buf[64];
  for (std::size_t k = 0; k < report.per_class_iou.size(); ++k) {
    const double v = report.per_class_iou[k];
    if (v < 0) std::snprintf(buf, sizeof buf, "nan");
    else std::snprintf(buf, sizeof buf, "%.6f", v);
    out << "class," << k << ',' << manifest.classes[k].name << ',' << buf << '\n';
  }
  auto summary = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << "summary," << key << ",," << buf << '\n';
  };
  summary("miou", report.miou);
  summary("psnr", report.psnr);
  summary("gray_psnr", report.gray_psnr);
  summary("samples", static_cast<double>(report.samples));
}

RepeatSummary train_repeats(const RunConfig& config, const Manifest& manifest,
                            const TrainOptions& options) {
  RepeatSummary out;
  const std::size_t runs = std::max<std::size_t>(1, config.train.repeats);
  for (std::size_t r = 0; r < runs; ++r) {
    RunConfig c = config;
    c.train.seed = config.train.seed + r;
    TrainOptions o = options;
    o.out_dir = (fs::path(options.out_dir) / ("run" + std::to_string(r))).string();
    auto result = train(c, manifest, o);
    EvalOptions eo;
    eo.max_samples = c.train.eval_samples;
    eo.use_features = options.use_features;
    const auto rep = evaluate(*result.model, manifest, eo);
    write_eval_csv((fs::path(o.out_dir) / "eval.csv").string(), rep, manifest);
    out.miou.push_back(rep.miou);
    out.psnr.push_back(rep.psnr);
  }
  for (std::size_t r = 0; r < runs; ++r) {
    out.mean_miou += out.miou[r] / static_cast<double>(runs);
    out.mean_psnr += out.psnr[r] / static_cast<double>(runs);
  }
  return out;
}

}  // namespace pat
