#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pat/checkpoint.hpp"
#include "pat/config.hpp"
#include "pat/dataset.hpp"
#include "pat/error.hpp"
#include "pat/fpt1.hpp"
#include "pat/manifest.hpp"
#include "pat/metrics.hpp"
#include "pat/ops.hpp"
#include "pat/trainer.hpp"

namespace fs = std::filesystem;
using namespace pat;

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset;
  std::vector<std::string> sets;
  std::vector<std::string> ablations;
  long long steps = -1;
  long long seed = -1;
  long long batch = -1;
  double lr = -1.0;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "JSON config file (keys absent keep preset values)");
  cmd->add_option("--preset", a.preset, "toy or paper");
  cmd->add_option("--set", a.sets, "override one schema key, e.g. model.kappa=10");
  cmd->add_option("--ablation", a.ablations,
                  "no_vmf, scale_444, scale_111, no_spatial_align, no_tokenmixer, "
                  "no_pixel_residual, unified_tokens, separate_decoding, fpn_mid_late, "
                  "fpn_late, fpn_none");
  cmd->add_option("--steps", a.steps, "train.steps");
  cmd->add_option("--seed", a.seed, "train.seed");
  cmd->add_option("--batch", a.batch, "train.batch");
  cmd->add_option("--lr", a.lr, "optim.lr");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig build_config(const ConfigArgs& a) {
  RunConfig c;
  if (!a.file.empty()) {
    c = parse_config(read_text(a.file));
    if (!a.preset.empty() && a.preset != c.preset) {
      throw ConfigError("--preset " + a.preset + " conflicts with the config file preset " +
                        c.preset);
    }
  } else {
    c = preset_by_name(a.preset.empty() ? "toy" : a.preset);
  }
  if (const char* env = std::getenv("PAT_SEED")) {
    try {
      c.train.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("PAT_SEED is not an unsigned integer: ") + env);
    }
  }
  for (const auto& name : a.ablations) apply_ablation(c, name);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.steps >= 0) c.train.steps = static_cast<std::size_t>(a.steps);
  if (a.seed >= 0) c.train.seed = static_cast<std::uint64_t>(a.seed);
  if (a.batch >= 0) c.train.batch = static_cast<std::size_t>(a.batch);
  if (a.lr > 0) c.optim.lr = a.lr;
  validate(c);
  return c;
}

nlohmann::json schema_of(const nlohmann::json& v) {
  using nlohmann::json;
  if (v.is_object()) {
    json props = json::object();
    for (auto it = v.begin(); it != v.end(); ++it) props[it.key()] = schema_of(it.value());
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
  }
  if (v.is_array()) {
    return {{"type", "array"},
            {"minItems", v.size()},
            {"maxItems", v.size()},
            {"items", v.empty() ? json::object() : schema_of(v.front())}};
  }
  if (v.is_boolean()) return {{"type", "boolean"}, {"default", v}};
  if (v.is_number_unsigned() || v.is_number_integer()) {
    return {{"type", "integer"}, {"minimum", 0}, {"default", v}};
  }
  if (v.is_number()) return {{"type", "number"}, {"default", v}};
  return {{"type", "string"}, {"default", v}};
}

std::string config_schema() {
  auto s = schema_of(nlohmann::json::parse(to_json_string(toy_preset())));
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "pat run configuration";
  s["properties"]["preset"]["enum"] = {"toy", "paper"};
  return s.dump(2);
}

Tensor load_image(const std::string& path, std::size_t expected) {
  const Raster r = read_netpbm(path);
  if (r.channels != 3) throw DataError("'" + path + "' is not an RGB PPM image");
  if (r.width != expected || r.height != expected) {
    throw DataError("'" + path + "' is " + std::to_string(r.width) + "x" +
                    std::to_string(r.height) + ", model expects " + std::to_string(expected));
  }
  return raster_to_tensor(r);
}

FrozenPyramid pyramid_for_image(const PatModel& model, const Tensor& image,
                                const std::string& features) {
  if (!features.empty()) {
    return pyramid_from_features(tensor_map(load_fpt1(features)), model.config().model);
  }
  return model.encoder().encode(image, model.config().model.ablation);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature pyramid tokenization: training and inference harness"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_out;
  std::size_t gd_count = 500, gd_size = 64, gd_classes = 6;
  std::uint64_t gd_seed = 1;
  auto* gen = app.add_subcommand("gen-data", "render a synthetic shapes dataset");
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--count", gd_count, "number of samples");
  gen->add_option("--size", gd_size, "image side, divisible by 8");
  gen->add_option("--classes", gd_classes, "classes including background");
  gen->add_option("--seed", gd_seed, "generation seed");

  // train
  ConfigArgs tr_cfg;
  std::string tr_manifest, tr_out, tr_resume;
  bool tr_features = false;
  std::size_t tr_max = 0, tr_log = 100;
  auto* tr = app.add_subcommand("train", "train a model");
  add_config_flags(tr, tr_cfg);
  tr->add_option("--manifest", tr_manifest, "dataset manifest")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_flag("--use-features", tr_features, "read frozen features from manifest feature files");
  tr->add_option("--max-samples", tr_max, "use only the first N samples");
  tr->add_option("--log-every", tr_log, "progress line interval");

  // tokenize / reconstruct / segment share image inputs
  std::string in_ckpt, in_image, in_features, in_out;
  auto add_inference = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
    cmd->add_option("--image", in_image, "input image (binary PPM)")->required();
    cmd->add_option("--features", in_features, "FPT1 feature file replacing the encoder stub");
    cmd->add_option("--out", in_out, "output file")->required();
  };
  auto* tok = app.add_subcommand("tokenize", "write per-stage code indices (FPT1)");
  add_inference(tok);
  auto* rec = app.add_subcommand("reconstruct", "write the reconstructed image (PPM)");
  add_inference(rec);
  auto* seg = app.add_subcommand("segment", "write the predicted label map (PGM)");
  add_inference(seg);

  // eval
  std::string ev_ckpt, ev_manifest, ev_out, ev_dump;
  std::size_t ev_max = 0;
  bool ev_features = false;
  auto* ev = app.add_subcommand("eval", "evaluate mIoU and PSNR");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  ev->add_option("--out", ev_out, "CSV report (stdout summary only when omitted)");
  ev->add_option("--max-samples", ev_max, "evaluate only the first N samples");
  ev->add_option("--dump", ev_dump, "directory for per-image predictions");
  ev->add_flag("--use-features", ev_features, "read frozen features from manifest feature files");

  // export-config
  ConfigArgs ex_cfg;
  std::string ex_out;
  bool ex_schema = false;
  auto* ex = app.add_subcommand("export-config", "print the resolved config or its schema");
  add_config_flags(ex, ex_cfg);
  ex->add_option("--out", ex_out, "write to a file instead of stdout");
  ex->add_flag("--schema", ex_schema, "print the JSON schema instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const auto m = gen_dataset(gd_out, gd_count, gd_size, gd_classes, gd_seed);
      std::printf("wrote %zu samples and %s\n", m.samples.size(),
                  (fs::path(gd_out) / "manifest.tsv").c_str());
    } else if (tr->parsed()) {
      const RunConfig cfg = build_config(tr_cfg);
      const Manifest m = read_manifest(tr_manifest);
      TrainOptions o;
      o.out_dir = tr_out;
      o.resume = tr_resume;
      o.use_features = tr_features;
      o.max_samples = tr_max;
      o.log_every = tr_log;
      std::printf("config: %s  %s\n", cfg.preset.c_str(),
                  ablation_summary(cfg.model.ablation).c_str());
      if (cfg.train.repeats > 1) {
        const auto summary = train_repeats(cfg, m, o);
        for (std::size_t r = 0; r < summary.miou.size(); ++r) {
          std::printf("run %zu: miou %.4f psnr %.2f\n", r, summary.miou[r], summary.psnr[r]);
        }
        std::printf("mean: miou %.4f psnr %.2f\n", summary.mean_miou, summary.mean_psnr);
      } else {
        const auto result = train(cfg, m, o);
        std::printf("checkpoint: %s\n", result.checkpoint.c_str());
      }
    } else if (tok->parsed() || rec->parsed() || seg->parsed()) {
      const bool pixel_only = tok->parsed();
      auto loaded = load_checkpoint(in_ckpt, pixel_only ? LoadScope::PixelBranch : LoadScope::Full);
      PatModel& model = *loaded.model;
      const Tensor image = load_image(in_image, model.config().model.image_size);
      const FrozenPyramid pyramid = pyramid_for_image(model, image, in_features);
      if (tok->parsed()) {
        const auto codes = model.tokenize(image, pyramid);
        TensorList out;
        for (std::size_t s = 0; s < 3; ++s) {
          const std::size_t res = model.config().model.stage_resolution(s);
          std::vector<double> v(codes[s].begin(), codes[s].end());
          out.push_back({std::string("tokens/") + stage_name(static_cast<Stage>(s)), DType::I32,
                         Tensor::from_vector({res, res}, std::move(v))});
        }
        save_fpt1(in_out, out);
      } else {
        NoGradGuard no_grad;
        PipelineOptions po;
        po.record_usage = false;
        const auto fr = model.forward(image, pyramid, po);
        if (rec->parsed()) {
          write_netpbm(in_out, tensor_to_raster(clamp(fr.recon, 0.0, 1.0)));
          std::printf("psnr %.2f dB\n", psnr(clamp(fr.recon, 0.0, 1.0), image));
        } else {
          const auto labels = model.predict_labels(fr);
          const std::size_t size = model.config().model.image_size;
          Raster r{size, size, 1, {}};
          r.pixels.assign(labels.begin(), labels.end());
          write_netpbm(in_out, r);
        }
      }
      std::printf("wrote %s\n", in_out.c_str());
    } else if (ev->parsed()) {
      auto loaded = load_checkpoint(ev_ckpt);
      const Manifest m = read_manifest(ev_manifest);
      EvalOptions eo;
      eo.max_samples = ev_max;
      eo.use_features = ev_features;
      eo.dump_dir = ev_dump;
      const auto rep = evaluate(*loaded.model, m, eo);
      if (!ev_out.empty()) write_eval_csv(ev_out, rep, m);
      std::printf("samples %zu  miou %.4f  psnr %.2f dB  (gray %.2f dB)\n", rep.samples, rep.miou,
                  rep.psnr, rep.gray_psnr);
    } else if (ex->parsed()) {
      const std::string text = ex_schema ? config_schema() : to_json_string(build_config(ex_cfg));
      if (ex_out.empty()) {
        std::cout << text << '\n';
      } else {
        std::ofstream(ex_out) << text << '\n';
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "integrity error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
