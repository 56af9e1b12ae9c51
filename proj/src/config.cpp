#include "pat/config.hpp"

#include <json.hpp>
#include <sstream>

#include "pat/error.hpp"

namespace pat {

using nlohmann::json;

RunConfig toy_preset() {
  RunConfig c;
  c.preset = "toy";
  c.optim.lr = 1e-3;
  c.optim.grad_clip = 1.0;
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.model.image_size = 640;
  c.model.encoder_dim = 768;
  c.model.side_dim = 240;
  c.model.side_layers = 8;
  c.model.codebook_sizes = {128, 64, 32, 256};
  c.model.token_mixer_hidden = 256;
  c.model.decoder_dim = 256;
  c.model.mask_dim = 256;
  c.model.recon_hidden = 64;
  c.model.num_queries = 32;
  c.model.num_classes = 171;
  c.train.steps = 120000;
  c.train.batch = 12;
  return c;
}

RunConfig preset_by_name(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

void validate(const RunConfig& config) {
  const auto& m = config.model;
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (m.image_size == 0 || m.image_size % 8 != 0) {
    fail("image_size " + std::to_string(m.image_size) + " is not divisible by 8");
  }
  if (m.patch != 8) fail("patch must be 8 (stage schedule assumes a 1/8 base grid)");
  const auto& s = m.ablation.scale_schedule;
  for (std::size_t i = 0; i < 3; ++i) {
    if (s[i] != 1 && s[i] != 2 && s[i] != 4) fail("scale_schedule entries must be 1, 2 or 4");
  }
  if (s[0] < s[1] || s[1] < s[2]) fail("scale_schedule must be non-increasing early->late");
  if (s[0] / s[1] > 2 || s[1] / s[2] > 2) {
    fail("scale_schedule may shrink by at most 2x between stages");
  }
  if (m.side_layers < 4) fail("side_layers must be at least 4");
  std::size_t prev = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double f = m.fusion_depths[k];
    if (f < 0.0 || f >= 1.0) fail("fusion depths must lie in [0, 1)");
    const auto idx = static_cast<std::size_t>(f * static_cast<double>(m.side_layers) + 0.5);
    if (k > 0 && idx <= prev) fail("fusion depths must map to distinct increasing layers");
    prev = idx;
  }
  for (auto c : m.codebook_sizes) {
    if (c == 0) fail("codebook sizes must be positive");
  }
  if (m.ablation.unified_tokens && m.codebook_sizes[3] < m.num_queries) {
    fail("unified_tokens needs a latent codebook with at least num_queries entries");
  }
  if (m.num_classes < 2) fail("num_classes must be at least 2");
  if (m.side_dim % 4 != 0 || m.decoder_dim % 4 != 0) {
    fail("side_dim and decoder_dim must be divisible by 4");
  }
  if (m.kappa < 0.0) fail("kappa must be non-negative");
  if (config.train.batch == 0) fail("batch must be positive");
  if (config.optim.lr <= 0.0) fail("lr must be positive");
}

namespace {

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& a = m.ablation;
  return json{
      {"preset", c.preset},
      {"model",
       {{"image_size", m.image_size},
        {"patch", m.patch},
        {"encoder_dim", m.encoder_dim},
        {"encoder_seed", m.encoder_seed},
        {"side_dim", m.side_dim},
        {"side_layers", m.side_layers},
        {"fusion_depths", m.fusion_depths},
        {"code_dim", m.code_dim},
        {"codebook_sizes", m.codebook_sizes},
        {"pixel_dim", m.pixel_dim},
        {"num_queries", m.num_queries},
        {"token_mixer_hidden", m.token_mixer_hidden},
        {"decoder_dim", m.decoder_dim},
        {"decoder_extra_layers", m.decoder_extra_layers},
        {"mlp_ratio", m.mlp_ratio},
        {"mask_dim", m.mask_dim},
        {"recon_hidden", m.recon_hidden},
        {"num_classes", m.num_classes},
        {"text_dim", m.text_dim},
        {"text_scale", m.text_scale},
        {"kappa", m.kappa},
        {"vq_beta", m.vq_beta},
        {"crf_sigma", m.crf_sigma},
        {"restart_dead_codes", m.restart_dead_codes},
        {"ablation",
         {{"no_vmf", a.no_vmf},
          {"scale_schedule", a.scale_schedule},
          {"no_spatial_align", a.no_spatial_align},
          {"no_tokenmixer", a.no_tokenmixer},
          {"no_pixel_residual", a.no_pixel_residual},
          {"unified_tokens", a.unified_tokens},
          {"separate_decoding", a.separate_decoding},
          {"fpn_stages", a.fpn_stages}}}}},
      {"loss",
       {{"vq_weight", c.loss.vq_weight},
        {"spatial_weight", c.loss.spatial_weight},
        {"recon_weight", c.loss.recon_weight},
        {"seg_weight", c.loss.seg_weight},
        {"lambda_ce", c.loss.lambda_ce},
        {"lambda_bce", c.loss.lambda_bce},
        {"lambda_dice", c.loss.lambda_dice},
        {"no_object_weight", c.loss.no_object_weight},
        {"bce_clamp", c.loss.bce_clamp}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"weight_decay", c.optim.weight_decay},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"grad_clip", c.optim.grad_clip}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"seed", c.train.seed},
        {"eval_every", c.train.eval_every},
        {"eval_samples", c.train.eval_samples},
        {"repeats", c.train.repeats},
        {"smoothing_window", c.train.smoothing_window}}}};
}

RunConfig from_full_json(const json& j) {
  RunConfig c;
  try {
    c.preset = j.at("preset").get<std::string>();
    const auto& m = j.at("model");
    auto& mc = c.model;
    m.at("image_size").get_to(mc.image_size);
    m.at("patch").get_to(mc.patch);
    m.at("encoder_dim").get_to(mc.encoder_dim);
    m.at("encoder_seed").get_to(mc.encoder_seed);
    m.at("side_dim").get_to(mc.side_dim);
    m.at("side_layers").get_to(mc.side_layers);
    m.at("fusion_depths").get_to(mc.fusion_depths);
    m.at("code_dim").get_to(mc.code_dim);
    m.at("codebook_sizes").get_to(mc.codebook_sizes);
    m.at("pixel_dim").get_to(mc.pixel_dim);
    m.at("num_queries").get_to(mc.num_queries);
    m.at("token_mixer_hidden").get_to(mc.token_mixer_hidden);
    m.at("decoder_dim").get_to(mc.decoder_dim);
    m.at("decoder_extra_layers").get_to(mc.decoder_extra_layers);
    m.at("mlp_ratio").get_to(mc.mlp_ratio);
    m.at("mask_dim").get_to(mc.mask_dim);
    m.at("recon_hidden").get_to(mc.recon_hidden);
    m.at("num_classes").get_to(mc.num_classes);
    m.at("text_dim").get_to(mc.text_dim);
    m.at("text_scale").get_to(mc.text_scale);
    m.at("kappa").get_to(mc.kappa);
    m.at("vq_beta").get_to(mc.vq_beta);
    m.at("crf_sigma").get_to(mc.crf_sigma);
    m.at("restart_dead_codes").get_to(mc.restart_dead_codes);
    const auto& a = m.at("ablation");
    auto& ac = mc.ablation;
    a.at("no_vmf").get_to(ac.no_vmf);
    a.at("scale_schedule").get_to(ac.scale_schedule);
    a.at("no_spatial_align").get_to(ac.no_spatial_align);
    a.at("no_tokenmixer").get_to(ac.no_tokenmixer);
    a.at("no_pixel_residual").get_to(ac.no_pixel_residual);
    a.at("unified_tokens").get_to(ac.unified_tokens);
    a.at("separate_decoding").get_to(ac.separate_decoding);
    a.at("fpn_stages").get_to(ac.fpn_stages);
    const auto& l = j.at("loss");
    l.at("vq_weight").get_to(c.loss.vq_weight);
    l.at("spatial_weight").get_to(c.loss.spatial_weight);
    l.at("recon_weight").get_to(c.loss.recon_weight);
    l.at("seg_weight").get_to(c.loss.seg_weight);
    l.at("lambda_ce").get_to(c.loss.lambda_ce);
    l.at("lambda_bce").get_to(c.loss.lambda_bce);
    l.at("lambda_dice").get_to(c.loss.lambda_dice);
    l.at("no_object_weight").get_to(c.loss.no_object_weight);
    l.at("bce_clamp").get_to(c.loss.bce_clamp);
    const auto& o = j.at("optim");
    o.at("lr").get_to(c.optim.lr);
    o.at("weight_decay").get_to(c.optim.weight_decay);
    o.at("beta1").get_to(c.optim.beta1);
    o.at("beta2").get_to(c.optim.beta2);
    o.at("eps").get_to(c.optim.eps);
    o.at("grad_clip").get_to(c.optim.grad_clip);
    const auto& t = j.at("train");
    t.at("steps").get_to(c.train.steps);
    t.at("batch").get_to(c.train.batch);
    t.at("seed").get_to(c.train.seed);
    t.at("eval_every").get_to(c.train.eval_every);
    t.at("eval_samples").get_to(c.train.eval_samples);
    t.at("repeats").get_to(c.train.repeats);
    t.at("smoothing_window").get_to(c.train.smoothing_window);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

void check_known_keys(const json& patch, const json& schema, const std::string& path) {
  if (!patch.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.is_object() || !schema.contains(it.key())) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    if (schema.at(it.key()).is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
      check_known_keys(it.value(), schema.at(it.key()), key);
    }
  }
}

}  // namespace

std::string to_json_string(const RunConfig& config, int indent) {
  return to_json(config).dump(indent);
}

RunConfig parse_config(const std::string& json_text) {
  json patch;
  try {
    patch = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  const std::string preset = patch.value("preset", std::string("toy"));
  json base = to_json(preset_by_name(preset));
  check_known_keys(patch, base, "");
  base.merge_patch(patch);
  RunConfig out = from_full_json(base);
  validate(out);
  return out;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  std::string path = key;
  if (path.rfind("ablation.", 0) == 0) path = "model." + path;
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;
  }
  json patch = json::object();
  json* cursor = &patch;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) keys.push_back(part);
  if (keys.empty()) throw ConfigError("empty override key");
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) cursor = &(*cursor)[keys[i]];
  (*cursor)[keys.back()] = v;
  json base = to_json(config);
  check_known_keys(patch, base, "");
  base.merge_patch(patch);
  config = from_full_json(base);
}

void apply_ablation(RunConfig& config, const std::string& name) {
  auto& a = config.model.ablation;
  if (name == "no_vmf") a.no_vmf = true;
  else if (name == "scale_444") a.scale_schedule = {4, 4, 4};
  else if (name == "scale_111") a.scale_schedule = {1, 1, 1};
  else if (name == "no_spatial_align") a.no_spatial_align = true;
  else if (name == "no_tokenmixer") a.no_tokenmixer = true;
  else if (name == "no_pixel_residual") a.no_pixel_residual = true;
  else if (name == "unified_tokens") a.unified_tokens = true;
  else if (name == "separate_decoding") a.separate_decoding = true;
  else if (name == "fpn_mid_late") a.fpn_stages = {false, true, true};
  else if (name == "fpn_late") a.fpn_stages = {false, false, true};
  else if (name == "fpn_none") a.fpn_stages = {false, false, false};
  else throw ConfigError("unknown ablation '" + name + "'");
}

std::string ablation_summary(const AblationFlags& a) {
  std::ostringstream out;
  out << "scale=" << a.scale_schedule[0] << a.scale_schedule[1] << a.scale_schedule[2];
  out << " fpn=" << (a.fpn_stages[0] ? "E" : "-") << (a.fpn_stages[1] ? "M" : "-")
      << (a.fpn_stages[2] ? "L" : "-");
  if (a.no_vmf) out << " no_vmf";
  if (a.no_spatial_align) out << " no_spatial_align";
  if (a.no_tokenmixer) out << " no_tokenmixer";
  if (a.no_pixel_residual) out << " no_pixel_residual";
  if (a.unified_tokens) out << " unified_tokens";
  if (a.separate_decoding) out << " separate_decoding";
  return out.str();
}

}  // namespace pat
