#include "pat/model.hpp"

#include "pat/error.hpp"
#include "pat/fpt1.hpp"
#include "pat/ops.hpp"

namespace pat {

namespace {

std::unique_ptr<DecoderStack> make_decoder(ParamStore& params, const std::string& name,
                                           const RunConfig& config, Rng& rng) {
  return std::make_unique<DecoderStack>(params, name, config.model, rng);
}

}  // namespace

bool is_pixel_branch_param(const std::string& name) {
  return name.rfind("codebook.", 0) == 0 || name.rfind("pixel.", 0) == 0;
}

PatModel::PatModel(const RunConfig& config)
    : config_((validate(config), config)),
      init_rng_(Rng::derive_seed(config.train.seed, 0)),
      pipeline_(params_, config.model, init_rng_),
      seg_decoder_(make_decoder(params_,
                                config.model.ablation.separate_decoding ? "decoder.seg" : "decoder",
                                config, init_rng_)),
      rec_decoder_(config.model.ablation.separate_decoding
                       ? make_decoder(params_, "decoder.rec", config, init_rng_)
                       : nullptr),
      recon_head_(params_, config.model, seg_decoder_->output_resolution(), init_rng_),
      mask_head_(params_, config.model, init_rng_),
      encoder_(config.model.encoder_dim, config.model.encoder_seed) {}

FrozenPyramid PatModel::pyramid_for(const Sample& sample, bool use_features) const {
  if (use_features && !sample.feature_path.empty()) {
    return pyramid_from_features(tensor_map(load_fpt1(sample.feature_path)), config_.model);
  }
  return encoder_.encode(sample.image, config_.model.ablation);
}

ForwardResult PatModel::forward(const Tensor& image, const FrozenPyramid& pyramid,
                                const PipelineOptions& options) {
  ForwardResult out;
  out.pipe = pipeline_.run(image, pyramid, options);
  std::array<Tensor, 3> conds;
  for (std::size_t s = 0; s < 3; ++s) conds[s] = out.pipe.stages[s].z_q;
  out.seg_decoder = (*seg_decoder_)(out.pipe.z_latent, conds, out.pipe.e_global);
  out.rec_decoder = rec_decoder_ ? (*rec_decoder_)(out.pipe.z_latent, conds, out.pipe.e_global)
                                 : out.seg_decoder;
  out.recon = recon_head_(out.rec_decoder.features);
  out.seg = mask_head_(out.seg_decoder.features, out.seg_decoder.e_global);
  return out;
}

std::vector<std::size_t> PatModel::mask_labels(const std::vector<std::size_t>& labels) const {
  const std::size_t size = config_.model.image_size;
  const std::size_t res = seg_decoder_->output_resolution();
  if (labels.size() != size * size) {
    throw DataError("label map has " + std::to_string(labels.size()) + " pixels, expected " +
                    std::to_string(size * size));
  }
  const std::size_t f = size / res;
  std::vector<std::size_t> out(res * res);
  for (std::size_t y = 0; y < res; ++y)
    for (std::size_t x = 0; x < res; ++x) out[y * res + x] = labels[(y * f + f / 2) * size + x * f + f / 2];
  return out;
}

std::vector<std::size_t> PatModel::predict_labels(const ForwardResult& result) const {
  const auto small = semantic_labels(result.seg, config_.model.num_classes);
  const std::size_t size = config_.model.image_size;
  const std::size_t res = result.seg.height;
  const std::size_t f = size / res;
  std::vector<std::size_t> out(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) out[y * size + x] = small[(y / f) * res + x / f];
  return out;
}

LossReport PatModel::loss(const ForwardResult& r, const Tensor& image,
                          const std::vector<std::size_t>& labels) {
  const auto& m = config_.model;
  const auto& lc = config_.loss;
  LossReport rep;

  Tensor vq = vq_loss(r.pipe.latent.features, r.pipe.latent.codes, m.vq_beta);
  rep.terms["vq.latent"] = vq.item();
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& q = r.pipe.stages[s].quant;
    const Tensor term = vq_loss(q.features, q.codes, m.vq_beta);
    rep.terms[std::string("vq.") + stage_name(static_cast<Stage>(s))] = term.item();
    vq = add(vq, term);
  }

  Tensor spatial = Tensor::scalar(0.0);
  double tv_total = 0.0, crf_total = 0.0;
  if (!m.ablation.no_spatial_align) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& st = r.pipe.stages[s];
      const std::size_t pool = m.image_size / st.resolution;
      const Tensor small = pool > 1 ? avg_pool2d(image, pool) : image;
      const Tensor tv = tv_loss(st.pre_quant);
      const Tensor crf = crf_loss(st.z_q, small, m.crf_sigma);
      tv_total += tv.item();
      crf_total += crf.item();
      spatial = add(spatial, add(tv, crf));
    }
  }
  rep.terms["tv"] = tv_total;
  rep.terms["crf"] = crf_total;

  const ReconTerms rt = recon_losses(r.recon, image, perceptual_);
  rep.terms["l1"] = rt.l1.item();
  rep.terms["l2"] = rt.l2.item();
  rep.terms["perceptual"] = rt.perceptual.item();
  const Tensor recon = add(add(rt.l1, rt.l2), rt.perceptual);

  const SegTerms st = seg_loss(r.seg, mask_labels(labels), m.num_classes, lc);
  rep.terms["class_ce"] = st.class_ce.item();
  rep.terms["mask_bce"] = st.mask_bce.item();
  rep.terms["mask_dice"] = st.mask_dice.item();
  const Tensor seg = add(add(scale(st.class_ce, lc.lambda_ce), scale(st.mask_bce, lc.lambda_bce)),
                         scale(st.mask_dice, lc.lambda_dice));

  rep.groups = {vq.item(), spatial.item(), recon.item(), seg.item()};
  rep.total_tensor = total_loss(vq, spatial, recon, seg, lc);
  rep.total = rep.total_tensor.item();
  return rep;
}

std::array<std::vector<std::size_t>, 3> PatModel::tokenize(const Tensor& image,
                                                           const FrozenPyramid& pyramid) {
  NoGradGuard no_grad;
  const auto stages = pipeline_.pixel_branch(image, pyramid, false);
  std::array<std::vector<std::size_t>, 3> out;
  for (std::size_t s = 0; s < 3; ++s) out[s] = stages[s].quant.assignment.indices;
  return out;
}

}  // namespace pat
