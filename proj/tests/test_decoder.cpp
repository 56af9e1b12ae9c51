#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pat/config.hpp"
#include "pat/dataset.hpp"
#include "pat/decoder.hpp"
#include "pat/error.hpp"
#include "pat/losses.hpp"
#include "pat/model.hpp"
#include "pat/nn.hpp"
#include "pat/ops.hpp"
#include "pat/pipeline.hpp"

using namespace pat;

namespace {

ModelConfig small_model() {
  ModelConfig m = toy_preset().model;
  m.image_size = 32;
  return m;
}

void randomize(Tensor t, std::uint64_t seed, double stddev = 0.3) {
  Rng rng(seed);
  for (auto& v : t.leaf_values()) v = rng.normal() * stddev;
}

void randomize_prefix(ParamStore& params, const std::string& prefix, std::uint64_t seed) {
  for (const auto& [name, p] : params.items()) {
    if (name.rfind(prefix, 0) == 0) randomize(p, seed++);
  }
}

struct DecoderInputs {
  Tensor z_latent;
  std::array<Tensor, 3> maps;
  Tensor e_global;
};

DecoderInputs decoder_inputs(const ModelConfig& m, std::uint64_t seed) {
  Rng rng(seed);
  DecoderInputs in;
  const std::size_t g = m.base_grid();
  in.z_latent = oracle::random_tensor({m.code_dim, g, g}, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t r = m.stage_resolution(s);
    in.maps[s] = oracle::random_tensor({m.code_dim, r, r}, rng);
  }
  in.e_global = oracle::random_tensor({m.num_queries, m.side_dim}, rng);
  return in;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

bool all_zero_grad(const Tensor& p) {
  if (!p.has_grad()) return true;
  for (double g : p.grad())
    if (g != 0.0) return false;
  return true;
}

// Label per pixel by direct enumeration of sum_q softmax(class_q)[k] * sigmoid(mask_q).
std::vector<std::size_t> enumerate_labels(const std::vector<double>& masks,
                                          const std::vector<double>& classes, std::size_t nq,
                                          std::size_t kc, std::size_t hw, std::size_t k) {
  std::vector<std::size_t> out(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double best = -1.0;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t q = 0; q < nq; ++q) {
        double z = 0.0;
        for (std::size_t j = 0; j < kc; ++j) z += std::exp(classes[q * kc + j]);
        s += std::exp(classes[q * kc + c]) / z / (1.0 + std::exp(-masks[q * hw + p]));
      }
      if (s > best) {
        best = s;
        out[p] = c;
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("spade is the plain normalization at initialization") {
    ParamStore params;
    Rng rng(1);
    const Spade block(params, "s", 4, 3, rng);
    Rng data(2);
    const Tensor x = oracle::random_tensor({3, 5, 5}, data);
    const Tensor cond = oracle::random_tensor({4, 5, 5}, data);
    CHECK(same(block(x, cond), instance_norm(x)));
  }

  TEST_CASE("spade keeps constant inputs spatially constant") {
    ParamStore params;
    Rng rng(3);
    const Spade block(params, "s", 2, 3, rng);
    randomize(block.gamma.weight, 4);
    randomize(block.gamma.bias, 5);
    randomize(block.beta.weight, 6);
    randomize(block.beta.bias, 7);
    const Tensor x = Tensor::from_vector({3, 1, 1}, {0.4, -1.0, 2.0});
    const Tensor cond = Tensor::from_vector({2, 1, 1}, {0.7, -0.3});
    const Tensor y = block(bilinear_upsample(x, 6), bilinear_upsample(cond, 6));
    REQUIRE(y.shape() == Shape{3, 6, 6});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 36; ++i)
        CHECK(y.value(c * 36 + i) == doctest::Approx(y.value(c * 36)).epsilon(1e-12));
  }

  TEST_CASE("spade rejects mismatched extents") {
    ParamStore params;
    Rng rng(8);
    const Spade block(params, "s", 2, 3, rng);
    CHECK_THROWS_AS(block(Tensor::zeros({3, 4, 4}), Tensor::zeros({2, 2, 2})), DimensionError);
  }

  TEST_CASE("decoder output extent follows the stage schedule") {
    for (const auto& schedule : {std::array<std::size_t, 3>{4, 2, 1},
                                 std::array<std::size_t, 3>{4, 4, 4},
                                 std::array<std::size_t, 3>{1, 1, 1}}) {
      ModelConfig m = small_model();
      m.ablation.scale_schedule = schedule;
      ParamStore params;
      Rng rng(9);
      const DecoderStack dec(params, "d", m, rng);
      const auto in = decoder_inputs(m, 10);
      const auto out = dec(in.z_latent, in.maps, in.e_global);
      const std::size_t res = m.base_grid() * schedule[0];
      CHECK(dec.output_resolution() == res);
      CHECK(out.features.shape() == Shape{m.decoder_dim, res, res});
      CHECK(out.e_global.shape() == in.e_global.shape());
    }
  }

  TEST_CASE("late-only fusion applies one spade and keeps the upsampling path") {
    ModelConfig m = small_model();
    auto count = [&](const ModelConfig& cfg) {
      ParamStore params;
      Rng rng(11);
      const DecoderStack dec(params, "d", cfg, rng);
      auto in = decoder_inputs(cfg, 12);
      for (std::size_t s = 0; s < 3; ++s)
        if (!cfg.ablation.fpn_stages[s]) in.maps[s] = Tensor();
      ActivationTrace trace;
      dec(in.z_latent, in.maps, in.e_global);
      return std::pair{trace.count("instance_norm"), trace.count("bilinear_upsample")};
    };
    const auto full = count(m);
    m.ablation.fpn_stages = {false, false, true};
    const auto late = count(m);
    CHECK(full.first == 3);
    CHECK(late.first == 1);
    CHECK(late.second == full.second);
    CHECK(full.second == 2);
  }

  TEST_CASE("a missing stage condition is an error unless that stage is ablated") {
    ModelConfig m = small_model();
    ParamStore params;
    Rng rng(13);
    const DecoderStack dec(params, "d", m, rng);
    auto in = decoder_inputs(m, 14);
    in.maps[1] = Tensor();
    CHECK_THROWS_AS(dec(in.z_latent, in.maps, in.e_global), PipelineError);
    in.maps[1] = Tensor::zeros({m.code_dim, 3, 3});
    CHECK_THROWS_AS(dec(in.z_latent, in.maps, in.e_global), PipelineError);

    m.ablation.fpn_stages = {true, false, true};
    ParamStore params2;
    Rng rng2(13);
    const DecoderStack ablated(params2, "d", m, rng2);
    in.maps[1] = Tensor();
    CHECK_NOTHROW(ablated(in.z_latent, in.maps, in.e_global));
  }

  TEST_CASE("perturbing the mid condition changes the decoded features") {
    const ModelConfig m = small_model();
    ParamStore params;
    Rng rng(15);
    const DecoderStack dec(params, "d", m, rng);
    randomize_prefix(params, "d.spade.", 16);
    const auto in = decoder_inputs(m, 17);
    const auto base = dec(in.z_latent, in.maps, in.e_global);
    auto moved = in.maps;
    moved[1] = Tensor::from_vector(in.maps[1].shape(), in.maps[1].to_vector());
    moved[1].leaf_values()[5] += 0.1;
    const auto out = dec(in.z_latent, moved, in.e_global);
    double diff = 0.0;
    for (std::size_t i = 0; i < out.features.numel(); ++i)
      diff = std::max(diff, std::abs(out.features.value(i) - base.features.value(i)));
    CHECK(diff > 1e-6);

    ModelConfig no_mid = m;
    no_mid.ablation.fpn_stages = {true, false, true};
    ParamStore params2;
    Rng rng2(15);
    const DecoderStack ablated(params2, "d", no_mid, rng2);
    randomize_prefix(params2, "d.spade.", 16);
    CHECK(same(ablated(in.z_latent, in.maps, in.e_global).features,
               ablated(in.z_latent, moved, in.e_global).features));
  }

  TEST_CASE("reconstruction head restores the image shape deterministically") {
    const ModelConfig m = small_model();
    ParamStore params;
    Rng rng(18);
    const ReconHead head(params, m, m.stage_resolution(0), rng);
    Rng data(19);
    const Tensor f = oracle::random_tensor({m.decoder_dim, 16, 16}, data);
    const Tensor a = head(f), b = head(f);
    CHECK(a.shape() == Shape{3, 32, 32});
    CHECK(same(a, b));
    ParamStore p2;
    CHECK_THROWS_AS(ReconHead(p2, m, 12, rng), ConfigError);
  }

  TEST_CASE("mask head emits one mask per query") {
    const ModelConfig m = small_model();
    ParamStore params;
    Rng rng(20);
    const MaskHead head(params, m, rng);
    Rng data(21);
    const Tensor f = oracle::random_tensor({m.decoder_dim, 16, 16}, data);
    const Tensor e = oracle::random_tensor({m.num_queries, m.side_dim}, data);
    const auto seg = head(f, e);
    CHECK(seg.mask_logits.shape() == Shape{m.num_queries, 256});
    CHECK(seg.class_logits.shape() == Shape{m.num_queries, m.num_classes + 1});
    CHECK(seg.height == 16);
    CHECK(seg.width == 16);
  }

  TEST_CASE("orthogonal query and feature projections give zero mask logits") {
    const ModelConfig m = small_model();
    ParamStore params;
    Rng rng(22);
    const MaskHead head(params, m, rng);
    const std::size_t half = m.mask_dim / 2;
    // Queries live in the first half of the mask space, features in the second.
    auto fc2_w = params.get("mask.proj_q.fc2.weight").leaf_values();
    auto fc2_b = params.get("mask.proj_q.fc2.bias").leaf_values();
    auto z_w = params.get("mask.proj_z.weight").leaf_values();
    auto z_b = params.get("mask.proj_z.bias").leaf_values();
    const std::size_t q_rows = fc2_w.size() / m.mask_dim, z_rows = z_w.size() / m.mask_dim;
    for (std::size_t j = 0; j < m.mask_dim; ++j) {
      if (j >= half) {
        for (std::size_t r = 0; r < q_rows; ++r) fc2_w[r * m.mask_dim + j] = 0.0;
        fc2_b[j] = 0.0;
      } else {
        for (std::size_t r = 0; r < z_rows; ++r) z_w[r * m.mask_dim + j] = 0.0;
        z_b[j] = 0.0;
      }
    }
    Rng data(23);
    const auto seg = head(oracle::random_tensor({m.decoder_dim, 16, 16}, data),
                          oracle::random_tensor({m.num_queries, m.side_dim}, data));
    for (double v : seg.mask_logits.values()) CHECK(v == 0.0);
  }

  TEST_CASE("semantic labels recover a hand-built label map") {
    // Query 0 claims class 2 on the left column, query 1 claims class 0 on the right.
    SegOutput seg;
    seg.height = 2;
    seg.width = 2;
    seg.mask_logits = Tensor::from_vector({2, 4}, {20, -20, 20, -20, -20, 20, -20, 20});
    seg.class_logits = Tensor::from_vector({2, 4}, {-20, -20, 20, -20, 20, -20, -20, -20});
    CHECK(semantic_labels(seg, 3) == std::vector<std::size_t>{2, 0, 2, 0});
  }

  TEST_CASE("semantic labels match direct enumeration on random scores") {
    Rng rng(24);
    for (int trial = 0; trial < 50; ++trial) {
      SegOutput seg;
      seg.height = 3;
      seg.width = 3;
      seg.mask_logits = oracle::random_tensor({4, 9}, rng, 3.0);
      seg.class_logits = oracle::random_tensor({4, 6}, rng, 3.0);
      const auto expected = enumerate_labels(seg.mask_logits.to_vector(),
                                             seg.class_logits.to_vector(), 4, 6, 9, 5);
      CHECK(semantic_labels(seg, 5) == expected);
    }
  }

  TEST_CASE("text classifier validates embeddings and scores by cosine") {
    ModelConfig m = small_model();
    {
      ParamStore params;
      Rng rng(25);
      MaskHead head(params, m, rng);
      CHECK_THROWS_AS(head.set_text_embeddings(Tensor::zeros({m.num_classes, 4})), ConfigError);
    }
    m.text_dim = 4;
    ParamStore params;
    Rng rng(26);
    MaskHead head(params, m, rng);
    Rng data(27);
    const Tensor f = oracle::random_tensor({m.decoder_dim, 16, 16}, data);
    const Tensor e = oracle::random_tensor({m.num_queries, m.side_dim}, data);
    CHECK_THROWS_AS(head(f, e), PipelineError);
    CHECK_THROWS_AS(head.set_text_embeddings(Tensor::zeros({m.num_classes, 5})), DataError);
    CHECK_THROWS_AS(head.set_text_embeddings(Tensor::zeros({m.num_classes + 1, 4})), DataError);

    // Classes 0 and 1 share one embedding and must score alike.
    std::vector<double> text(m.num_classes * 4);
    for (std::size_t k = 0; k < m.num_classes; ++k) text[k * 4 + k % 4] = 1.0;
    text[4] = 1.0;
    text[5] = 0.0;
    head.set_text_embeddings(Tensor::from_vector({m.num_classes, 4}, text));
    CHECK(head.uses_text());
    const auto seg = head(f, e);
    const std::size_t kc = m.num_classes + 1;
    for (std::size_t q = 0; q < m.num_queries; ++q) {
      CHECK(seg.class_logits.value(q * kc) == doctest::Approx(seg.class_logits.value(q * kc + 1)));
      for (std::size_t k = 0; k < kc; ++k)
        CHECK(std::abs(seg.class_logits.value(q * kc + k)) <= m.text_scale + 1e-12);
    }
  }

  TEST_CASE("separate decoding isolates segmentation and reconstruction gradients") {
    RunConfig c = toy_preset();
    c.model.image_size = 32;
    apply_ablation(c, "separate_decoding");
    PatModel model(c);
    const auto sample = render_sample(32, c.model.num_classes, 3, 0);
    const Tensor image = raster_to_tensor(sample.image);
    const std::vector<std::size_t> labels(sample.label.pixels.begin(), sample.label.pixels.end());
    const auto pyramid = model.encoder().encode(image, c.model.ablation);

    auto grads_reach = [&](const std::string& prefix) {
      for (const auto& [name, p] : model.params().items())
        if (name.rfind(prefix, 0) == 0 && !all_zero_grad(p)) return true;
      return false;
    };

    {
      const auto r = model.forward(image, pyramid);
      const auto st = seg_loss(r.seg, model.mask_labels(labels), c.model.num_classes, c.loss);
      model.params().zero_grad();
      add(add(st.class_ce, st.mask_bce), st.mask_dice).backward();
      CHECK(grads_reach("decoder.seg."));
      CHECK_FALSE(grads_reach("decoder.rec."));
    }
    {
      const auto r = model.forward(image, pyramid);
      const PerceptualExtractor extractor;
      const auto rt = recon_losses(r.recon, image, extractor);
      model.params().zero_grad();
      add(add(rt.l1, rt.l2), rt.perceptual).backward();
      CHECK(grads_reach("decoder.rec."));
      CHECK_FALSE(grads_reach("decoder.seg."));
    }
  }
}
