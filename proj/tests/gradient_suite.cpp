#include "gradient_suite.hpp"

#include <cmath>
#include <memory>
#include <set>
#include <stdexcept>

#include "oracles.hpp"
#include "pat/attention.hpp"
#include "pat/codebook.hpp"
#include "pat/config.hpp"
#include "pat/dataset.hpp"
#include "pat/decoder.hpp"
#include "pat/losses.hpp"
#include "pat/model.hpp"
#include "pat/nn.hpp"
#include "pat/ops.hpp"

namespace suite {

using namespace pat;

namespace {

// Contracts an output with fixed pseudo-random weights so every output
// element contributes a distinct gradient.
Tensor weighted_sum(const Tensor& y) {
  Rng rng(1000 + y.numel());
  return sum(mul(y, oracle::random_tensor(y.shape(), rng)));
}

GradCheckReport check(const std::function<Tensor(const Tensor&)>& op, Tensor x,
                      std::size_t max_elements = 0) {
  x.set_requires_grad(true);
  GradCheckOptions options;
  options.max_elements = max_elements;
  return grad_check([&](const Tensor& v) { return weighted_sum(op(v)); }, x, options);
}

// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor rnd(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return oracle::random_tensor(std::move(shape), rng, stddev);
}

void add_op_cases(std::vector<GradCase>& cases) {
  auto add_case = [&](std::string name, std::function<GradCheckReport()> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };
  add_case("matmul/a", [] {
    const Tensor b = rnd({4, 3}, 2);
    return check([&](const Tensor& a) { return matmul(a, b); }, rnd({5, 4}, 1));
  });
  add_case("matmul/b", [] {
    const Tensor a = rnd({5, 4}, 1);
    return check([&](const Tensor& b) { return matmul(a, b); }, rnd({4, 3}, 2));
  });
  add_case("matmul_nt/a", [] {
    const Tensor b = rnd({3, 4}, 2);
    return check([&](const Tensor& a) { return matmul_nt(a, b); }, rnd({5, 4}, 1));
  });
  add_case("matmul_nt/b", [] {
    const Tensor a = rnd({5, 4}, 1);
    return check([&](const Tensor& b) { return matmul_nt(a, b); }, rnd({3, 4}, 2));
  });
  for (int which = 0; which < 3; ++which) {
    add_case(std::string("scaled_attention/") + "qkv"[which], [which] {
      Tensor in[3] = {rnd({3, 4}, 3), rnd({6, 4}, 4), rnd({6, 5}, 5)};
      return check(
          [&](const Tensor& x) {
            Tensor args[3] = {in[0], in[1], in[2]};
            args[which] = x;
            return scaled_attention(args[0], args[1], args[2], 0.7);
          },
          in[which]);
    });
  }
  add_case("transpose", [] { return check([](const Tensor& x) { return transpose(x); }, rnd({3, 5}, 6)); });
  add_case("add", [] {
    const Tensor b = rnd({3, 4}, 8);
    return check([&](const Tensor& x) { return add(x, b); }, rnd({3, 4}, 7));
  });
  add_case("sub", [] {
    const Tensor b = rnd({3, 4}, 8);
    return check([&](const Tensor& x) { return sub(b, x); }, rnd({3, 4}, 7));
  });
  add_case("mul", [] {
    const Tensor b = rnd({3, 4}, 8);
    return check([&](const Tensor& x) { return mul(x, b); }, rnd({3, 4}, 7));
  });
  add_case("div/numerator", [] {
    Rng rng(9);
    const Tensor b = oracle::uniform_tensor({3, 4}, rng, 0.5, 2.0);
    return check([&](const Tensor& x) { return div(x, b); }, rnd({3, 4}, 7));
  });
  add_case("div/denominator", [] {
    Rng rng(9);
    const Tensor a = rnd({3, 4}, 7);
    return check([&](const Tensor& x) { return div(a, x); },
                 oracle::uniform_tensor({3, 4}, rng, 0.5, 2.0));
  });
  add_case("scale", [] { return check([](const Tensor& x) { return scale(x, -1.7); }, rnd({6}, 10)); });
  add_case("add_scalar", [] {
    return check([](const Tensor& x) { return square(add_scalar(x, 0.3)); }, rnd({6}, 11));
  });
  add_case("relu", [] {
    Rng rng(12);
    return check([](const Tensor& x) { return relu(x); }, away_from_zero({10}, rng));
  });
  add_case("gelu", [] { return check([](const Tensor& x) { return gelu(x); }, rnd({10}, 13, 2.0)); });
  add_case("sigmoid", [] { return check([](const Tensor& x) { return sigmoid(x); }, rnd({10}, 14, 2.0)); });
  add_case("tanh", [] { return check([](const Tensor& x) { return pat::tanh(x); }, rnd({10}, 15)); });
  add_case("exp", [] { return check([](const Tensor& x) { return pat::exp(x); }, rnd({10}, 16)); });
  add_case("log", [] {
    Rng rng(17);
    return check([](const Tensor& x) { return pat::log(x); }, oracle::uniform_tensor({10}, rng, 0.2, 3.0));
  });
  add_case("abs", [] {
    Rng rng(18);
    return check([](const Tensor& x) { return pat::abs(x); }, away_from_zero({10}, rng));
  });
  add_case("square", [] { return check([](const Tensor& x) { return square(x); }, rnd({10}, 19)); });
  add_case("clamp", [] {
    const Tensor x = Tensor::from_vector({6}, {-2.0, -0.6, -0.2, 0.3, 0.7, 1.9});
    return check([](const Tensor& v) { return clamp(v, -1.0, 1.0); }, x);
  });
  add_case("sum", [] { return check([](const Tensor& x) { return scale(sum(x), 1.0); }, rnd({2, 3}, 20)); });
  add_case("mean", [] { return check([](const Tensor& x) { return mean(x); }, rnd({2, 3}, 21)); });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    add_case("sum_axis/" + std::to_string(axis), [axis] {
      return check([axis](const Tensor& x) { return sum_axis(x, axis); }, rnd({2, 3, 4}, 22));
    });
  }
  add_case("reshape", [] {
    return check([](const Tensor& x) { return reshape(x, {4, 3}); }, rnd({2, 6}, 23));
  });
  add_case("bias_add/x", [] {
    const Tensor b = rnd({3}, 25);
    return check([&](const Tensor& x) { return bias_add(x, b, 1); }, rnd({2, 3, 4}, 24));
  });
  add_case("bias_add/b", [] {
    const Tensor x = rnd({2, 3, 4}, 24);
    return check([&](const Tensor& b) { return bias_add(x, b, 1); }, rnd({3}, 25));
  });
  add_case("concat_rows", [] {
    const Tensor other = rnd({2, 3}, 27);
    return check([&](const Tensor& x) { return concat_rows({other, x, other}); }, rnd({4, 3}, 26));
  });
  add_case("slice_rows", [] {
    return check([](const Tensor& x) { return slice_rows(x, 1, 4); }, rnd({5, 3}, 28));
  });
  add_case("map_to_tokens", [] {
    return check([](const Tensor& x) { return map_to_tokens(x); }, rnd({3, 2, 4}, 29));
  });
  add_case("tokens_to_map", [] {
    return check([](const Tensor& x) { return tokens_to_map(x, 2, 4); }, rnd({8, 3}, 30));
  });
  add_case("softmax/rows", [] {
    return check([](const Tensor& x) { return softmax(x, 1); }, rnd({3, 5}, 31));
  });
  add_case("softmax/columns", [] {
    return check([](const Tensor& x) { return softmax(x, 0); }, rnd({3, 5}, 32));
  });
  add_case("l2_normalize/vector", [] {
    return check([](const Tensor& x) { return l2_normalize(x, 0); }, rnd({8}, 33));
  });
  add_case("l2_normalize/rows", [] {
    return check([](const Tensor& x) { return l2_normalize(x, 1); }, rnd({4, 6}, 34));
  });
  add_case("layer_norm/x", [] {
    const Tensor g = rnd({5}, 36), b = rnd({5}, 37);
    return check([&](const Tensor& x) { return layer_norm(x, g, b); }, rnd({4, 5}, 35));
  });
  add_case("layer_norm/gamma", [] {
    const Tensor x = rnd({4, 5}, 35), b = rnd({5}, 37);
    return check([&](const Tensor& g) { return layer_norm(x, g, b); }, rnd({5}, 36));
  });
  add_case("layer_norm/beta", [] {
    const Tensor x = rnd({4, 5}, 35), g = rnd({5}, 36);
    return check([&](const Tensor& b) { return layer_norm(x, g, b); }, rnd({5}, 37));
  });
  add_case("instance_norm", [] {
    return check([](const Tensor& x) { return instance_norm(x); }, rnd({3, 4, 4}, 38));
  });
  // Single-channel 4x4 input with a 3x3 kernel, then a strided multi-channel case.
  add_case("conv2d/input", [] {
    const Tensor w = rnd({2, 1, 3, 3}, 40), b = rnd({2}, 41);
    return check([&](const Tensor& x) { return conv2d(x, w, b, 1, 1); }, rnd({1, 4, 4}, 39));
  });
  add_case("conv2d/kernel", [] {
    const Tensor x = rnd({1, 4, 4}, 39), b = rnd({2}, 41);
    return check([&](const Tensor& w) { return conv2d(x, w, b, 1, 1); }, rnd({2, 1, 3, 3}, 40));
  });
  add_case("conv2d/bias", [] {
    const Tensor x = rnd({1, 4, 4}, 39), w = rnd({2, 1, 3, 3}, 40);
    return check([&](const Tensor& b) { return conv2d(x, w, b, 1, 1); }, rnd({2}, 41));
  });
  add_case("conv2d/stride2", [] {
    const Tensor w = rnd({3, 2, 3, 3}, 43);
    return check([&](const Tensor& x) { return conv2d(x, w, Tensor(), 2, 1); }, rnd({2, 6, 6}, 42));
  });
  add_case("conv2d/stride2_kernel", [] {
    const Tensor x = rnd({2, 6, 6}, 42);
    return check([&](const Tensor& w) { return conv2d(x, w, Tensor(), 2, 1); }, rnd({3, 2, 3, 3}, 43));
  });
  add_case("conv_transpose2d/input", [] {
    const Tensor w = rnd({2, 3, 4, 4}, 45), b = rnd({3}, 46);
    return check([&](const Tensor& x) { return conv_transpose2d(x, w, b, 2, 1); }, rnd({2, 3, 3}, 44));
  });
  add_case("conv_transpose2d/kernel", [] {
    const Tensor x = rnd({2, 3, 3}, 44), b = rnd({3}, 46);
    return check([&](const Tensor& w) { return conv_transpose2d(x, w, b, 2, 1); }, rnd({2, 3, 4, 4}, 45));
  });
  add_case("conv_transpose2d/bias", [] {
    const Tensor x = rnd({2, 3, 3}, 44), w = rnd({2, 3, 4, 4}, 45);
    return check([&](const Tensor& b) { return conv_transpose2d(x, w, b, 2, 1); }, rnd({3}, 46));
  });
  add_case("avg_pool2d", [] {
    return check([](const Tensor& x) { return avg_pool2d(x, 2); }, rnd({2, 4, 6}, 47));
  });
  add_case("replicate_pad", [] {
    return check([](const Tensor& x) { return replicate_pad(x, 2); }, rnd({2, 3, 4}, 50));
  });
  add_case("bilinear_upsample/2", [] {
    return check([](const Tensor& x) { return bilinear_upsample(x, 2); }, rnd({2, 3, 3}, 48));
  });
  add_case("bilinear_upsample/4", [] {
    return check([](const Tensor& x) { return bilinear_upsample(x, 4); }, rnd({1, 2, 3}, 49));
  });
  add_case("cross_entropy", [] {
    return check(
        [](const Tensor& x) { return cross_entropy(x, {0, 3, 2, 3}, {1.0, 0.1, 1.0, 0.5}); },
        rnd({4, 4}, 50));
  });
  add_case("bce_with_logits", [] {
    Rng rng(52);
    const Tensor t = oracle::uniform_tensor({3, 4}, rng, 0.0, 1.0);
    return check([&](const Tensor& x) { return bce_with_logits(x, t); }, rnd({3, 4}, 51, 2.0));
  });
  add_case("straight_through", [] {
    const Tensor target = rnd({3, 4}, 54);
    return check([&](const Tensor& x) { return straight_through(x, target); }, rnd({3, 4}, 53));
  });
}

void add_attention_cases(std::vector<GradCase>& cases) {
  for (int which = 0; which < 3; ++which) {
    cases.push_back({std::string("attn/") + "qkv"[which], [which] {
                       Tensor in[3] = {rnd({3, 4}, 60), rnd({5, 4}, 61), rnd({5, 3}, 62)};
                       return check(
                           [&](const Tensor& x) {
                             Tensor args[3] = {in[0], in[1], in[2]};
                             args[which] = x;
                             return attn(args[0], args[1], args[2]);
                           },
                           in[which]);
                     }});
    cases.push_back({std::string("hs_attn/") + "qkv"[which], [which] {
                       Tensor in[3] = {rnd({3, 4}, 63), rnd({5, 4}, 64), rnd({5, 4}, 65)};
                       return check(
                           [&](const Tensor& x) {
                             Tensor args[3] = {in[0], in[1], in[2]};
                             args[which] = x;
                             return hs_attn(args[0], args[1], args[2], 3.0);
                           },
                           in[which]);
                     }});
  }
  cases.push_back({"vq/features", [] {
                     Codebook cb(rnd({4, 3}, 66), Stage::Early);
                     return check([&](const Tensor& v) { return vq(cb, v, false).z_q; }, rnd({6, 3}, 67));
                   }});
  cases.push_back({"vmf_vq/features", [] {
                     Codebook cb(rnd({4, 3}, 68), Stage::Mid);
                     return check([&](const Tensor& v) { return vmf_vq(cb, v, false).z_q; }, rnd({6, 3}, 69));
                   }});
  cases.push_back({"vq_loss/features", [] {
                     Codebook cb(rnd({4, 3}, 70), Stage::Late);
                     return check(
                         [&](const Tensor& v) {
                           const auto q = vq(cb, v, false);
                           return vq_loss(q.features, q.codes, 0.25);
                         },
                         rnd({6, 3}, 71));
                   }});
  cases.push_back({"vq_loss/codebook", [] {
                     const Tensor v = rnd({6, 3}, 73);
                     Tensor tokens = rnd({4, 3}, 72);
                     tokens.set_requires_grad(true);
                     Codebook cb(tokens, Stage::Late);
                     return grad_check(
                         [&](const Tensor&) {
                           const auto q = vmf_vq(cb, v, false);
                           return vq_loss(q.features, q.codes, 0.25);
                         },
                         tokens);
                   }});
}

void add_layer_cases(std::vector<GradCase>& cases) {
  cases.push_back({"token_mixer", [] {
                     ParamStore params;
                     Rng rng(80);
                     TokenMixer mixer(params, "m", 5, 3, 4, 6, 7, rng);
                     return check([&](const Tensor& x) { return mixer(x); }, rnd({5, 4}, 81));
                   }});
  cases.push_back({"token_mixer/params", [] {
                     ParamStore params;
                     Rng rng(80);
                     TokenMixer mixer(params, "m", 5, 3, 4, 6, 7, rng);
                     const Tensor x = rnd({5, 4}, 81);
                     Tensor w = mixer.token_in.weight;
                     return grad_check([&](const Tensor&) { return weighted_sum(mixer(x)); }, w);
                   }});
  auto spade_case = [](int which) {
    return [which] {
      ParamStore params;
      Rng rng(82);
      Conv2d gamma(params, "g", 2, 3, 3, 1, 0, rng), beta(params, "b", 2, 3, 3, 1, 0, rng);
      Tensor x = rnd({3, 6, 6}, 83), cond = rnd({2, 6, 6}, 84);
      if (which == 0) return check([&](const Tensor& v) { return spade(v, cond, gamma, beta); }, x);
      if (which == 1) return check([&](const Tensor& c) { return spade(x, c, gamma, beta); }, cond);
      Tensor w = which == 2 ? gamma.weight : beta.weight;
      return grad_check([&](const Tensor&) { return weighted_sum(spade(x, cond, gamma, beta)); }, w);
    };
  };
  cases.push_back({"spade/x", spade_case(0)});
  cases.push_back({"spade/condition", spade_case(1)});
  cases.push_back({"spade/gamma_conv", spade_case(2)});
  cases.push_back({"spade/beta_conv", spade_case(3)});
  cases.push_back({"transformer_layer", [] {
                     ParamStore params;
                     Rng rng(85);
                     TransformerLayer layer(params, "t", 8, 2, rng);
                     const Tensor pos = sinusoidal_position_2d(2, 3, 8);
                     return check([&](const Tensor& x) { return layer(x, pos); }, rnd({6, 8}, 86));
                   }});
  cases.push_back({"cross_attention", [] {
                     ParamStore params;
                     Rng rng(87);
                     CrossAttention layer(params, "c", 8, 4, rng);
                     const Tensor kv = rnd({5, 4}, 89);
                     return check([&](const Tensor& q) { return layer(q, kv); }, rnd({3, 8}, 88));
                   }});
}

void add_loss_cases(std::vector<GradCase>& cases) {
  cases.push_back({"tv_loss", [] {
                     return check([](const Tensor& x) { return tv_loss(x); }, rnd({3, 4, 5}, 90));
                   }});
  cases.push_back({"crf_loss", [] {
                     Rng rng(92);
                     const Tensor image = oracle::uniform_tensor({3, 4, 4}, rng, 0.0, 1.0);
                     return check([&](const Tensor& x) { return crf_loss(x, image, 0.3); },
                                  rnd({3, 4, 4}, 91));
                   }});
  cases.push_back({"recon_losses", [] {
                     Rng rng(94);
                     const Tensor target = oracle::uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
                     const PerceptualExtractor extractor;
                     Tensor pred = oracle::uniform_tensor({3, 8, 8}, rng, 0.0, 1.0);
                     // Keep |pred - target| away from the L1 kink.
                     auto pv = pred.leaf_values();
                     for (std::size_t i = 0; i < pv.size(); ++i) {
                       const double d = pv[i] - target.value(i);
                       if (std::fabs(d) < 0.05) pv[i] = target.value(i) + (d < 0 ? -0.05 : 0.05);
                     }
                     return check(
                         [&](const Tensor& p) {
                           const auto r = recon_losses(p, target, extractor);
                           return add(add(r.l1, r.l2), r.perceptual);
                         },
                         pred, 64);
                   }});
  auto seg_case = [](bool masks) {
    return [masks] {
      SegOutput seg;
      seg.height = 4;
      seg.width = 4;
      seg.mask_logits = rnd({5, 16}, 95, 2.0);
      seg.class_logits = rnd({5, 4}, 96);
      std::vector<std::size_t> labels(16, 0);
      for (std::size_t i = 0; i < 16; ++i) labels[i] = (i % 4 >= 2) ? 2 : (i < 8 ? 0 : 1);
      labels[5] = kIgnoreLabel;
      const LossConfig config;
      auto f = [&](const Tensor& x) {
        SegOutput s = seg;
        (masks ? s.mask_logits : s.class_logits) = x;
        const auto t = seg_loss(s, labels, 3, config);
        return add(add(scale(t.class_ce, 2.0), scale(t.mask_bce, 5.0)), scale(t.mask_dice, 5.0));
      };
      Tensor x = masks ? seg.mask_logits : seg.class_logits;
      x.set_requires_grad(true);
      return grad_check(f, x);
    };
  };
  cases.push_back({"seg_loss/mask_logits", seg_case(true)});
  cases.push_back({"seg_loss/class_logits", seg_case(false)});
  cases.push_back({"total_loss", [] {
                     const LossConfig config;
                     return check(
                         [&](const Tensor& x) {
                           return total_loss(square(slice_rows(x, 0, 1)), slice_rows(x, 1, 2),
                                             pat::exp(slice_rows(x, 2, 3)), slice_rows(x, 3, 4),
                                             config);
                         },
                         rnd({4, 1}, 97));
                   }});
}

// Toy model at 32x32 with two codes per stage codebook. The seed is one
// where the latent codebook is not collapsed at init: with a single latent code
// the instance norm in SPADE sees near-zero variance and finite differences
// stop resolving the gradient.
RunConfig grad_config() {
  RunConfig c = toy_preset();
  c.model.image_size = 32;
  c.model.codebook_sizes = {2, 2, 2, 64};
  c.model.num_classes = 3;
  c.train.seed = 2;
  return c;
}

// Whole-model total loss, checked at a few elements of every parameter tensor.
// Image values are pushed away from 0.5 so the L1 term stays clear of its kink
// at the initial prediction.
void add_model_cases(std::vector<GradCase>& cases) {
  struct Fixture {
    std::unique_ptr<PatModel> model;
    Tensor image;
    FrozenPyramid pyramid;
    std::vector<std::size_t> labels;
  };
  auto fixture = std::make_shared<Fixture>();
  auto ensure = [fixture] {
    if (fixture->model) return;
    fixture->model = std::make_unique<PatModel>(grad_config());
    const auto s = render_sample(32, 3, 11, 0);
    fixture->image = raster_to_tensor(s.image);
    for (auto& v : fixture->image.leaf_values()) v = v < 0.5 ? 0.25 * v : 0.75 + 0.25 * v;
    fixture->labels.assign(s.label.pixels.begin(), s.label.pixels.end());
    fixture->pyramid = fixture->model->encoder().encode(fixture->image, fixture->model->config().model.ablation);
    const auto r = fixture->model->forward(fixture->image, fixture->pyramid);
    const auto& idx = r.pipe.latent.assignment.indices;
    if (std::set<std::size_t>(idx.begin(), idx.end()).size() < 2) {
      throw std::runtime_error("gradient fixture: latent codebook collapsed at init");
    }
  };
  auto loss = [fixture] {
    PipelineOptions options;
    options.record_usage = false;
    const auto r = fixture->model->forward(fixture->image, fixture->pyramid, options);
    return fixture->model->loss(r, fixture->image, fixture->labels).total_tensor;
  };
  cases.push_back({"model/codebook.early", [ensure, loss, fixture] {
                     ensure();
                     Tensor w = fixture->model->params().get("codebook.early");
                     return grad_check([&](const Tensor&) { return loss(); }, w);
                   }});
  cases.push_back({"model/all_parameters", [ensure, loss, fixture] {
                     ensure();
                     GradCheckReport worst;
                     GradCheckOptions options;
                     options.max_elements = 2;
                     std::size_t checked = 0;
                     for (const auto& [name, param] : fixture->model->params().items()) {
                       Tensor w = param;
                       const auto r = grad_check([&](const Tensor&) { return loss(); }, w, options);
                       checked += r.checked;
                       if (r.max_rel_error >= worst.max_rel_error) worst = r;
                     }
                     worst.checked = checked;
                     worst.passed = worst.max_rel_error <= options.tolerance;
                     return worst;
                   }});
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  add_op_cases(cases);
  add_attention_cases(cases);
  add_layer_cases(cases);
  add_loss_cases(cases);
  add_model_cases(cases);
  return cases;
}

}  // namespace suite
