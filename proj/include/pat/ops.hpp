#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pat/tensor.hpp"

// Differentiable operations. Shapes are explicit: there is no implicit
// broadcasting, only the named broadcast ops below. Feature maps are laid out
// as [C x H x W], token sets as [N x d].
namespace pat {

// Value copy with no gradient path; participates in the detach tape.
Tensor detach(const Tensor& x);
// Forward value is `target` exactly; the gradient flows to `input` as the
// identity (straight-through estimator). Under a replaying detach tape the
// value is input + recorded(target - input), the surrogate being checked.
Tensor straight_through(const Tensor& input, const Tensor& target);

Tensor matmul(const Tensor& a, const Tensor& b);     // [M x K] . [K x N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M x K] . [N x K]^T
// softmax(scale * Q K^T, rows) V as one node.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);
Tensor transpose(const Tensor& a);                   // 2-D only

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
// Adds a vector of length shape[axis] along `axis`.
Tensor bias_add(const Tensor& x, const Tensor& b, std::size_t axis);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor map_to_tokens(const Tensor& map);  // [C x H x W] -> [HW x C]
Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width);

Tensor softmax(const Tensor& x, std::size_t axis);
// Slices along `axis` with norm below `eps` pass through unchanged.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-12);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Parameter-free per-channel normalization over the spatial extent.
Tensor instance_norm(const Tensor& x, double eps = 1e-5);

// x [C x H x W], w [O x C x k x k], b [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);
// x [C x H x W], w [C x O x k x k], b [O] or undefined.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        std::size_t stride, std::size_t pad);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel);
// Extends a [C x H x W] map by `pad` on every side, repeating the edge values.
Tensor replicate_pad(const Tensor& x, std::size_t pad);
// Half-pixel-centre bilinear interpolation by an integer factor.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

// Weighted mean of per-row softmax cross entropy: sum_i w_i ce_i / sum_i w_i.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<double>& row_weights);
// Mean binary cross entropy; targets are constants in [0, 1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// Non-differentiable indexing.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor scatter_rows(std::size_t num_rows, const std::vector<std::size_t>& rows,
                    const Tensor& src);
Tensor one_hot(const std::vector<std::size_t>& indices, std::size_t classes);
// Lowest index wins ties.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace pat
