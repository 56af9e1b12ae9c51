#include "pat/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pat/error.hpp"

namespace pat {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMapMat(v.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MapMat as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Products run on Eigen-owned (aligned) copies. Vectorized kernels peel loops
// by address, so products straight on heap vectors would round differently
// from run to run.
RowMat load(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return as_mat(v, rows, cols);
}

std::vector<double> store(const RowMat& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

void accumulate(std::vector<double>& dst, const RowMat& m) {
  const double* src = m.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(x.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

// Outer/extent/inner decomposition of a shape around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  const auto& xv = x.node()->data;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * df(a.data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor straight_through(const Tensor& input, const Tensor& target) {
  require_same(input, target, "straight_through");
  std::vector<double> out;
  if (current_detach_mode() == DetachMode::Replay) {
    // Surrogate input + sg(target - input), with the offset replayed.
    const Tensor recorded_target = detach(target);
    const Tensor recorded_input = detach(input);
    const auto& iv = input.node()->data;
    const auto& ov = recorded_target.node()->data;
    const auto& rv = recorded_input.node()->data;
    out.resize(iv.size());
    for (std::size_t i = 0; i < iv.size(); ++i) out[i] = iv[i] + (ov[i] - rv[i]);
  } else {
    detach(target);
    detach(input);
    out.assign(target.values().begin(), target.values().end());
  }
  return make_result("straight_through", input.shape(), std::move(out), {input},
                     [](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& ga = a.grad_buffer();
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const RowMat out = load(a.node()->data, m, k) * load(b.node()->data, k, n);
  return make_result("matmul", {m, n}, store(out), {a, b}, [m, k, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    const RowMat g = load(self.grad, m, n);
    if (na.requires_grad) {
      accumulate(na.grad_buffer(), g * load(nb.data, k, n).transpose());
    }
    if (nb.requires_grad) {
      accumulate(nb.grad_buffer(), load(na.data, m, k).transpose() * g);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(0);
  if (b.size(1) != k) {
    throw DimensionError("matmul_nt: inner extents disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + "^T");
  }
  const RowMat out = load(a.node()->data, m, k) * load(b.node()->data, n, k).transpose();
  return make_result("matmul", {m, n}, store(out), {a, b}, [m, k, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    const RowMat g = load(self.grad, m, n);
    if (na.requires_grad) {
      accumulate(na.grad_buffer(), g * load(nb.data, n, k));
    }
    if (nb.requires_grad) {
      accumulate(nb.grad_buffer(), g.transpose() * load(na.data, m, k));
    }
  });
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require_rank(q, 2, "scaled_attention");
  require_rank(k, 2, "scaled_attention");
  require_rank(v, 2, "scaled_attention");
  const std::size_t m = q.size(0), d = q.size(1), n = k.size(0), e = v.size(1);
  if (k.size(1) != d || v.size(0) != n) {
    throw DimensionError("scaled_attention: incompatible " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  // The row-softmax weights are kept for the backward pass.
  auto probs = std::make_shared<RowMat>(load(q.node()->data, m, d) *
                                        load(k.node()->data, n, d).transpose());
  RowMat& p = *probs;
  p *= scale;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
  }
  const RowMat out = p * load(v.node()->data, n, e);
  return make_result(
      "scaled_attention", {m, e}, store(out), {q, k, v},
      [m, d, n, e, scale, probs](Node& self) {
        Node& nq = in(self, 0);
        Node& nk = in(self, 1);
        Node& nv = in(self, 2);
        const RowMat g = load(self.grad, m, e);
        const RowMat& pm = *probs;
        if (nv.requires_grad) accumulate(nv.grad_buffer(), pm.transpose() * g);
        if (!nq.requires_grad && !nk.requires_grad) return;
        RowMat ds = g * load(nv.data, n, e).transpose();
        for (Eigen::Index r = 0; r < ds.rows(); ++r) {
          const double dot = ds.row(r).dot(pm.row(r));
          ds.row(r) = (pm.row(r).array() * (ds.row(r).array() - dot)).matrix();
        }
        ds *= scale;
        if (nq.requires_grad) accumulate(nq.grad_buffer(), ds * load(nk.data, n, d));
        if (nk.requires_grad) accumulate(nk.grad_buffer(), ds.transpose() * load(nq.data, m, d));
      });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> out(m * n);
  as_mat(out, n, m) = as_mat(a.node()->data, m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    Node& na = in(self, 0);
    if (!na.requires_grad) return;
    as_mat(na.grad_buffer(), m, n) += as_mat(self.grad, n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t j = 0; j < 2; ++j) {
      Node& n = in(self, j);
      if (!n.requires_grad) continue;
      auto& g = n.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result("div", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.data[i] / nb.data[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double v) { return s * v; },
               [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; },
               [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result("sum", {1}, {total}, {x}, [](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result("mean", {1}, {total / n}, {x}, [n](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (auto& gi : g) gi += self.grad[0] / n;
  });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const auto v = axis_view(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto& xv = x.node()->data;
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += xv[(o * v.extent + e) * v.inner + i];
  return make_result("sum_axis", out_shape, std::move(out), {x}, [v](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i)
          g[(o * v.extent + e) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  return make_result("reshape", std::move(shape), x.to_vector(), {x}, [](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor bias_add(const Tensor& x, const Tensor& b, std::size_t axis) {
  const auto v = axis_view(x.shape(), axis, "bias_add");
  if (b.numel() != v.extent) {
    throw DimensionError("bias_add: bias " + shape_str(b.shape()) + " does not match axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto& xv = x.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t idx = (o * v.extent + e) * v.inner + i;
        out[idx] = xv[idx] + bv[e];
      }
  return make_result("bias_add", x.shape(), std::move(out), {x, b}, [v](Node& self) {
    Node& nx = in(self, 0);
    Node& nb = in(self, 1);
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t e = 0; e < v.extent; ++e)
          for (std::size_t i = 0; i < v.inner; ++i)
            g[e] += self.grad[(o * v.extent + e) * v.inner + i];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].numel() / std::max<std::size_t>(1, parts[0].size(0));
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.size(1) != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.size(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result("concat_rows", {rows, cols}, std::move(out), parts,
                     [offsets](Node& self) {
                       for (std::size_t j = 0; j < self.inputs.size(); ++j) {
                         Node& n = in(self, j);
                         if (!n.requires_grad) continue;
                         auto& g = n.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[offsets[j] + i];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.size(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t cols = x.size(1);
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return make_result("slice_rows", {end - begin, cols}, std::move(out), {x},
                     [begin, cols](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& g = a.grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[begin * cols + i] += self.grad[i];
                     });
}

Tensor map_to_tokens(const Tensor& map) {
  require_rank(map, 3, "map_to_tokens");
  const std::size_t c = map.size(0), hw = map.size(1) * map.size(2);
  return transpose(reshape(map, {c, hw}));
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 2, "tokens_to_map");
  if (tokens.size(0) != height * width) {
    throw DimensionError("tokens_to_map: " + shape_str(tokens.shape()) + " is not " +
                         std::to_string(height) + "x" + std::to_string(width) + " tokens");
  }
  const std::size_t c = tokens.size(1);
  return reshape(transpose(tokens), {c, height, width});
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto v = axis_view(x.shape(), axis, "softmax");
  const auto& xv = x.node()->data;
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, xv[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double ex = std::exp(xv[base + e * v.inner] - mx);
        out[base + e * v.inner] = ex;
        total += ex;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  return make_result("softmax", x.shape(), std::move(out), {x}, [v](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t k = base + e * v.inner;
          dot += self.grad[k] * self.data[k];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t k = base + e * v.inner;
          g[k] += self.data[k] * (self.grad[k] - dot);
        }
      }
  });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
  const auto v = axis_view(x.shape(), axis, "l2_normalize");
  const auto& xv = x.node()->data;
  std::vector<double> out(xv.size());
  std::vector<double> norms(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double ss = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double t = xv[base + e * v.inner];
        ss += t * t;
      }
      const double n = std::sqrt(ss);
      norms[o * v.inner + i] = n;
      const double inv = n < eps ? 1.0 : 1.0 / n;
      for (std::size_t e = 0; e < v.extent; ++e)
        out[base + e * v.inner] = xv[base + e * v.inner] * inv;
    }
  return make_result("l2_normalize", x.shape(), std::move(out), {x},
                     [v, eps, norms = std::move(norms)](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& g = a.grad_buffer();
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           const std::size_t base = o * v.extent * v.inner + i;
                           const double n = norms[o * v.inner + i];
                           if (n < eps) {
                             for (std::size_t e = 0; e < v.extent; ++e)
                               g[base + e * v.inner] += self.grad[base + e * v.inner];
                             continue;
                           }
                           double dot = 0.0;
                           for (std::size_t e = 0; e < v.extent; ++e) {
                             const std::size_t k = base + e * v.inner;
                             dot += self.grad[k] * self.data[k];
                           }
                           for (std::size_t e = 0; e < v.extent; ++e) {
                             const std::size_t k = base + e * v.inner;
                             g[k] += (self.grad[k] - self.data[k] * dot) / n;
                           }
                         }
                     });
}


Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.size(0), d = x.size(1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters do not match width " +
                         std::to_string(d));
  }
  const auto& xv = x.node()->data;
  const auto& gv = gamma.node()->data;
  const auto& bv = beta.node()->data;
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xv[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = xv[r * d + c] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xv[r * d + c] - mu) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& nx = in(self, 0);
        Node& ng = in(self, 1);
        Node& nb = in(self, 2);
        if (ng.requires_grad) {
          auto& g = ng.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c] * xhat[r * d + c];
        }
        if (nb.requires_grad) {
          auto& g = nb.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
        }
        if (nx.requires_grad) {
          auto& g = nx.grad_buffer();
          const double dd = static_cast<double>(d);
          for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = self.grad[r * d + c] * ng.data[c];
              s1 += gh;
              s2 += gh * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = self.grad[r * d + c] * ng.data[c];
              g[r * d + c] += inv_std[r] * (gh - s1 / dd - xhat[r * d + c] * s2 / dd);
            }
          }
        }
      });
}

Tensor instance_norm(const Tensor& x, double eps) {
  require_rank(x, 3, "instance_norm");
  const std::size_t c = x.size(0), hw = x.size(1) * x.size(2);
  const auto& xv = x.node()->data;
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mu += xv[ch * hw + p];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double t = xv[ch * hw + p] - mu;
      var += t * t;
    }
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = is;
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = (xv[ch * hw + p] - mu) * is;
  }
  return make_result("instance_norm", x.shape(), std::move(out), {x},
                     [c, hw, inv_std = std::move(inv_std)](Node& self) {
                       Node& nx = in(self, 0);
                       if (!nx.requires_grad) return;
                       auto& g = nx.grad_buffer();
                       const double n = static_cast<double>(hw);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double s1 = 0.0, s2 = 0.0;
                         for (std::size_t p = 0; p < hw; ++p) {
                           s1 += self.grad[ch * hw + p];
                           s2 += self.grad[ch * hw + p] * self.data[ch * hw + p];
                         }
                         for (std::size_t p = 0; p < hw; ++p) {
                           const std::size_t k = ch * hw + p;
                           g[k] += inv_std[ch] * (self.grad[k] - s1 / n - self.data[k] * s2 / n);
                         }
                       }
                     });
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

// cols[(c*k + ky)*k + kx][oy*out_w + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t ncol = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncol;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] =
                inside ? x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t ncol = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncol;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
              static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t c = x.size(0), h = x.size(1), wd = x.size(2);
  const std::size_t o = w.size(0), k = w.size(2);
  if (w.size(1) != c || w.size(3) != k) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (stride == 0 || h + 2 * pad < k || wd + 2 * pad < k) {
    throw DimensionError("conv2d: invalid geometry for input " + shape_str(x.shape()));
  }
  if (b.defined() && b.numel() != o) {
    throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " for " + std::to_string(o) +
                         " output channels");
  }
  ConvGeometry g{c, h, wd, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                 (wd + 2 * pad - k) / stride + 1};
  const std::size_t ck = c * k * k, ncol = g.out_h * g.out_w;
  std::vector<double> cols(ck * ncol);
  im2col(x.node()->data.data(), g, cols.data());
  std::vector<double> out(o * ncol);
  as_mat(out, o, ncol).noalias() = as_mat(w.node()->data, o, ck) * as_mat(cols, ck, ncol);
  if (b.defined()) {
    const auto& bv = b.node()->data;
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < ncol; ++p) out[oc * ncol + p] += bv[oc];
  }
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(
      "conv2d", {o, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, o, ck, ncol, cols = std::move(cols)](Node& self) {
        Node& nx = in(self, 0);
        Node& nw = in(self, 1);
        const auto gout = as_mat(self.grad, o, ncol);
        if (nw.requires_grad) {
          as_mat(nw.grad_buffer(), o, ck).noalias() += gout * as_mat(cols, ck, ncol).transpose();
        }
        if (self.inputs.size() > 2 && in(self, 2).requires_grad) {
          auto& gb = in(self, 2).grad_buffer();
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t p = 0; p < ncol; ++p) gb[oc] += self.grad[oc * ncol + p];
        }
        if (nx.requires_grad) {
          std::vector<double> dcols(ck * ncol);
          as_mat(dcols, ck, ncol).noalias() = as_mat(nw.data, o, ck).transpose() * gout;
          col2im(dcols.data(), g, nx.grad_buffer().data());
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                        std::size_t pad) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  const std::size_t c = x.size(0), h = x.size(1), wd = x.size(2);
  const std::size_t o = w.size(1), k = w.size(2);
  if (w.size(0) != c || w.size(3) != k) {
    throw DimensionError("conv_transpose2d: kernel " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  if (stride == 0 || (h - 1) * stride + k < 2 * pad + 1) {
    throw DimensionError("conv_transpose2d: invalid geometry");
  }
  if (b.defined() && b.numel() != o) {
    throw DimensionError("conv_transpose2d: bias size mismatch");
  }
  const std::size_t out_h = (h - 1) * stride + k - 2 * pad;
  const std::size_t out_w = (wd - 1) * stride + k - 2 * pad;
  // Output plane is the "input" of the adjoint convolution.
  ConvGeometry g{o, out_h, out_w, k, stride, pad, h, wd};
  if ((out_h + 2 * pad - k) / stride + 1 != h || (out_w + 2 * pad - k) / stride + 1 != wd) {
    throw DimensionError("conv_transpose2d: geometry is not invertible");
  }
  const std::size_t ok = o * k * k, hw = h * wd;
  std::vector<double> cols(ok * hw);
  as_mat(cols, ok, hw).noalias() =
      as_mat(w.node()->data, c, ok).transpose() * as_mat(x.node()->data, c, hw);
  std::vector<double> out(o * out_h * out_w, 0.0);
  col2im(cols.data(), g, out.data());
  if (b.defined()) {
    const auto& bv = b.node()->data;
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < out_h * out_w; ++p) out[oc * out_h * out_w + p] += bv[oc];
  }
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result("conv_transpose2d", {o, out_h, out_w}, std::move(out), std::move(inputs),
                     [g, c, ok, hw, o](Node& self) {
                       Node& nx = in(self, 0);
                       Node& nw = in(self, 1);
                       std::vector<double> dcols(ok * hw);
                       im2col(self.grad.data(), g, dcols.data());
                       if (nx.requires_grad) {
                         as_mat(nx.grad_buffer(), c, hw).noalias() +=
                             as_mat(nw.data, c, ok) * as_mat(dcols, ok, hw);
                       }
                       if (nw.requires_grad) {
                         as_mat(nw.grad_buffer(), c, ok).noalias() +=
                             as_mat(nx.data, c, hw) * as_mat(dcols, ok, hw).transpose();
                       }
                       if (self.inputs.size() > 2 && in(self, 2).requires_grad) {
                         auto& gb = in(self, 2).grad_buffer();
                         const std::size_t plane = g.height * g.width;
                         for (std::size_t oc = 0; oc < o; ++oc)
                           for (std::size_t p = 0; p < plane; ++p)
                             gb[oc] += self.grad[oc * plane + p];
                       }
                     });
}

Tensor avg_pool2d(const Tensor& x, std::size_t kernel) {
  require_rank(x, 3, "avg_pool2d");
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  if (kernel == 0 || h % kernel != 0 || w % kernel != 0) {
    throw DimensionError("avg_pool2d: kernel " + std::to_string(kernel) +
                         " does not tile " + shape_str(x.shape()));
  }
  const std::size_t oh = h / kernel, ow = w / kernel;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  const auto& xv = x.node()->data;
  std::vector<double> out(c * oh * ow, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        out[(ch * oh + y / kernel) * ow + xx / kernel] += xv[(ch * h + y) * w + xx] * inv;
  return make_result("avg_pool2d", {c, oh, ow}, std::move(out), {x},
                     [c, h, w, oh, ow, kernel, inv](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& g = a.grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t y = 0; y < h; ++y)
                           for (std::size_t xx = 0; xx < w; ++xx)
                             g[(ch * h + y) * w + xx] +=
                                 self.grad[(ch * oh + y / kernel) * ow + xx / kernel] * inv;
                     });
}

Tensor replicate_pad(const Tensor& x, std::size_t pad) {
  require_rank(x, 3, "replicate_pad");
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  const std::size_t oh = h + 2 * pad, ow = w + 2 * pad;
  // Source index of each padded row and column.
  auto source = [pad](std::size_t o, std::size_t n) {
    return o < pad ? 0 : std::min(o - pad, n - 1);
  };
  const auto& xv = x.node()->data;
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(ch * oh + y) * ow + xx] = xv[(ch * h + source(y, h)) * w + source(xx, w)];
  return make_result("replicate_pad", {c, oh, ow}, std::move(out), {x},
                     [c, h, w, oh, ow, source](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& g = a.grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t y = 0; y < oh; ++y)
                           for (std::size_t xx = 0; xx < ow; ++xx)
                             g[(ch * h + source(y, h)) * w + source(xx, w)] +=
                                 self.grad[(ch * oh + y) * ow + xx];
                     });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double w_hi;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "bilinear_upsample");
  if (factor == 0) throw DimensionError("bilinear_upsample: factor must be positive");
  if (factor == 1) return x;
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  const std::size_t oh = h * factor, ow = w * factor;
  auto ty = bilinear_taps(h, factor);
  auto tx = bilinear_taps(w, factor);
  const auto& xv = x.node()->data;
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const Tap& a = ty[y];
        const Tap& b = tx[xx];
        const double* plane = xv.data() + ch * h * w;
        const double top = plane[a.lo * w + b.lo] * (1.0 - b.w_hi) + plane[a.lo * w + b.hi] * b.w_hi;
        const double bot = plane[a.hi * w + b.lo] * (1.0 - b.w_hi) + plane[a.hi * w + b.hi] * b.w_hi;
        out[(ch * oh + y) * ow + xx] = top * (1.0 - a.w_hi) + bot * a.w_hi;
      }
  return make_result("bilinear_upsample", {c, oh, ow}, std::move(out), {x},
                     [c, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](Node& self) {
                       Node& n = in(self, 0);
                       if (!n.requires_grad) return;
                       auto& g = n.grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t y = 0; y < oh; ++y)
                           for (std::size_t xx = 0; xx < ow; ++xx) {
                             const double go = self.grad[(ch * oh + y) * ow + xx];
                             const Tap& a = ty[y];
                             const Tap& b = tx[xx];
                             double* plane = g.data() + ch * h * w;
                             plane[a.lo * w + b.lo] += go * (1.0 - a.w_hi) * (1.0 - b.w_hi);
                             plane[a.lo * w + b.hi] += go * (1.0 - a.w_hi) * b.w_hi;
                             plane[a.hi * w + b.lo] += go * a.w_hi * (1.0 - b.w_hi);
                             plane[a.hi * w + b.hi] += go * a.w_hi * b.w_hi;
                           }
                     });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<double>& row_weights) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.size(0), k = logits.size(1);
  if (targets.size() != n || row_weights.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  const auto& lv = logits.node()->data;
  std::vector<double> probs(n * k);
  double loss = 0.0, wsum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) throw DimensionError("cross_entropy: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, lv[r * k + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      probs[r * k + c] = std::exp(lv[r * k + c] - mx);
      total += probs[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] /= total;
    loss += row_weights[r] * (mx + std::log(total) - lv[r * k + targets[r]]);
    wsum += row_weights[r];
  }
  if (wsum <= 0.0) throw DimensionError("cross_entropy: row weights sum to zero");
  return make_result("cross_entropy", {1}, {loss / wsum}, {logits},
                     [n, k, wsum, targets, row_weights, probs = std::move(probs)](Node& self) {
                       Node& a = in(self, 0);
                       if (!a.requires_grad) return;
                       auto& g = a.grad_buffer();
                       const double go = self.grad[0] / wsum;
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < k; ++c) {
                           const double t = c == targets[r] ? 1.0 : 0.0;
                           g[r * k + c] += go * row_weights[r] * (probs[r * k + c] - t);
                         }
                     });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same(logits, targets, "bce_with_logits");
  const auto& zv = logits.node()->data;
  const auto& tv = targets.node()->data;
  const double n = static_cast<double>(zv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i];
    loss += std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::fabs(z)));
  }
  return make_result("bce_with_logits", {1}, {loss / n}, {logits, targets}, [n](Node& self) {
    Node& a = in(self, 0);
    const Node& t = in(self, 1);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    const double go = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = a.data[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g[i] += go * (s - t.data[i]);
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t cols = x.size(1);
  std::vector<double> out(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.size(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return make_result("gather_rows", {rows.size(), cols}, std::move(out), {x}, nullptr);
}

Tensor scatter_rows(std::size_t num_rows, const std::vector<std::size_t>& rows,
                    const Tensor& src) {
  require_rank(src, 2, "scatter_rows");
  if (src.size(0) != rows.size()) throw DimensionError("scatter_rows: row count mismatch");
  const std::size_t cols = src.size(1);
  std::vector<double> out(num_rows * cols, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= num_rows) throw DimensionError("scatter_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) out[rows[r] * cols + c] += src.value(r * cols + c);
  }
  return make_result("scatter_rows", {num_rows, cols}, std::move(out), {src}, nullptr);
}

Tensor one_hot(const std::vector<std::size_t>& indices, std::size_t classes) {
  std::vector<double> out(indices.size() * classes, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= classes) throw DimensionError("one_hot: index out of range");
    out[r * classes + indices[r]] = 1.0;
  }
  return Tensor::from_vector({indices.size(), classes}, std::move(out));
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  require_rank(x, 2, "argmax_rows");
  const std::size_t n = x.size(0), k = x.size(1);
  std::vector<std::size_t> out(n, 0);
  const auto v = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    double best = v[r * k];
    for (std::size_t c = 1; c < k; ++c) {
      if (v[r * k + c] > best) {
        best = v[r * k + c];
        out[r] = c;
      }
    }
  }
  return out;
}

}  // namespace pat
