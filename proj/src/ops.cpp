#include "spamdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "spamdet/errors.hpp"

namespace spamdet::ops {

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

// True when an active tape exists and some input needs a gradient.
bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

template <typename Rule>
void record(Tensor& out, Rule&& rule) {
  out.node().requires_grad = true;
  GradTape::active()->record(out, std::forward<Rule>(rule));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  const float* A = a.data().data();
  const float* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = A[i * k + p];
      const float* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
  Tensor result({m, n}, std::move(out));
  if (tracking({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr();
    record(result, [an, bn, on, m, k, n] {
      const float* G = on->grad.data();
      const float* A = an->data.data();
      const float* B = bn->data.data();
      if (an->requires_grad) {
        float* ga = an->grad_buffer().data();
        for (std::size_t i = 0; i < m; ++i) {
          const float* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float* brow = B + p * n;
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        float* gb = bn->grad_buffer().data();
        for (std::size_t i = 0; i < m; ++i) {
          const float* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float av = A[i * k + p];
            float* gbrow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<float> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  Tensor result({n, m}, std::move(out));
  if (tracking({&a})) {
    NodePtr an = a.node_ptr(), on = result.node_ptr();
    record(result, [an, on, m, n] {
      auto& ga = an->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr();
    record(result, [an, bn, on] {
      const auto& g = on->grad;
      for (const auto& in : {an, bn}) {
        if (!in->requires_grad) continue;
        auto& gi = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor result(a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr();
    record(result, [an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result(a.shape(), std::move(out));
  if (tracking({&a})) {
    NodePtr an = a.node_ptr(), on = result.node_ptr();
    record(result, [an, on, factor] {
      auto& ga = an->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return result;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_row_bias: bias " + to_string(bias.shape()) +
                         " does not match rows of " + to_string(x.shape()));
  }
  std::vector<float> out(m * n);
  const auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  Tensor result(x.shape(), std::move(out));
  if (tracking({&x, &bias})) {
    NodePtr xn = x.node_ptr(), bn = bias.node_ptr(), on = result.node_ptr();
    record(result, [xn, bn, on, m, n] {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t len = shape[axis];

  const auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      float total = 0.0f;
      for (std::size_t l = 0; l < len; ++l) {
        const float e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      const float inv = 1.0f / total;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  Tensor result(shape, std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on, outer, inner, len] {
      const auto& g = on->grad;
      const auto& y = on->data;
      auto& gx = xn->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          float dot = 0.0f;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            dot += g[idx] * y[idx];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                         to_string(bias.shape()) + " must match last dim of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<float> out(xv.size());
  std::vector<float> xhat(xv.size());
  std::vector<float> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<float>(inv);
    for (std::size_t j = 0; j < n; ++j) {
      const auto h = static_cast<float>((row[j] - mean) * inv);
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (tracking({&x, &gain, &bias})) {
    NodePtr xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr(),
            on = result.node_ptr();
    record(result, [xn, gn, bn, on, rows, n, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const auto& g = on->grad;
      if (gn->requires_grad) {
        auto& gg = gn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        const auto& gamma = gn->data;
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = static_cast<double>(g[r * n + j]) * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[r * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += static_cast<float>(
                rstd[r] * (dxhat[j] - mean_d - xhat[r * n + j] * mean_dx));
          }
        }
      }
    });
  }
  return result;
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  const auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const float v = xv[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  Tensor result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on] {
      const auto& g = on->grad;
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float v = xn->data[i];
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
        gx[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
      }
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + to_string(logits.shape()));
  }
  const auto lv = logits.data();
  std::vector<float> probs(lv.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("cross_entropy: label " + std::to_string(label) + " at batch index " +
                       std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
    }
    const float* row = lv.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    const double lse = mx + std::log(denom);
    total += lse - row[label];
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = static_cast<float>(std::exp(row[c] - lse));
    }
  }
  Tensor result = Tensor::scalar(static_cast<float>(total / static_cast<double>(batch)));
  if (tracking({&logits})) {
    NodePtr ln = logits.node_ptr(), on = result.node_ptr();
    std::vector<int> gold(labels.begin(), labels.end());
    record(result, [ln, on, batch, classes, probs = std::move(probs), gold = std::move(gold)] {
      const float upstream = on->grad[0] / static_cast<float>(batch);
      auto& gl = ln->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          const float target = static_cast<int>(c) == gold[b] ? 1.0f : 0.0f;
          gl[b * classes + c] += upstream * (probs[b * classes + c] - target);
        }
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double total = 0.0;
  for (float v : xv) total += v;
  Tensor result = Tensor::scalar(static_cast<float>(total));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on] {
      auto& gx = xn->grad_buffer();
      const float g = on->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "gather_rows");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const auto tv = table.data();
  std::vector<float> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw InputError("gather_rows: id " + std::to_string(ids[r]) + " at position " +
                       std::to_string(r) + " outside table of " + std::to_string(vocab) +
                       " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  Tensor result({ids.size(), width}, std::move(out));
  if (tracking({&table})) {
    NodePtr tn = table.node_ptr(), on = result.node_ptr();
    std::vector<std::int32_t> rows(ids.begin(), ids.end());
    record(result, [tn, on, width, rows = std::move(rows)] {
      auto& gt = tn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        float* dst = gt.data() + static_cast<std::size_t>(rows[r]) * width;
        const float* src = g.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || begin + count > m) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  const auto xv = x.data();
  std::vector<float> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * n),
                         xv.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  Tensor result({count, n}, std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on, begin, n] {
      auto& gx = xn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  const auto xv = x.data();
  std::vector<float> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i * n + begin), count,
                out.begin() + static_cast<std::ptrdiff_t>(i * count));
  Tensor result({m, count}, std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on, m, n, begin, count] {
      auto& gx = xn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
    });
  }
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    }
    total += p.dim(1);
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<float> out(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    offset += w;
  }
  Tensor result({m, total}, std::move(out));
  if (needs_grad && GradTape::active() != nullptr) {
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.node_ptr());
    NodePtr on = result.node_ptr();
    record(result, [inputs = std::move(inputs), on, m, total] {
      const auto& g = on->grad;
      std::size_t off = 0;
      for (const auto& in : inputs) {
        const std::size_t w = in->shape[1];
        if (in->requires_grad) {
          auto& gi = in->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gi[i * w + j] += g[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return result;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t n = parts.front().shape().back();
  std::size_t rows = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.shape().back() != n) {
      throw DimensionError("stack_rows: incompatible part " + to_string(p.shape()) +
                           " for width " + std::to_string(n));
    }
    rows += p.numel() / n;
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<float> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result({rows, n}, std::move(out));
  if (needs_grad && GradTape::active() != nullptr) {
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.node_ptr());
    NodePtr on = result.node_ptr();
    record(result, [inputs = std::move(inputs), on] {
      const auto& g = on->grad;
      std::size_t off = 0;
      for (const auto& in : inputs) {
        const std::size_t len = in->data.size();
        if (in->requires_grad) {
          auto& gi = in->grad_buffer();
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
        }
        off += len;
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (count != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (tracking({&x})) {
    NodePtr xn = x.node_ptr(), on = result.node_ptr();
    record(result, [xn, on] {
      auto& gx = xn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

}  // namespace spamdet::ops
