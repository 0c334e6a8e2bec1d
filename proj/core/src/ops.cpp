#include "calf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

namespace calf {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "l1" || name == "L1") return LossKind::l1;
  if (name == "smooth_l1" || name == "SmoothL1" || name == "smoothl1") return LossKind::smooth_l1;
  if (name == "mse" || name == "MSE") return LossKind::mse;
  if (name == "smape" || name == "SMAPE") return LossKind::smape;
  if (name == "mase" || name == "MASE") return LossKind::mase;
  throw UsageError("unknown loss kind '" + std::string(name) +
                   "' (expected l1, smooth_l1, mse, smape or mase)");
}

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::l1: return "l1";
    case LossKind::smooth_l1: return "smooth_l1";
    case LossKind::mse: return "mse";
    case LossKind::smape: return "smape";
    case LossKind::mase: return "mase";
  }
  return "?";
}

bool is_elementwise(LossKind kind) noexcept {
  return kind == LossKind::l1 || kind == LossKind::smooth_l1 || kind == LossKind::mse;
}

namespace {

template <std::floating_point T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

// Builds the result tensor and, when any input requires grad and recording is
// enabled, attaches a tape node.
template <std::floating_point T>
Tensor<T> record(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void(const detail::TensorImpl<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->impl()->requires_grad;
  if (!needs) return out;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto* in : inputs) node->inputs.push_back(in->impl());
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

// Grad buffer of an input, or nullptr when the input does not take gradients.
template <std::floating_point T>
T* grad_buffer(const ImplPtr<T>& impl) {
  if (!impl->requires_grad) return nullptr;
  impl->ensure_grad();
  return impl->grad.data();
}

template <std::floating_point T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <std::floating_point T>
void require_matrix(const char* op, const Tensor<T>& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

template <std::floating_point T>
T sign_of(T x) {
  return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0});
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return record<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib](const auto& o) {
    for (const auto& in : {ia, ib}) {
      if (T* g = grad_buffer(in)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return record<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (T* g = grad_buffer(ib)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return record<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ib->data[i];
    }
    if (T* g = grad_buffer(ib)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ia->data[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  auto ia = a.impl();
  return record<T>(a.shape(), std::move(out), {&a}, [ia, factor](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

template <std::floating_point T>
Tensor<T> add_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("add_rows", a);
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  if (b.numel() == 0 || b.numel() % cols != 0) {
    throw DimensionError("add_rows: cannot tile " + shape_string(b.shape()) + " over " +
                         shape_string(a.shape()));
  }
  const std::size_t brows = b.numel() / cols;
  if (rows % brows != 0) {
    throw DimensionError("add_rows: " + std::to_string(brows) + " rows do not tile " +
                         std::to_string(rows) + " rows");
  }
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t br = r % brows;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + y[br * cols + c];
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return record<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib, rows, cols, brows](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (T* g = grad_buffer(ib)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t br = r % brows;
        for (std::size_t c = 0; c < cols; ++c) g[br * cols + c] += o.grad[r * cols + c];
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = x[i * k + p];
      if (av == T{0}) continue;
      const T* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return record<T>({m, n}, std::move(out), {&a, &b}, [ia, ib, m, k, n](const auto& o) {
    const T* g = o.grad.data();
    if (T* ga = grad_buffer(ia)) {
      // dA = G * B^T
      const T* bd = ib->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (T* gb = grad_buffer(ib)) {
      // dB = A^T * G
      const T* ad = ia->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T av = ad[i * k + p];
          if (av == T{0}) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  auto ia = a.impl();
  return record<T>({c, r}, std::move(out), {&a}, [ia, r, c](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    }
  });
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  if (!bias.defined()) return y;
  if (bias.numel() != weight.cols()) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  return add_rows(y, bias);
}

template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  if (begin > end || end > a.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(a.shape()));
  }
  const std::size_t c = a.cols();
  auto x = a.data();
  std::vector<T> out(x.begin() + static_cast<std::ptrdiff_t>(begin * c),
                     x.begin() + static_cast<std::ptrdiff_t>(end * c));
  auto ia = a.impl();
  return record<T>({end - begin, c}, std::move(out), {&a}, [ia, begin, c](const auto& o) {
    if (T* g = grad_buffer(ia)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * c + i] += o.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(shape));
  }
  if (auto bad = first_non_finite(x)) {
    throw NumericError("softmax: non-finite input at flat index " + std::to_string(*bad));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      auto at = [&](std::size_t j) { return (o * n + j) * inner + i; };
      T mx = in[at(0)];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[at(j)]);
      T total{0};
      for (std::size_t j = 0; j < n; ++j) {
        out[at(j)] = std::exp(in[at(j)] - mx);
        total += out[at(j)];
      }
      for (std::size_t j = 0; j < n; ++j) out[at(j)] /= total;
    }
  }
  auto ix = x.impl();
  return record<T>(shape, std::move(out), {&x}, [ix, outer, inner, n](const auto& o) {
    T* g = grad_buffer(ix);
    if (!g) return;
    const auto& y = o.data;
    for (std::size_t oo = 0; oo < outer; ++oo) {
      for (std::size_t i = 0; i < inner; ++i) {
        auto at = [&](std::size_t j) { return (oo * n + j) * inner + i; };
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += y[at(j)] * o.grad[at(j)];
        for (std::size_t j = 0; j < n; ++j) g[at(j)] += y[at(j)] * (o.grad[at(j)] - dot);
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t width = x.shape().back();
  if (gain.numel() != width || bias.numel() != width) {
    throw DimensionError("layer_norm: last dimension " + std::to_string(width) +
                         " vs gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / width;
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<T> out(in.size());
  auto xhat = std::make_shared<std::vector<T>>(in.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * width;
    T mu{0};
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<T>(width);
    T var{0};
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(width);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < width; ++c) {
      const T h = (row[c] - mu) * is;
      (*xhat)[r * width + c] = h;
      out[r * width + c] = h * gv[c] + bv[c];
    }
  }
  auto ix = x.impl();
  auto ig = gain.impl();
  auto ib = bias.impl();
  return record<T>(x.shape(), std::move(out), {&x, &gain, &bias},
                   [ix, ig, ib, xhat, inv_std, rows, width](const auto& o) {
    const T* g = o.grad.data();
    if (T* gg = grad_buffer(ig)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) gg[c] += g[r * width + c] * (*xhat)[r * width + c];
    }
    if (T* gb = grad_buffer(ib)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) gb[c] += g[r * width + c];
    }
    if (T* gx = grad_buffer(ix)) {
      const auto& gv = ig->data;
      const T n = static_cast<T>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dy{0};
        T mean_dy_xhat{0};
        for (std::size_t c = 0; c < width; ++c) {
          const T dy = g[r * width + c] * gv[c];
          mean_dy += dy;
          mean_dy_xhat += dy * (*xhat)[r * width + c];
        }
        mean_dy /= n;
        mean_dy_xhat /= n;
        for (std::size_t c = 0; c < width; ++c) {
          const T dy = g[r * width + c] * gv[c];
          gx[r * width + c] +=
              (*inv_std)[r] * (dy - mean_dy - (*xhat)[r * width + c] * mean_dy_xhat);
        }
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T a = static_cast<T>(0.044715);
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    out[i] = T(0.5) * v * (T{1} + std::tanh(c * (v + a * v * v * v)));
  }
  auto ix = x.impl();
  return record<T>(x.shape(), std::move(out), {&x}, [ix](const auto& o) {
    T* g = grad_buffer(ix);
    if (!g) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = ix->data[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * c * (T{1} + T{3} * a * v * v);
      g[i] += o.grad[i] * d;
    }
  });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  auto ix = x.impl();
  return record<T>({}, {total}, {&x}, [ix](const auto& o) {
    if (T* g = grad_buffer(ix)) {
      for (std::size_t i = 0; i < ix->data.size(); ++i) g[i] += o.grad[0];
    }
  });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <std::floating_point T>
Tensor<T> elementwise_loss(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  if (!is_elementwise(kind)) {
    throw UsageError("elementwise_loss: '" + std::string(to_string(kind)) +
                     "' is not an elementwise kind");
  }
  require_same_shape("elementwise_loss", pred, target);
  if (pred.numel() == 0) throw DimensionError("elementwise_loss on empty tensors");
  auto p = pred.data();
  auto t = target.data();
  const T n = static_cast<T>(p.size());
  T total{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    switch (kind) {
      case LossKind::l1: total += std::abs(d); break;
      case LossKind::smooth_l1:
        total += std::abs(d) < T{1} ? T(0.5) * d * d : std::abs(d) - T(0.5);
        break;
      default: total += d * d; break;
    }
  }
  auto ip = pred.impl();
  auto it = target.impl();
  return record<T>({}, {total / n}, {&pred, &target}, [ip, it, kind, n](const auto& o) {
    T* gp = grad_buffer(ip);
    T* gt = grad_buffer(it);
    const T up = o.grad[0] / n;
    for (std::size_t i = 0; i < ip->data.size(); ++i) {
      const T d = ip->data[i] - it->data[i];
      T dd;
      switch (kind) {
        case LossKind::l1: dd = sign_of(d); break;
        case LossKind::smooth_l1: dd = std::abs(d) < T{1} ? d : sign_of(d); break;
        default: dd = T{2} * d; break;
      }
      if (gp) gp[i] += up * dd;
      if (gt) gt[i] -= up * dd;
    }
  });
}

template <std::floating_point T>
Tensor<T> smape_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape("smape_loss", pred, target);
  if (pred.numel() == 0) throw DimensionError("smape_loss on empty tensors");
  auto p = pred.data();
  auto t = target.data();
  const T n = static_cast<T>(p.size());
  T total{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T den = std::abs(p[i]) + std::abs(t[i]);
    if (den > T{0}) total += std::abs(p[i] - t[i]) / den;
  }
  auto ip = pred.impl();
  auto it = target.impl();
  return record<T>({}, {T{200} * total / n}, {&pred, &target}, [ip, it, n](const auto& o) {
    T* gp = grad_buffer(ip);
    T* gt = grad_buffer(it);
    const T up = T{200} * o.grad[0] / n;
    for (std::size_t i = 0; i < ip->data.size(); ++i) {
      const T pv = ip->data[i];
      const T tv = it->data[i];
      const T den = std::abs(pv) + std::abs(tv);
      if (den <= T{0}) continue;
      const T num = std::abs(pv - tv);
      const T s = sign_of(pv - tv);
      if (gp) gp[i] += up * (s * den - num * sign_of(pv)) / (den * den);
      if (gt) gt[i] += up * (-s * den - num * sign_of(tv)) / (den * den);
    }
  });
}

template <std::floating_point T>
Tensor<T> mase_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> row_scale) {
  require_same_shape("mase_loss", pred, target);
  require_matrix("mase_loss", pred);
  const std::size_t rows = pred.rows();
  const std::size_t cols = pred.cols();
  if (row_scale.size() != rows) {
    throw DimensionError("mase_loss: " + std::to_string(row_scale.size()) + " scales for " +
                         std::to_string(rows) + " rows");
  }
  auto inv = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!(row_scale[r] > T{0})) throw NumericError("mase_loss: nonpositive scale");
    (*inv)[r] = T{1} / row_scale[r];
  }
  auto p = pred.data();
  auto t = target.data();
  const T n = static_cast<T>(p.size());
  T total{0};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      total += std::abs(p[r * cols + c] - t[r * cols + c]) * (*inv)[r];
  auto ip = pred.impl();
  auto it = target.impl();
  return record<T>({}, {total / n}, {&pred, &target}, [ip, it, inv, rows, cols, n](const auto& o) {
    T* gp = grad_buffer(ip);
    T* gt = grad_buffer(it);
    const T up = o.grad[0] / n;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const T d = sign_of(ip->data[i] - it->data[i]) * (*inv)[r] * up;
        if (gp) gp[i] += d;
        if (gt) gt[i] -= d;
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionSpec& spec, Tensor<T>* probs) {
  require_matrix("attention", q);
  require_matrix("attention", k);
  require_matrix("attention", v);
  const std::size_t rq = q.rows();
  const std::size_t width = q.cols();
  const std::size_t rk = k.rows();
  const std::size_t vwidth = v.cols();
  const std::size_t heads = spec.heads;
  if (k.cols() != width || v.rows() != rk) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (heads == 0 || width % heads != 0 || vwidth % heads != 0) {
    throw DimensionError("attention: widths " + std::to_string(width) + "/" +
                         std::to_string(vwidth) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t qgroup = spec.query_group == 0 ? rq : spec.query_group;
  if (rq == 0 || rk == 0 || rq % qgroup != 0) {
    throw DimensionError("attention: query group " + std::to_string(qgroup) + " does not divide " +
                         std::to_string(rq) + " rows");
  }
  const std::size_t groups = rq / qgroup;
  const bool shared = spec.key_group == 0;
  const std::size_t nk = shared ? rk : spec.key_group;
  if (!shared && (rk % nk != 0 || rk / nk != groups)) {
    throw DimensionError("attention: key groups of " + std::to_string(nk) + " over " +
                         std::to_string(rk) + " rows do not match " + std::to_string(groups) +
                         " query groups");
  }
  if (spec.causal && nk != qgroup) {
    throw DimensionError("attention: causal masking needs equal query and key group sizes");
  }
  const std::size_t dh = width / heads;
  const std::size_t dv = vwidth / heads;
  const T sc = static_cast<T>(spec.scale);
  const bool causal = spec.causal;

  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  auto pw = std::make_shared<std::vector<T>>(rq * heads * nk, T{0});
  std::vector<T> out(rq * vwidth, T{0});
  std::vector<T> scores(nk);
  for (std::size_t i = 0; i < rq; ++i) {
    const std::size_t g = i / qgroup;
    const std::size_t pos = i % qgroup;
    const std::size_t ks = shared ? 0 : g * nk;
    const std::size_t limit = causal ? pos + 1 : nk;
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qi = qd.data() + i * width + h * dh;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        const T* kj = kd.data() + (ks + j) * width + h * dh;
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= sc;
        if (!std::isfinite(s)) throw NumericError("attention: non-finite score");
        scores[j] = s;
        mx = std::max(mx, s);
      }
      T total{0};
      for (std::size_t j = 0; j < limit; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      T* prow = pw->data() + (i * heads + h) * nk;
      T* orow = out.data() + i * vwidth + h * dv;
      for (std::size_t j = 0; j < limit; ++j) {
        const T p = scores[j] / total;
        prow[j] = p;
        const T* vj = vd.data() + (ks + j) * vwidth + h * dv;
        for (std::size_t c = 0; c < dv; ++c) orow[c] += p * vj[c];
      }
    }
  }
  if (probs) *probs = Tensor<T>({rq, heads, nk}, *pw);

  auto iq = q.impl();
  auto ik = k.impl();
  auto iv = v.impl();
  return record<T>({rq, vwidth}, std::move(out), {&q, &k, &v},
                   [iq, ik, iv, pw, rq, width, vwidth, heads, dh, dv, nk, qgroup, shared, causal,
                    sc](const auto& o) {
    T* gq = grad_buffer(iq);
    T* gk = grad_buffer(ik);
    T* gv = grad_buffer(iv);
    const auto& qd = iq->data;
    const auto& kd = ik->data;
    const auto& vd = iv->data;
    std::vector<T> dp(nk);
    for (std::size_t i = 0; i < rq; ++i) {
      const std::size_t g = i / qgroup;
      const std::size_t pos = i % qgroup;
      const std::size_t ks = shared ? 0 : g * nk;
      const std::size_t limit = causal ? pos + 1 : nk;
      for (std::size_t h = 0; h < heads; ++h) {
        const T* prow = pw->data() + (i * heads + h) * nk;
        const T* go = o.grad.data() + i * vwidth + h * dv;
        T weighted{0};
        for (std::size_t j = 0; j < limit; ++j) {
          const T* vj = vd.data() + (ks + j) * vwidth + h * dv;
          T s{0};
          for (std::size_t c = 0; c < dv; ++c) s += go[c] * vj[c];
          dp[j] = s;
          weighted += prow[j] * s;
          if (gv) {
            T* gvj = gv + (ks + j) * vwidth + h * dv;
            for (std::size_t c = 0; c < dv; ++c) gvj[c] += prow[j] * go[c];
          }
        }
        if (!gq && !gk) continue;
        const T* qi = qd.data() + i * width + h * dh;
        for (std::size_t j = 0; j < limit; ++j) {
          const T ds = prow[j] * (dp[j] - weighted) * sc;
          if (ds == T{0}) continue;
          const T* kj = kd.data() + (ks + j) * width + h * dh;
          if (gq) {
            T* gqi = gq + i * width + h * dh;
            for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
          }
          if (gk) {
            T* gkj = gk + (ks + j) * width + h * dh;
            for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
          }
        }
      }
    }
  });
}

template <std::floating_point T>
std::optional<std::size_t> first_non_finite(const Tensor<T>& t) {
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) return i;
  }
  return std::nullopt;
}

#define CALF_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> add_rows(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> transpose(const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> gelu(const Tensor<T>&);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> elementwise_loss(LossKind, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> smape_loss(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mase_loss(const Tensor<T>&, const Tensor<T>&, std::span<const T>);     \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                               const AttentionSpec&, Tensor<T>*);                           \
  template std::optional<std::size_t> first_non_finite(const Tensor<T>&);

CALF_INSTANTIATE_OPS(float)
CALF_INSTANTIATE_OPS(double)

#undef CALF_INSTANTIATE_OPS

}  // namespace calf
