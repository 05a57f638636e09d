#include "dimbert/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace dimbert {

namespace {

thread_local Precision g_precision = Precision::Double;
thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

void check_shape(const Shape& shape) {
  for (std::size_t e : shape)
    require(e > 0, ErrorCode::shape, "tensor extents must be positive");
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Applies the precision mode and rejects non-finite values. Every op output
// passes through here, so NaN/Inf cannot propagate silently.
void finalize_values(std::vector<double>& values, const char* op) {
  if (g_precision == Precision::Single) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
  for (double v : values) {
    if (!std::isfinite(v))
      fail(ErrorCode::numeric, std::string("non-finite value produced by ") + op);
  }
}

void check_finite(const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v))
      fail(ErrorCode::numeric, std::string("non-finite value in ") + what);
  }
}

std::atomic<std::uint64_t> g_node_counter{0};

}  // namespace

namespace detail {
std::uint64_t next_node_id() { return ++g_node_counter; }
}  // namespace detail

Precision precision_mode() { return g_precision; }
void set_precision_mode(Precision p) { g_precision = p; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- Tensor ----------------------------------------------------------------

static std::shared_ptr<detail::TensorNode> make_leaf(Shape shape,
                                                     std::vector<double> values) {
  check_shape(shape);
  require(values.size() == shape_numel(shape), ErrorCode::shape,
          "value count does not match shape " + shape_str(shape));
  check_finite(values, "tensor literal");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->id = detail::next_node_id();
  return node;
}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(make_leaf(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  return Tensor(make_leaf(shape, std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double sigma) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.gaussian(sigma);
  return Tensor(make_leaf(shape, std::move(v)));
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  return node_->shape;
}

std::size_t Tensor::extent(std::size_t axis) const {
  require(axis < shape().size(), ErrorCode::shape, "axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  return node_->numel();
}

std::span<const double> Tensor::values() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  return node_->values;
}

std::span<double> Tensor::values_mut() {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  require(node_->is_leaf(), ErrorCode::contract,
          "in-place mutation is restricted to leaf tensors");
  return node_->values;
}

double Tensor::at(std::size_t i) const {
  require(ndim() == 1, ErrorCode::shape, "at(i) requires a 1-d tensor");
  require(i < node_->values.size(), ErrorCode::index, "index out of range");
  return node_->values[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require(ndim() == 2, ErrorCode::shape, "at(i,j) requires a 2-d tensor");
  require(i < node_->shape[0] && j < node_->shape[1], ErrorCode::index,
          "index out of range");
  return node_->values[i * node_->shape[1] + j];
}

double Tensor::item() const {
  require(numel() == 1, ErrorCode::shape, "item() requires a single-element tensor");
  return node_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  require(node_->is_leaf(), ErrorCode::contract,
          "requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

bool Tensor::grad_valid() const { return defined() && node_->grad_valid; }

std::span<const double> Tensor::grad() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  require(node_->grad_valid, ErrorCode::contract,
          "gradient not populated; run backward first");
  return node_->grad;
}

void Tensor::clear_grad() {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  node_->grad.clear();
  node_->grad_valid = false;
}

std::uint64_t Tensor::node_id() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  return node_->id;
}

detail::TensorNode& Tensor::node() const {
  require(defined(), ErrorCode::invalid_argument, "tensor is empty");
  return *node_;
}

Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backprop) {
  check_shape(shape);
  require(values.size() == shape_numel(shape), ErrorCode::shape,
          "op produced value count inconsistent with its shape");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->id = detail::next_node_id();
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (g_grad_enabled && needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.ptr());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::shared_ptr<detail::TensorNode>(std::move(node)));
}

namespace {

Tensor op(const char* name, Shape shape, std::vector<double> values,
          std::vector<Tensor> parents,
          std::function<void(detail::TensorNode&)> backprop) {
  finalize_values(values, name);
  return make_op_result(std::move(shape), std::move(values), std::move(parents),
                        std::move(backprop));
}

detail::TensorNode* grad_target(detail::TensorNode& self, std::size_t k) {
  detail::TensorNode* p = self.parents[k].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

void check_defined(const Tensor& t, const char* op_name) {
  require(t.defined(), ErrorCode::invalid_argument,
          std::string("undefined tensor passed to ") + op_name);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
  require(a.shape() == b.shape(), ErrorCode::shape,
          std::string(op_name) + ": shape mismatch " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
}

}  // namespace

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return op("add", a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* p = grad_target(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return op("sub", a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    if (auto* p = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    if (auto* p = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return op("mul", a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (auto* p = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * bv[i];
    if (auto* p = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& x, double c) {
  check_defined(x, "scale");
  require(std::isfinite(c), ErrorCode::invalid_argument, "scale factor must be finite");
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return op("scale", x.shape(), std::move(out), {x}, [c](detail::TensorNode& self) {
    if (auto* p = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  check_defined(x, "scale_by");
  check_defined(s, "scale_by");
  require(s.numel() == 1, ErrorCode::shape, "scale_by expects a scalar multiplier");
  const double sv = s.values()[0];
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
  return op("scale_by", x.shape(), std::move(out), {x, s},
            [sv](detail::TensorNode& self) {
              const auto& xv = self.parents[0]->values;
              if (auto* p = grad_target(self, 0))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                  p->grad[i] += self.grad[i] * sv;
              if (auto* p = grad_target(self, 1)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                  acc += self.grad[i] * xv[i];
                p->grad[0] += acc;
              }
            });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_defined(x, "add_bias");
  check_defined(bias, "add_bias");
  require(bias.ndim() == 1, ErrorCode::shape, "bias must be 1-d");
  require(x.ndim() >= 1, ErrorCode::shape, "add_bias input must have rank >= 1");
  const std::size_t n = x.extent(x.ndim() - 1);
  require(bias.numel() == n, ErrorCode::shape,
          "bias length must match the last axis of the input");
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xv = x.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  return op("add_bias", x.shape(), std::move(out), {x, bias},
            [n, rows](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                  p->grad[i] += self.grad[i];
              if (auto* p = grad_target(self, 1))
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < n; ++j)
                    p->grad[j] += self.grad[r * n + j];
            });
}

// --- matrix products --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  require(a.ndim() == 2 && b.ndim() == 2, ErrorCode::shape, "matmul expects 2-d tensors");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  require(b.extent(0) == k, ErrorCode::shape,
          "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av_il = av[i * k + l];
      const double* brow = &bv[l * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av_il * brow[j];
    }
  }
  return op("matmul", {m, n}, std::move(out), {a, b},
            [m, k, n](detail::TensorNode& self) {
              const auto& av = self.parents[0]->values;
              const auto& bv = self.parents[1]->values;
              if (auto* p = grad_target(self, 0)) {
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t l = 0; l < k; ++l)
                      p->grad[i * k + l] += g * bv[l * n + j];
                  }
              }
              if (auto* p = grad_target(self, 1)) {
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t l = 0; l < k; ++l) {
                    const double a_il = av[i * k + l];
                    if (a_il == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                      p->grad[l * n + j] += a_il * self.grad[i * n + j];
                  }
              }
            });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul_nt");
  check_defined(b, "matmul_nt");
  require(a.ndim() == 2 && b.ndim() == 2, ErrorCode::shape,
          "matmul_nt expects 2-d tensors");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  require(b.extent(1) == k, ErrorCode::shape,
          "matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
  std::vector<double> out(m * n, 0.0);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* ar = &av[i * k];
      const double* br = &bv[j * k];
      for (std::size_t l = 0; l < k; ++l) acc += ar[l] * br[l];
      out[i * n + j] = acc;
    }
  return op("matmul_nt", {m, n}, std::move(out), {a, b},
            [m, k, n](detail::TensorNode& self) {
              const auto& av = self.parents[0]->values;
              const auto& bv = self.parents[1]->values;
              if (auto* p = grad_target(self, 0)) {
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t l = 0; l < k; ++l)
                      p->grad[i * k + l] += g * bv[j * k + l];
                  }
              }
              if (auto* p = grad_target(self, 1)) {
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t l = 0; l < k; ++l)
                      p->grad[j * k + l] += g * av[i * k + l];
                  }
              }
            });
}

// --- normalization and activations ------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_defined(x, "softmax");
  require(axis < x.ndim(), ErrorCode::shape, "softmax axis out of range");
  const Shape& shape = x.shape();
  const std::size_t n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  return op("softmax", shape, std::move(out), {x},
            [outer, inner, n](detail::TensorNode& self) {
              auto* p = grad_target(self, 0);
              if (!p) return;
              const auto& y = self.values;
              for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                  const std::size_t base = o * n * inner + in;
                  double dot = 0.0;
                  for (std::size_t i = 0; i < n; ++i)
                    dot += self.grad[base + i * inner] * y[base + i * inner];
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t idx = base + i * inner;
                    p->grad[idx] += y[idx] * (self.grad[idx] - dot);
                  }
                }
            });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  require(x.ndim() >= 1, ErrorCode::shape, "layer_norm input must have rank >= 1");
  const std::size_t n = x.extent(x.ndim() - 1);
  require(gain.ndim() == 1 && gain.numel() == n, ErrorCode::shape,
          "layer_norm gain must be 1-d over the last axis");
  require(bias.ndim() == 1 && bias.numel() == n, ErrorCode::shape,
          "layer_norm bias must be 1-d over the last axis");
  require(eps > 0.0, ErrorCode::invalid_argument, "layer_norm eps must be positive");
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv(rows);
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[r] = iv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * iv;
      xhat[r * n + j] = h;
      out[r * n + j] = gv[j] * h + bv[j];
    }
  }
  return op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
            [rows, n, xhat = std::move(xhat), inv = std::move(inv)](
                detail::TensorNode& self) {
              const auto& gv = self.parents[1]->values;
              auto* px = grad_target(self, 0);
              auto* pg = grad_target(self, 1);
              auto* pb = grad_target(self, 2);
              for (std::size_t r = 0; r < rows; ++r) {
                const double* g = &self.grad[r * n];
                const double* h = &xhat[r * n];
                if (pg)
                  for (std::size_t j = 0; j < n; ++j) pg->grad[j] += g[j] * h[j];
                if (pb)
                  for (std::size_t j = 0; j < n; ++j) pb->grad[j] += g[j];
                if (px) {
                  double mean_dy = 0.0, mean_dyh = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    const double dy = g[j] * gv[j];
                    mean_dy += dy;
                    mean_dyh += dy * h[j];
                  }
                  mean_dy /= static_cast<double>(n);
                  mean_dyh /= static_cast<double>(n);
                  for (std::size_t j = 0; j < n; ++j) {
                    const double dy = g[j] * gv[j];
                    px->grad[r * n + j] += inv[r] * (dy - mean_dy - h[j] * mean_dyh);
                  }
                }
              }
            });
}

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  return op("gelu", x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    auto* p = grad_target(self, 0);
    if (!p) return;
    const auto& xv = self.parents[0]->values;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
      p->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

// --- structural ops ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorCode::invalid_argument, "concat of zero tensors");
  for (const Tensor& p : parts) check_defined(p, "concat");
  const std::size_t nd = parts[0].ndim();
  require(nd == 1 || nd == 2, ErrorCode::shape, "concat supports 1-d and 2-d tensors");
  require(axis < nd, ErrorCode::shape, "concat axis out of range");
  for (const Tensor& p : parts) {
    require(p.ndim() == nd, ErrorCode::shape, "concat rank mismatch");
    for (std::size_t d = 0; d < nd; ++d)
      if (d != axis)
        require(p.extent(d) == parts[0].extent(d), ErrorCode::shape,
                "concat extent mismatch off the concat axis");
  }
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& p : parts) total += p.extent(axis);
  out_shape[axis] = total;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> extents;
  if (nd == 1 || axis == 0) {
    // Blocks are contiguous.
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      auto pv = p.values();
      std::copy(pv.begin(), pv.end(), out.begin() + offset);
      offset += pv.size();
      extents.push_back(p.extent(axis));
    }
  } else {
    const std::size_t rows = out_shape[0];
    std::size_t col_offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t cols = p.extent(1);
      auto pv = p.values();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(&pv[r * cols], &pv[r * cols] + cols,
                  out.begin() + r * total + col_offset);
      col_offset += cols;
      extents.push_back(cols);
    }
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return op("concat", out_shape, std::move(out), std::move(parents),
            [nd, axis, total, extents](detail::TensorNode& self) {
              if (nd == 1 || axis == 0) {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < self.parents.size(); ++k) {
                  const std::size_t count = self.parents[k]->numel();
                  if (auto* p = grad_target(self, k))
                    for (std::size_t i = 0; i < count; ++i)
                      p->grad[i] += self.grad[offset + i];
                  offset += count;
                }
              } else {
                const std::size_t rows = self.shape[0];
                std::size_t col_offset = 0;
                for (std::size_t k = 0; k < self.parents.size(); ++k) {
                  const std::size_t cols = extents[k];
                  if (auto* p = grad_target(self, k))
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        p->grad[r * cols + c] +=
                            self.grad[r * total + col_offset + c];
                  col_offset += cols;
                }
              }
            });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  check_defined(x, "slice_cols");
  require(x.ndim() == 2, ErrorCode::shape, "slice_cols expects a 2-d tensor");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  require(count > 0, ErrorCode::shape, "slice_cols count must be positive");
  require(start + count <= cols, ErrorCode::index, "slice_cols range out of bounds");
  std::vector<double> out(rows * count);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(&xv[r * cols + start], &xv[r * cols + start] + count,
              out.begin() + r * count);
  return op("slice_cols", {rows, count}, std::move(out), {x},
            [rows, cols, start, count](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0))
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t c = 0; c < count; ++c)
                    p->grad[r * cols + start + c] += self.grad[r * count + c];
            });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  check_defined(x, "gather_rows");
  require(x.ndim() == 2, ErrorCode::shape, "gather_rows expects a 2-d tensor");
  require(!rows.empty(), ErrorCode::invalid_argument, "gather_rows with no indices");
  const std::size_t nrows = x.extent(0), cols = x.extent(1);
  for (int r : rows)
    require(r >= 0 && static_cast<std::size_t>(r) < nrows, ErrorCode::index,
            "row index " + std::to_string(r) + " outside table of " +
                std::to_string(nrows) + " rows");
  std::vector<double> out(rows.size() * cols);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(&xv[static_cast<std::size_t>(rows[i]) * cols],
              &xv[static_cast<std::size_t>(rows[i]) * cols] + cols,
              out.begin() + i * cols);
  return op("gather_rows", {rows.size(), cols}, std::move(out), {x},
            [rows, cols](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0))
                for (std::size_t i = 0; i < rows.size(); ++i)
                  for (std::size_t c = 0; c < cols; ++c)
                    p->grad[static_cast<std::size_t>(rows[i]) * cols + c] +=
                        self.grad[i * cols + c];
            });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  check_defined(x, "dropout");
  require(rate >= 0.0 && rate < 1.0, ErrorCode::invalid_argument,
          "dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return op("dropout", x.shape(), std::move(out), {x},
            [mask = std::move(mask)](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                  p->grad[i] += self.grad[i] * mask[i];
            });
}

// --- reductions and losses ----------------------------------------------------

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return op("sum", {1}, {acc}, {x}, [](detail::TensorNode& self) {
    if (auto* p = grad_target(self, 0))
      for (double& g : p->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return op("mean", {1}, {acc * inv}, {x}, [inv](detail::TensorNode& self) {
    if (auto* p = grad_target(self, 0))
      for (double& g : p->grad) g += self.grad[0] * inv;
  });
}

namespace {

// Stable log-sum-exp with the row softmax as a byproduct.
double row_log_sum_exp(const double* row, std::size_t n, std::vector<double>& probs,
                       std::size_t offset) {
  double mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(row[i] - mx);
    probs[offset + i] = e;
    total += e;
  }
  for (std::size_t i = 0; i < n; ++i) probs[offset + i] /= total;
  return mx + std::log(total);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int target_index) {
  check_defined(logits, "cross_entropy");
  require(logits.ndim() == 1, ErrorCode::shape, "cross_entropy expects 1-d logits");
  const std::size_t n = logits.numel();
  require(target_index >= 0 && static_cast<std::size_t>(target_index) < n,
          ErrorCode::index, "cross_entropy target outside the logit range");
  std::vector<double> probs(n);
  auto xv = logits.values();
  const double lse = row_log_sum_exp(xv.data(), n, probs, 0);
  const double loss = lse - xv[target_index];
  return op("cross_entropy", {1}, {loss}, {logits},
            [probs = std::move(probs), target_index](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0)) {
                const double g = self.grad[0];
                for (std::size_t i = 0; i < probs.size(); ++i)
                  p->grad[i] += g * probs[i];
                p->grad[static_cast<std::size_t>(target_index)] -= g;
              }
            });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  check_defined(logits, "cross_entropy_rows");
  require(logits.ndim() == 2, ErrorCode::shape,
          "cross_entropy_rows expects a 2-d logit matrix");
  const std::size_t rows = logits.extent(0), n = logits.extent(1);
  require(targets.size() == rows, ErrorCode::shape,
          "cross_entropy_rows needs one target per row");
  for (int t : targets)
    require(t >= 0 && static_cast<std::size_t>(t) < n, ErrorCode::index,
            "cross_entropy_rows target outside the logit range");
  std::vector<double> probs(rows * n);
  auto xv = logits.values();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = row_log_sum_exp(&xv[r * n], n, probs, r * n);
    loss += lse - xv[r * n + static_cast<std::size_t>(targets[r])];
  }
  loss /= static_cast<double>(rows);
  return op("cross_entropy_rows", {1}, {loss}, {logits},
            [probs = std::move(probs), targets, rows, n](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0)) {
                const double g = self.grad[0] / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t i = 0; i < n; ++i)
                    p->grad[r * n + i] += g * probs[r * n + i];
                  p->grad[r * n + static_cast<std::size_t>(targets[r])] -= g;
                }
              }
            });
}

Tensor binary_cross_entropy_logits(const Tensor& scores, int target_index) {
  check_defined(scores, "binary_cross_entropy_logits");
  require(scores.ndim() == 1 || (scores.ndim() == 2 && scores.extent(1) == 1),
          ErrorCode::shape, "scores must be a vector");
  const std::size_t n = scores.numel();
  require(target_index >= 0 && static_cast<std::size_t>(target_index) < n,
          ErrorCode::contract, "target index outside the candidate range");
  auto sv = scores.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sv[i];
    const double y = (static_cast<std::size_t>(target_index) == i) ? 1.0 : 0.0;
    // softplus(s) - y*s, stable for any sign of s
    loss += std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - y * s;
  }
  return op("binary_cross_entropy_logits", {1}, {loss}, {scores},
            [n, target_index](detail::TensorNode& self) {
              if (auto* p = grad_target(self, 0)) {
                const auto& sv = self.parents[0]->values;
                const double g = self.grad[0];
                for (std::size_t i = 0; i < n; ++i) {
                  const double s = sv[i];
                  const double sig =
                      s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                               : std::exp(s) / (1.0 + std::exp(s));
                  const double y =
                      (static_cast<std::size_t>(target_index) == i) ? 1.0 : 0.0;
                  p->grad[i] += g * (sig - y);
                }
              }
            });
}

// --- backward ------------------------------------------------------------------

void backward(const Tensor& loss) {
  require(loss.defined(), ErrorCode::invalid_argument, "backward on empty tensor");
  require(loss.numel() == 1, ErrorCode::contract,
          "backward requires a scalar loss");
  detail::TensorNode* root = loss.ptr().get();
  require(root->requires_grad, ErrorCode::contract,
          "loss does not depend on any tensor with requires_grad");

  // Post-order over the requires-grad subgraph: parents precede consumers.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen{root};
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::TensorNode* node : order) {
    if (node->is_leaf() && node->grad_valid)
      fail(ErrorCode::contract,
           "backward called with gradients still populated; clear them first");
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }

  for (detail::TensorNode* node : order) {
    if (node->is_leaf()) {
      node->ensure_grad();
      node->grad_valid = true;
      check_finite(node->grad, "gradient");
    } else {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace dimbert
