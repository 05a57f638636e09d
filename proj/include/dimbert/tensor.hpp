#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dimbert/error.hpp"
#include "dimbert/rng.hpp"

namespace dimbert {

using Shape = std::vector<std::size_t>;

class Tensor;

namespace detail {

// One node of the compute graph. Nodes are created in program order and
// carry a strictly increasing id, so parent ids are always smaller than the
// ids of the nodes consuming them (recording order is topological order).
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool grad_valid = false;  // set on leaves once backward has filled grad
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // empty on leaves

  std::size_t numel() const { return values.size(); }
  bool is_leaf() const { return !backprop; }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

std::uint64_t next_node_id();

}  // namespace detail

// Numeric precision applied to op outputs. Single mode keeps double storage
// but rounds every produced value through float, so precision is a runtime
// mode rather than a separate type.
enum class Precision { Double, Single };

Precision precision_mode();
void set_precision_mode(Precision p);

bool grad_enabled();

// Disables graph recording in scope; forwards run value-only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major tensor with reverse-mode autodiff at op granularity.
// Value-semantic handle; copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor randn(const Shape& shape, Rng& rng, double sigma);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access is for leaves only (optimizer updates, finite-difference
  // probes); mutating a node that already has recorded consumers would
  // silently corrupt their saved inputs.
  std::span<double> values_mut();

  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double item() const;  // numel()==1

  Tensor& set_requires_grad(bool on);
  bool requires_grad() const;
  bool grad_valid() const;
  std::span<const double> grad() const;
  void clear_grad();

  std::uint64_t node_id() const;

  detail::TensorNode& node() const;  // internal
  const std::shared_ptr<detail::TensorNode>& ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_result(Shape shape, std::vector<double> values,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorNode&)> backprop);
};

// --- primitive operations -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor sub(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise, same shape
Tensor scale(const Tensor& x, double c);                 // constant scale
Tensor scale_by(const Tensor& x, const Tensor& s);       // s is a scalar tensor
Tensor add_bias(const Tensor& x, const Tensor& bias);    // bias over last axis
Tensor matmul(const Tensor& a, const Tensor& b);         // (m,k)x(k,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);      // (m,k)x(n,k)^T -> (m,n)
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);                    // over last axis
Tensor gelu(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// Row gather read as table lookup; gradient scatters into the table.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}
Tensor dropout(const Tensor& x, double rate, Rng& rng);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, int target_index);  // 1-d logits
// Mean cross-entropy over rows of a (k,V) logit matrix.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);
// Sum of per-element binary cross-entropy on raw scores; label 1 at target.
Tensor binary_cross_entropy_logits(const Tensor& scores, int target_index);

// Reverse-mode sweep from a scalar loss. Populates grad on every reachable
// leaf with requires_grad; calling again before those grads are cleared is a
// contract error.
void backward(const Tensor& loss);

}  // namespace dimbert
