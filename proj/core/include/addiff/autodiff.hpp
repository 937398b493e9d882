#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "addiff/tensor.hpp"

namespace addiff::autodiff {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Linear evaluation record for reverse-mode differentiation over dense
/// matrices. Nodes are appended in evaluation order; backward() walks them
/// in reverse. Parameter leaves reference external storage and report their
/// gradients through collect_parameter_grads().
///
/// A tape built with record_gradients = false stores values only.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Matrix value);
  Var input(Matrix value);
  /// Leaf bound to parameter `slot`; `value` must outlive the tape.
  Var parameter(std::size_t slot, const Matrix& value);

  const Matrix& value(Var v) const;
  /// Gradient accumulated by backward(); an empty matrix if none reached v.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  /// Seed d<seed, out>/d(out) = seed and propagate to every reachable node.
  void backward(Var out, const Matrix& seed);

  /// grads[slot] += d/d(param) for every parameter leaf touched by backward.
  /// Leaves are visited in creation order.
  void collect_parameter_grads(std::vector<Matrix>& grads) const;

  /// Append an op result. `parents` decide whether the node needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop backprop);

  /// grad(v) += g, allocating on first use. No-op when v needs no gradient.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  /// Mutable gradient buffer, zero-initialised on first access.
  Matrix& grad_buffer(Var v);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Backprop backprop;
    bool requires_grad = false;
    long param_slot = -1;
  };

  bool record_;
  std::vector<Node> nodes_;
};

Var matmul(Tape& tape, Var a, Var b);
Var add(Tape& tape, Var a, Var b);
/// a + row broadcast over every row of a; row is 1 x cols(a).
Var add_row(Tape& tape, Var a, Var row);
Var scale(Tape& tape, Var a, double factor);
/// x * sigmoid(x), elementwise.
Var silu(Tape& tape, Var a);
/// Row-wise layer normalisation with learned 1 x C gain and bias.
Var layer_norm(Tape& tape, Var a, Var gain, Var bias, double eps = 1e-5);
/// Stack rows of a on top of rows of b.
Var concat_rows(Tape& tape, Var a, Var b);
/// out[r] = a[index[r]]. Backward scatter-adds in increasing r.
Var gather_rows(Tape& tape, Var a, std::vector<int> index);
/// Mean over rows [offset, group) of each consecutive block of `group` rows.
Var group_mean(Tape& tape, Var a, int group, int offset);
/// Multi-head scaled dot-product self-attention applied independently to
/// each consecutive block of `group` rows. q, k, v share shape
/// (blocks * group) x width with width divisible by heads.
Var grouped_attention(Tape& tape, Var q, Var k, Var v, int group, int heads);

}  // namespace addiff::autodiff
