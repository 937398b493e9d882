#include "addiff/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace addiff::autodiff {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false, -1});
  return Var{nodes_.size() - 1};
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, record_, -1});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(std::size_t slot, const Matrix& value) {
  nodes_.push_back(Node{{}, &value, {}, {}, record_, static_cast<long>(slot)});
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(value(v).rows(), value(v).cols());
  return n.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
  bool needs = false;
  if (record_) {
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backprop) : Backprop{},
                        needs, -1});
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var out, const Matrix& seed) {
  if (!record_) throw std::logic_error("backward on a tape built without gradient recording");
  const Matrix& v = value(out);
  if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
    throw std::invalid_argument("backward: seed shape does not match output");
  }
  accumulate(out, seed);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backprop || n.grad.size() == 0) continue;
    n.backprop(*this, n.grad);
  }
}

void Tape::collect_parameter_grads(std::vector<Matrix>& grads) const {
  for (const Node& n : nodes_) {
    if (n.param_slot < 0 || n.grad.size() == 0) continue;
    Matrix& dst = grads.at(static_cast<std::size_t>(n.param_slot));
    if (dst.size() == 0) {
      dst = n.grad;
    } else {
      dst += n.grad;
    }
  }
}

Var matmul(Tape& tape, Var a, Var b) {
  const Matrix& av = tape.value(a);
  const Matrix& bv = tape.value(b);
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(av.cols()) + " vs " +
                                std::to_string(bv.rows()));
  }
  Matrix out = av * bv;
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Matrix& av = tape.value(a);
  const Matrix& bv = tape.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shape mismatch");
  Matrix out = av + bv;
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Tape& tape, Var a, Var row) {
  const Matrix& av = tape.value(a);
  const Matrix& rv = tape.value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row: row must be 1 x cols(a)");
  Matrix out = av.rowwise() + rv.row(0);
  return tape.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Tape& tape, Var a, double factor) {
  Matrix out = tape.value(a) * factor;
  return tape.record(std::move(out), {a},
                     [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var silu(Tape& tape, Var a) {
  const Matrix& x = tape.value(a);
  Matrix sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Matrix out = (x.array() * sig.array()).matrix();
  return tape.record(std::move(out), {a}, [a, sig = std::move(sig)](Tape& t, const Matrix& g) {
    const auto x = t.value(a).array();
    t.accumulate(a, (g.array() * sig.array() * (1.0 + x * (1.0 - sig.array()))).matrix());
  });
}

Var layer_norm(Tape& tape, Var a, Var gain, Var bias, double eps) {
  const Matrix& x = tape.value(a);
  const Matrix& gv = tape.value(gain);
  const Matrix& bv = tape.value(bias);
  const Eigen::Index cols = x.cols();
  require(gv.rows() == 1 && gv.cols() == cols && bv.rows() == 1 && bv.cols() == cols,
          "layer_norm: gain/bias must be 1 x cols");
  Matrix xhat(x.rows(), cols);
  Vector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  Matrix out = (xhat.array().rowwise() * gv.row(0).array()).matrix();
  out.rowwise() += bv.row(0);
  return tape.record(
      std::move(out), {a, gain, bias},
      [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                            const Matrix& g) {
        if (t.requires_grad(gain)) {
          t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
        }
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(a)) return;
        const Matrix dxhat = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
        Matrix dx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const double m1 = dxhat.row(r).mean();
          const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(g.cols());
          dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        t.accumulate(a, dx);
      });
}

Var concat_rows(Tape& tape, Var a, Var b) {
  const Matrix& av = tape.value(a);
  const Matrix& bv = tape.value(b);
  require(av.cols() == bv.cols(), "concat_rows: column mismatch");
  Matrix out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index top = av.rows();
  return tape.record(std::move(out), {a, b}, [a, b, top](Tape& t, const Matrix& g) {
    t.accumulate(a, g.topRows(top));
    t.accumulate(b, g.bottomRows(g.rows() - top));
  });
}

Var gather_rows(Tape& tape, Var a, std::vector<int> index) {
  const Matrix& av = tape.value(a);
  Matrix out(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= av.rows()) throw std::out_of_range("gather_rows: bad index");
    out.row(static_cast<Eigen::Index>(r)) = av.row(index[r]);
  }
  return tape.record(std::move(out), {a}, [a, index = std::move(index)](Tape& t, const Matrix& g) {
    Matrix& da = t.grad_buffer(a);
    for (std::size_t r = 0; r < index.size(); ++r) {
      da.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var group_mean(Tape& tape, Var a, int group, int offset) {
  const Matrix& av = tape.value(a);
  require(group > 0 && offset >= 0 && offset < group && av.rows() % group == 0,
          "group_mean: rows must be a multiple of group and offset < group");
  const Eigen::Index blocks = av.rows() / group;
  const int count = group - offset;
  Matrix out(blocks, av.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.row(b) = av.middleRows(b * group + offset, count).colwise().sum() / count;
  }
  return tape.record(std::move(out), {a}, [a, group, offset, count](Tape& t, const Matrix& g) {
    Matrix& da = t.grad_buffer(a);
    for (Eigen::Index b = 0; b < g.rows(); ++b) {
      const RowVector share = g.row(b) / count;
      for (int r = offset; r < group; ++r) da.row(b * group + r) += share;
    }
  });
}

Var grouped_attention(Tape& tape, Var q, Var k, Var v, int group, int heads) {
  const Matrix& qv = tape.value(q);
  const Matrix& kv = tape.value(k);
  const Matrix& vv = tape.value(v);
  require(qv.rows() == kv.rows() && qv.rows() == vv.rows() && qv.cols() == kv.cols() &&
              qv.cols() == vv.cols(),
          "grouped_attention: q, k, v shapes differ");
  require(group > 0 && qv.rows() % group == 0, "grouped_attention: rows not a multiple of group");
  require(heads > 0 && qv.cols() % heads == 0, "grouped_attention: width not divisible by heads");
  const Eigen::Index blocks = qv.rows() / group;
  const Eigen::Index dh = qv.cols() / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs holds one group x group block per (block, head), stacked vertically.
  Matrix probs(blocks * heads * group, group);
  Matrix out(qv.rows(), qv.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = qv.block(b * group, h * dh, group, dh);
      const auto kh = kv.block(b * group, h * dh, group, dh);
      const auto vh = vv.block(b * group, h * dh, group, dh);
      auto p = probs.middleRows((b * heads + h) * group, group);
      p.noalias() = qh * kh.transpose() * s;
      for (int r = 0; r < group; ++r) {
        const double top = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - top).exp();
        p.row(r) /= p.row(r).sum();
      }
      out.block(b * group, h * dh, group, dh).noalias() = p * vh;
    }
  }
  return tape.record(
      std::move(out), {q, k, v},
      [q, k, v, group, heads, blocks, dh, s, probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(q);
        const Matrix& kv = t.value(k);
        const Matrix& vv = t.value(v);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        Matrix dp(group, group);
        for (Eigen::Index b = 0; b < blocks; ++b) {
          for (int h = 0; h < heads; ++h) {
            const auto p = probs.middleRows((b * heads + h) * group, group);
            const auto go = g.block(b * group, h * dh, group, dh);
            const auto qh = qv.block(b * group, h * dh, group, dh);
            const auto kh = kv.block(b * group, h * dh, group, dh);
            const auto vh = vv.block(b * group, h * dh, group, dh);
            dv.block(b * group, h * dh, group, dh).noalias() = p.transpose() * go;
            dp.noalias() = go * vh.transpose();
            for (int r = 0; r < group; ++r) {
              const double inner = dp.row(r).dot(p.row(r));
              dp.row(r) = (p.row(r).array() * (dp.row(r).array() - inner)).matrix();
            }
            dq.block(b * group, h * dh, group, dh).noalias() = dp * kh * s;
            dk.block(b * group, h * dh, group, dh).noalias() = dp.transpose() * qh * s;
          }
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk);
        t.accumulate(v, dv);
      });
}

}  // namespace addiff::autodiff
