#include "addiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "addiff/errors.hpp"

namespace addiff {

namespace ad = autodiff;

namespace {

Matrix uniform_matrix(int rows, int cols, double bound, NoiseSource& noise) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bound * (2.0 * noise.uniform() - 1.0);
  return m;
}

Matrix fan_in_uniform(int rows, int cols, NoiseSource& noise) {
  return uniform_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), noise);
}

std::string block_name(int i, const char* leaf) {
  return "block" + std::to_string(i) + "." + leaf;
}

// Binds each parameter tensor to a tape leaf, by name.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamSet& set) : tape_(tape), set_(set) {}
  ad::Var operator()(const std::string& name) {
    const std::size_t slot = set_.slot(name);
    return tape_.parameter(slot, set_[slot]);
  }

 private:
  ad::Tape& tape_;
  const ParamSet& set_;
};

ad::Var linear(ad::Tape& tape, Bound& p, ad::Var x, const std::string& prefix) {
  return ad::add_row(tape, ad::matmul(tape, x, p(prefix + ".w")), p(prefix + ".b"));
}

ad::Var mlp_sublayer(ad::Tape& tape, Bound& p, ad::Var h, int i) {
  ad::Var u = ad::layer_norm(tape, h, p(block_name(i, "ln2.g")), p(block_name(i, "ln2.b")));
  u = ad::silu(tape, linear(tape, p, u, block_name(i, "fc1")));
  u = linear(tape, p, u, block_name(i, "fc2"));
  return ad::add(tape, h, u);
}

ad::Var attention_sublayer(ad::Tape& tape, Bound& p, ad::Var h, int i, int group, int heads) {
  ad::Var a = ad::layer_norm(tape, h, p(block_name(i, "ln1.g")), p(block_name(i, "ln1.b")));
  ad::Var q = ad::matmul(tape, a, p(block_name(i, "attn.q")));
  ad::Var k = ad::matmul(tape, a, p(block_name(i, "attn.k")));
  ad::Var v = ad::matmul(tape, a, p(block_name(i, "attn.v")));
  ad::Var o = ad::grouped_attention(tape, q, k, v, group, heads);
  return ad::add(tape, h, ad::matmul(tape, o, p(block_name(i, "attn.o"))));
}

}  // namespace

std::string to_string(Prediction p) { return p == Prediction::kLogits ? "logits" : "noise"; }

Prediction parse_prediction(const std::string& name) {
  if (name == "logits") return Prediction::kLogits;
  if (name == "noise") return Prediction::kNoise;
  throw std::invalid_argument("unknown prediction kind '" + name + "'");
}

void DenoiserSpec::validate() const {
  if (classes < 1 || cond_dim < 1 || hidden_dim < 1 || depth < 1 || time_embed_dim < 1 ||
      seq_len < 1 || heads < 1) {
    throw std::invalid_argument("denoiser dimensions must all be >= 1");
  }
  if (time_embed_dim % 2 != 0) throw std::invalid_argument("time_embed_dim must be even");
  if (seq_len > 1 && hidden_dim % heads != 0) {
    throw std::invalid_argument("hidden_dim must be divisible by heads");
  }
}

DenoiserParams init_denoiser(const DenoiserSpec& spec, NoiseSource& noise) {
  spec.validate();
  const int h = spec.hidden_dim;
  DenoiserParams p{spec, {}};
  ParamSet& t = p.tensors;
  t.add("in.w", fan_in_uniform(spec.classes, h, noise));
  t.add("in.b", Matrix::Zero(1, h));
  t.add("time.w", fan_in_uniform(spec.time_embed_dim, h, noise));
  t.add("time.b", Matrix::Zero(1, h));
  t.add("cond.w", fan_in_uniform(spec.cond_dim, h, noise));
  t.add("cond.b", Matrix::Zero(1, h));
  if (spec.seq_len > 1) t.add("pos", uniform_matrix(spec.seq_len, h, 1.0 / std::sqrt(static_cast<double>(h)), noise));
  for (int i = 0; i < spec.depth; ++i) {
    if (spec.seq_len > 1) {
      t.add(block_name(i, "ln1.g"), Matrix::Ones(1, h));
      t.add(block_name(i, "ln1.b"), Matrix::Zero(1, h));
      t.add(block_name(i, "attn.q"), fan_in_uniform(h, h, noise));
      t.add(block_name(i, "attn.k"), fan_in_uniform(h, h, noise));
      t.add(block_name(i, "attn.v"), fan_in_uniform(h, h, noise));
      t.add(block_name(i, "attn.o"), fan_in_uniform(h, h, noise));
    }
    t.add(block_name(i, "ln2.g"), Matrix::Ones(1, h));
    t.add(block_name(i, "ln2.b"), Matrix::Zero(1, h));
    t.add(block_name(i, "fc1.w"), fan_in_uniform(h, spec.mlp_dim(), noise));
    t.add(block_name(i, "fc1.b"), Matrix::Zero(1, spec.mlp_dim()));
    t.add(block_name(i, "fc2.w"), fan_in_uniform(spec.mlp_dim(), h, noise));
    t.add(block_name(i, "fc2.b"), Matrix::Zero(1, h));
  }
  t.add("head.ln.g", Matrix::Ones(1, h));
  t.add("head.ln.b", Matrix::Zero(1, h));
  t.add("head.w", Matrix::Zero(h, spec.classes));
  t.add("head.b", Matrix::Zero(1, spec.classes));
  t.add("null_condition", Matrix::Zero(1, spec.cond_dim));
  return p;
}

RowVector time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding width must be even");
  if (t < 0) throw std::invalid_argument("time embedding needs t >= 0");
  const int half = dim / 2;
  RowVector e(dim);
  for (int i = 0; i < half; ++i) {
    const double exponent = half == 1 ? 0.0 : static_cast<double>(i) / (half - 1);
    const double freq = std::pow(10000.0, -exponent);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

DenoiserPass denoiser_forward(const DenoiserParams& params, const DenoiserBatch& batch,
                              const Matrix& conditions, bool record_gradients) {
  const DenoiserSpec& spec = params.spec;
  const auto items = static_cast<Eigen::Index>(batch.timesteps.size());
  const int n = spec.seq_len;
  if (batch.noisy.rows() != items * n || batch.noisy.cols() != spec.classes) {
    throw std::invalid_argument("denoiser_forward: noisy input must be (B*N) x K");
  }
  if (static_cast<Eigen::Index>(batch.condition_index.size()) != items) {
    throw std::invalid_argument("denoiser_forward: one condition index per item required");
  }
  if (conditions.rows() > 0 && conditions.cols() != spec.cond_dim) {
    throw std::invalid_argument("denoiser_forward: condition width mismatch");
  }

  DenoiserPass pass{ad::Tape(record_gradients), {}, {}, {}, &params.tensors};
  ad::Tape& tape = pass.tape;
  Bound p(tape, params.tensors);

  Matrix temb(items, spec.time_embed_dim);
  std::vector<int> cond_rows(items);
  const auto null_row = static_cast<int>(conditions.rows());
  for (Eigen::Index b = 0; b < items; ++b) {
    temb.row(b) = time_embedding(batch.timesteps[b], spec.time_embed_dim);
    const int ci = batch.condition_index[b];
    if (ci < -1 || ci >= null_row) throw std::out_of_range("denoiser_forward: condition index");
    cond_rows[b] = ci < 0 ? null_row : ci;
  }

  pass.input = tape.input(batch.noisy);
  pass.conditions = tape.input(conditions.rows() > 0 ? conditions : Matrix(0, spec.cond_dim));
  ad::Var cond_table = ad::concat_rows(tape, pass.conditions, p("null_condition"));
  ad::Var cond = ad::gather_rows(tape, cond_table, std::move(cond_rows));
  ad::Var time = linear(tape, p, tape.constant(std::move(temb)), "time");
  ad::Var cond_proj = linear(tape, p, cond, "cond");
  ad::Var h = linear(tape, p, pass.input, "in");

  if (n == 1) {
    h = ad::add(tape, ad::add(tape, h, time), cond_proj);
    for (int i = 0; i < spec.depth; ++i) h = mlp_sublayer(tape, p, h, i);
  } else {
    std::vector<int> position(items * n), owner(items * n);
    for (Eigen::Index r = 0; r < items * n; ++r) {
      position[r] = static_cast<int>(r % n);
      owner[r] = static_cast<int>(r / n);
    }
    h = ad::add(tape, h, ad::gather_rows(tape, p("pos"), std::move(position)));
    // Time and condition reach every token additively; the condition also
    // leads the attention group.
    ad::Var lead = ad::add(tape, cond_proj, time);
    h = ad::add(tape, h, ad::gather_rows(tape, lead, std::move(owner)));
    // Each item becomes one attention group: [condition row; N token rows].
    std::vector<int> order, token_rows;
    order.reserve(items * (n + 1));
    token_rows.reserve(items * n);
    for (Eigen::Index b = 0; b < items; ++b) {
      order.push_back(static_cast<int>(b));
      for (int j = 0; j < n; ++j) {
        token_rows.push_back(static_cast<int>(b * (n + 1) + 1 + j));
        order.push_back(static_cast<int>(items + b * n + j));
      }
    }
    h = ad::gather_rows(tape, ad::concat_rows(tape, lead, h), std::move(order));
    for (int i = 0; i < spec.depth; ++i) {
      h = attention_sublayer(tape, p, h, i, n + 1, spec.heads);
      h = mlp_sublayer(tape, p, h, i);
    }
    h = ad::gather_rows(tape, h, std::move(token_rows));
  }

  h = ad::layer_norm(tape, h, p("head.ln.g"), p("head.ln.b"));
  pass.output = linear(tape, p, h, "head");
  if (!tape.value(pass.output).allFinite()) {
    throw NumericalError("denoiser produced non-finite output");
  }
  return pass;
}

DenoiserGrads denoiser_backward(DenoiserPass& pass, const Matrix& grad_output) {
  pass.tape.backward(pass.output, grad_output);
  DenoiserGrads g;
  g.params = pass.tensors->zeros_like();
  pass.tape.collect_parameter_grads(g.params);
  const Matrix& in_value = pass.tape.value(pass.input);
  const Matrix& cond_value = pass.tape.value(pass.conditions);
  g.input = pass.tape.grad(pass.input).size() ? pass.tape.grad(pass.input)
                                              : Matrix::Zero(in_value.rows(), in_value.cols());
  g.conditions = pass.tape.grad(pass.conditions).size()
                     ? pass.tape.grad(pass.conditions)
                     : Matrix::Zero(cond_value.rows(), cond_value.cols());
  return g;
}

Matrix denoiser_output(const DenoiserParams& params, const Matrix& noisy, int t,
                       const Condition& c) {
  DenoiserBatch batch{noisy, {t}, {c.is_null ? -1 : 0}};
  Matrix cond = c.is_null ? Matrix(0, params.spec.cond_dim) : Matrix(c.vector);
  DenoiserPass pass = denoiser_forward(params, batch, cond, false);
  return pass.tape.value(pass.output);
}

}  // namespace addiff
