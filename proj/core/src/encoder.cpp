#include "addiff/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "addiff/errors.hpp"

namespace addiff {

namespace ad = autodiff;

namespace {

Matrix fan_in_uniform(int rows, int cols, NoiseSource& noise, int fan_in = 0) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : rows));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bound * (2.0 * noise.uniform() - 1.0);
  return m;
}

std::string layer_name(int i, const char* leaf) {
  return "layer" + std::to_string(i) + "." + leaf;
}

}  // namespace

std::string to_string(Pooling p) { return p == Pooling::kMean ? "mean" : "class_token"; }

Pooling parse_pooling(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "class_token") return Pooling::kClassToken;
  throw std::invalid_argument("unknown pooling '" + name + "' (expected mean or class_token)");
}

void EncoderSpec::validate() const {
  if (feature_dim < 1 || model_dim < 1 || layers < 1 || ffn_dim < 1 || heads < 1) {
    throw std::invalid_argument("encoder dimensions must all be >= 1");
  }
  if (model_dim % heads != 0) throw std::invalid_argument("encoder model_dim not divisible by heads");
}

EncoderParams init_encoder(const EncoderSpec& spec, NoiseSource& noise) {
  spec.validate();
  const int d = spec.model_dim;
  EncoderParams p{spec, {}};
  ParamSet& t = p.tensors;
  t.add("in.w", fan_in_uniform(spec.feature_dim, d, noise));
  t.add("in.b", Matrix::Zero(1, d));
  t.add("cls", fan_in_uniform(1, d, noise, d));
  for (int i = 0; i < spec.layers; ++i) {
    t.add(layer_name(i, "ln1.g"), Matrix::Ones(1, d));
    t.add(layer_name(i, "ln1.b"), Matrix::Zero(1, d));
    t.add(layer_name(i, "attn.q"), fan_in_uniform(d, d, noise));
    t.add(layer_name(i, "attn.k"), fan_in_uniform(d, d, noise));
    t.add(layer_name(i, "attn.v"), fan_in_uniform(d, d, noise));
    t.add(layer_name(i, "attn.o"), fan_in_uniform(d, d, noise));
    t.add(layer_name(i, "ln2.g"), Matrix::Ones(1, d));
    t.add(layer_name(i, "ln2.b"), Matrix::Zero(1, d));
    t.add(layer_name(i, "fc1.w"), fan_in_uniform(d, spec.ffn_dim, noise));
    t.add(layer_name(i, "fc1.b"), Matrix::Zero(1, spec.ffn_dim));
    t.add(layer_name(i, "fc2.w"), fan_in_uniform(spec.ffn_dim, d, noise));
    t.add(layer_name(i, "fc2.b"), Matrix::Zero(1, d));
  }
  return p;
}

EncoderPass encoder_forward(const EncoderParams& params, const Matrix& tokens, int tokens_per_item,
                            bool record_gradients) {
  const EncoderSpec& spec = params.spec;
  if (tokens_per_item < 1) throw std::invalid_argument("encoder needs at least one token per item");
  if (tokens.cols() != spec.feature_dim) {
    throw std::invalid_argument("encoder: token width " + std::to_string(tokens.cols()) +
                                " != feature_dim " + std::to_string(spec.feature_dim));
  }
  if (tokens.rows() % tokens_per_item != 0) {
    throw std::invalid_argument("encoder: token rows not a multiple of tokens_per_item");
  }
  const Eigen::Index items = tokens.rows() / tokens_per_item;
  const int group = tokens_per_item + 1;

  EncoderPass pass{ad::Tape(record_gradients), {}, {}, &params.tensors};
  ad::Tape& tape = pass.tape;
  auto p = [&](const std::string& name) {
    const std::size_t slot = params.tensors.slot(name);
    return tape.parameter(slot, params.tensors[slot]);
  };

  pass.tokens = tape.input(tokens);
  ad::Var x = ad::add_row(tape, ad::matmul(tape, pass.tokens, p("in.w")), p("in.b"));

  // Row 0 of the concatenation is the class token; item b becomes
  // [cls; x_b1 ... x_bL].
  std::vector<int> order;
  order.reserve(items * group);
  for (Eigen::Index b = 0; b < items; ++b) {
    order.push_back(0);
    for (int j = 0; j < tokens_per_item; ++j) {
      order.push_back(static_cast<int>(1 + b * tokens_per_item + j));
    }
  }
  x = ad::gather_rows(tape, ad::concat_rows(tape, p("cls"), x), std::move(order));

  for (int i = 0; i < spec.layers; ++i) {
    ad::Var a = ad::layer_norm(tape, x, p(layer_name(i, "ln1.g")), p(layer_name(i, "ln1.b")));
    ad::Var q = ad::matmul(tape, a, p(layer_name(i, "attn.q")));
    ad::Var k = ad::matmul(tape, a, p(layer_name(i, "attn.k")));
    ad::Var v = ad::matmul(tape, a, p(layer_name(i, "attn.v")));
    ad::Var o = ad::grouped_attention(tape, q, k, v, group, spec.heads);
    x = ad::add(tape, x, ad::matmul(tape, o, p(layer_name(i, "attn.o"))));

    ad::Var u = ad::layer_norm(tape, x, p(layer_name(i, "ln2.g")), p(layer_name(i, "ln2.b")));
    u = ad::silu(tape, ad::add_row(tape, ad::matmul(tape, u, p(layer_name(i, "fc1.w"))),
                                   p(layer_name(i, "fc1.b"))));
    u = ad::add_row(tape, ad::matmul(tape, u, p(layer_name(i, "fc2.w"))), p(layer_name(i, "fc2.b")));
    x = ad::add(tape, x, u);
  }

  if (spec.pooling == Pooling::kMean) {
    pass.output = ad::group_mean(tape, x, group, 1);
  } else {
    std::vector<int> heads_rows(items);
    for (Eigen::Index b = 0; b < items; ++b) heads_rows[b] = static_cast<int>(b * group);
    pass.output = ad::gather_rows(tape, x, std::move(heads_rows));
  }
  if (!tape.value(pass.output).allFinite()) throw NumericalError("encoder produced non-finite output");
  return pass;
}

std::vector<Matrix> encoder_backward(EncoderPass& pass, const Matrix& grad_output) {
  pass.tape.backward(pass.output, grad_output);
  std::vector<Matrix> grads = pass.tensors->zeros_like();
  pass.tape.collect_parameter_grads(grads);
  return grads;
}

Matrix encode_batch(const EncoderParams& params, const Matrix& tokens, int tokens_per_item) {
  EncoderPass pass = encoder_forward(params, tokens, tokens_per_item, false);
  return pass.tape.value(pass.output);
}

Condition encode(const EncoderParams& params, const Matrix& tokens) {
  Matrix c = encode_batch(params, tokens, static_cast<int>(tokens.rows()));
  return Condition{c.row(0), false};
}

}  // namespace addiff
