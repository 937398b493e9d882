#pragma once

#include <string>
#include <vector>

#include "addiff/autodiff.hpp"
#include "addiff/denoiser.hpp"
#include "addiff/params.hpp"
#include "addiff/rng.hpp"

namespace addiff {

enum class Pooling { kClassToken, kMean };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& name);

/// Toy transformer that turns L feature tokens into one conditioning
/// vector. No positional terms: the feature tokens are an unordered set.
struct EncoderSpec {
  int feature_dim = 16;  // width of each input token
  int model_dim = 32;    // width of the residual stream and of the output
  int layers = 1;        // M
  int ffn_dim = 64;
  int heads = 2;
  Pooling pooling = Pooling::kMean;

  void validate() const;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct EncoderParams {
  EncoderSpec spec;
  ParamSet tensors;  // includes the learned class token "cls" (1 x model_dim)
};

EncoderParams init_encoder(const EncoderSpec& spec, NoiseSource& noise);

struct EncoderPass {
  autodiff::Tape tape;
  autodiff::Var tokens;
  autodiff::Var output;  // B x model_dim
  const ParamSet* tensors = nullptr;
};

/// `tokens` stacks B items of `tokens_per_item` rows each.
EncoderPass encoder_forward(const EncoderParams& params, const Matrix& tokens, int tokens_per_item,
                            bool record_gradients = true);

/// Parameter gradients (slot order) of <grad_output, output>.
std::vector<Matrix> encoder_backward(EncoderPass& pass, const Matrix& grad_output);

/// Conditions for a stacked batch, forward only.
Matrix encode_batch(const EncoderParams& params, const Matrix& tokens, int tokens_per_item);

/// Single item: L x feature_dim tokens to one Condition.
Condition encode(const EncoderParams& params, const Matrix& tokens);

}  // namespace addiff
