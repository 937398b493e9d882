#pragma once

#include <string>
#include <vector>

#include "addiff/autodiff.hpp"
#include "addiff/params.hpp"
#include "addiff/rng.hpp"
#include "addiff/tensor.hpp"

namespace addiff {

/// What the output head is trained to produce.
enum class Prediction {
  kLogits,  // class logits for the clean label (cross-entropy objectives)
  kNoise,   // the Gaussian noise of the forward corruption (regression ablation)
};

std::string to_string(Prediction p);
Prediction parse_prediction(const std::string& name);

/// Shape of the conditional denoiser f(y_t, t, c).
struct DenoiserSpec {
  int classes = 10;         // K: width of each one-hot token, input and output
  int cond_dim = 32;        // width of the conditioning vector
  int hidden_dim = 64;
  int depth = 2;            // residual blocks
  int time_embed_dim = 32;  // even
  int seq_len = 1;          // N tokens denoised jointly
  int heads = 4;            // attention heads, used only when seq_len > 1
  Prediction prediction = Prediction::kLogits;

  int mlp_dim() const { return 2 * hidden_dim; }
  void validate() const;
  friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

struct DenoiserParams {
  DenoiserSpec spec;
  ParamSet tensors;  // includes "null_condition" (1 x cond_dim)
};

/// Conditioning vector c, or the learned null placeholder when is_null.
struct Condition {
  RowVector vector;
  bool is_null = false;
};

/// Fan-in scaled uniform weights, zero biases, unit norm gains, zero output
/// head and zero null condition.
DenoiserParams init_denoiser(const DenoiserSpec& spec, NoiseSource& noise);

/// Sinusoidal embedding: [sin(t w_i), cos(t w_i)] over dim / 2 geometric
/// frequencies w_i from 1 down to 1 / 10000.
RowVector time_embedding(int t, int dim);

/// B items, each a sequence of seq_len noisy labels.
struct DenoiserBatch {
  Matrix noisy;                      // (B * seq_len) x classes
  std::vector<int> timesteps;        // B
  std::vector<int> condition_index;  // B; row of the condition matrix, or -1 for null
};

/// Evaluation record of one forward pass.
struct DenoiserPass {
  autodiff::Tape tape;
  autodiff::Var input;
  autodiff::Var conditions;
  autodiff::Var output;
  const ParamSet* tensors = nullptr;
};

/// Runs the whole batch in one pass; for seq_len > 1 all token positions
/// are produced together. `conditions` rows are shared by every item that
/// indexes them. Throws NumericalError on non-finite output.
DenoiserPass denoiser_forward(const DenoiserParams& params, const DenoiserBatch& batch,
                              const Matrix& conditions, bool record_gradients = true);

struct DenoiserGrads {
  std::vector<Matrix> params;  // slot order of DenoiserParams::tensors
  Matrix input;                // d/d noisy
  Matrix conditions;           // d/d condition rows
};

/// Exact gradients of <grad_output, output>.
DenoiserGrads denoiser_backward(DenoiserPass& pass, const Matrix& grad_output);

/// Convenience wrapper for a single item: (seq_len x classes) output.
Matrix denoiser_output(const DenoiserParams& params, const Matrix& noisy, int t,
                       const Condition& c);

}  // namespace addiff
