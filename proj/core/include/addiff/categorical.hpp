#pragma once

#include <span>

#include "addiff/rng.hpp"
#include "addiff/schedule.hpp"
#include "addiff/tensor.hpp"

namespace addiff {

/// Clean categorical label e_index in R^dim.
struct OneHot {
  int index = 0;
  int dim = 1;

  Vector dense() const;
  friend bool operator==(const OneHot&, const OneHot&) = default;
};

/// Gaussian-perturbed label y_t; values are unconstrained reals.
struct NoisyLabel {
  Vector values;
  int t = 0;
};

/// Probabilities over K classes; validated on construction (non-negative,
/// sum to 1 within 1e-6).
class CategoricalDistribution {
 public:
  explicit CategoricalDistribution(Vector probs);
  const Vector& probs() const { return probs_; }
  int dim() const { return static_cast<int>(probs_.size()); }

 private:
  Vector probs_;
};

enum class RenoiseVariant {
  kAlpha,     // per-step alpha_{t-1}, the literal coefficient
  kAlphaBar,  // cumulative alpha-bar_{t-1}, matches the forward marginal
};

RenoiseVariant parse_renoise_variant(const std::string& name);
std::string to_string(RenoiseVariant v);

OneHot one_hot(int index, int dim);

/// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps with fresh eps ~ N(0, I).
/// At t = 0 the result is y0 exactly and no noise is drawn.
NoisyLabel corrupt(const OneHot& y0, int t, const Schedule& schedule, NoiseSource& noise);

/// Same as corrupt() but also returns the drawn eps (needed for the
/// noise-regression objective).
NoisyLabel corrupt(const OneHot& y0, int t, const Schedule& schedule, NoiseSource& noise,
                   Vector* eps_out);

/// sqrt(coef) y0 + sqrt(1 - coef) eps for an explicit coefficient in [0, 1].
/// coef == 1 returns the dense one-hot bitwise without touching `noise`.
Vector gaussian_mix(const OneHot& y0, double coef, NoiseSource& noise);

/// argmax with lowest-index tie-break. Throws on NaN or empty input.
OneHot discretize(std::span<const double> scores);
inline OneHot discretize(const CategoricalDistribution& d) {
  return discretize(std::span<const double>(d.probs().data(), d.probs().size()));
}

/// Re-inject noise around a discretized prediction at timestep t_prev.
NoisyLabel renoise(const OneHot& y_hat, int t_prev, const Schedule& schedule,
                   RenoiseVariant variant, NoiseSource& noise);

/// Numerically stable softmax(logits / temperature).
CategoricalDistribution softmax(std::span<const double> logits, double temperature = 1.0);

/// Draw k ~ probs and return e_k.
OneHot sample_categorical(const CategoricalDistribution& d, NoiseSource& noise);

}  // namespace addiff
