#include "addiff/categorical.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace addiff {

Vector OneHot::dense() const {
  Vector v = Vector::Zero(dim);
  v[index] = 1.0;
  return v;
}

CategoricalDistribution::CategoricalDistribution(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0) throw std::invalid_argument("empty categorical distribution");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("categorical probabilities must be finite and non-negative");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("categorical probabilities sum to " + std::to_string(total));
  }
}

RenoiseVariant parse_renoise_variant(const std::string& name) {
  if (name == "alpha") return RenoiseVariant::kAlpha;
  if (name == "alpha_bar") return RenoiseVariant::kAlphaBar;
  throw std::invalid_argument("unknown renoise variant '" + name + "' (expected alpha or alpha_bar)");
}

std::string to_string(RenoiseVariant v) {
  return v == RenoiseVariant::kAlpha ? "alpha" : "alpha_bar";
}

OneHot one_hot(int index, int dim) {
  if (dim < 1) throw std::invalid_argument("one_hot: class count must be >= 1");
  if (index < 0 || index >= dim) {
    throw std::out_of_range("one_hot: index " + std::to_string(index) + " outside [0, " +
                            std::to_string(dim) + ")");
  }
  return OneHot{index, dim};
}

Vector gaussian_mix(const OneHot& y0, double coef, NoiseSource& noise) {
  if (!(coef >= 0.0 && coef <= 1.0)) throw std::invalid_argument("mix coefficient outside [0, 1]");
  Vector out = y0.dense();
  if (coef == 1.0) return out;
  const double signal = std::sqrt(coef);
  const double spread = std::sqrt(1.0 - coef);
  for (int k = 0; k < y0.dim; ++k) out[k] = signal * out[k] + spread * noise.normal();
  return out;
}

NoisyLabel corrupt(const OneHot& y0, int t, const Schedule& schedule, NoiseSource& noise,
                   Vector* eps_out) {
  const double abar = schedule.alpha_bar(t);
  NoisyLabel out{y0.dense(), t};
  if (eps_out) eps_out->setZero(y0.dim);
  if (abar == 1.0) return out;
  const double signal = std::sqrt(abar);
  const double spread = std::sqrt(1.0 - abar);
  for (int k = 0; k < y0.dim; ++k) {
    const double eps = noise.normal();
    out.values[k] = signal * out.values[k] + spread * eps;
    if (eps_out) (*eps_out)[k] = eps;
  }
  return out;
}

NoisyLabel corrupt(const OneHot& y0, int t, const Schedule& schedule, NoiseSource& noise) {
  return corrupt(y0, t, schedule, noise, nullptr);
}

OneHot discretize(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("discretize: empty input");
  int best = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (std::isnan(scores[k])) throw std::invalid_argument("discretize: NaN entry");
    if (scores[k] > scores[best]) best = static_cast<int>(k);
  }
  return OneHot{best, static_cast<int>(scores.size())};
}

NoisyLabel renoise(const OneHot& y_hat, int t_prev, const Schedule& schedule,
                   RenoiseVariant variant, NoiseSource& noise) {
  const double coef = variant == RenoiseVariant::kAlphaBar ? schedule.alpha_bar(t_prev)
                                                           : schedule.alpha(t_prev);
  return NoisyLabel{gaussian_mix(y_hat, coef, noise), t_prev};
}

CategoricalDistribution softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double top = -INFINITY;
  for (double l : logits) {
    if (!std::isfinite(l)) throw std::invalid_argument("softmax: non-finite logit");
    top = std::max(top, l);
  }
  Vector p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - top) / temperature);
    total += p[k];
  }
  p /= total;
  return CategoricalDistribution(std::move(p));
}

OneHot sample_categorical(const CategoricalDistribution& d, NoiseSource& noise) {
  const double u = noise.uniform();
  double acc = 0.0;
  const int dim = d.dim();
  int last_positive = 0;
  for (int k = 0; k < dim; ++k) {
    const double p = d.probs()[k];
    if (p > 0.0) last_positive = k;
    acc += p;
    if (u < acc) return OneHot{k, dim};
  }
  // u landed in the rounding slack above the cumulative sum.
  return OneHot{last_positive, dim};
}

}  // namespace addiff
