#include "addiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace addiff {

namespace {

constexpr double kCosineOffset = 0.008;
constexpr double kMaxCosineBeta = 0.999;

double cosine_profile(double t, double horizon) {
  const double x = (t / horizon + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
  const double c = std::cos(x);
  return c * c;
}

}  // namespace

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw std::invalid_argument("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

Schedule Schedule::build(ScheduleKind kind, int horizon, double beta_min, double beta_max) {
  if (horizon < 1) throw std::invalid_argument("schedule horizon T must be >= 1");

  Schedule s;
  s.kind_ = kind;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  s.betas_.resize(horizon);

  if (kind == ScheduleKind::kLinear) {
    if (!(beta_min > 0.0 && beta_min < 1.0) || !(beta_max > 0.0 && beta_max < 1.0)) {
      throw std::invalid_argument("beta bounds must lie in (0, 1)");
    }
    if (beta_min > beta_max) throw std::invalid_argument("beta_min must not exceed beta_max");
    for (int i = 0; i < horizon; ++i) {
      const double frac = horizon == 1 ? 0.0 : static_cast<double>(i) / (horizon - 1);
      s.betas_[i] = beta_min + (beta_max - beta_min) * frac;
    }
  } else {
    const double f0 = cosine_profile(0.0, horizon);
    double prev = 1.0;
    for (int t = 1; t <= horizon; ++t) {
      const double cur = cosine_profile(t, horizon) / f0;
      s.betas_[t - 1] = std::min(1.0 - cur / prev, kMaxCosineBeta);
      prev = cur;
    }
  }

  s.alphas_.resize(horizon);
  s.alpha_bars_.resize(horizon + 1);
  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    s.alphas_[t - 1] = 1.0 - s.betas_[t - 1];
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * s.alphas_[t - 1];
  }
  return s;
}

Schedule Schedule::from_alpha_bars(ScheduleKind kind, double beta_min, double beta_max,
                                   std::vector<double> alpha_bars) {
  if (alpha_bars.size() < 2) throw std::invalid_argument("alpha-bar table needs T + 1 >= 2 entries");
  if (alpha_bars[0] != 1.0) throw std::invalid_argument("alpha-bar table must start at 1");
  Schedule s;
  s.kind_ = kind;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  const int horizon = static_cast<int>(alpha_bars.size()) - 1;
  s.betas_.resize(horizon);
  s.alphas_.resize(horizon);
  for (int t = 1; t <= horizon; ++t) {
    if (!(alpha_bars[t] > 0.0 && alpha_bars[t] < alpha_bars[t - 1])) {
      throw std::invalid_argument("alpha-bar table must decrease strictly and stay positive");
    }
    s.alphas_[t - 1] = alpha_bars[t] / alpha_bars[t - 1];
    s.betas_[t - 1] = 1.0 - s.alphas_[t - 1];
  }
  s.alpha_bars_ = std::move(alpha_bars);
  return s;
}

double Schedule::alpha_bar(int t) const {
  if (t < 0 || t > horizon()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(horizon()) + "]");
  }
  return alpha_bars_[t];
}

double Schedule::alpha(int t) const {
  if (t < 0 || t > horizon()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(horizon()) + "]");
  }
  return t == 0 ? 1.0 : alphas_[t - 1];
}

double Schedule::beta(int t) const {
  if (t < 1 || t > horizon()) {
    throw std::out_of_range("beta index " + std::to_string(t) + " outside [1, " +
                            std::to_string(horizon()) + "]");
  }
  return betas_[t - 1];
}

std::vector<int> sampling_timesteps(const Schedule& schedule, int steps) {
  const long long horizon = schedule.horizon();
  if (steps < 1 || steps > horizon) {
    throw std::out_of_range("sampling steps " + std::to_string(steps) + " outside [1, " +
                            std::to_string(horizon) + "]");
  }
  std::vector<int> out;
  out.reserve(steps + 1);
  for (long long j = steps; j >= 0; --j) {
    // floor(j * T / S + 1/2) in exact integer arithmetic.
    out.push_back(static_cast<int>((2 * j * horizon + steps) / (2 * steps)));
  }
  return out;
}

}  // namespace addiff
