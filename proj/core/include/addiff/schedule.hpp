#pragma once

#include <span>
#include <string>
#include <vector>

namespace addiff {

enum class ScheduleKind { kLinear, kCosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Variance schedule over a horizon of T diffusion steps.
///
/// Index conventions: betas()/alphas() are 1-based in the maths and stored
/// at [t - 1]; alpha_bars() holds T + 1 entries with alpha_bars()[0] == 1 so
/// that the clean endpoint needs no special case. Immutable once built.
class Schedule {
 public:
  /// Linear spacing of beta from beta_min to beta_max, or the squared-cosine
  /// alpha-bar profile (which ignores the beta bounds) with per-step beta
  /// clipped to 0.999.
  static Schedule build(ScheduleKind kind, int horizon, double beta_min, double beta_max);

  /// Rebuild from a stored alpha-bar table (checkpoint restore). The table
  /// must start at exactly 1 and decrease strictly.
  static Schedule from_alpha_bars(ScheduleKind kind, double beta_min, double beta_max,
                                  std::vector<double> alpha_bars);

  int horizon() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double alpha_bar(int t) const;
  /// Per-step retention 1 - beta_t for t in [1, T]; alpha(0) is defined as 1.
  double alpha(int t) const;
  double beta(int t) const;

  std::span<const double> betas() const { return betas_; }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }

 private:
  Schedule() = default;

  ScheduleKind kind_ = ScheduleKind::kLinear;
  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

/// Evenly rounded reverse index sequence T = t_S > ... > t_0 = 0 of length
/// steps + 1; t_j = round(j * T / steps).
std::vector<int> sampling_timesteps(const Schedule& schedule, int steps);

}  // namespace addiff
