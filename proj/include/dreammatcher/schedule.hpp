#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dreammatcher/error.hpp"

namespace dm {

/// Cumulative signal level alpha_bar(t) for t = 0..T, with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() : alphas_cumprod_{1.0} {}

  explicit NoiseSchedule(std::vector<double> alphas_cumprod) : alphas_cumprod_(std::move(alphas_cumprod)) {
    validate();
  }

  /// Betas on a squared linspace between sqrt(beta_start) and sqrt(beta_end)
  /// over train_steps, subsampled at T evenly spaced ("leading", offset 1)
  /// training timesteps.
  static NoiseSchedule scaled_linear(std::size_t steps, double beta_start = 0.00085, double beta_end = 0.012,
                                     std::size_t train_steps = 1000) {
    require(steps >= 1 && train_steps >= steps, ErrorKind::config,
            "noise schedule: need 1 <= steps <= train_steps");
    require(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0, ErrorKind::config,
            "noise schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> cumprod(train_steps);
    const double a = std::sqrt(beta_start);
    const double b = std::sqrt(beta_end);
    double acc = 1.0;
    for (std::size_t i = 0; i < train_steps; ++i) {
      const double frac = train_steps > 1 ? static_cast<double>(i) / static_cast<double>(train_steps - 1) : 0.0;
      const double root = a + (b - a) * frac;
      acc *= 1.0 - root * root;
      cumprod[i] = acc;
    }
    const std::size_t ratio = train_steps / steps;
    std::vector<double> out(steps + 1);
    out[0] = 1.0;
    for (std::size_t t = 1; t <= steps; ++t) out[t] = cumprod[std::min((t - 1) * ratio + 1, train_steps - 1)];
    return NoiseSchedule(std::move(out));
  }

  std::size_t steps() const noexcept { return alphas_cumprod_.size() - 1; }

  double alpha_bar(std::size_t t) const {
    check_step(t);
    return alphas_cumprod_[t];
  }
  double sigma(std::size_t t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  void check_step(std::size_t t) const {
    require(t < alphas_cumprod_.size(), ErrorKind::range,
            "step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  }

  const std::vector<double>& values() const noexcept { return alphas_cumprod_; }

 private:
  void validate() const {
    require(!alphas_cumprod_.empty(), ErrorKind::validation, "noise schedule: empty");
    require(std::abs(alphas_cumprod_[0] - 1.0) <= 1e-6, ErrorKind::validation, "noise schedule: alpha_bar(0) != 1");
    for (std::size_t t = 0; t < alphas_cumprod_.size(); ++t) {
      const double v = alphas_cumprod_[t];
      require(std::isfinite(v) && v > 0.0 && v <= 1.0 + 1e-6, ErrorKind::validation,
              "noise schedule: alpha_bar(" + std::to_string(t) + ") outside (0, 1]");
      if (t > 0) {
        require(v <= alphas_cumprod_[t - 1], ErrorKind::validation,
                "noise schedule: alpha_bar not monotonically decreasing at t=" + std::to_string(t));
      }
    }
  }

  std::vector<double> alphas_cumprod_;
};

}  // namespace dm
