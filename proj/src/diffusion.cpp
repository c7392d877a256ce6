// SPDX-License-Identifier: Apache-2.0
#include "fodiff/diffusion.hpp"

namespace fodiff::diffusion {

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end)
{
  if (T < 1)
    throw InvalidArgument("linear_schedule: T must be positive");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
    throw InvalidArgument("linear_schedule: need 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.model_t.resize(T + 1);
  for (int t = 0; t <= T; ++t)
    s.model_t[t] = t;
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

NoiseSchedule NoiseSchedule::respaced(int steps) const
{
  if (steps < 1 || steps > T)
    throw InvalidArgument("respaced: steps must lie in [1, T]");
  NoiseSchedule r;
  r.T = steps;
  r.beta.assign(steps + 1, 0.0);
  r.alpha_bar.assign(steps + 1, 1.0);
  r.model_t.assign(steps + 1, 0);
  for (int k = 1; k <= steps; ++k) {
    const int t = static_cast<int>(std::lround(static_cast<double>(k) * T / steps));
    r.model_t[k] = model_t[t];
    r.alpha_bar[k] = alpha_bar[t];
    r.beta[k] = 1.0 - r.alpha_bar[k] / r.alpha_bar[k - 1];
  }
  return r;
}

} // namespace fodiff::diffusion
