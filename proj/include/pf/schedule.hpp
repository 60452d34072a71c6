#pragma once

#include <vector>

namespace pf {

// Variance schedule tables for T timesteps. Stored in double so the
// cumulative products stay honest; index 0 corresponds to t = 1.
struct NoiseSchedule {
    int t_max = 0;  // T
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

    double beta_at(int t) const;
    double alpha_at(int t) const;
    double alpha_bar_at(int t) const;
    // alpha_bar_{t-1}, with the t=1 convention alpha_bar_0 = 1.
    double alpha_bar_prev(int t) const;
};

// Linear beta ramp from beta_start to beta_end inclusive.
// Requires T >= 2 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int t_max, double beta_start, double beta_end);

}  // namespace pf
