#include "pf/schedule.hpp"

#include <string>

#include "pf/error.hpp"

namespace pf {

namespace {
void check_t(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.t_max)
        throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(s.t_max) + "]");
}
}  // namespace

double NoiseSchedule::beta_at(int t) const {
    check_t(*this, t);
    return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(int t) const {
    check_t(*this, t);
    return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    check_t(*this, t);
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_prev(int t) const {
    check_t(*this, t);
    return t == 1 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 2)];
}

NoiseSchedule make_schedule(int t_max, double beta_start, double beta_end) {
    if (t_max < 2) throw ConfigError("schedule needs T >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.t_max = t_max;
    s.beta.resize(static_cast<std::size_t>(t_max));
    s.alpha.resize(static_cast<std::size_t>(t_max));
    s.alpha_bar.resize(static_cast<std::size_t>(t_max));
    double running = 1.0;
    for (int i = 0; i < t_max; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(t_max - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
        running *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = running;
    }
    return s;
}

}  // namespace pf
