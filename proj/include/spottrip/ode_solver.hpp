#pragma once

// Differentiable ODE integration on the autodiff tape (discretize-then-
// optimize). Dormand–Prince 5(4) with its 4th-order continuous extension is
// the default; classical RK4 on a fixed step exists for testing.

#include "spottrip/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip::ode {

using ad::Tape;
using ad::Var;

enum class Method { kDopri5, kRk4 };

struct SolverConfig {
  Method method = Method::kDopri5;
  double rtol = 1e-5;
  double atol = 1e-5;
  int max_steps = 10000;
  double rk4_step = 0.01;
  double overflow_guard = 1e8;
};

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rhs = std::function<Var(const Var&)>;

struct Solution {
  std::vector<Var> states;          // one per requested time
  std::vector<double> step_sizes;   // accepted steps, in order
  int rhs_evals = 0;
  int rejected = 0;
};

namespace dopri5 {
// Butcher tableau.
inline constexpr std::array<double, 6> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0};
inline constexpr std::array<std::array<double, 5>, 6> kA = {{
    {0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
}};
inline constexpr std::array<double, 6> kB = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84};
// Difference between the 5th- and embedded 4th-order weights (7 stages, FSAL).
inline constexpr std::array<double, 7> kE = {-71.0 / 57600, 0, 71.0 / 16695, -71.0 / 1920, 17253.0 / 339200, -22.0 / 525,
                                             1.0 / 40};
// Continuous extension: y(t + θh) = y + h Σ_i k_i Σ_j P[i][j] θ^{j+1}.
inline constexpr std::array<std::array<double, 4>, 7> kP = {{
    {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
    {0, 0, 0, 0},
    {0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799},
    {0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
    {0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632},
    {0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
    {0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423},
}};
}  // namespace dopri5

namespace detail {

inline double rms(const Matrix& m) { return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

inline void guard(const Matrix& y, double limit, double t) {
  if (!y.allFinite() || y.cwiseAbs().maxCoeff() > limit) {
    throw IntegrationError("integration diverged near t=" + std::to_string(t) + " (state exceeds overflow guard)");
  }
}

inline void check_times(std::span<const double> times) {
  if (times.empty()) throw std::invalid_argument("integrate: empty time grid");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("integrate: time grid must be strictly ascending");
  }
}

/// Hairer–Nørsett–Wanner starting step.
inline double initial_step(Tape& tape, const Rhs& f, const Var& y0, const Var& f0, double span, double rtol,
                           double atol, int& evals) {
  const Matrix scale = (atol + rtol * y0.value().array().abs()).matrix();
  const double d0 = rms(y0.value().cwiseQuotient(scale));
  const double d1 = rms(f0.value().cwiseQuotient(scale));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  Var y1 = tape.constant(y0.value() + h0 * f0.value());
  const Var f1 = f(y1);
  ++evals;
  const double d2 = rms((f1.value() - f0.value()).cwiseQuotient(scale)) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
  return std::min({100.0 * h0, h1, span});
}

}  // namespace detail

/// Integrates dy/dt = f(y) from times[0] (state y0) and returns the state at
/// every entry of `times`. With `replay`, the given step sizes are used
/// verbatim and error control is skipped, reproducing an earlier solve.
inline Solution integrate(Tape& tape, const Rhs& f, const Var& y0, std::span<const double> times,
                          const SolverConfig& cfg, const std::vector<double>* replay = nullptr) {
  detail::check_times(times);
  Solution sol;
  sol.states.reserve(times.size());
  sol.states.push_back(y0);
  if (times.size() == 1) return sol;

  if (cfg.method == Method::kRk4) {
    Var y = y0;
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double gap = times[i] - times[i - 1];
      const int n = std::max(1, static_cast<int>(std::ceil(gap / cfg.rk4_step - 1e-12)));
      const double h = gap / n;
      for (int s = 0; s < n; ++s) {
        Var k1 = f(y);
        Var k2 = f(y + ad::scale(k1, h / 2));
        Var k3 = f(y + ad::scale(k2, h / 2));
        Var k4 = f(y + ad::scale(k3, h));
        const Var terms[] = {y, k1, k2, k3, k4};
        const double coeffs[] = {1.0, h / 6, h / 3, h / 3, h / 6};
        y = ad::lincomb(terms, coeffs);
        sol.rhs_evals += 4;
        sol.step_sizes.push_back(h);
        detail::guard(y.value(), cfg.overflow_guard, times[i - 1] + (s + 1) * h);
      }
      sol.states.push_back(y);
    }
    return sol;
  }

  using namespace dopri5;
  const double t_end = times.back();
  double t = times.front();
  Var y = y0;
  Var k1 = f(y);
  ++sol.rhs_evals;
  double h = 0.0;
  if (replay == nullptr) {
    h = detail::initial_step(tape, f, y0, k1, t_end - t, cfg.rtol, cfg.atol, sol.rhs_evals);
  }
  std::size_t next = 1;
  std::size_t replay_pos = 0;
  int steps = 0;

  while (next < times.size()) {
    if (++steps > cfg.max_steps) throw IntegrationError("integration exceeded max_steps=" + std::to_string(cfg.max_steps));
    bool last = false;
    if (replay != nullptr) {
      if (replay_pos >= replay->size()) throw IntegrationError("replayed step schedule ended before the final time");
      h = (*replay)[replay_pos++];
      last = replay_pos == replay->size();
    } else if (t + h >= t_end) {
      h = t_end - t;
      last = true;
    }

    std::array<Var, 7> k;
    k[0] = k1;
    for (std::size_t s = 1; s < 6; ++s) {
      std::vector<Var> terms{y};
      std::vector<double> coeffs{1.0};
      for (std::size_t j = 0; j < s; ++j) {
        terms.push_back(k[j]);
        coeffs.push_back(h * kA[s][j]);
      }
      k[s] = f(ad::lincomb(terms, coeffs));
      ++sol.rhs_evals;
    }
    std::vector<Var> terms{y};
    std::vector<double> coeffs{1.0};
    for (std::size_t j = 0; j < 6; ++j) {
      terms.push_back(k[j]);
      coeffs.push_back(h * kB[j]);
    }
    Var y_new = ad::lincomb(terms, coeffs);
    detail::guard(y_new.value(), cfg.overflow_guard, t + h);
    k[6] = f(y_new);
    ++sol.rhs_evals;

    double err_norm = 0.0;
    if (replay == nullptr) {
      Matrix err = Matrix::Zero(y.rows(), y.cols());
      for (std::size_t j = 0; j < 7; ++j) err += (h * kE[j]) * k[j].value();
      const Matrix scale = (cfg.atol + cfg.rtol * y.value().cwiseAbs().cwiseMax(y_new.value().cwiseAbs()).array()).matrix();
      err_norm = detail::rms(err.cwiseQuotient(scale));
    }

    if (replay != nullptr || err_norm <= 1.0) {
      const double t_new = last ? t_end : t + h;
      while (next < times.size() && times[next] <= t_new) {
        if (times[next] == t_new) {
          sol.states.push_back(y_new);
        } else {
          const double theta = (times[next] - t) / h;
          std::vector<Var> dterms{y};
          std::vector<double> dcoeffs{1.0};
          for (std::size_t i = 0; i < 7; ++i) {
            const double q = kP[i][0] * theta + kP[i][1] * theta * theta + kP[i][2] * std::pow(theta, 3) +
                             kP[i][3] * std::pow(theta, 4);
            dterms.push_back(k[i]);
            dcoeffs.push_back(h * q);
          }
          sol.states.push_back(ad::lincomb(dterms, dcoeffs));
        }
        ++next;
      }
      sol.step_sizes.push_back(h);
      t = t_new;
      y = y_new;
      k1 = k[6];
      if (replay == nullptr) {
        const double factor = err_norm == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 10.0);
        h *= factor;
      }
    } else {
      ++sol.rejected;
      h *= std::max(0.2, 0.9 * std::pow(err_norm, -0.2));
    }
  }
  return sol;
}

}  // namespace spottrip::ode
