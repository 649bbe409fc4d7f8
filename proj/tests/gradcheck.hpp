#pragma once

#include "spottrip/nn.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace gradcheck {

using spottrip::Index;
using spottrip::Matrix;
using spottrip::Parameter;

struct TensorReport {
  std::string name;
  double rel_error = 0.0;
  std::size_t entries = 0;
};

struct Report {
  std::vector<TensorReport> tensors;
  [[nodiscard]] double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.rel_error);
    return w;
  }
  [[nodiscard]] std::string worst_name() const {
    double w = -1.0;
    std::string n;
    for (const auto& t : tensors)
      if (t.rel_error > w) w = t.rel_error, n = t.name;
    return n;
  }
};

using LossFn = std::function<double(bool with_grad)>;

// Central differences on up to `per_tensor` entries of each parameter: the
// entries with largest analytic gradient plus a seeded random selection.
// The error is ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) over the
// sampled entries of one tensor; the denominator is floored at 1e-6 so a
// tensor with vanishing gradient is judged on absolute error.
inline Report check(const std::vector<Parameter*>& params, const LossFn& loss, double step = 1e-5,
                    std::size_t per_tensor = 12, std::uint64_t seed = 1) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  std::mt19937_64 rng(seed);
  Report report;
  for (auto* p : params) {
    if (!p->trainable) continue;
    const auto n = static_cast<std::size_t>(p->value.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const Matrix analytic = p->grad;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(analytic.data()[a]) > std::abs(analytic.data()[b]);
    });
    std::vector<std::size_t> picked(order.begin(), order.begin() + std::min(n, per_tensor / 2));
    std::vector<std::size_t> rest(order.begin() + picked.size(), order.end());
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t i = 0; i < rest.size() && picked.size() < std::min(n, per_tensor); ++i) picked.push_back(rest[i]);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t idx : picked) {
      double& x = p->value.data()[idx];
      const double saved = x;
      x = saved + step;
      const double up = loss(false);
      x = saved - step;
      const double down = loss(false);
      x = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic.data()[idx];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
    report.tensors.push_back({p->name, std::sqrt(diff2) / denom, picked.size()});
  }
  return report;
}

}  // namespace gradcheck
