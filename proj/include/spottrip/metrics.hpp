#pragma once

// Trip metrics over intermediate POIs and over whole trips, and the
// popularity reference recommender.

#include "spottrip/data.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

namespace spottrip::metrics {

using Trip = std::vector<Index>;

namespace detail {

inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline double set_f1(std::span<const Index> pred, std::span<const Index> truth) {
  const std::set<Index> a(pred.begin(), pred.end()), b(truth.begin(), truth.end());
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::size_t hit = 0;
  for (Index v : a) hit += b.count(v);
  return harmonic(static_cast<double>(hit) / static_cast<double>(a.size()), static_cast<double>(hit) / static_cast<double>(b.size()));
}

/// Ordered position pairs (i < j) of `a` whose POIs also occur in this
/// order somewhere in `b`.
inline std::size_t concordant_pairs(std::span<const Index> a, std::span<const Index> b) {
  // first[v]: earliest position of v in b; last[v]: latest position.
  std::map<Index, std::size_t> first, last;
  for (std::size_t k = 0; k < b.size(); ++k) {
    first.try_emplace(b[k], k);
    last[b[k]] = k;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto fi = first.find(a[i]);
    if (fi == first.end()) continue;
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      auto lj = last.find(a[j]);
      if (lj != last.end() && fi->second < lj->second) ++n;
    }
  }
  return n;
}

inline double pairs_f1(std::span<const Index> pred, std::span<const Index> truth) {
  if (pred.empty() && truth.empty()) return 1.0;
  const auto pairs = [](std::size_t n) { return static_cast<double>(n * (n > 0 ? n - 1 : 0) / 2); };
  const std::size_t nc_pred = concordant_pairs(pred, truth);
  const std::size_t nc_truth = concordant_pairs(truth, pred);
  if (nc_pred == 0 || nc_truth == 0) return 0.0;
  return harmonic(static_cast<double>(nc_pred) / pairs(pred.size()), static_cast<double>(nc_truth) / pairs(truth.size()));
}

inline std::span<const Index> inner(const Trip& t) {
  if (t.size() < 2) throw std::invalid_argument("metric: trips need at least origin and destination");
  return std::span<const Index>(t).subspan(1, t.size() - 2);
}

}  // namespace detail

inline double f1_intermediate(const Trip& pred, const Trip& truth) { return detail::set_f1(detail::inner(pred), detail::inner(truth)); }
inline double pairs_f1_intermediate(const Trip& pred, const Trip& truth) {
  return detail::pairs_f1(detail::inner(pred), detail::inner(truth));
}
inline double full_f1(const Trip& pred, const Trip& truth) { return detail::set_f1(pred, truth); }
inline double full_pairs_f1(const Trip& pred, const Trip& truth) { return detail::pairs_f1(pred, truth); }

struct TripScores {
  double f1 = 0, pairs_f1 = 0, full_f1 = 0, full_pairs_f1 = 0;
  bool vacuous = false;  // both trips have no intermediate POIs
};

inline TripScores score(const Trip& pred, const Trip& truth) {
  return TripScores{f1_intermediate(pred, truth), pairs_f1_intermediate(pred, truth), full_f1(pred, truth),
                    full_pairs_f1(pred, truth), pred.size() == 2 && truth.size() == 2};
}

/// Uniform per-trip means. Trips with no intermediates on either side are
/// left out of the two intermediate averages and counted in `vacuous`.
struct Summary {
  double f1 = 0, pairs_f1 = 0, full_f1 = 0, full_pairs_f1 = 0;
  std::size_t trips = 0;
  std::size_t vacuous = 0;

  void add(const TripScores& s) {
    const auto n = static_cast<double>(trips);
    full_f1 = (full_f1 * n + s.full_f1) / (n + 1);
    full_pairs_f1 = (full_pairs_f1 * n + s.full_pairs_f1) / (n + 1);
    ++trips;
    if (s.vacuous) {
      ++vacuous;
      return;
    }
    const auto m = static_cast<double>(trips - vacuous - 1);
    f1 = (f1 * m + s.f1) / (m + 1);
    pairs_f1 = (pairs_f1 * m + s.pairs_f1) / (m + 1);
  }
};

/// Out-of-town visit counts from training records; recommends the region's
/// most visited POIs in descending frequency, skipping the endpoints.
class Popularity {
 public:
  Popularity() = default;
  Popularity(const std::vector<TravelRecord>& train, std::vector<std::vector<Index>> region_pois)
      : region_pois_(std::move(region_pois)) {
    for (const auto& r : train)
      for (const auto& c : r.outoftown) ++counts_[c.poi];
  }

  [[nodiscard]] std::size_t count(Index poi) const {
    auto it = counts_.find(poi);
    return it == counts_.end() ? 0 : it->second;
  }

  [[nodiscard]] std::vector<Index> ranked(Index region, Index origin, Index destination) const {
    std::vector<Index> out;
    for (Index p : region_pois_.at(static_cast<std::size_t>(region)))
      if (p != origin && p != destination) out.push_back(p);
    std::stable_sort(out.begin(), out.end(), [&](Index a, Index b) {
      const auto ca = count(a), cb = count(b);
      return ca != cb ? ca > cb : a < b;
    });
    return out;
  }

  /// Slot k of the intermediates takes ranked[k mod |ranked|]; when the
  /// region holds nothing but the endpoints the origin is repeated.
  [[nodiscard]] Trip recommend(Index region, Index origin, Index destination, Index stops) const {
    if (stops < 2) throw std::invalid_argument("popularity: need at least 2 stops");
    const auto list = ranked(region, origin, destination);
    Trip trip{origin};
    for (Index k = 0; k < stops - 2; ++k) trip.push_back(list.empty() ? origin : list[static_cast<std::size_t>(k) % list.size()]);
    trip.push_back(destination);
    return trip;
  }

 private:
  std::vector<std::vector<Index>> region_pois_;
  std::map<Index, std::size_t> counts_;
};

}  // namespace spottrip::metrics
