#pragma once

// Query representation, static/dynamic fusion scoring, the training
// objective, and nucleus sampling over a region's POIs.

#include "spottrip/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip::fusion {

using ad::Tape;
using ad::Var;

inline constexpr double kFusionSlope = 0.01;

struct Query {
  Index origin = 0;
  Index destination = 0;
  Index stops = 2;
};

/// Which endpoints the query reveals. Single-endpoint queries replace the
/// missing endpoint with the mask vector.
enum class QueryMode { kFull, kOriginOnly, kDestinationOnly };

class QueryEncoder {
 public:
  QueryEncoder() = default;
  QueryEncoder(ParameterStore& store, Index max_length, Index d, Index layers, Index heads, Index ff_width, Rng& rng)
      : transformer_(store, "query.encoder", layers, 2 * d, heads, ff_width, rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    positions_ = &store.add("query.positions", uniform_matrix(max_length, d, bound, rng));
    mask_ = &store.add("query.mask", uniform_matrix(1, d, bound, rng));
  }

  [[nodiscard]] Index max_length() const { return positions_->value.rows(); }

  /// N x 2d: [v̄(origin) | mask … | v̄(destination)] concatenated with the
  /// positional table, then Trans_Q.
  [[nodiscard]] Var encode(Tape& tape, const Var& origin_row, const Var& destination_row, Index stops,
                           QueryMode mode = QueryMode::kFull) const {
    if (stops < 2) throw std::invalid_argument("query: a trip needs at least 2 stops, got " + std::to_string(stops));
    if (stops > max_length()) {
      throw std::invalid_argument("query: " + std::to_string(stops) + " stops exceeds the maximum length " +
                                  std::to_string(max_length()));
    }
    Var mask = tape.param(*mask_);
    std::vector<Var> slots;
    slots.reserve(static_cast<std::size_t>(stops));
    slots.push_back(mode == QueryMode::kDestinationOnly ? mask : origin_row);
    if (stops > 2) slots.push_back(ad::repeat_rows(mask, stops - 2));
    slots.push_back(mode == QueryMode::kOriginOnly ? mask : destination_row);
    Var content = ad::concat_rows(slots);
    Var pos = ad::slice_rows(tape.param(*positions_), 0, stops);
    return transformer_(tape, ad::concat_cols({content, pos}));
  }

 private:
  nn::TransformerEncoder transformer_;
  Parameter* positions_ = nullptr;
  Parameter* mask_ = nullptr;
};

/// Position of `poi` inside the region list, or an error naming it.
inline Index region_slot(std::span<const Index> region_pois, Index poi, const char* role) {
  auto it = std::find(region_pois.begin(), region_pois.end(), poi);
  if (it == region_pois.end()) {
    throw std::invalid_argument(std::string(role) + " POI " + std::to_string(poi) + " is not in the target region");
  }
  return static_cast<Index>(it - region_pois.begin());
}

/// Encodes a query whose endpoints are looked up in `region_kbar`, the
/// knowledge-enhanced embeddings of the region's POIs (rows follow
/// `region_pois`).
inline Var encode_query(Tape& tape, const QueryEncoder& enc, const Var& region_kbar, std::span<const Index> region_pois,
                        const Query& q, QueryMode mode = QueryMode::kFull) {
  if (q.stops < 2) throw std::invalid_argument("query: a trip needs at least 2 stops, got " + std::to_string(q.stops));
  const Index o = region_slot(region_pois, q.origin, "origin");
  const Index d = region_slot(region_pois, q.destination, "destination");
  return enc.encode(tape, ad::slice_rows(region_kbar, o, 1), ad::slice_rows(region_kbar, d, 1), q.stops, mode);
}

struct FusionHead {
  Parameter* weight = nullptr;  // 4d x d
  Parameter* bias = nullptr;    // 1 x d

  static FusionHead create(ParameterStore& store, Index d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(4.0 * static_cast<double>(d));
    return FusionHead{&store.add("fusion.weight", uniform_matrix(4 * d, d, bound, rng)),
                      &store.add("fusion.bias", uniform_matrix(1, d, bound, rng))};
  }
};

/// h_n = LeakyReLU([q_n ‖ P̄ ‖ p̃_n] W_R + b_R).
inline Var fusion_hidden(Tape& tape, const Var& query, const Var& static_pref, const Var& dynamic_states,
                         const FusionHead& head) {
  const Index n = query.rows();
  if (dynamic_states.rows() != n) throw std::invalid_argument("fuse: one dynamic state per query position is required");
  Var x = ad::concat_cols({query, ad::repeat_rows(static_pref, n), dynamic_states});
  return ad::leaky_relu(ad::add_row(ad::matmul(x, tape.param(*head.weight)), tape.param(*head.bias)), kFusionSlope);
}

/// N x K logits: z_{n,i} = h_n · v̄_i over the region's POIs.
inline Var fuse_and_score(Tape& tape, const Var& query, const Var& static_pref, const Var& dynamic_states,
                          const Var& region_kbar, const FusionHead& head) {
  if (region_kbar.rows() == 0) throw std::invalid_argument("fuse: the target region has no POIs");
  return ad::matmul(fusion_hidden(tape, query, static_pref, dynamic_states, head), ad::transpose(region_kbar));
}

/// Σ over records and positions of −ln softmax(z)[true], divided by Σ N_u.
/// `targets[u][n]` is a column index into `logits[u]`.
inline Var recommendation_loss(std::span<const Var> logits, const std::vector<std::vector<Index>>& targets) {
  if (logits.empty() || logits.size() != targets.size()) throw std::invalid_argument("recommendation_loss: bad batch");
  std::vector<Var> terms;
  double positions = 0.0;
  for (std::size_t u = 0; u < logits.size(); ++u) {
    const auto& t = targets[u];
    if (static_cast<Index>(t.size()) != logits[u].rows()) {
      throw std::invalid_argument("recommendation_loss: one target per position is required");
    }
    std::vector<std::pair<Index, Index>> cells;
    for (std::size_t n = 0; n < t.size(); ++n) {
      if (t[n] < 0 || t[n] >= logits[u].cols()) throw std::invalid_argument("recommendation_loss: true POI is not in the region");
      cells.emplace_back(static_cast<Index>(n), t[n]);
    }
    terms.push_back(ad::sum(ad::pick(ad::log_softmax_rows(logits[u]), cells)));
    positions += static_cast<double>(t.size());
  }
  const std::vector<double> coeffs(terms.size(), -1.0 / positions);
  return ad::lincomb(terms, coeffs);
}

struct Betas {
  double static_term = 1.0;
  double dynamic_term = 1.0;
  double rec_term = 1.0;
};

inline Var total_loss(const Var& l_s, const Var& l_d, const Var& l_r, const Betas& b) {
  const Var terms[] = {l_s, l_d, l_r};
  const double coeffs[] = {b.static_term, b.dynamic_term, b.rec_term};
  return ad::lincomb(terms, coeffs);
}

inline double total_loss(double l_s, double l_d, double l_r, const Betas& b) {
  return b.static_term * l_s + b.dynamic_term * l_d + b.rec_term * l_r;
}

/// t_n = (n − 1) / (N − 1).
inline std::vector<double> surrogate_time_grid(Index stops) {
  if (stops < 2) throw std::invalid_argument("surrogate grid: need at least 2 stops");
  std::vector<double> grid(static_cast<std::size_t>(stops));
  for (Index n = 0; n < stops; ++n) grid[static_cast<std::size_t>(n)] = static_cast<double>(n) / static_cast<double>(stops - 1);
  return grid;
}

struct Nucleus {
  std::vector<Index> indices;       // kept candidates, descending probability
  std::vector<double> probabilities;  // unnormalized softmax mass of each
  double mass = 0.0;
};

/// Smallest descending-probability prefix whose mass reaches p. Masked
/// entries get zero probability.
inline Nucleus top_p_nucleus(std::span<const double> logits, double p, std::span<const char> mask = {}) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("top-p: p must lie in (0, 1]");
  if (!mask.empty() && mask.size() != logits.size()) throw std::invalid_argument("top-p: mask size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  std::vector<Index> open;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask.empty() && mask[i]) continue;
    open.push_back(static_cast<Index>(i));
    top = std::max(top, logits[i]);
  }
  if (open.empty()) throw std::invalid_argument("top-p: every POI is masked");
  std::vector<double> prob(logits.size(), 0.0);
  double z = 0.0;
  for (Index i : open) z += (prob[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - top));
  for (Index i : open) prob[static_cast<std::size_t>(i)] /= z;
  std::stable_sort(open.begin(), open.end(), [&](Index a, Index b) {
    return prob[static_cast<std::size_t>(a)] > prob[static_cast<std::size_t>(b)];
  });
  Nucleus out;
  for (Index i : open) {
    out.indices.push_back(i);
    out.probabilities.push_back(prob[static_cast<std::size_t>(i)]);
    out.mass += prob[static_cast<std::size_t>(i)];
    if (out.mass >= p) break;
  }
  return out;
}

inline Index top_p_sample(std::span<const double> logits, double p, Rng& rng, std::span<const char> mask = {}) {
  const Nucleus nuc = top_p_nucleus(logits, p, mask);
  if (nuc.indices.size() == 1) return nuc.indices.front();
  const double u = std::uniform_real_distribution<double>(0.0, nuc.mass)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < nuc.indices.size(); ++i) {
    acc += nuc.probabilities[i];
    if (u < acc) return nuc.indices[i];
  }
  return nuc.indices.back();
}

}  // namespace spottrip::fusion
