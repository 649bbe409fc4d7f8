#pragma once

// Knowledge-enhanced static preference learning: relation-aware attentive
// aggregation over the POI attribute graph, the TransE objective used in the
// alternating phase, mean pooling of POI embeddings, and the hometown ->
// out-of-town alignment head.

#include "spottrip/data.hpp"
#include "spottrip/nn.hpp"

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip::kg {

using ad::Tape;
using ad::Var;

inline constexpr double kAttentionSlope = 0.01;

struct KgEmbeddings {
  Parameter* poi_table = nullptr;       // |V| x d
  Parameter* entity_table = nullptr;    // |E| x d
  Parameter* relation_table = nullptr;  // |R| x d
  Parameter* attention = nullptr;       // d x 2d

  static KgEmbeddings create(ParameterStore& store, Index pois, Index entities, Index relations, Index d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    KgEmbeddings e;
    e.poi_table = &store.add("kg.poi", uniform_matrix(pois, d, bound, rng));
    e.entity_table = &store.add("kg.entity", uniform_matrix(std::max<Index>(entities, 1), d, bound, rng));
    e.relation_table = &store.add("kg.relation", uniform_matrix(std::max<Index>(relations, 1), d, bound, rng));
    e.attention = &store.add("kg.attention", uniform_matrix(d, 2 * d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng));
    return e;
  }

  [[nodiscard]] std::vector<Parameter*> tables() const { return {poi_table, entity_table, relation_table}; }
};

struct StaticHead {
  Parameter* weight = nullptr;  // d x d, applied as x W
  Parameter* bias = nullptr;    // 1 x d

  static StaticHead create(ParameterStore& store, Index d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    return StaticHead{&store.add("static.weight", uniform_matrix(d, d, bound, rng)),
                      &store.add("static.bias", uniform_matrix(1, d, bound, rng))};
  }
};

/// (entity, relation) neighbors of every POI.
using NeighborLists = std::vector<std::vector<std::pair<Index, Index>>>;

/// Knowledge-enhanced embeddings v̄ for `pois` (one row each, in order).
/// POIs without neighbors keep their raw embedding. When `attention_out` is
/// given it receives the per-neighbor weights, grouped per POI.
inline Var aggregate(Tape& tape, const KgEmbeddings& emb, const NeighborLists& neighbors, std::span<const Index> pois,
                     std::vector<std::vector<double>>* attention_out = nullptr) {
  Var poi_table = tape.param(*emb.poi_table);
  Var raw = ad::gather_rows(poi_table, pois);
  std::vector<Index> ents, rels, seg;
  for (std::size_t i = 0; i < pois.size(); ++i) {
    for (const auto& [e, r] : neighbors[static_cast<std::size_t>(pois[i])]) {
      ents.push_back(e);
      rels.push_back(r);
      seg.push_back(static_cast<Index>(i));
    }
  }
  if (attention_out) attention_out->assign(pois.size(), {});
  if (ents.empty()) return raw;

  const auto k = static_cast<Index>(pois.size());
  Var ent_rows = ad::gather_rows(tape.param(*emb.entity_table), ents);
  Var rel_rows = ad::gather_rows(tape.param(*emb.relation_table), rels);
  Var self_rows = ad::gather_rows(raw, seg);
  Var projected = ad::matmul(rel_rows, tape.param(*emb.attention));
  Var scores = ad::leaky_relu(ad::rowwise_dot(projected, ad::concat_cols({ent_rows, self_rows})), kAttentionSlope);
  Var alpha = ad::segment_softmax(scores, seg, k);
  if (attention_out) {
    for (std::size_t i = 0; i < seg.size(); ++i) {
      (*attention_out)[static_cast<std::size_t>(seg[i])].push_back(alpha.value()(static_cast<Index>(i), 0));
    }
  }
  return raw + ad::segment_sum(ad::scale_rows(ent_rows, alpha), seg, k);
}

/// Single-POI form of aggregate() with an explicit neighbor list.
inline Var relation_attention_aggregate(Tape& tape, Index poi, const std::vector<std::pair<Index, Index>>& neighbors,
                                        const KgEmbeddings& emb, std::vector<double>* attention_out = nullptr) {
  NeighborLists lists(static_cast<std::size_t>(emb.poi_table->value.rows()));
  lists[static_cast<std::size_t>(poi)] = neighbors;
  std::vector<std::vector<double>> att;
  const Index ids[] = {poi};
  Var out = aggregate(tape, emb, lists, ids, attention_out ? &att : nullptr);
  if (attention_out) *attention_out = att.front();
  return out;
}

/// ‖head + relation − tail‖₁ per row: (k x d)^3 -> (k x 1).
inline Var transe_score(const Var& head, const Var& relation, const Var& tail) {
  return ad::row_sum(ad::abs(head + relation - tail));
}

inline double transe_score(const Eigen::RowVectorXd& head, const Eigen::RowVectorXd& relation,
                           const Eigen::RowVectorXd& tail) {
  if (head.size() != relation.size() || head.size() != tail.size()) throw std::invalid_argument("transe_score: dimension mismatch");
  return (head + relation - tail).cwiseAbs().sum();
}

/// One corrupted tail per triple, uniform over entities other than the true tail.
inline std::vector<Index> corrupt_tails(std::span<const KGTriple> batch, Index num_entities, std::uint64_t seed) {
  if (num_entities < 2) throw std::invalid_argument("transe: need at least two entities to corrupt a tail");
  Rng rng(seed);
  std::uniform_int_distribution<Index> dist(0, num_entities - 2);
  std::vector<Index> out;
  out.reserve(batch.size());
  for (const auto& t : batch) {
    Index e = dist(rng);
    if (e >= t.tail_entity) ++e;
    out.push_back(e);
  }
  return out;
}

/// Σ −ln σ(f(v,r,e′) − f(v,r,e)) over the batch, computed stably as softplus.
inline Var transe_loss_with_negatives(Tape& tape, std::span<const KGTriple> batch, std::span<const Index> negatives,
                                      const KgEmbeddings& emb) {
  if (batch.empty()) throw std::invalid_argument("transe_loss: empty batch");
  std::vector<Index> heads, rels, tails;
  for (const auto& t : batch) {
    heads.push_back(t.head_poi);
    rels.push_back(t.relation);
    tails.push_back(t.tail_entity);
  }
  Var ent = tape.param(*emb.entity_table);
  Var h = ad::gather_rows(tape.param(*emb.poi_table), heads);
  Var r = ad::gather_rows(tape.param(*emb.relation_table), rels);
  Var pos = transe_score(h, r, ad::gather_rows(ent, tails));
  Var neg = transe_score(h, r, ad::gather_rows(ent, negatives));
  Var margin = neg - pos;
  // −ln σ(x) = ln(1 + e^{−x}); evaluated as a fused op for stability.
  Matrix out(margin.rows(), 1);
  for (Index i = 0; i < margin.rows(); ++i) {
    const double x = margin.value()(i, 0);
    out(i, 0) = x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
  }
  Var per_triple = tape.record(std::move(out), {margin}, [margin](Tape& t, const Matrix& g) {
    Matrix d(margin.rows(), 1);
    for (Index i = 0; i < margin.rows(); ++i) d(i, 0) = -g(i, 0) * (1.0 - ad::sigmoid_value(margin.value()(i, 0)));
    t.accumulate(margin, d);
  });
  return ad::sum(per_triple);
}

inline Var transe_loss(Tape& tape, std::span<const KGTriple> batch, const KgEmbeddings& emb, std::uint64_t neg_seed) {
  const auto negatives = corrupt_tails(batch, emb.entity_table->value.rows(), neg_seed);
  return transe_loss_with_negatives(tape, batch, negatives, emb);
}

/// Mean pooling over rows (AGG_S).
inline Var static_aggregate(const Var& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("static_aggregate: empty input");
  return ad::mean_rows(rows);
}

/// SiLU(x W_S + b_S) applied to each row.
inline Var infer_static_preference(Tape& tape, const Var& hometown_pref, const StaticHead& head) {
  return ad::silu(ad::add_row(ad::matmul(hometown_pref, tape.param(*head.weight)), tape.param(*head.bias)));
}

/// Σ over rows of ‖inferred − actual‖².
inline Var static_alignment_loss(const Var& inferred, const Var& actual) {
  return ad::sum(ad::square(inferred - actual));
}

/// One TransE update over `batch`. Only the three embedding tables move; the
/// attention matrix and all other parameters are untouched.
inline double transe_step(const KgEmbeddings& emb, std::span<const KGTriple> batch, std::uint64_t neg_seed,
                          AdamW& optimizer) {
  const auto tables = emb.tables();
  for (auto* p : tables) p->zero_grad();
  Tape tape;
  Var loss = transe_loss(tape, batch, emb, neg_seed);
  tape.backward(loss);
  optimizer.step(tables);
  return loss.scalar();
}

}  // namespace spottrip::kg
