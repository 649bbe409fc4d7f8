#pragma once

// The assembled recommender: parameter layout, the batched training forward
// pass (static alignment, negative ELBO, cross-entropy) and trip generation.

#include "spottrip/config.hpp"
#include "spottrip/data.hpp"
#include "spottrip/fusion.hpp"
#include "spottrip/kg_static.hpp"
#include "spottrip/metrics.hpp"
#include "spottrip/ode_dynamic.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace spottrip {

using ad::Tape;
using ad::Var;

struct BatchForward {
  Var l_s, l_d, l_r, total;
  dyn::DynamicResult dynamic;  // empty when the dynamic branch is ablated
  std::vector<Var> logits;
};

/// Region-local view of the graph needed by one forward pass.
struct PoiContext {
  std::vector<Index> pois;            // sorted POI ids covered by `kbar`
  Var kbar;                           // one row per entry of `pois`
  std::map<Index, Index> row_of;

  [[nodiscard]] Var rows(std::span<const Index> ids) const {
    std::vector<Index> r;
    r.reserve(ids.size());
    for (Index id : ids) r.push_back(row_of.at(id));
    return ad::gather_rows(kbar, r);
  }
};

class SpotTrip {
 public:
  SpotTrip(const RunConfig& cfg, const Dataset& ds) : cfg_(cfg), neighbors_(kg_neighbors(ds)), region_pois_(ds.region_pois) {
    validate(cfg_);
    max_len_ = cfg_.max_trip_length > 0 ? cfg_.max_trip_length : std::max<Index>(2, static_cast<Index>(ds.max_trip_length()));
    Rng rng(cfg_.seed);
    const Index d = cfg_.d;
    kg_ = kg::KgEmbeddings::create(store_, ds.num_pois(), ds.num_entities(), ds.num_relations(), d, rng);
    static_head_ = kg::StaticHead::create(store_, d, rng);
    behavior_ = dyn::BehaviorEmbedder::create(store_, ds.num_pois(), d, rng);
    dyn_ = dyn::DynNetworks(store_, dyn::DynConfig{d, cfg_.dyn_layers, cfg_.dyn_heads, cfg_.ff_width, cfg_.ode_hidden, cfg_.dyn_positional}, rng);
    query_ = fusion::QueryEncoder(store_, max_len_, d, cfg_.query_layers, cfg_.query_heads, cfg_.ff_width, rng);
    head_ = fusion::FusionHead::create(store_, d, rng);
    if (cfg_.variant == Variant::kWoSI) {
      behavior_.loc_weight->value.setZero();
      behavior_.loc_weight->trainable = false;
    }
  }

  SpotTrip(const SpotTrip&) = delete;
  SpotTrip& operator=(const SpotTrip&) = delete;

  [[nodiscard]] ParameterStore& store() { return store_; }
  [[nodiscard]] const ParameterStore& store() const { return store_; }
  [[nodiscard]] const RunConfig& config() const { return cfg_; }
  [[nodiscard]] const kg::KgEmbeddings& kg() const { return kg_; }
  [[nodiscard]] const kg::StaticHead& static_head() const { return static_head_; }
  [[nodiscard]] const dyn::BehaviorEmbedder& behavior() const { return behavior_; }
  [[nodiscard]] const dyn::DynNetworks& dynamics() const { return dyn_; }
  [[nodiscard]] const fusion::QueryEncoder& query_encoder() const { return query_; }
  [[nodiscard]] const fusion::FusionHead& fusion_head() const { return head_; }
  [[nodiscard]] const std::vector<std::vector<Index>>& region_pois() const { return region_pois_; }
  [[nodiscard]] Index max_length() const { return max_len_; }

  [[nodiscard]] bool uses_knowledge() const { return cfg_.variant != Variant::kWoKS; }
  [[nodiscard]] bool uses_dynamics() const { return cfg_.variant != Variant::kWoOD; }

  /// v̄ for the given POIs (raw embeddings when the knowledge branch is off).
  [[nodiscard]] PoiContext poi_context(Tape& tape, std::vector<Index> pois) const {
    std::sort(pois.begin(), pois.end());
    pois.erase(std::unique(pois.begin(), pois.end()), pois.end());
    PoiContext ctx;
    ctx.kbar = uses_knowledge() ? kg::aggregate(tape, kg_, neighbors_, pois)
                                : ad::gather_rows(tape.param(*kg_.poi_table), pois);
    for (std::size_t i = 0; i < pois.size(); ++i) ctx.row_of.emplace(pois[i], static_cast<Index>(i));
    ctx.pois = std::move(pois);
    return ctx;
  }

  /// P̄ᵒ = SiLU(mean(v̄ over hometown POIs) W_S + b_S); zero without the
  /// knowledge branch.
  [[nodiscard]] Var static_preference(Tape& tape, const PoiContext& ctx, const TravelRecord& r) const {
    if (!uses_knowledge()) return tape.constant(Matrix::Zero(1, cfg_.d));
    return kg::infer_static_preference(tape, kg::static_aggregate(ctx.rows(poi_ids(r.hometown))), static_head_);
  }

  [[nodiscard]] std::vector<Matrix> draw_noise(std::size_t records, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Matrix> out;
    for (std::size_t b = 0; b < records; ++b) {
      Matrix m(cfg_.mc_samples, cfg_.d);
      for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
      out.push_back(std::move(m));
    }
    return out;
  }

  /// Training objective for a batch. `noise[b]` holds the posterior draws for
  /// record b; `replay` reuses a recorded solver step schedule.
  [[nodiscard]] BatchForward forward(Tape& tape, std::span<const TravelRecord* const> batch, const std::vector<Matrix>& noise,
                                     const std::vector<double>* replay = nullptr) const {
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    if (noise.size() != batch.size()) throw std::invalid_argument("forward: one noise block per record is required");
    std::vector<Index> needed;
    for (const auto* r : batch) {
      check_record(*r);
      const auto& region = region_pois_[static_cast<std::size_t>(r->outoftown_region)];
      needed.insert(needed.end(), region.begin(), region.end());
      for (const auto& c : r->hometown) needed.push_back(c.poi);
    }
    const PoiContext ctx = poi_context(tape, needed);

    BatchForward out;
    std::vector<Var> statics;
    std::vector<Var> align_terms;
    for (const auto* r : batch) {
      statics.push_back(static_preference(tape, ctx, *r));
      if (uses_knowledge()) {
        Var actual = kg::static_aggregate(ctx.rows(poi_ids(r->outoftown)));
        align_terms.push_back(kg::static_alignment_loss(statics.back(), actual));
      }
    }
    out.l_s = align_terms.empty() ? tape.constant(Matrix::Zero(1, 1)) : sum_all(align_terms);

    std::vector<Var> dyn_states;
    if (uses_dynamics()) {
      std::vector<dyn::DynamicInput> inputs;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& r = *batch[b];
        dyn::DynamicInput in;
        in.hometown_rows = dyn::embed_behavior(tape, behavior_, r.hometown);
        in.targets = dyn::embed_behavior(tape, behavior_, r.outoftown);
        if (cfg_.stop_grad_targets) in.targets = tape.constant(in.targets.value());
        for (const auto& c : r.outoftown) in.event_times.push_back(c.time);
        in.query_times = cfg_.fusion_grid == FusionGrid::kSurrogate
                             ? fusion::surrogate_time_grid(static_cast<Index>(r.outoftown.size()))
                             : in.event_times;
        in.noise = noise[b];
        inputs.push_back(std::move(in));
      }
      out.dynamic = dyn::dynamic_loss(tape, dyn_, inputs, cfg_.sigma, cfg_.solver, replay);
      out.l_d = out.dynamic.loss;
      dyn_states = out.dynamic.query_states;
    } else {
      out.l_d = tape.constant(Matrix::Zero(1, 1));
      for (const auto* r : batch) dyn_states.push_back(tape.constant(Matrix::Zero(static_cast<Index>(r->outoftown.size()), cfg_.d)));
    }

    std::vector<std::vector<Index>> targets;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& r = *batch[b];
      const auto& region = region_pois_[static_cast<std::size_t>(r.outoftown_region)];
      Var region_kbar = ctx.rows(region);
      const auto trip = r.trip();
      fusion::Query q{trip.front(), trip.back(), static_cast<Index>(trip.size())};
      Var qrep = fusion::encode_query(tape, query_, region_kbar, region, q);
      out.logits.push_back(fusion::fuse_and_score(tape, qrep, statics[b], dyn_states[b], region_kbar, head_));
      std::vector<Index> t;
      for (Index p : trip) t.push_back(fusion::region_slot(region, p, "trip"));
      targets.push_back(std::move(t));
    }
    out.l_r = fusion::recommendation_loss(out.logits, targets);

    fusion::Betas betas = cfg_.betas;
    if (!uses_knowledge()) betas.static_term = 0.0;
    if (!uses_dynamics()) betas.dynamic_term = 0.0;
    out.total = fusion::total_loss(out.l_s, out.l_d, out.l_r, betas);
    return out;
  }

  /// Per-position logits for a query, evaluated with the posterior mean on
  /// the surrogate grid. Rows follow the query positions, columns the
  /// target region's POI list.
  [[nodiscard]] Matrix query_logits(std::span<const CheckIn> hometown, Index region, const fusion::Query& q,
                                    fusion::QueryMode mode = fusion::QueryMode::kFull) const {
    if (hometown.empty()) throw std::invalid_argument("recommend: empty hometown history");
    if (region < 0 || region >= static_cast<Index>(region_pois_.size())) throw std::invalid_argument("recommend: unknown region");
    const auto& rp = region_pois_[static_cast<std::size_t>(region)];
    if (q.stops < 2) throw std::invalid_argument("query: a trip needs at least 2 stops, got " + std::to_string(q.stops));
    if (mode != fusion::QueryMode::kDestinationOnly) fusion::region_slot(rp, q.origin, "origin");
    if (mode != fusion::QueryMode::kOriginOnly) fusion::region_slot(rp, q.destination, "destination");

    Tape tape;
    std::vector<Index> needed(rp.begin(), rp.end());
    for (const auto& c : hometown) needed.push_back(c.poi);
    const PoiContext ctx = poi_context(tape, needed);
    Var region_kbar = ctx.rows(rp);

    Var static_pref = tape.constant(Matrix::Zero(1, cfg_.d));
    if (uses_knowledge()) {
      static_pref = kg::infer_static_preference(tape, kg::static_aggregate(ctx.rows(poi_ids(hometown))), static_head_);
    }
    Var states = tape.constant(Matrix::Zero(q.stops, cfg_.d));
    if (uses_dynamics()) {
      dyn::Posterior psi = dyn_.encode_posterior(tape, dyn::embed_behavior(tape, behavior_, hometown));
      const auto grid = fusion::surrogate_time_grid(q.stops);
      auto sol = ode::integrate(tape, [&](const Var& y) { return dyn_.rhs(tape, y); }, psi.mean, grid, cfg_.solver);
      states = ad::concat_rows(sol.states);
    }
    const Index o = mode == fusion::QueryMode::kDestinationOnly ? 0 : fusion::region_slot(rp, q.origin, "origin");
    const Index d = mode == fusion::QueryMode::kOriginOnly ? 0 : fusion::region_slot(rp, q.destination, "destination");
    Var qrep = query_.encode(tape, ad::slice_rows(region_kbar, o, 1), ad::slice_rows(region_kbar, d, 1), q.stops, mode);
    return fusion::fuse_and_score(tape, qrep, static_pref, states, region_kbar, head_).value();
  }

  /// Origin, top-p samples for positions 2..N−1, destination. Endpoints are
  /// never sampled in between. With a single-endpoint mode the missing
  /// endpoint is sampled too.
  [[nodiscard]] metrics::Trip recommend(std::span<const CheckIn> hometown, Index region, const fusion::Query& q, double p,
                                        Rng& rng, fusion::QueryMode mode = fusion::QueryMode::kFull) const {
    const auto& rp = region_pois_.at(static_cast<std::size_t>(region));
    const Matrix logits = query_logits(hometown, region, q, mode);
    const auto k = static_cast<std::size_t>(logits.cols());
    std::vector<char> mask(k, 0);
    if (mode != fusion::QueryMode::kDestinationOnly) mask[static_cast<std::size_t>(fusion::region_slot(rp, q.origin, "origin"))] = 1;
    if (mode != fusion::QueryMode::kOriginOnly) mask[static_cast<std::size_t>(fusion::region_slot(rp, q.destination, "destination"))] = 1;
    auto row = [&](Index n) {
      std::vector<double> v(k);
      for (std::size_t i = 0; i < k; ++i) v[i] = logits(n, static_cast<Index>(i));
      return v;
    };
    auto pick = [&](Index n, const std::vector<char>& m) {
      const auto v = row(n);
      const bool all_masked = std::all_of(m.begin(), m.end(), [](char c) { return c != 0; });
      return rp[static_cast<std::size_t>(fusion::top_p_sample(v, p, rng, all_masked ? std::vector<char>{} : m))];
    };

    metrics::Trip trip;
    trip.push_back(mode == fusion::QueryMode::kDestinationOnly ? pick(0, std::vector<char>(k, 0)) : q.origin);
    for (Index n = 1; n + 1 < q.stops; ++n) {
      const Index poi = pick(n, mask);
      trip.push_back(poi);
      if (cfg_.dedup_intermediates) mask[static_cast<std::size_t>(fusion::region_slot(rp, poi, "sampled"))] = 1;
    }
    trip.push_back(mode == fusion::QueryMode::kOriginOnly ? pick(q.stops - 1, std::vector<char>(k, 0)) : q.destination);
    return trip;
  }

  [[nodiscard]] metrics::Trip recommend_for(const TravelRecord& r, double p, Rng& rng) const {
    const auto trip = r.trip();
    return recommend(r.hometown, r.outoftown_region, fusion::Query{trip.front(), trip.back(), static_cast<Index>(trip.size())}, p, rng);
  }

 private:
  static std::vector<Index> poi_ids(std::span<const CheckIn> cs) {
    std::vector<Index> out;
    out.reserve(cs.size());
    for (const auto& c : cs) out.push_back(c.poi);
    return out;
  }

  static Var sum_all(const std::vector<Var>& terms) {
    const std::vector<double> ones(terms.size(), 1.0);
    return ad::lincomb(terms, ones);
  }

  void check_record(const TravelRecord& r) const {
    if (r.hometown.empty() || r.outoftown.size() < 2) throw std::invalid_argument("record " + r.user_id + " is too short to train on");
    if (static_cast<Index>(r.outoftown.size()) > max_len_) {
      throw std::invalid_argument("record " + r.user_id + " is longer than the query encoder's maximum length");
    }
  }

  RunConfig cfg_;
  kg::NeighborLists neighbors_;
  std::vector<std::vector<Index>> region_pois_;
  Index max_len_ = 2;
  ParameterStore store_;
  kg::KgEmbeddings kg_;
  kg::StaticHead static_head_;
  dyn::BehaviorEmbedder behavior_;
  dyn::DynNetworks dyn_;
  fusion::QueryEncoder query_;
  fusion::FusionHead head_;
};

}  // namespace spottrip
