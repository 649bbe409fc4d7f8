#pragma once

// Training loop (TransE pass, then mini-batches of the joint objective, then
// validation with early stopping), evaluation over seeds, and ablation runs.

#include "spottrip/checkpoint.hpp"
#include "spottrip/metrics.hpp"
#include "spottrip/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip {

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;
  double transe = 0, l_s = 0, l_d = 0, l_r = 0, total = 0;  // sums over the epoch
  double valid_f1 = 0;
  bool improved = false;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::Summary> per_seed;
  metrics::Summary mean;
  std::size_t trips = 0;
};

inline EvalReport evaluate(const SpotTrip& model, const std::vector<TravelRecord>& records, double p,
                           const std::vector<std::uint64_t>& seeds) {
  EvalReport rep;
  rep.seeds = seeds;
  rep.trips = records.size();
  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    metrics::Summary s;
    for (const auto& r : records) s.add(metrics::score(model.recommend_for(r, p, rng), r.trip()));
    rep.per_seed.push_back(s);
  }
  if (!rep.per_seed.empty()) {
    const auto k = static_cast<double>(rep.per_seed.size());
    for (const auto& s : rep.per_seed) {
      rep.mean.f1 += s.f1 / k;
      rep.mean.pairs_f1 += s.pairs_f1 / k;
      rep.mean.full_f1 += s.full_f1 / k;
      rep.mean.full_pairs_f1 += s.full_pairs_f1 / k;
    }
    rep.mean.trips = rep.per_seed.front().trips;
    rep.mean.vacuous = rep.per_seed.front().vacuous;
  }
  return rep;
}

inline EvalReport evaluate_popularity(const metrics::Popularity& pop, const std::vector<TravelRecord>& records) {
  EvalReport rep;
  rep.trips = records.size();
  metrics::Summary s;
  for (const auto& r : records) {
    const auto trip = r.trip();
    s.add(metrics::score(pop.recommend(r.outoftown_region, trip.front(), trip.back(), static_cast<Index>(trip.size())), trip));
  }
  rep.per_seed.push_back(s);
  rep.mean = s;
  return rep;
}

struct TrainOptions {
  /// Called after every epoch; returning false stops training.
  std::function<bool(const EpochLog&, const SpotTrip&)> on_epoch;
  const Checkpoint* resume = nullptr;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> history;
  bool early_stopped = false;
};

class Trainer {
 public:
  Trainer(SpotTrip& model, const Dataset& ds)
      : model_(model),
        ds_(ds),
        cfg_(model.config()),
        hash_(config_hash(cfg_)),
        main_opt_(AdamW::Options{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}),
        transe_opt_(AdamW::Options{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}),
        rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {}

  /// Selection split: validation records, or the training records when the
  /// validation split is empty.
  [[nodiscard]] const std::vector<TravelRecord>& selection_split() const { return ds_.valid.empty() ? ds_.train : ds_.valid; }

  [[nodiscard]] double selection_metric() const {
    return evaluate(model_, selection_split(), cfg_.top_p, {cfg_.seed}).mean.f1;
  }

  [[nodiscard]] Checkpoint capture_state() const {
    Checkpoint c;
    c.config_hash = hash_;
    c.config = to_json(cfg_);
    c.epoch = epoch_;
    c.best_metric = best_metric_;
    c.best_epoch = best_epoch_;
    c.stale_epochs = stale_;
    c.params = snapshot(model_.store());
    c.main_optimizer = capture(main_opt_);
    c.transe_optimizer = capture(transe_opt_);
    c.rng_state = rng_to_string(rng_);
    return c;
  }

  void resume_from(const Checkpoint& c) {
    if (c.config_hash != hash_) {
      throw ConfigError("checkpoint config hash " + c.config_hash + " does not match the current config " + hash_);
    }
    restore(model_.store(), c.params);
    main_opt_.restore(c.main_optimizer.steps, c.main_optimizer.moments);
    transe_opt_.restore(c.transe_optimizer.steps, c.transe_optimizer.moments);
    rng_ = rng_from_string(c.rng_state);
    epoch_ = c.epoch;
    best_metric_ = c.best_metric;
    best_epoch_ = c.best_epoch;
    stale_ = c.stale_epochs;
  }

  /// TransE updates over a shuffled pass of the knowledge graph.
  double transe_pass() {
    if (!model_.uses_knowledge() || ds_.kg.empty() || ds_.num_entities() < 2) return 0.0;
    std::vector<KGTriple> triples = ds_.kg;
    std::shuffle(triples.begin(), triples.end(), rng_);
    double total = 0.0;
    for (std::size_t start = 0; start < triples.size(); start += cfg_.transe_batch_size) {
      const std::size_t end = std::min(triples.size(), start + cfg_.transe_batch_size);
      const std::span<const KGTriple> batch(triples.data() + start, end - start);
      total += kg::transe_step(model_.kg(), batch, rng_(), transe_opt_);
    }
    return total;
  }

  struct StepLosses {
    double l_s = 0, l_d = 0, l_r = 0, total = 0;
  };

  /// One gradient step on the joint objective.
  StepLosses step(std::span<const TravelRecord* const> batch, int batch_index) {
    const auto noise = model_.draw_noise(batch.size(), rng_);
    model_.store().zero_grad();
    Tape tape;
    BatchForward f;
    try {
      f = model_.forward(tape, batch, noise);
    } catch (const ode::IntegrationError& e) {
      throw TrainingAborted(diagnostic(batch_index, nullptr) + ": " + e.what());
    }
    if (!std::isfinite(f.total.scalar())) throw TrainingAborted(diagnostic(batch_index, &f));
    tape.backward(f.total);
    for (const auto* p : model_.store().all()) {
      if (!p->grad.allFinite()) throw TrainingAborted(diagnostic(batch_index, &f) + " (non-finite gradient in " + p->name + ")");
    }
    main_opt_.step(model_.store().all());
    return StepLosses{f.l_s.scalar(), f.l_d.scalar(), f.l_r.scalar(), f.total.scalar()};
  }

  EpochLog run_epoch() {
    EpochLog log;
    log.epoch = epoch_ + 1;
    log.transe = transe_pass();
    std::vector<const TravelRecord*> order;
    for (const auto& r : ds_.train) order.push_back(&r);
    std::shuffle(order.begin(), order.end(), rng_);
    int b = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      const StepLosses f = step(std::span<const TravelRecord* const>(order.data() + start, end - start), b);
      log.l_s += f.l_s;
      log.l_d += f.l_d;
      log.l_r += f.l_r;
      log.total += f.total;
    }
    ++epoch_;
    log.valid_f1 = selection_metric();
    if (log.valid_f1 > best_metric_) {
      best_metric_ = log.valid_f1;
      best_epoch_ = epoch_;
      stale_ = 0;
      log.improved = true;
    } else {
      ++stale_;
    }
    return log;
  }

  TrainResult train(const TrainOptions& opts = {}) {
    if (ds_.train.empty()) throw std::invalid_argument("train: the training split is empty");
    if (opts.resume) resume_from(*opts.resume);
    TrainResult res;
    res.best = capture_state();
    while (epoch_ < cfg_.max_epochs) {
      EpochLog log = run_epoch();
      res.history.push_back(log);
      if (log.improved) res.best = capture_state();
      const bool keep_going = !opts.on_epoch || opts.on_epoch(log, model_);
      if (!keep_going) break;
      if (cfg_.patience > 0 && stale_ >= cfg_.patience) {
        res.early_stopped = true;
        break;
      }
    }
    res.last = capture_state();
    restore(model_.store(), res.best.params);
    return res;
  }

  [[nodiscard]] int epoch() const { return epoch_; }
  [[nodiscard]] const std::string& hash() const { return hash_; }

 private:
  [[nodiscard]] std::string diagnostic(int batch_index, const BatchForward* f) const {
    std::ostringstream os;
    os << "training aborted at epoch " << epoch_ + 1 << ", batch " << batch_index;
    if (f != nullptr) {
      os << ": non-finite loss (L_S=" << f->l_s.scalar() << ", L_D=" << f->l_d.scalar() << ", L_R=" << f->l_r.scalar()
         << ", L=" << f->total.scalar() << ")";
    }
    return os.str();
  }

  SpotTrip& model_;
  const Dataset& ds_;
  RunConfig cfg_;
  std::string hash_;
  AdamW main_opt_;
  AdamW transe_opt_;
  Rng rng_;
  int epoch_ = 0;
  double best_metric_ = -1.0;
  int best_epoch_ = 0;
  int stale_ = 0;
};

struct AblationRow {
  Variant variant = Variant::kFull;
  EvalReport report;
  int epochs = 0;
};

/// Trains the masked model from scratch and scores it on the test split (or
/// `records` when given).
inline AblationRow run_ablation(Variant variant, RunConfig cfg, const Dataset& ds,
                                const std::vector<TravelRecord>* records = nullptr) {
  cfg.variant = variant;
  SpotTrip model(cfg, ds);
  Trainer trainer(model, ds);
  const TrainResult res = trainer.train();
  AblationRow row;
  row.variant = variant;
  row.epochs = static_cast<int>(res.history.size());
  row.report = evaluate(model, records ? *records : ds.test, cfg.top_p, cfg.eval_seeds);
  return row;
}

}  // namespace spottrip
