#pragma once

// Dynamic preference learning: spatiotemporal behavior embedding, amortized
// Gaussian posterior over the latent initial state, latent ODE trajectories,
// the point-process intensity and the negative ELBO.

#include "spottrip/data.hpp"
#include "spottrip/nn.hpp"
#include "spottrip/ode_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip::dyn {

using ad::Tape;
using ad::Var;

inline constexpr double kIntensityEps = 1e-6;
inline constexpr double kMaxGridGap = 0.05;

struct DynConfig {
  Index d = 32;
  Index layers = 4;
  Index heads = 4;
  Index ff_width = 128;
  Index hidden = 128;  // width of the ODE and intensity networks
  bool positional = false;
};

struct BehaviorEmbedder {
  Parameter* time_weight = nullptr;  // 1 x d
  Parameter* loc_weight = nullptr;   // 2 x d
  Parameter* poi_table = nullptr;    // |V| x d, separate from the KG table

  static BehaviorEmbedder create(ParameterStore& store, Index pois, Index d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    BehaviorEmbedder e;
    e.time_weight = &store.add("behavior.time", uniform_matrix(1, d, 1.0, rng));
    e.loc_weight = &store.add("behavior.loc", uniform_matrix(2, d, 1.0 / std::sqrt(2.0), rng));
    e.poi_table = &store.add("behavior.poi", uniform_matrix(pois, d, bound, rng));
    return e;
  }
};

/// ṽ = W_t t + W_l l + E(v), one row per check-in.
inline Var embed_behavior(Tape& tape, const BehaviorEmbedder& emb, std::span<const CheckIn> checkins) {
  const auto k = static_cast<Index>(checkins.size());
  Matrix t(k, 1), loc(k, 2);
  std::vector<Index> pois;
  pois.reserve(checkins.size());
  for (Index i = 0; i < k; ++i) {
    const auto& c = checkins[static_cast<std::size_t>(i)];
    t(i, 0) = c.time;
    loc(i, 0) = c.lat;
    loc(i, 1) = c.lon;
    pois.push_back(c.poi);
  }
  return ad::matmul(tape.constant(std::move(t)), tape.param(*emb.time_weight)) +
         ad::matmul(tape.constant(std::move(loc)), tape.param(*emb.loc_weight)) +
         ad::gather_rows(tape.param(*emb.poi_table), pois);
}

struct Posterior {
  Var mean;      // 1 x d
  Var logvar;    // 1 x d
  Var variance;  // exp(logvar)
};

class DynNetworks {
 public:
  DynNetworks() = default;
  DynNetworks(ParameterStore& store, const DynConfig& cfg, Rng& rng)
      : encoder_(store, "dyn.encoder", cfg.layers, cfg.d, cfg.heads, cfg.ff_width, rng),
        mean_head_(store, "dyn.posterior_mean", cfg.d, cfg.d, rng),
        logvar_head_(store, "dyn.posterior_logvar", cfg.d, cfg.d, rng),
        ode_rhs_(store, "dyn.ode", cfg.d, cfg.hidden, cfg.d, nn::Activation::kTanh, rng),
        intensity_net_(store, "dyn.intensity", cfg.d, cfg.hidden, 1, nn::Activation::kTanh, rng),
        positional_(cfg.positional) {
    agg_token_ = &store.add("dyn.agg", uniform_matrix(1, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.d)), rng));
  }

  /// Trans_D over [ṽ_1 … ṽ_M, AGG]; the AGG output feeds both posterior heads.
  [[nodiscard]] Posterior encode_posterior(Tape& tape, const Var& hometown_rows) const {
    if (hometown_rows.rows() == 0) throw std::invalid_argument("encode_posterior: empty hometown sequence");
    Var seq = ad::concat_rows({hometown_rows, tape.param(*agg_token_)});
    if (positional_) seq = seq + tape.constant(nn::sinusoidal_positions(seq.rows(), seq.cols()));
    Var agg = ad::slice_rows(encoder_(tape, seq), hometown_rows.rows(), 1);
    Var logvar = logvar_head_(tape, agg);
    return Posterior{mean_head_(tape, agg), logvar, ad::exp(logvar)};
  }

  [[nodiscard]] Var rhs(Tape& tape, const Var& state) const { return ode_rhs_(tape, state); }

  /// exp(λ_raw(p)) + ε per row.
  [[nodiscard]] Var intensity(Tape& tape, const Var& states) const {
    return ad::add_scalar(ad::exp(intensity_net_(tape, states)), kIntensityEps);
  }

  [[nodiscard]] const nn::Linear& logvar_head() const { return logvar_head_; }
  [[nodiscard]] const nn::Linear& mean_head() const { return mean_head_; }
  [[nodiscard]] const nn::Mlp3& ode_net() const { return ode_rhs_; }
  [[nodiscard]] const nn::Mlp3& intensity_net() const { return intensity_net_; }

 private:
  nn::TransformerEncoder encoder_;
  Parameter* agg_token_ = nullptr;
  nn::Linear mean_head_, logvar_head_;
  nn::Mlp3 ode_rhs_, intensity_net_;
  bool positional_ = false;
};

/// μ + √σ² ⊙ noise; noise rows broadcast against the single posterior row.
inline Var reparameterize(const Var& mean, const Var& variance, const Matrix& noise) {
  if (noise.cols() != mean.cols()) throw std::invalid_argument("reparameterize: noise width mismatch");
  Tape& t = mean.tape();
  const Index s = noise.rows();
  return ad::repeat_rows(mean, s) + ad::mul(ad::repeat_rows(ad::sqrt(variance), s), t.constant(noise));
}

inline Var reparameterize(const Posterior& psi, const Matrix& noise) {
  if (noise.cols() != psi.mean.cols()) throw std::invalid_argument("reparameterize: noise width mismatch");
  Tape& t = psi.mean.tape();
  const Index s = noise.rows();
  Var stddev = ad::exp(ad::scale(psi.logvar, 0.5));
  return ad::repeat_rows(psi.mean, s) + ad::mul(ad::repeat_rows(stddev, s), t.constant(noise));
}

/// {0} ∪ events, with uniform fill so no gap exceeds `max_gap`.
inline std::vector<double> build_event_grid(std::span<const double> events, double max_gap = kMaxGridGap) {
  std::vector<double> knots{0.0};
  for (double e : events) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw std::invalid_argument("event grid: times must be finite and >= 0");
    knots.push_back(e);
  }
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  std::vector<double> grid{knots.front()};
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const double lo = knots[i - 1], hi = knots[i];
    const int pieces = static_cast<int>(std::ceil((hi - lo) / max_gap - 1e-12));
    for (int j = 1; j < pieces; ++j) grid.push_back(lo + (hi - lo) * j / pieces);
    grid.push_back(hi);
  }
  return grid;
}

inline std::vector<double> trapezoid_weights(std::span<const double> times) {
  std::vector<double> w(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double h = times[i] - times[i - 1];
    w[i - 1] += h / 2;
    w[i] += h / 2;
  }
  return w;
}

inline double trapezoid(std::span<const double> values, std::span<const double> times) {
  if (values.size() != times.size()) throw std::invalid_argument("trapezoid: size mismatch");
  const auto w = trapezoid_weights(times);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * values[i];
  return s;
}

inline Var trapezoid(const Var& values, std::span<const double> times) {
  if (values.cols() != 1 || static_cast<std::size_t>(values.rows()) != times.size()) {
    throw std::invalid_argument("trapezoid: expects one value per grid time");
  }
  const auto w = trapezoid_weights(times);
  Matrix wm(values.rows(), 1);
  for (Index i = 0; i < wm.rows(); ++i) wm(i, 0) = w[static_cast<std::size_t>(i)];
  return ad::sum(ad::mul(values, values.tape().constant(std::move(wm))));
}

inline std::vector<Index> locate_on_grid(std::span<const double> grid, std::span<const double> times) {
  std::vector<Index> out;
  out.reserve(times.size());
  for (double t : times) {
    auto it = std::lower_bound(grid.begin(), grid.end(), t);
    if (it == grid.end() || *it != t) throw std::invalid_argument("time " + spottrip::detail::repr_double(t) + " is not on the grid");
    out.push_back(static_cast<Index>(it - grid.begin()));
  }
  return out;
}

/// Σ_n ln λ(t_n) − ∫ λ over the grid (trapezoid). `intensities` holds one
/// value per grid point.
inline Var nhpp_loglik(const Var& intensities, std::span<const double> grid, std::span<const double> events) {
  const auto idx = locate_on_grid(grid, events);
  Var integral = trapezoid(intensities, grid);
  if (idx.empty()) return -integral;
  return ad::sum(ad::log(ad::gather_rows(intensities, idx))) - integral;
}

/// Σ_n [−d/2 ln(2πσ²) − ‖ṽ_n − p_n‖² / (2σ²)].
inline Var reconstruction_loglik(const Var& states, const Var& targets, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("reconstruction_loglik: sigma must be positive");
  const double n = static_cast<double>(states.rows());
  const double d = static_cast<double>(states.cols());
  const double var = sigma * sigma;
  Var sq = ad::sum(ad::square(targets - states));
  return ad::add_scalar(ad::scale(sq, -0.5 / var), -0.5 * n * d * std::log(2.0 * std::numbers::pi * var));
}

/// ½ Σ (σ² + μ² − 1 − ln σ²).
inline Var kl_to_standard_normal(const Var& mean, const Var& variance) {
  return ad::scale(ad::sum(ad::add_scalar(variance + ad::square(mean) - ad::log(variance), -1.0)), 0.5);
}

inline Var kl_to_standard_normal(const Posterior& psi) {
  return ad::scale(ad::sum(ad::add_scalar(psi.variance + ad::square(psi.mean) - psi.logvar, -1.0)), 0.5);
}

/// One record's contribution to a batched dynamic pass.
struct DynamicInput {
  Var hometown_rows;                // M x d behavior embeddings
  Var targets;                      // N x d out-of-town behavior embeddings
  std::vector<double> event_times;  // N normalized out-of-town times
  std::vector<double> query_times;  // where states are also wanted (may be empty)
  Matrix noise;                     // S x d standard-normal draws, S >= 1
};

struct DynamicResult {
  Var recon;  // Σ over records of the sample-averaged reconstruction log-lik
  Var nhpp;
  Var kl;
  Var loss;   // −(recon + nhpp − kl)
  std::vector<Posterior> posteriors;
  std::vector<Var> event_states;  // per record, N x d (sample mean)
  std::vector<Var> query_states;  // per record, |query_times| x d (sample mean)
  std::vector<double> times;      // union grid that was integrated
  std::vector<double> step_sizes;
};

/// Negative ELBO for a batch. All latent trajectories are integrated together
/// over the union of the records' grids, which is exact for the autonomous
/// ODE since rows evolve independently.
inline DynamicResult dynamic_loss(Tape& tape, const DynNetworks& nets, std::span<const DynamicInput> batch, double sigma,
                                  const ode::SolverConfig& solver, const std::vector<double>* replay = nullptr) {
  if (batch.empty()) throw std::invalid_argument("dynamic_loss: empty batch");
  if (!(sigma > 0.0)) throw std::invalid_argument("dynamic_loss: sigma must be positive");
  const Index samples = batch.front().noise.rows();
  if (samples < 1) throw std::invalid_argument("dynamic_loss: need at least one noise sample");

  DynamicResult res;
  std::vector<Var> initial;
  std::vector<std::vector<double>> grids;
  std::vector<double> all_times{0.0};
  std::vector<Var> kls;
  for (const auto& in : batch) {
    if (in.noise.rows() != samples) throw std::invalid_argument("dynamic_loss: inconsistent sample counts");
    if (in.targets.rows() != static_cast<Index>(in.event_times.size())) {
      throw std::invalid_argument("dynamic_loss: one target row per event time is required");
    }
    Posterior psi = nets.encode_posterior(tape, in.hometown_rows);
    initial.push_back(reparameterize(psi, in.noise));
    kls.push_back(kl_to_standard_normal(psi));
    res.posteriors.push_back(psi);
    grids.push_back(build_event_grid(in.event_times));
    all_times.insert(all_times.end(), grids.back().begin(), grids.back().end());
    for (double q : in.query_times) {
      if (!(q >= 0.0)) throw std::invalid_argument("dynamic_loss: query times must be >= 0");
      all_times.push_back(q);
    }
  }
  std::sort(all_times.begin(), all_times.end());
  all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());

  Var y0 = ad::concat_rows(initial);
  const Index width = y0.rows();
  auto sol = ode::integrate(tape, [&](const Var& y) { return nets.rhs(tape, y); }, y0, all_times, solver, replay);
  res.times = all_times;
  res.step_sizes = sol.step_sizes;
  Var stacked = ad::concat_rows(sol.states);  // (T * width) x d

  auto rows_for = [&](const std::vector<Index>& grid_idx, Index row) {
    std::vector<Index> out;
    out.reserve(grid_idx.size());
    for (Index g : grid_idx) out.push_back(g * width + row);
    return out;
  };

  // Gather each (record, sample) trajectory on its own grid, then evaluate
  // the intensity network once over all of them.
  std::vector<Var> grid_states;
  std::vector<Index> offsets{0};
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto gi = locate_on_grid(all_times, grids[b]);
    for (Index s = 0; s < samples; ++s) {
      grid_states.push_back(ad::gather_rows(stacked, rows_for(gi, static_cast<Index>(b) * samples + s)));
      offsets.push_back(offsets.back() + static_cast<Index>(gi.size()));
    }
  }
  Var lambda = nets.intensity(tape, ad::concat_rows(grid_states));

  std::vector<Var> recon_terms, nhpp_terms;
  const double inv_s = 1.0 / static_cast<double>(samples);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& in = batch[b];
    const auto event_idx = locate_on_grid(all_times, in.event_times);
    const auto query_idx = locate_on_grid(all_times, in.query_times);
    std::vector<Var> ev, qs;
    for (Index s = 0; s < samples; ++s) {
      const Index row = static_cast<Index>(b) * samples + s;
      const std::size_t k = b * static_cast<std::size_t>(samples) + static_cast<std::size_t>(s);
      Var ev_states = ad::gather_rows(stacked, rows_for(event_idx, row));
      recon_terms.push_back(ad::scale(reconstruction_loglik(ev_states, in.targets, sigma), inv_s));
      Var lam = ad::slice_rows(lambda, offsets[k], offsets[k + 1] - offsets[k]);
      nhpp_terms.push_back(ad::scale(nhpp_loglik(lam, grids[b], in.event_times), inv_s));
      ev.push_back(ev_states);
      if (!query_idx.empty()) qs.push_back(ad::gather_rows(stacked, rows_for(query_idx, row)));
    }
    const std::vector<double> w(static_cast<std::size_t>(samples), inv_s);
    res.event_states.push_back(samples == 1 ? ev.front() : ad::lincomb(ev, w));
    res.query_states.push_back(qs.empty() ? Var() : (samples == 1 ? qs.front() : ad::lincomb(qs, w)));
  }
  auto total = [](const std::vector<Var>& terms) {
    const std::vector<double> ones(terms.size(), 1.0);
    return ad::lincomb(terms, ones);
  };
  res.recon = total(recon_terms);
  res.nhpp = total(nhpp_terms);
  res.kl = total(kls);
  res.loss = -(res.recon + res.nhpp - res.kl);
  return res;
}

}  // namespace spottrip::dyn
