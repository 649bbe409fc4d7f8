#include "gradcheck.hpp"
#include "spottrip/model.hpp"
#include "spottrip/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace spottrip;
using ad::Tape;
using ad::Var;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.d = 8;
  c.dyn_layers = 1;
  c.dyn_heads = 2;
  c.ff_width = 16;
  c.ode_hidden = 16;
  c.query_heads = 2;
  return c;
}

const Dataset& planted() {
  static const Dataset ds = [] {
    auto [corpus, kg] = parse_synthetic(generate_synthetic(SyntheticSpec{}));
    return build_dataset(corpus, kg, FilterConfig{}, 7);
  }();
  return ds;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

}  // namespace

TEST(Fusion, ZeroHiddenGivesUniformScores) {
  Rng rng(1);
  ParameterStore store;
  auto head = fusion::FusionHead::create(store, 2, rng);
  head.weight->value.setZero();
  head.bias->value.setZero();
  Tape t;
  Var logits = fusion::fuse_and_score(t, t.constant(Matrix::Ones(3, 4)), t.constant(Matrix::Ones(1, 2)),
                                      t.constant(Matrix::Ones(3, 2)), t.constant(uniform_matrix(5, 2, 1.0, rng)), head);
  EXPECT_EQ(logits.value(), Matrix::Zero(3, 5));
}

TEST(Fusion, IdenticalEmbeddingsScoreIdentically) {
  Rng rng(2);
  ParameterStore store;
  auto head = fusion::FusionHead::create(store, 3, rng);
  Matrix kbar = uniform_matrix(4, 3, 1.0, rng);
  kbar.row(2) = kbar.row(0);
  Tape t;
  const Matrix z = fusion::fuse_and_score(t, t.constant(uniform_matrix(5, 6, 1.0, rng)), t.constant(uniform_matrix(1, 3, 1.0, rng)),
                                          t.constant(uniform_matrix(5, 3, 1.0, rng)), t.constant(kbar), head)
                       .value();
  EXPECT_EQ(z.col(0), z.col(2));
}

TEST(Fusion, ScalarToyLogits) {
  // d = 1: pick W_R, b_R so h = 2, then score v̄ = (1), (−1).
  ParameterStore store;
  Rng rng(3);
  auto head = fusion::FusionHead::create(store, 1, rng);
  head.weight->value.setZero();
  head.bias->value.setConstant(2.0);
  Tape t;
  Matrix kbar(2, 1);
  kbar << 1, -1;
  Var z = fusion::fuse_and_score(t, t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Zero(1, 1)),
                                 t.constant(kbar), head);
  EXPECT_EQ(z.value(), row({2, -2}));
  const Matrix sm = ad::softmax_rows_value(z.value());
  EXPECT_NEAR(sm(0, 0), 0.9820, 5e-5);
  EXPECT_NEAR(sm(0, 1), 0.0180, 5e-5);
}

TEST(Fusion, LeakyActivationSlope) {
  ParameterStore store;
  Rng rng(3);
  auto head = fusion::FusionHead::create(store, 1, rng);
  head.weight->value.setZero();
  head.bias->value.setConstant(-3.0);
  Tape t;
  Var h = fusion::fusion_hidden(t, t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Zero(1, 1)), head);
  EXPECT_DOUBLE_EQ(h.scalar(), -0.03);
}

TEST(Fusion, EmptyRegionIsAnError) {
  ParameterStore store;
  Rng rng(3);
  auto head = fusion::FusionHead::create(store, 1, rng);
  Tape t;
  EXPECT_THROW(fusion::fuse_and_score(t, t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 1)),
                                      t.constant(Matrix::Zero(1, 1)), t.constant(Matrix(0, 1)), head),
               std::invalid_argument);
}

TEST(RecommendationLoss, UniformLogitsGiveLnK) {
  Tape t;
  const Var z[] = {t.constant(Matrix::Zero(3, 4))};
  EXPECT_NEAR(fusion::recommendation_loss(z, {{0, 1, 3}}).scalar(), 1.386294, 1e-6);
}

TEST(RecommendationLoss, ConfidentTruthApproachesZero) {
  Tape t;
  Matrix m = Matrix::Zero(1, 3);
  m(0, 1) = 200.0;
  const Var z[] = {t.constant(m)};
  EXPECT_LT(fusion::recommendation_loss(z, {{1}}).scalar(), 1e-80);
}

TEST(RecommendationLoss, NormalizesByTotalPositions) {
  Rng rng(4);
  Tape t;
  const Matrix a = uniform_matrix(3, 5, 2.0, rng), b = uniform_matrix(3, 5, 2.0, rng);
  const Var z[] = {t.constant(a), t.constant(b)};
  const std::vector<std::vector<Index>> targets{{0, 2, 4}, {1, 1, 3}};
  double manual = 0.0;
  for (std::size_t u = 0; u < 2; ++u) {
    const Matrix ls = (u == 0 ? a : b);
    for (Index n = 0; n < 3; ++n) {
      const double lse = std::log(ls.row(n).array().exp().sum());
      manual -= ls(n, targets[u][static_cast<std::size_t>(n)]) - lse;
    }
  }
  EXPECT_NEAR(fusion::recommendation_loss(z, targets).scalar(), manual / 6.0, 1e-12);
}

TEST(RecommendationLoss, ShiftInvariant) {
  Rng rng(5);
  Tape t;
  const Matrix a = uniform_matrix(4, 6, 2.0, rng);
  const Var z1[] = {t.constant(a)};
  const Var z2[] = {t.constant((a.array() + 17.5).matrix())};
  const std::vector<std::vector<Index>> targets{{0, 5, 2, 3}};
  EXPECT_NEAR(fusion::recommendation_loss(z1, targets).scalar(), fusion::recommendation_loss(z2, targets).scalar(), 1e-6);
}

TEST(RecommendationLoss, TargetOutsideRegionIsAnError) {
  Tape t;
  const Var z[] = {t.constant(Matrix::Zero(2, 3))};
  EXPECT_THROW(fusion::recommendation_loss(z, {{0, 3}}), std::invalid_argument);
}

TEST(TotalLoss, WeightedSums) {
  EXPECT_DOUBLE_EQ(fusion::total_loss(1, 2, 3, fusion::Betas{}), 6.0);
  EXPECT_DOUBLE_EQ(fusion::total_loss(1, 2, 3, fusion::Betas{1, 0, 1}), fusion::total_loss(1, 999, 3, fusion::Betas{1, 0, 1}));
  EXPECT_NEAR(fusion::total_loss(1, 1, 1, fusion::Betas{0.3, 0.35, 0.35}), 1.0, 1e-15);
  Tape t;
  auto c = [&](double v) { return t.constant(Matrix::Constant(1, 1, v)); };
  EXPECT_DOUBLE_EQ(fusion::total_loss(c(1), c(2), c(3), fusion::Betas{}).scalar(), 6.0);
}

TEST(SurrogateGrid, Examples) {
  EXPECT_EQ(fusion::surrogate_time_grid(2), (std::vector<double>{0, 1}));
  EXPECT_EQ(fusion::surrogate_time_grid(3), (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(fusion::surrogate_time_grid(5), (std::vector<double>{0, 0.25, 0.5, 0.75, 1}));
  EXPECT_THROW(fusion::surrogate_time_grid(1), std::invalid_argument);
}

TEST(TopP, WorkedExample) {
  const std::vector<double> z{2, 1, 0};
  const auto nuc = fusion::top_p_nucleus(z, 0.7);
  EXPECT_EQ(nuc.indices, (std::vector<Index>{0, 1}));
  EXPECT_NEAR(nuc.probabilities[0], 0.665, 5e-4);
  EXPECT_NEAR(nuc.mass, 0.910, 5e-4);
  EXPECT_GE(nuc.mass, 0.7);
}

TEST(TopP, FullAndNarrowNuclei) {
  const std::vector<double> z{0.3, -1.0, 2.0, 0.0};
  EXPECT_EQ(fusion::top_p_nucleus(z, 1.0).indices.size(), 4u);
  EXPECT_EQ(fusion::top_p_nucleus(z, 1e-9).indices, (std::vector<Index>{2}));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(fusion::top_p_sample(z, 1e-9, rng), 2);
}

TEST(TopP, NucleusIsADescendingPrefix) {
  Rng rng(8);
  for (int it = 0; it < 200; ++it) {
    const Matrix z = uniform_matrix(1, 9, 3.0, rng);
    const std::vector<double> logits(z.data(), z.data() + z.size());
    const double p = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto nuc = fusion::top_p_nucleus(logits, p);
    EXPECT_GE(nuc.mass, p - 1e-12);
    for (std::size_t i = 1; i < nuc.indices.size(); ++i) EXPECT_GE(nuc.probabilities[i - 1], nuc.probabilities[i]);
    const double smallest_kept = nuc.probabilities.back();
    for (std::size_t j = 0; j < logits.size(); ++j) {
      if (std::find(nuc.indices.begin(), nuc.indices.end(), static_cast<Index>(j)) != nuc.indices.end()) continue;
      EXPECT_LE(logits[j], logits[static_cast<std::size_t>(nuc.indices.back())]);
    }
    EXPECT_GT(smallest_kept, 0.0);
  }
}

TEST(TopP, MaskingAndErrors) {
  const std::vector<double> z{5, 1, 0};
  const std::vector<char> mask{1, 0, 0};
  Rng rng(2);
  for (int i = 0; i < 50; ++i) EXPECT_NE(fusion::top_p_sample(z, 0.9, rng, mask), 0);
  const std::vector<char> all{1, 1, 1};
  EXPECT_THROW(fusion::top_p_sample(z, 0.9, rng, all), std::invalid_argument);
  EXPECT_THROW(fusion::top_p_nucleus(z, 0.0), std::invalid_argument);
  EXPECT_THROW(fusion::top_p_nucleus(z, 1.5), std::invalid_argument);
}

TEST(TopP, SamplingFollowsRenormalizedMass) {
  const std::vector<double> z{std::log(0.5), std::log(0.3), std::log(0.2)};
  Rng rng(11);
  std::array<int, 3> hits{};
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(fusion::top_p_sample(z, 0.75, rng))];
  EXPECT_EQ(hits[2], 0);
  EXPECT_NEAR(hits[0] / static_cast<double>(n), 0.625, 0.005);
}

TEST(QueryEncoder, TwoStopQueryHasNoMaskSlots) {
  Rng rng(4);
  ParameterStore store;
  fusion::QueryEncoder enc(store, 5, 2, 1, 2, 8, rng);
  // Zero the mask: if it were used anywhere, changing it would change the output.
  Tape t;
  Var o = t.constant(row({0.1, 0.2})), d = t.constant(row({-0.3, 0.4}));
  const Matrix before = enc.encode(t, o, d, 2).value();
  store.get("query.mask").value.setConstant(9.0);
  Tape t2;
  EXPECT_EQ(enc.encode(t2, t2.constant(o.value()), t2.constant(d.value()), 2).value(), before);
  EXPECT_EQ(before.rows(), 2);
  EXPECT_EQ(before.cols(), 4);
  Tape t3;
  EXPECT_THROW((void)enc.encode(t3, o, d, 1), std::invalid_argument);
  EXPECT_THROW((void)enc.encode(t3, o, d, 6), std::invalid_argument);
}

TEST(QueryEncoder, EndpointSwapChangesEnds) {
  Rng rng(4);
  ParameterStore store;
  fusion::QueryEncoder enc(store, 5, 2, 1, 2, 8, rng);
  Tape t;
  Var o = t.constant(row({0.1, 0.2})), d = t.constant(row({-0.3, 0.4}));
  const Matrix a = enc.encode(t, o, d, 4).value(), b = enc.encode(t, d, o, 4).value();
  EXPECT_GT((a.row(0) - b.row(0)).norm(), 1e-6);
  EXPECT_GT((a.row(3) - b.row(3)).norm(), 1e-6);
  EXPECT_EQ(enc.encode(t, o, d, 4).value(), a);
}

TEST(QueryEncoder, EndpointsMustBeInRegion) {
  Rng rng(4);
  ParameterStore store;
  fusion::QueryEncoder enc(store, 5, 2, 1, 2, 8, rng);
  Tape t;
  Var kbar = t.constant(uniform_matrix(3, 2, 1.0, rng));
  const std::vector<Index> region{10, 11, 12};
  EXPECT_NO_THROW(fusion::encode_query(t, enc, kbar, region, fusion::Query{10, 12, 3}));
  EXPECT_THROW(fusion::encode_query(t, enc, kbar, region, fusion::Query{9, 12, 3}), std::invalid_argument);
  EXPECT_THROW(fusion::encode_query(t, enc, kbar, region, fusion::Query{10, 12, 1}), std::invalid_argument);
}

TEST(Recommend, TripShapeAndDeterminism) {
  const Dataset& ds = planted();
  SpotTrip model(tiny_config(), ds);
  for (const auto& r : ds.test) {
    const auto truth = r.trip();
    Rng a(5), b(5);
    const auto t1 = model.recommend_for(r, 0.9, a), t2 = model.recommend_for(r, 0.9, b);
    EXPECT_EQ(t1, t2);
    ASSERT_EQ(t1.size(), truth.size());
    EXPECT_EQ(t1.front(), truth.front());
    EXPECT_EQ(t1.back(), truth.back());
    const auto& region = ds.region_pois[static_cast<std::size_t>(r.outoftown_region)];
    for (std::size_t n = 0; n < t1.size(); ++n) {
      EXPECT_NE(std::find(region.begin(), region.end(), t1[n]), region.end());
      if (n > 0 && n + 1 < t1.size()) {
        EXPECT_NE(t1[n], truth.front());
        EXPECT_NE(t1[n], truth.back());
      }
    }
  }
}

TEST(Recommend, TwoStopsReturnEndpointsOnly) {
  const Dataset& ds = planted();
  SpotTrip model(tiny_config(), ds);
  const auto& r = ds.train.front();
  Rng rng(1);
  const auto trip = model.recommend(r.hometown, r.outoftown_region, fusion::Query{r.trip().front(), r.trip()[1], 2}, 0.9, rng);
  EXPECT_EQ(trip, (metrics::Trip{r.trip().front(), r.trip()[1]}));
  EXPECT_EQ(rng, Rng(1));  // nothing was sampled
}

TEST(Recommend, DedupFlagPreventsRepeats) {
  const Dataset& ds = planted();
  RunConfig cfg = tiny_config();
  cfg.dedup_intermediates = true;
  cfg.max_trip_length = 12;
  SpotTrip model(cfg, ds);
  const auto& r = ds.train.front();
  const auto truth = r.trip();
  Rng rng(3);
  const auto trip = model.recommend(r.hometown, r.outoftown_region, fusion::Query{truth.front(), truth.back(), 12}, 1.0, rng);
  std::set<Index> mid(trip.begin() + 1, trip.end() - 1);
  EXPECT_EQ(mid.size(), 10u);
}

TEST(Recommend, OriginOnlyQueryKeepsOrigin) {
  const Dataset& ds = planted();
  SpotTrip model(tiny_config(), ds);
  const auto& r = ds.train.front();
  const auto truth = r.trip();
  Rng rng(3);
  const auto trip = model.recommend(r.hometown, r.outoftown_region, fusion::Query{truth.front(), truth.back(), 4}, 0.9, rng,
                                    fusion::QueryMode::kOriginOnly);
  EXPECT_EQ(trip.front(), truth.front());
  EXPECT_EQ(trip.size(), 4u);
}

TEST(ModelGradients, EachLossTermAndTotal) {
  const Dataset& ds = planted();
  SpotTrip model(tiny_config(), ds);
  const std::vector<const TravelRecord*> batch{&ds.train[0], &ds.train[1]};
  Rng rng(9);
  const auto noise = model.draw_noise(batch.size(), rng);
  std::vector<double> steps;
  {
    Tape t;
    steps = model.forward(t, batch, noise).dynamic.step_sizes;
  }
  for (const char* term : {"L_S", "L_D", "L_R", "L"}) {
    auto rep = gradcheck::check(model.store().all(), [&](bool g) {
      Tape t;
      const auto f = model.forward(t, batch, noise, &steps);
      const std::string name = term;
      Var loss = name == "L_S" ? f.l_s : name == "L_D" ? f.l_d : name == "L_R" ? f.l_r : f.total;
      if (g) t.backward(loss);
      return loss.scalar();
    }, 1e-5, 4);
    EXPECT_LT(rep.worst(), 1e-4) << term << ": " << rep.worst_name();
  }
}
