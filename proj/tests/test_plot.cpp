#include "spottrip/plot.hpp"
#include "spottrip/synthetic.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace spottrip;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

const Dataset& planted() {
  static const Dataset ds = [] {
    auto [corpus, kg] = parse_synthetic(generate_synthetic(SyntheticSpec{}));
    return build_dataset(corpus, kg, FilterConfig{}, 7);
  }();
  return ds;
}

}  // namespace

TEST(Plot, TwoStopTripHasTwoMarkersAndOneEdge) {
  const Dataset& ds = planted();
  const auto trip = ds.train.front().trip();
  const std::string svg = render_trip_svg(ds, {{"truth", "black", {trip.front(), trip.back()}}});
  EXPECT_EQ(count(svg, "class=\"marker\""), 2u);
  EXPECT_EQ(count(svg, "class=\"edge\""), 1u);
}

TEST(Plot, EdgesPerTrip) {
  const Dataset& ds = planted();
  const auto trip = ds.train.front().trip();
  const std::string svg = render_trip_svg(ds, {{"a", "black", trip}, {"b", "red", trip}});
  EXPECT_EQ(count(svg, "class=\"edge\""), 2 * (trip.size() - 1));
  EXPECT_EQ(count(svg, "class=\"marker\""), 4u);
}

TEST(Plot, CaseStudyIsDeterministic) {
  const Dataset& ds = planted();
  RunConfig cfg;
  cfg.d = 8;
  cfg.dyn_layers = 1;
  cfg.dyn_heads = 2;
  cfg.ff_width = 16;
  cfg.ode_hidden = 16;
  cfg.query_heads = 2;
  SpotTrip model(cfg, ds);
  const auto& r = ds.test.front();
  const auto a = render_trip_svg(ds, case_trips(model, r, 0.9, 3)), b = render_trip_svg(ds, case_trips(model, r, 0.9, 3));
  EXPECT_EQ(a, b);
  const auto trips = case_trips(model, r, 0.9, 3);
  ASSERT_EQ(trips.size(), 4u);
  EXPECT_EQ(trips[2].pois.front(), r.trip().front());  // origin only keeps the origin
  EXPECT_EQ(trips[3].pois.back(), r.trip().back());    // destination only keeps the destination
}

TEST(Plot, MissingCoordinatesAreAnError) {
  Dataset ds = planted();
  const auto trip = ds.train.front().trip();
  ds.pois[static_cast<std::size_t>(trip[1])].raw_lat = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(render_trip_svg(ds, {{"truth", "black", trip}}), DataError);
  EXPECT_THROW(render_trip_svg(ds, {{"truth", "black", {static_cast<Index>(ds.pois.size())}}}), DataError);
}
