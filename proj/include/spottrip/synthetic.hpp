#pragma once

// Planted-preference check-in generator. Every POI carries two attribute
// entities shared across regions: a category and a tier (its rank inside the
// category). Each user has a favourite category, an anchor tier, and two side
// interests seen in the hometown history: one early, one late. Out-of-town
// trips start and end in the favourite category and drift to the late
// interest in between; the tier climbs by one per stop from the anchor.

#include "spottrip/data.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace spottrip {

struct SyntheticSpec {
  int users = 50;
  int regions = 2;
  int pois_per_region = 30;
  int categories = 6;        // entities of the "category" relation
  int noise_relations = 1;   // extra attribute relations with random tails
  int noise_levels = 3;      // entities per extra relation
  int min_hometown = 7;
  int max_hometown = 10;
  int min_trip = 3;
  int max_trip = 5;
  int side_visits = 2;        // hometown visits to each side interest
  double anchor_focus = 0.6;  // share of favourite-category visits on the anchor POI
  double stray_rate = 0.1;    // share of favourite-category visits sent anywhere
  std::uint64_t seed = 7;
};

struct PlantedUser {
  std::string user;
  int home_region = 0;
  int trip_region = 0;
  int category = 0;
  int early_category = 0;
  int late_category = 0;  // drift target
  int anchor = 0;
  std::vector<std::string> trip;  // POI tokens in visiting order
};

struct SyntheticData {
  std::string checkins_tsv;
  std::string kg_tsv;
  std::vector<PlantedUser> truth;
};

inline void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& why) { throw std::invalid_argument("synthetic spec rejected: " + why); };
  if (s.users < 1) fail("users must be positive");
  if (s.regions < 2) fail("at least two regions are required");
  if (s.pois_per_region < 1) fail("pois_per_region must be positive");
  if (s.categories < 3 || s.categories > s.pois_per_region) fail("categories must lie in [3, pois_per_region]");
  if (s.noise_relations < 0 || (s.noise_relations > 0 && s.noise_levels < 1)) fail("bad noise relation settings");
  if (s.side_visits < 0) fail("side_visits must be >= 0");
  if (s.min_hometown < std::max(4, 2 * s.side_visits + 1) || s.max_hometown < s.min_hometown) {
    fail("hometown length range must satisfy max(4, 2 side_visits + 1) <= min <= max");
  }
  if (s.min_trip < 3 || s.max_trip < s.min_trip) fail("trip length range must satisfy 3 <= min <= max");
  if (s.max_trip >= s.min_hometown) fail("trip length must stay below hometown length (N < M)");
  if (s.anchor_focus < 0 || s.stray_rate < 0 || s.anchor_focus + s.stray_rate > 1) fail("bad visit mixture");
}

/// Local POI slot for a (category, rank) pair inside one region.
inline int planted_slot(const SyntheticSpec& s, int category, int rank) {
  const int per_cat = (s.pois_per_region - category + s.categories - 1) / s.categories;
  return category + s.categories * (rank % per_cat);
}

inline std::string synthetic_poi_token(int region, int slot) {
  return "r" + std::to_string(region) + "_p" + std::to_string(slot);
}

/// The planted trip: endpoints in the favourite category, intermediate stops
/// in the drift category, tier anchor + n at stop n.
inline std::vector<int> planted_trip_slots(const SyntheticSpec& s, int category, int drift_category, int anchor,
                                           int length) {
  std::vector<int> slots;
  for (int n = 0; n < length; ++n) {
    const bool endpoint = n == 0 || n == length - 1;
    slots.push_back(planted_slot(s, endpoint ? category : drift_category, anchor + n));
  }
  return slots;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& s) {
  validate(s);
  Rng rng(s.seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // POI coordinates: regions sit two degrees apart.
  std::vector<std::vector<std::pair<double, double>>> coords(static_cast<std::size_t>(s.regions));
  for (int r = 0; r < s.regions; ++r) {
    for (int j = 0; j < s.pois_per_region; ++j) {
      coords[static_cast<std::size_t>(r)].emplace_back(40.0 + 2.0 * r + uniform(-0.05, 0.05),
                                                       -74.0 + 2.0 * r + uniform(-0.05, 0.05));
    }
  }

  SyntheticData out;
  std::ostringstream tsv;
  char buf[256];
  std::set<std::pair<int, int>> visited;
  auto emit = [&](const std::string& user, long long ts, int region, int slot) {
    visited.emplace(region, slot);
    const auto& [lat, lon] = coords[static_cast<std::size_t>(region)][static_cast<std::size_t>(slot)];
    std::snprintf(buf, sizeof buf, "%s\t%lld\t%.6f\t%.6f\t%s\tregion%d\n", user.c_str(), ts, lat, lon,
                  synthetic_poi_token(region, slot).c_str(), region);
    tsv << buf;
  };

  const long long base = 1600000000LL;
  for (int u = 0; u < s.users; ++u) {
    PlantedUser pu;
    std::snprintf(buf, sizeof buf, "u%04d", u);
    pu.user = buf;
    pu.home_region = u % s.regions;
    pu.trip_region = (pu.home_region + 1 + (u / s.regions) % (s.regions - 1)) % s.regions;
    pu.category = uniform_int(0, s.categories - 1);
    pu.early_category = (pu.category + uniform_int(1, s.categories - 1)) % s.categories;
    do {
      pu.late_category = (pu.category + uniform_int(1, s.categories - 1)) % s.categories;
    } while (pu.late_category == pu.early_category);
    pu.anchor = uniform_int(0, s.pois_per_region - 1);

    const int m = uniform_int(s.min_hometown, s.max_hometown);
    long long ts = base + static_cast<long long>(uniform(0.0, 20.0 * 86400.0));
    for (int i = 0; i < m; ++i) {
      int slot = 0;
      if (i < s.side_visits) {
        slot = planted_slot(s, pu.early_category, uniform_int(0, s.pois_per_region - 1));
      } else if (i >= m - s.side_visits) {
        slot = planted_slot(s, pu.late_category, uniform_int(0, s.pois_per_region - 1));
      } else {
        const double roll = uniform(0.0, 1.0);
        if (roll < s.anchor_focus) {
          slot = planted_slot(s, pu.category, pu.anchor);
        } else if (roll < 1.0 - s.stray_rate) {
          slot = planted_slot(s, pu.category, uniform_int(0, s.pois_per_region - 1));
        } else {
          slot = uniform_int(0, s.pois_per_region - 1);
        }
      }
      emit(pu.user, ts, pu.home_region, slot);
      ts += static_cast<long long>(uniform(6.0, 30.0) * 3600.0);
    }

    const int n = uniform_int(s.min_trip, s.max_trip);
    ts += static_cast<long long>(uniform(1.0, 5.0) * 86400.0);
    for (int slot : planted_trip_slots(s, pu.category, pu.late_category, pu.anchor, n)) {
      emit(pu.user, ts, pu.trip_region, slot);
      pu.trip.push_back(synthetic_poi_token(pu.trip_region, slot));
      ts += static_cast<long long>(uniform(2.0, 6.0) * 3600.0);
    }
    out.truth.push_back(std::move(pu));
  }
  // Knowledge graph over visited POIs only, so every head is a known token.
  std::ostringstream kg;
  for (const auto& [r, j] : visited) {
    kg << synthetic_poi_token(r, j) << "\tcategory\tcat" << (j % s.categories) << '\n';
    kg << synthetic_poi_token(r, j) << "\ttier\ttier" << (j / s.categories) << '\n';
    for (int k = 0; k < s.noise_relations; ++k) {
      kg << synthetic_poi_token(r, j) << "\tattr" << k << "\tattr" << k << "_level" << uniform_int(0, s.noise_levels - 1)
         << '\n';
    }
  }
  out.checkins_tsv = tsv.str();
  out.kg_tsv = kg.str();
  return out;
}

/// Parsed form of generated data, ready for build_dataset.
inline std::pair<RawCorpus, RawKnowledgeGraph> parse_synthetic(const SyntheticData& data) {
  std::istringstream ci(data.checkins_tsv);
  RawCorpus corpus = ingest_checkins(ci);
  std::istringstream ki(data.kg_tsv);
  RawKnowledgeGraph kg = ingest_kg(ki, corpus);
  return {std::move(corpus), std::move(kg)};
}

}  // namespace spottrip
