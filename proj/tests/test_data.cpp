#include "spottrip/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

using namespace spottrip;

namespace {

struct CorpusBuilder {
  std::ostringstream tsv;

  void add(const std::string& user, double ts, double lat, double lon, const std::string& poi, const std::string& region) {
    tsv << user << '\t' << ts << '\t' << lat << '\t' << lon << '\t' << poi << '\t' << region << '\n';
  }

  // `home` hometown visits in region A, `away` visits in region B starting
  // one day later and spaced `gap` seconds apart.
  void user(const std::string& id, int home, int away, double gap = 7200.0, double t0 = 1.0e9) {
    for (int i = 0; i < home; ++i) add(id, t0 + 3600.0 * i, 40.0 + 0.01 * i, -74.0, "h" + std::to_string(i % 4), "A");
    for (int i = 0; i < away; ++i) add(id, t0 + 86400.0 + gap * i, 42.0, -72.0 + 0.01 * i, "o" + std::to_string(i % 3), "B");
  }

  [[nodiscard]] RawCorpus corpus() const {
    std::istringstream in(tsv.str());
    return ingest_checkins(in);
  }
};

CorpusBuilder standard(int users) {
  CorpusBuilder b;
  for (int u = 0; u < users; ++u) b.user("u" + std::to_string(100 + u), 5, 3, 7200.0, 1.0e9 + 1000.0 * u);
  return b;
}

std::set<std::string> users_of(const std::vector<TravelRecord>& recs) {
  std::set<std::string> out;
  for (const auto& r : recs) out.insert(r.user_id);
  return out;
}

std::set<std::string> all_users(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const auto& r : *split) out.insert(r.user_id);
  return out;
}

}  // namespace

TEST(Ingest, WellFormedLines) {
  std::istringstream in("u1\t10\t1.5\t2.5\tp1\tr1\nu0\t5\t1\t2\tp2\tr1\nu1\t3\t1\t2\tp1\tr1\n");
  const RawCorpus c = ingest_checkins(in);
  ASSERT_EQ(c.checkins.size(), 3u);
  EXPECT_EQ(c.checkins[0].user_id, "u0");
  EXPECT_EQ(c.checkins[1].time, 3.0);
  EXPECT_EQ(c.checkins[2].lat, 1.5);
  EXPECT_EQ(c.poi_tokens, (std::vector<std::string>{"p1", "p2"}));
  EXPECT_EQ(c.region_tokens, (std::vector<std::string>{"r1"}));
}

TEST(Ingest, EmptyInput) {
  std::istringstream in("");
  EXPECT_TRUE(ingest_checkins(in).checkins.empty());
}

TEST(Ingest, NonNumericLatitudeNamesLine) {
  std::istringstream in("u1\t10\t1\t2\tp1\tr1\nu1\t11\tnorth\t2\tp1\tr1\n");
  try {
    ingest_checkins(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("latitude"), std::string::npos) << e.what();
  }
}

TEST(Ingest, WrongFieldCountAndUnknownFormat) {
  std::istringstream bad("u1\t10\t1\t2\tp1\n");
  EXPECT_THROW(ingest_checkins(bad), DataError);
  std::istringstream ok("");
  EXPECT_THROW(ingest_checkins(ok, "csv"), DataError);
}

TEST(Ingest, PoiInTwoRegionsIsAnError) {
  std::istringstream in("u1\t10\t1\t2\tp1\tr1\nu1\t11\t1\t2\tp1\tr2\n");
  EXPECT_THROW(ingest_checkins(in), DataError);
}

TEST(Ingest, KgUnknownHeadListsToken) {
  std::istringstream ci("u1\t10\t1\t2\tp1\tr1\n");
  const RawCorpus c = ingest_checkins(ci);
  std::istringstream kg("p1\tcategory\tmuseum\nghost\tcategory\tbar\np1\tcategory\tmuseum\n");
  try {
    ingest_kg(kg, c);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
  std::istringstream kg2("p1\tcategory\tmuseum\np1\tcategory\tmuseum\n");
  EXPECT_EQ(ingest_kg(kg2, c).triples.size(), 1u);
}

TEST(BuildDataset, ShortHometownIsExcluded) {
  CorpusBuilder b = standard(10);
  b.user("short", 3, 3);
  const Dataset ds = build_dataset(b.corpus(), {}, FilterConfig{}, 1);
  EXPECT_EQ(all_users(ds).count("short"), 0u);
  EXPECT_EQ(all_users(ds).size(), 10u);
}

TEST(BuildDataset, FortyFiveMinuteTripIsExcluded) {
  CorpusBuilder b = standard(10);
  b.user("quick", 5, 3, 1350.0);  // 2 gaps of 22.5 min
  b.user("month", 5, 3, 16.0 * 86400.0);
  const Dataset ds = build_dataset(b.corpus(), {}, FilterConfig{}, 1);
  EXPECT_EQ(all_users(ds).count("quick"), 0u);
  EXPECT_EQ(all_users(ds).count("month"), 0u);
}

TEST(BuildDataset, RarePairIsExcludedAndEverythingFilteredIsAnError) {
  EXPECT_THROW(build_dataset(standard(9).corpus(), {}, FilterConfig{}, 1), DataError);
  EXPECT_NO_THROW(build_dataset(standard(10).corpus(), {}, FilterConfig{}, 1));
}

TEST(BuildDataset, RecordInvariants) {
  const Dataset ds = build_dataset(standard(30).corpus(), {}, FilterConfig{}, 3);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const auto& r : *split) {
      EXPECT_GE(r.hometown.size(), 4u);
      EXPECT_GE(r.outoftown.size(), 3u);
      EXPECT_GT(r.hometown.size(), r.outoftown.size());
      EXPECT_NE(r.hometown_region, r.outoftown_region);
      for (std::size_t i = 1; i < r.outoftown.size(); ++i) EXPECT_LE(r.outoftown[i - 1].time, r.outoftown[i].time);
      for (const auto& c : r.hometown) EXPECT_EQ(c.region, r.hometown_region);
      for (const auto& c : r.outoftown) {
        EXPECT_EQ(c.region, r.outoftown_region);
        for (double v : {c.time, c.lat, c.lon}) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
        const auto& pois = ds.region_pois[static_cast<std::size_t>(c.region)];
        EXPECT_EQ(std::count(pois.begin(), pois.end(), c.poi), 1);
      }
    }
  }
}

TEST(BuildDataset, NormalizationHitsBothEnds) {
  const Dataset ds = build_dataset(standard(20).corpus(), {}, FilterConfig{}, 3);
  double tmin = 2, tmax = -1, amin = 2, amax = -1;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const auto& r : *split)
      for (const auto* seq : {&r.hometown, &r.outoftown})
        for (const auto& c : *seq) {
          tmin = std::min(tmin, c.time);
          tmax = std::max(tmax, c.time);
          amin = std::min(amin, c.lat);
          amax = std::max(amax, c.lat);
        }
  EXPECT_EQ(tmin, 0.0);
  EXPECT_EQ(tmax, 1.0);
  EXPECT_EQ(amin, 0.0);
  EXPECT_EQ(amax, 1.0);
}

TEST(BuildDataset, DegenerateRangeMapsToZero) {
  CorpusBuilder b;
  for (int u = 0; u < 10; ++u) {
    const std::string id = "u" + std::to_string(u);
    for (int i = 0; i < 5; ++i) b.add(id, 500.0, 1.0, 1.0, "h" + std::to_string(i % 2), "A");
    for (int i = 0; i < 3; ++i) b.add(id, 500.0, 1.0, 1.0, "o" + std::to_string(i % 2), "B");
  }
  FilterConfig cfg;
  cfg.min_duration_s = 0.0;
  const Dataset ds = build_dataset(b.corpus(), {}, cfg, 1);
  for (const auto& r : ds.train)
    for (const auto& c : r.outoftown) {
      EXPECT_EQ(c.time, 0.0);
      EXPECT_EQ(c.lat, 0.0);
      EXPECT_EQ(c.lon, 0.0);
    }
}

TEST(BuildDataset, HometownTieGoesToSmallerRegionId) {
  // Regions B (id 0) and A (id 1) tie on 4 visits; C gets 3. B must be home,
  // so the surviving record is B -> C (B -> A fails M > N either way).
  CorpusBuilder b;
  for (int i = 0; i < 4; ++i) b.add("tie", 1000.0 * i, 1, 1, "b" + std::to_string(i), "B");
  for (int i = 0; i < 4; ++i) b.add("tie", 1.0e5 + 1000.0 * i, 1, 1, "a" + std::to_string(i), "A");
  for (int i = 0; i < 3; ++i) b.add("tie", 3.0e5 + 7200.0 * i, 1, 1, "c" + std::to_string(i), "C");
  for (int i = 0; i < 4; ++i) b.add("other", 1000.0 * i, 1, 1, "b" + std::to_string(i), "B");
  for (int i = 0; i < 4; ++i) b.add("other", 1.0e5 + 1000.0 * i, 1, 1, "a" + std::to_string(i), "A");
  for (int i = 0; i < 3; ++i) b.add("other", 3.0e5 + 7200.0 * i, 1, 1, "c" + std::to_string(i), "C");
  FilterConfig cfg;
  cfg.min_pair_frequency = 1;
  const auto raw = b.corpus();
  const auto out = filter_checkins(raw.checkins, static_cast<Index>(raw.poi_tokens.size()),
                                   static_cast<Index>(raw.region_tokens.size()), cfg);
  ASSERT_EQ(out.records.size(), 2u);
  for (const auto& r : out.records) {
    EXPECT_EQ(raw.region_tokens[static_cast<std::size_t>(r.hometown_region)], "B");
    EXPECT_EQ(raw.region_tokens[static_cast<std::size_t>(r.outoftown_region)], "C");
  }
}

TEST(BuildDataset, FilteringIsIdempotent) {
  CorpusBuilder b = standard(12);
  b.user("short", 3, 3);
  b.add("lonely", 5.0, 1, 1, "rare", "A");
  const auto raw = b.corpus();
  const auto np = static_cast<Index>(raw.poi_tokens.size()), nr = static_cast<Index>(raw.region_tokens.size());
  const auto once = filter_checkins(raw.checkins, np, nr, FilterConfig{});
  const auto twice = filter_checkins(once.survivors, np, nr, FilterConfig{});
  EXPECT_EQ(once.records, twice.records);
  EXPECT_EQ(once.survivors, twice.survivors);
  EXPECT_EQ(twice.passes, 1);
}

TEST(BuildDataset, SplitIsAUserPartition) {
  const Dataset ds = build_dataset(standard(50).corpus(), {}, FilterConfig{}, 11);
  const auto tr = users_of(ds.train), va = users_of(ds.valid), te = users_of(ds.test);
  EXPECT_EQ(tr.size(), 40u);
  EXPECT_EQ(va.size(), 5u);
  EXPECT_EQ(te.size(), 5u);
  for (const auto& u : tr) {
    EXPECT_EQ(va.count(u), 0u);
    EXPECT_EQ(te.count(u), 0u);
  }
  for (const auto& u : va) EXPECT_EQ(te.count(u), 0u);
  EXPECT_EQ(all_users(ds).size(), 50u);
}

TEST(BuildDataset, SeedDrivesSplit) {
  const auto raw = standard(50).corpus();
  const Dataset a = build_dataset(raw, {}, FilterConfig{}, 11), b = build_dataset(raw, {}, FilterConfig{}, 11),
                c = build_dataset(raw, {}, FilterConfig{}, 12);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(users_of(a.test), users_of(c.test));
}

TEST(BuildDataset, KgTriplesOfRemovedPoisAreDropped) {
  CorpusBuilder b = standard(10);
  b.add("lonely", 5.0, 1, 1, "rare", "A");
  const auto raw = b.corpus();
  std::istringstream kg_in("h0\tcategory\tpark\nrare\tcategory\tbar\n");
  const auto kg = ingest_kg(kg_in, raw);
  const Dataset ds = build_dataset(raw, kg, FilterConfig{}, 1);
  ASSERT_EQ(ds.kg.size(), 1u);
  EXPECT_EQ(ds.pois[static_cast<std::size_t>(ds.kg[0].head_poi)].token, "h0");
}

TEST(Persistence, RoundTripIsBitExact) {
  CorpusBuilder b = standard(20);
  const auto raw = b.corpus();
  std::istringstream kg_in("h0\tcategory\tpark\no1\tcategory\tbar\n");
  const Dataset ds = build_dataset(raw, ingest_kg(kg_in, raw), FilterConfig{}, 5);
  const auto dir = std::filesystem::temp_directory_path() / "spottrip_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  for (const char* f : {"vocab.tsv", "kg.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "meta.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.norm, ds.norm);
  EXPECT_EQ(back.pois, ds.pois);
  EXPECT_EQ(back.kg, ds.kg);
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.valid, ds.valid);
  EXPECT_EQ(back.test, ds.test);
  EXPECT_EQ(back.region_pois, ds.region_pois);
  EXPECT_EQ(back.filter, ds.filter);
  EXPECT_EQ(back.seed, ds.seed);
  std::filesystem::remove_all(dir);
}

TEST(Persistence, MissingDirectoryIsAnError) {
  EXPECT_THROW(load_dataset("/nonexistent/spottrip"), DataError);
}
