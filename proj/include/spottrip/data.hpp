#pragma once

// Check-in ingestion, travel-record assembly, filtering, normalization,
// user-level splitting, and on-disk dataset persistence.

#include "spottrip/nn.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spottrip {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckIn {
  std::string user_id;
  double time = 0.0;
  double lat = 0.0;
  double lon = 0.0;
  Index poi = 0;
  Index region = 0;

  friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

/// One user's hometown history paired with one out-of-town visit.
struct TravelRecord {
  std::string user_id;
  std::vector<CheckIn> hometown;
  std::vector<CheckIn> outoftown;
  Index hometown_region = 0;
  Index outoftown_region = 0;

  [[nodiscard]] std::vector<Index> trip() const {
    std::vector<Index> out;
    out.reserve(outoftown.size());
    for (const auto& c : outoftown) out.push_back(c.poi);
    return out;
  }

  friend bool operator==(const TravelRecord&, const TravelRecord&) = default;
};

struct KGTriple {
  Index head_poi = 0;
  Index relation = 0;
  Index tail_entity = 0;

  friend auto operator<=>(const KGTriple&, const KGTriple&) = default;
};

/// Parsed check-ins with token vocabularies in first-appearance order.
struct RawCorpus {
  std::vector<CheckIn> checkins;
  std::vector<std::string> poi_tokens;
  std::vector<std::string> region_tokens;
  std::vector<Index> poi_region;
};

struct RawKnowledgeGraph {
  std::vector<KGTriple> triples;
  std::vector<std::string> relation_tokens;
  std::vector<std::string> entity_tokens;
};

struct FilterConfig {
  int min_poi_visits = 2;
  int min_hometown = 4;
  int min_outoftown = 3;
  int min_pair_frequency = 10;
  double min_duration_s = 3600.0;
  double max_duration_s = 30.0 * 86400.0;

  friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

/// Min-max constants. A degenerate range maps every value to 0.
struct Normalization {
  double time_min = 0, time_max = 0;
  double lat_min = 0, lat_max = 0;
  double lon_min = 0, lon_max = 0;

  static double scale(double x, double lo, double hi) { return hi == lo ? 0.0 : (x - lo) / (hi - lo); }
  [[nodiscard]] double time(double t) const { return scale(t, time_min, time_max); }
  [[nodiscard]] double lat(double v) const { return scale(v, lat_min, lat_max); }
  [[nodiscard]] double lon(double v) const { return scale(v, lon_min, lon_max); }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct PoiInfo {
  std::string token;
  Index region = 0;
  double raw_lat = 0.0;
  double raw_lon = 0.0;

  friend bool operator==(const PoiInfo&, const PoiInfo&) = default;
};

struct Dataset {
  std::vector<PoiInfo> pois;
  std::vector<std::string> region_tokens;
  std::vector<std::string> relation_tokens;
  std::vector<std::string> entity_tokens;
  std::vector<KGTriple> kg;
  std::vector<TravelRecord> train, valid, test;
  std::vector<std::vector<Index>> region_pois;
  Normalization norm;
  FilterConfig filter;
  std::uint64_t seed = 0;

  [[nodiscard]] Index num_pois() const { return static_cast<Index>(pois.size()); }
  [[nodiscard]] Index num_entities() const { return static_cast<Index>(entity_tokens.size()); }
  [[nodiscard]] Index num_relations() const { return static_cast<Index>(relation_tokens.size()); }
  [[nodiscard]] std::size_t max_trip_length() const {
    std::size_t n = 0;
    for (const auto* split : {&train, &valid, &test})
      for (const auto& r : *split) n = std::max(n, r.outoftown.size());
    return n;
  }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t line_no, const char* field) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": non-numeric " + field + " '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, std::size_t line_no, const char* field) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": non-integer " + field + " '" + std::string(s) + "'");
  }
  return v;
}

inline Index intern(std::string_view token, std::vector<std::string>& tokens,
                    std::unordered_map<std::string, Index>& index) {
  auto [it, inserted] = index.emplace(std::string(token), static_cast<Index>(tokens.size()));
  if (inserted) tokens.emplace_back(token);
  return it->second;
}

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("bad hex float '" + s + "'");
  return v;
}

inline std::string repr_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kCheckinFormat = "checkin-tsv";

/// Parses `user \t timestamp \t lat \t lon \t poi \t region` lines. Values stay
/// raw; output is ordered by (user, time) with file order breaking ties.
inline RawCorpus ingest_checkins(std::istream& in, std::string_view format = kCheckinFormat) {
  if (format != kCheckinFormat) throw DataError("unknown check-in format '" + std::string(format) + "'");
  RawCorpus out;
  std::unordered_map<std::string, Index> poi_index, region_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim_cr(line);
    if (view.empty()) continue;
    const auto fields = detail::split_tabs(view);
    if (fields.size() != 6) {
      throw DataError("line " + std::to_string(line_no) + ": expected 6 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw DataError("line " + std::to_string(line_no) + ": empty user id");
    if (fields[4].empty()) throw DataError("line " + std::to_string(line_no) + ": unknown POI token ''");
    if (fields[5].empty()) throw DataError("line " + std::to_string(line_no) + ": unknown region token ''");
    CheckIn c;
    c.user_id = std::string(fields[0]);
    c.time = detail::parse_double(fields[1], line_no, "timestamp");
    c.lat = detail::parse_double(fields[2], line_no, "latitude");
    c.lon = detail::parse_double(fields[3], line_no, "longitude");
    c.region = detail::intern(fields[5], out.region_tokens, region_index);
    const auto before = out.poi_tokens.size();
    c.poi = detail::intern(fields[4], out.poi_tokens, poi_index);
    if (out.poi_tokens.size() != before) {
      out.poi_region.push_back(c.region);
    } else if (out.poi_region[static_cast<std::size_t>(c.poi)] != c.region) {
      throw DataError("line " + std::to_string(line_no) + ": POI token '" + std::string(fields[4]) +
                      "' listed under regions '" + out.region_tokens[static_cast<std::size_t>(out.poi_region[static_cast<std::size_t>(c.poi)])] +
                      "' and '" + std::string(fields[5]) + "'");
    }
    out.checkins.push_back(std::move(c));
  }
  std::stable_sort(out.checkins.begin(), out.checkins.end(), [](const CheckIn& a, const CheckIn& b) {
    return std::tie(a.user_id, a.time) < std::tie(b.user_id, b.time);
  });
  return out;
}

inline RawCorpus ingest_checkins(const std::filesystem::path& path, std::string_view format = kCheckinFormat) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open check-in file " + path.string());
  return ingest_checkins(in, format);
}

/// Parses `head_poi \t relation \t tail_entity`; heads must be POI tokens
/// already present in the corpus.
inline RawKnowledgeGraph ingest_kg(std::istream& in, const RawCorpus& corpus) {
  std::unordered_map<std::string, Index> poi_index;
  for (std::size_t i = 0; i < corpus.poi_tokens.size(); ++i) poi_index.emplace(corpus.poi_tokens[i], static_cast<Index>(i));
  RawKnowledgeGraph out;
  std::unordered_map<std::string, Index> rel_index, ent_index;
  std::vector<std::string> unknown;
  std::set<KGTriple> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim_cr(line);
    if (view.empty()) continue;
    const auto fields = detail::split_tabs(view);
    if (fields.size() != 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    auto it = poi_index.find(std::string(fields[0]));
    if (it == poi_index.end()) {
      unknown.emplace_back(fields[0]);
      continue;
    }
    KGTriple t{it->second, detail::intern(fields[1], out.relation_tokens, rel_index),
               detail::intern(fields[2], out.entity_tokens, ent_index)};
    if (seen.insert(t).second) out.triples.push_back(t);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown POI token(s) in knowledge graph:";
    for (const auto& u : unknown) msg += " '" + u + "'";
    throw DataError(msg);
  }
  return out;
}

inline RawKnowledgeGraph ingest_kg(const std::filesystem::path& path, const RawCorpus& corpus) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open knowledge-graph file " + path.string());
  return ingest_kg(in, corpus);
}

/// Records that survive every filter, built from raw (un-normalized) values.
struct FilterOutcome {
  std::vector<TravelRecord> records;
  std::vector<CheckIn> survivors;
  int passes = 0;
};

namespace detail {

struct FilterPass {
  std::vector<TravelRecord> records;
  std::vector<std::size_t> kept;  // indices into the pass input
};

inline FilterPass filter_once(const std::vector<CheckIn>& checkins, Index num_pois, Index num_regions,
                              const FilterConfig& cfg) {
  // POI visit frequency.
  std::vector<int> visits(static_cast<std::size_t>(num_pois), 0);
  for (const auto& c : checkins) ++visits[static_cast<std::size_t>(c.poi)];
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < checkins.size(); ++i) {
    if (visits[static_cast<std::size_t>(checkins[i].poi)] >= cfg.min_poi_visits) by_user[checkins[i].user_id].push_back(i);
  }

  struct Candidate {
    TravelRecord record;
    std::vector<std::size_t> source;
  };
  std::vector<Candidate> candidates;
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(checkins[a].time, checkins[a].poi) < std::tie(checkins[b].time, checkins[b].poi);
    });
    std::vector<int> per_region(static_cast<std::size_t>(num_regions), 0);
    for (auto i : idx) ++per_region[static_cast<std::size_t>(checkins[i].region)];
    const Index home = static_cast<Index>(std::max_element(per_region.begin(), per_region.end()) - per_region.begin());
    for (Index region = 0; region < num_regions; ++region) {
      if (region == home || per_region[static_cast<std::size_t>(region)] == 0) continue;
      Candidate cand;
      cand.record.user_id = user;
      cand.record.hometown_region = home;
      cand.record.outoftown_region = region;
      for (auto i : idx) {
        if (checkins[i].region == home) {
          cand.record.hometown.push_back(checkins[i]);
          cand.source.push_back(i);
        } else if (checkins[i].region == region) {
          cand.record.outoftown.push_back(checkins[i]);
          cand.source.push_back(i);
        }
      }
      const auto m = static_cast<int>(cand.record.hometown.size());
      const auto n = static_cast<int>(cand.record.outoftown.size());
      if (m < cfg.min_hometown || n < cfg.min_outoftown || m <= n) continue;
      const double duration = cand.record.outoftown.back().time - cand.record.outoftown.front().time;
      if (duration < cfg.min_duration_s || duration > cfg.max_duration_s) continue;
      candidates.push_back(std::move(cand));
    }
  }

  std::map<std::pair<Index, Index>, int> pair_count;
  for (const auto& c : candidates) ++pair_count[{c.record.hometown_region, c.record.outoftown_region}];

  FilterPass pass;
  std::set<std::size_t> kept;
  for (auto& c : candidates) {
    if (pair_count[{c.record.hometown_region, c.record.outoftown_region}] < cfg.min_pair_frequency) continue;
    kept.insert(c.source.begin(), c.source.end());
    pass.records.push_back(std::move(c.record));
  }
  pass.kept.assign(kept.begin(), kept.end());
  return pass;
}

}  // namespace detail

/// Applies POI frequency -> record thresholds -> pair frequency, repeating
/// the sequence on the survivors until nothing changes.
inline FilterOutcome filter_checkins(std::vector<CheckIn> checkins, Index num_pois, Index num_regions,
                                     const FilterConfig& cfg) {
  FilterOutcome out;
  while (true) {
    ++out.passes;
    auto pass = detail::filter_once(checkins, num_pois, num_regions, cfg);
    if (pass.kept.size() == checkins.size()) {
      out.records = std::move(pass.records);
      out.survivors = std::move(checkins);
      return out;
    }
    std::vector<CheckIn> next;
    next.reserve(pass.kept.size());
    for (auto i : pass.kept) next.push_back(std::move(checkins[i]));
    checkins = std::move(next);
  }
}

/// Filters, normalizes, re-indexes surviving POIs, and splits users 80/10/10.
inline Dataset build_dataset(const RawCorpus& corpus, const RawKnowledgeGraph& kg, const FilterConfig& cfg,
                             std::uint64_t seed) {
  const auto num_pois = static_cast<Index>(corpus.poi_tokens.size());
  const auto num_regions = static_cast<Index>(corpus.region_tokens.size());
  FilterOutcome filtered = filter_checkins(corpus.checkins, num_pois, num_regions, cfg);
  if (filtered.records.empty()) throw DataError("empty dataset: every travel record was filtered out");

  Dataset ds;
  ds.filter = cfg;
  ds.seed = seed;
  ds.region_tokens = corpus.region_tokens;
  ds.relation_tokens = kg.relation_tokens;
  ds.entity_tokens = kg.entity_tokens;

  const auto& s = filtered.survivors;
  auto [tmin, tmax] = std::minmax_element(s.begin(), s.end(), [](auto& a, auto& b) { return a.time < b.time; });
  auto [amin, amax] = std::minmax_element(s.begin(), s.end(), [](auto& a, auto& b) { return a.lat < b.lat; });
  auto [omin, omax] = std::minmax_element(s.begin(), s.end(), [](auto& a, auto& b) { return a.lon < b.lon; });
  ds.norm = Normalization{tmin->time, tmax->time, amin->lat, amax->lat, omin->lon, omax->lon};

  // Compact POI indices in original index order; raw coordinates come from
  // the earliest surviving check-in of each POI.
  std::vector<Index> remap(static_cast<std::size_t>(num_pois), -1);
  std::vector<const CheckIn*> first(static_cast<std::size_t>(num_pois), nullptr);
  for (const auto& c : s) {
    auto& f = first[static_cast<std::size_t>(c.poi)];
    if (f == nullptr || std::tie(c.time, c.user_id) < std::tie(f->time, f->user_id)) f = &c;
  }
  for (Index p = 0; p < num_pois; ++p) {
    const CheckIn* f = first[static_cast<std::size_t>(p)];
    if (f == nullptr) continue;
    remap[static_cast<std::size_t>(p)] = static_cast<Index>(ds.pois.size());
    ds.pois.push_back(PoiInfo{corpus.poi_tokens[static_cast<std::size_t>(p)],
                              corpus.poi_region[static_cast<std::size_t>(p)], f->lat, f->lon});
  }
  ds.region_pois.assign(static_cast<std::size_t>(num_regions), {});
  for (Index p = 0; p < ds.num_pois(); ++p) ds.region_pois[static_cast<std::size_t>(ds.pois[static_cast<std::size_t>(p)].region)].push_back(p);

  std::set<KGTriple> triples;
  for (const auto& t : kg.triples) {
    const Index head = remap[static_cast<std::size_t>(t.head_poi)];
    if (head >= 0) triples.insert(KGTriple{head, t.relation, t.tail_entity});
  }
  ds.kg.assign(triples.begin(), triples.end());

  auto normalize = [&](CheckIn c) {
    c.time = ds.norm.time(c.time);
    c.lat = ds.norm.lat(c.lat);
    c.lon = ds.norm.lon(c.lon);
    c.poi = remap[static_cast<std::size_t>(c.poi)];
    return c;
  };
  std::map<std::string, std::vector<TravelRecord>> by_user;
  for (auto& r : filtered.records) {
    for (auto& c : r.hometown) c = normalize(c);
    for (auto& c : r.outoftown) c = normalize(c);
    by_user[r.user_id].push_back(std::move(r));
  }

  std::vector<std::string> users;
  for (const auto& [u, _] : by_user) users.push_back(u);
  Rng rng(seed);
  std::shuffle(users.begin(), users.end(), rng);
  const auto n = static_cast<double>(users.size());
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * n));
  const auto n_valid = std::min(users.size() - n_train, static_cast<std::size_t>(std::llround(0.1 * n)));
  for (std::size_t i = 0; i < users.size(); ++i) {
    auto& dest = i < n_train ? ds.train : (i < n_train + n_valid ? ds.valid : ds.test);
    for (auto& r : by_user[users[i]]) dest.push_back(std::move(r));
  }
  return ds;
}

// ---- persistence ----------------------------------------------------------

inline nlohmann::json record_to_json(const TravelRecord& r) {
  auto seq = [](const std::vector<CheckIn>& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs) arr.push_back({c.time, c.lat, c.lon, c.poi});
    return arr;
  };
  return {{"user", r.user_id},
          {"hometown_region", r.hometown_region},
          {"outoftown_region", r.outoftown_region},
          {"hometown", seq(r.hometown)},
          {"outoftown", seq(r.outoftown)}};
}

inline TravelRecord record_from_json(const nlohmann::json& j) {
  TravelRecord r;
  r.user_id = j.at("user").get<std::string>();
  r.hometown_region = j.at("hometown_region").get<Index>();
  r.outoftown_region = j.at("outoftown_region").get<Index>();
  auto seq = [&](const nlohmann::json& arr, Index region) {
    std::vector<CheckIn> out;
    for (const auto& e : arr) {
      CheckIn c;
      c.user_id = r.user_id;
      c.time = e.at(0).get<double>();
      c.lat = e.at(1).get<double>();
      c.lon = e.at(2).get<double>();
      c.poi = e.at(3).get<Index>();
      c.region = region;
      out.push_back(c);
    }
    return out;
  };
  r.hometown = seq(j.at("hometown"), r.hometown_region);
  r.outoftown = seq(j.at("outoftown"), r.outoftown_region);
  return r;
}

inline nlohmann::json filter_to_json(const FilterConfig& f) {
  return {{"min_poi_visits", f.min_poi_visits},         {"min_hometown", f.min_hometown},
          {"min_outoftown", f.min_outoftown},           {"min_pair_frequency", f.min_pair_frequency},
          {"min_duration_s", f.min_duration_s},         {"max_duration_s", f.max_duration_s}};
}

inline FilterConfig filter_from_json(const nlohmann::json& j) {
  FilterConfig f;
  f.min_poi_visits = j.value("min_poi_visits", f.min_poi_visits);
  f.min_hometown = j.value("min_hometown", f.min_hometown);
  f.min_outoftown = j.value("min_outoftown", f.min_outoftown);
  f.min_pair_frequency = j.value("min_pair_frequency", f.min_pair_frequency);
  f.min_duration_s = j.value("min_duration_s", f.min_duration_s);
  f.max_duration_s = j.value("max_duration_s", f.max_duration_s);
  return f;
}

/// Writes vocab.tsv, kg.tsv, {train,valid,test}.jsonl and meta.json.
/// Normalization constants are stored as hex floats so they reload bit-exactly.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "vocab.tsv");
    for (std::size_t i = 0; i < ds.pois.size(); ++i) {
      const auto& p = ds.pois[i];
      out << i << '\t' << p.token << '\t' << p.region << '\t' << ds.region_tokens[static_cast<std::size_t>(p.region)]
          << '\t' << detail::repr_double(p.raw_lat) << '\t' << detail::repr_double(p.raw_lon) << '\n';
    }
  }
  {
    std::ofstream out(dir / "kg.tsv");
    for (const auto& t : ds.kg) out << t.head_poi << '\t' << t.relation << '\t' << t.tail_entity << '\n';
  }
  auto write_split = [&](const char* name, const std::vector<TravelRecord>& recs) {
    std::ofstream out(dir / name);
    for (const auto& r : recs) out << record_to_json(r).dump() << '\n';
  };
  write_split("train.jsonl", ds.train);
  write_split("valid.jsonl", ds.valid);
  write_split("test.jsonl", ds.test);

  const auto& n = ds.norm;
  nlohmann::json meta = {
      {"normalization",
       {{"time_min", detail::hex_double(n.time_min)}, {"time_max", detail::hex_double(n.time_max)},
        {"lat_min", detail::hex_double(n.lat_min)},   {"lat_max", detail::hex_double(n.lat_max)},
        {"lon_min", detail::hex_double(n.lon_min)},   {"lon_max", detail::hex_double(n.lon_max)}}},
      {"seed", ds.seed},
      {"filter", filter_to_json(ds.filter)},
      {"regions", ds.region_tokens},
      {"relations", ds.relation_tokens},
      {"entities", ds.entity_tokens}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw DataError("missing meta.json in " + dir.string());
  const auto meta = nlohmann::json::parse(meta_in);
  const auto& nj = meta.at("normalization");
  auto hx = [&](const char* k) { return detail::parse_hex_double(nj.at(k).get<std::string>()); };
  ds.norm = Normalization{hx("time_min"), hx("time_max"), hx("lat_min"), hx("lat_max"), hx("lon_min"), hx("lon_max")};
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.filter = filter_from_json(meta.at("filter"));
  ds.region_tokens = meta.at("regions").get<std::vector<std::string>>();
  ds.relation_tokens = meta.at("relations").get<std::vector<std::string>>();
  ds.entity_tokens = meta.at("entities").get<std::vector<std::string>>();

  std::ifstream vocab(dir / "vocab.tsv");
  if (!vocab) throw DataError("missing vocab.tsv in " + dir.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(vocab, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_tabs(detail::trim_cr(line));
    if (f.size() != 6) throw DataError("vocab.tsv line " + std::to_string(line_no) + ": expected 6 fields");
    if (detail::parse_int(f[0], line_no, "index") != static_cast<long long>(ds.pois.size())) {
      throw DataError("vocab.tsv line " + std::to_string(line_no) + ": indices must be dense and ordered");
    }
    ds.pois.push_back(PoiInfo{std::string(f[1]), static_cast<Index>(detail::parse_int(f[2], line_no, "region")),
                              detail::parse_double(f[4], line_no, "latitude"),
                              detail::parse_double(f[5], line_no, "longitude")});
  }
  ds.region_pois.assign(ds.region_tokens.size(), {});
  for (Index p = 0; p < ds.num_pois(); ++p) {
    const auto region = ds.pois[static_cast<std::size_t>(p)].region;
    if (region < 0 || region >= static_cast<Index>(ds.region_tokens.size())) throw DataError("vocab.tsv: region out of range");
    ds.region_pois[static_cast<std::size_t>(region)].push_back(p);
  }

  std::ifstream kg(dir / "kg.tsv");
  line_no = 0;
  while (std::getline(kg, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_tabs(detail::trim_cr(line));
    if (f.size() != 3) throw DataError("kg.tsv line " + std::to_string(line_no) + ": expected 3 fields");
    ds.kg.push_back(KGTriple{static_cast<Index>(detail::parse_int(f[0], line_no, "head")),
                             static_cast<Index>(detail::parse_int(f[1], line_no, "relation")),
                             static_cast<Index>(detail::parse_int(f[2], line_no, "tail"))});
  }

  auto read_split = [&](const char* name, std::vector<TravelRecord>& dest) {
    std::ifstream in(dir / name);
    if (!in) throw DataError(std::string("missing ") + name + " in " + dir.string());
    std::string l;
    while (std::getline(in, l)) {
      if (!l.empty()) dest.push_back(record_from_json(nlohmann::json::parse(l)));
    }
  };
  read_split("train.jsonl", ds.train);
  read_split("valid.jsonl", ds.valid);
  read_split("test.jsonl", ds.test);
  return ds;
}

/// Neighbor lists (entity, relation) per POI, in triple order.
inline std::vector<std::vector<std::pair<Index, Index>>> kg_neighbors(const Dataset& ds) {
  std::vector<std::vector<std::pair<Index, Index>>> out(ds.pois.size());
  for (const auto& t : ds.kg) out[static_cast<std::size_t>(t.head_poi)].emplace_back(t.tail_entity, t.relation);
  return out;
}

}  // namespace spottrip
