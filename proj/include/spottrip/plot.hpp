#pragma once

// Case-study map plots: trips drawn as lat/lon polylines in a plain SVG file,
// origin as a circle, destination as a square.

#include "spottrip/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace spottrip {

struct PlotTrip {
  std::string label;
  std::string color;
  metrics::Trip pois;
};

namespace detail {

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

inline std::string render_trip_svg(const Dataset& ds, const std::vector<PlotTrip>& trips, const std::string& title = "") {
  constexpr double kWidth = 640, kHeight = 480, kMargin = 40, kLegend = 18;
  double lat_lo = INFINITY, lat_hi = -INFINITY, lon_lo = INFINITY, lon_hi = -INFINITY;
  for (const auto& t : trips) {
    for (Index v : t.pois) {
      if (v < 0 || v >= static_cast<Index>(ds.pois.size())) throw DataError("plot: POI id " + std::to_string(v) + " is unknown");
      const auto& p = ds.pois[static_cast<std::size_t>(v)];
      if (!std::isfinite(p.raw_lat) || !std::isfinite(p.raw_lon)) {
        throw DataError("plot: POI " + p.token + " has no coordinates");
      }
      lat_lo = std::min(lat_lo, p.raw_lat);
      lat_hi = std::max(lat_hi, p.raw_lat);
      lon_lo = std::min(lon_lo, p.raw_lon);
      lon_hi = std::max(lon_hi, p.raw_lon);
    }
  }
  if (!std::isfinite(lat_lo)) throw std::invalid_argument("plot: nothing to draw");
  const double span = std::max({lat_hi - lat_lo, lon_hi - lon_lo, 1e-9});
  const double scale = std::min(kWidth, kHeight - kLegend * static_cast<double>(trips.size())) - 2 * kMargin;
  auto x = [&](Index v) { return kMargin + (ds.pois[static_cast<std::size_t>(v)].raw_lon - lon_lo) / span * scale; };
  auto y = [&](Index v) { return kMargin + (lat_hi - ds.pois[static_cast<std::size_t>(v)].raw_lat) / span * scale; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt_num(kWidth) + "\" height=\"" +
                    detail::fmt_num(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) svg += "<text x=\"10\" y=\"20\" font-size=\"14\">" + title + "</text>\n";
  for (std::size_t k = 0; k < trips.size(); ++k) {
    const auto& t = trips[k];
    if (t.pois.empty()) continue;
    svg += "<g class=\"trip\" stroke=\"" + t.color + "\" fill=\"" + t.color + "\">\n";
    for (std::size_t n = 1; n < t.pois.size(); ++n) {
      svg += "<line class=\"edge\" x1=\"" + detail::fmt_num(x(t.pois[n - 1])) + "\" y1=\"" + detail::fmt_num(y(t.pois[n - 1])) +
             "\" x2=\"" + detail::fmt_num(x(t.pois[n])) + "\" y2=\"" + detail::fmt_num(y(t.pois[n])) + "\" stroke-width=\"2\"/>\n";
    }
    svg += "<circle class=\"marker\" cx=\"" + detail::fmt_num(x(t.pois.front())) + "\" cy=\"" + detail::fmt_num(y(t.pois.front())) +
           "\" r=\"5\"/>\n";
    svg += "<rect class=\"marker\" x=\"" + detail::fmt_num(x(t.pois.back()) - 5) + "\" y=\"" + detail::fmt_num(y(t.pois.back()) - 5) +
           "\" width=\"10\" height=\"10\"/>\n";
    svg += "</g>\n";
    const double ly = kHeight - kLegend * static_cast<double>(trips.size() - k);
    std::string ids;
    for (Index v : t.pois) ids += (ids.empty() ? "" : " ") + ds.pois[static_cast<std::size_t>(v)].token;
    svg += "<text x=\"10\" y=\"" + detail::fmt_num(ly) + "\" font-size=\"12\" fill=\"" + t.color + "\">" + t.label + ": " + ids +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Ground truth next to the full-query, origin-only and destination-only
/// recommendations for one record.
inline std::vector<PlotTrip> case_trips(const SpotTrip& model, const TravelRecord& r, double p, std::uint64_t seed) {
  const auto truth = r.trip();
  const fusion::Query q{truth.front(), truth.back(), static_cast<Index>(truth.size())};
  std::vector<PlotTrip> out{{"truth", "black", truth}};
  const std::pair<const char*, fusion::QueryMode> modes[] = {{"full query", fusion::QueryMode::kFull},
                                                             {"origin only", fusion::QueryMode::kOriginOnly},
                                                             {"destination only", fusion::QueryMode::kDestinationOnly}};
  const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c"};
  for (std::size_t k = 0; k < 3; ++k) {
    Rng rng(seed);
    out.push_back({modes[k].first, colors[k], model.recommend(r.hometown, r.outoftown_region, q, p, rng, modes[k].second)});
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace spottrip
