#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/geo.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/road_graph.hpp"

namespace roadgnn {

// Raw feature layout per line-graph node:
//   [0]                length (m)
//   [1..2]             midpoint lon/lat (mean of the two endpoint nodes)
//   [3..2+2k]          k resampled geometry points minus midpoint,
//                      interleaved (dlon_0, dlat_0, dlon_1, dlat_1, ...)
//   [3+2k..]           one-hot speed limit over speed_vocab (all zero when
//                      the value is absent or out of vocabulary)
struct FeatureSpec {
  std::vector<int> speed_vocab;  // sorted ascending, built from training data
  int geometry_points = 20;
  bool zscore = false;
  std::vector<double> mean, stddev;  // populated only when zscore is set

  int total_dim() const {
    return 1 + 2 + 2 * geometry_points + static_cast<int>(speed_vocab.size());
  }

  std::optional<int> speed_index(int speed) const {
    auto it = std::lower_bound(speed_vocab.begin(), speed_vocab.end(), speed);
    if (it != speed_vocab.end() && *it == speed)
      return static_cast<int>(it - speed_vocab.begin());
    return std::nullopt;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"schema", 1},
                        {"speed_vocab", speed_vocab},
                        {"geometry_points", geometry_points},
                        {"zscore", zscore}};
    if (zscore) {
      j["mean"] = mean;
      j["stddev"] = stddev;
    }
    return j;
  }

  static FeatureSpec from_json(const nlohmann::json& j) {
    FeatureSpec s;
    s.speed_vocab = j.at("speed_vocab").get<std::vector<int>>();
    s.geometry_points = j.at("geometry_points").get<int>();
    s.zscore = j.value("zscore", false);
    if (s.zscore) {
      s.mean = j.at("mean").get<std::vector<double>>();
      s.stddev = j.at("stddev").get<std::vector<double>>();
    }
    return s;
  }
};

inline void save_feature_spec(const FeatureSpec& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write feature spec: " + path);
  out << s.to_json().dump(1) << "\n";
}

inline FeatureSpec load_feature_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open feature spec: " + path);
  nlohmann::json j;
  in >> j;
  return FeatureSpec::from_json(j);
}

inline FeatureSpec make_feature_spec(const std::vector<int>& training_speeds,
                                     int geometry_points = 20) {
  FeatureSpec s;
  std::set<int> uniq(training_speeds.begin(), training_speeds.end());
  s.speed_vocab.assign(uniq.begin(), uniq.end());
  s.geometry_points = geometry_points;
  return s;
}

// k points at arc-length fractions i/(k-1) along the polyline, linear
// interpolation between vertices. A zero-length polyline repeats its single
// location k times.
inline std::vector<LonLat> resample_geometry(const std::vector<LonLat>& poly, int k) {
  if (poly.size() < 2) throw invariant_error("resample_geometry: polyline needs >= 2 points");
  if (k < 2) throw invariant_error("resample_geometry: k must be >= 2");
  std::vector<double> cum(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const double dx = poly[i][0] - poly[i - 1][0];
    const double dy = poly[i][1] - poly[i - 1][1];
    cum[i] = cum[i - 1] + std::sqrt(dx * dx + dy * dy);
  }
  const double total = cum.back();
  std::vector<LonLat> out(static_cast<std::size_t>(k));
  if (total <= 0.0) {
    for (int i = 0; i < k; ++i) out[i] = poly.front();
    return out;
  }
  std::size_t seg = 1;
  for (int i = 0; i < k; ++i) {
    const double target = total * static_cast<double>(i) / static_cast<double>(k - 1);
    while (seg + 1 < poly.size() && cum[seg] < target) ++seg;
    const double seg_len = cum[seg] - cum[seg - 1];
    const double t = seg_len > 0.0 ? (target - cum[seg - 1]) / seg_len : 0.0;
    const double tc = std::clamp(t, 0.0, 1.0);
    out[i] = {poly[seg - 1][0] + tc * (poly[seg][0] - poly[seg - 1][0]),
              poly[seg - 1][1] + tc * (poly[seg][1] - poly[seg - 1][1])};
  }
  out.front() = poly.front();
  out.back() = poly.back();
  return out;
}

// Fills lg.features from the primal edge attributes. Deterministic; feature
// dimension equals spec.total_dim() for every node.
inline LineGraph featurize(const LineGraph& lg, const RoadGraph& g, const FeatureSpec& spec) {
  std::unordered_map<EdgeId, std::size_t> edge_ix;
  for (std::size_t i = 0; i < g.edges.size(); ++i) edge_ix[g.edges[i].id] = i;
  auto node_ix = g.node_index();

  LineGraph out = lg;
  out.features.assign(lg.size(), std::vector<double>());
  for (std::size_t r = 0; r < lg.size(); ++r) {
    auto it = edge_ix.find(lg.nodes[r].source_edge);
    if (it == edge_ix.end())
      throw invariant_error("featurize: line-graph node references unknown edge " +
                            std::to_string(lg.nodes[r].source_edge));
    const RoadEdge& e = g.edges[it->second];
    const RoadNode& a = g.nodes[node_ix.at(e.u)];
    const RoadNode& b = g.nodes[node_ix.at(e.v)];
    const double mid_lon = 0.5 * (a.lon + b.lon);
    const double mid_lat = 0.5 * (a.lat + b.lat);

    std::vector<double>& f = out.features[r];
    f.reserve(spec.total_dim());
    f.push_back(e.length);
    f.push_back(mid_lon);
    f.push_back(mid_lat);
    const auto pts = resample_geometry(e.geometry, spec.geometry_points);
    for (const auto& p : pts) {
      f.push_back(p[0] - mid_lon);
      f.push_back(p[1] - mid_lat);
    }
    std::vector<double> onehot(spec.speed_vocab.size(), 0.0);
    if (e.maxspeed) {
      if (auto ix = spec.speed_index(*e.maxspeed)) onehot[static_cast<std::size_t>(*ix)] = 1.0;
    }
    f.insert(f.end(), onehot.begin(), onehot.end());
  }
  if (spec.zscore && !spec.mean.empty()) {
    for (auto& row : out.features)
      for (std::size_t d = 0; d < row.size(); ++d)
        row[d] = (row[d] - spec.mean[d]) / spec.stddev[d];
  }
  return out;
}

// Per-dimension training-split statistics for the optional z-score flag
// (off by default).
inline void fit_zscore(FeatureSpec& spec, const LineGraph& featurized,
                       const std::vector<LNodeId>& train_ids) {
  const int dim = spec.total_dim();
  spec.mean.assign(dim, 0.0);
  spec.stddev.assign(dim, 1.0);
  if (train_ids.empty()) return;
  for (LNodeId v : train_ids)
    for (int d = 0; d < dim; ++d) spec.mean[d] += featurized.features[v][d];
  for (int d = 0; d < dim; ++d) spec.mean[d] /= static_cast<double>(train_ids.size());
  std::vector<double> var(dim, 0.0);
  for (LNodeId v : train_ids)
    for (int d = 0; d < dim; ++d) {
      const double x = featurized.features[v][d] - spec.mean[d];
      var[d] += x * x;
    }
  for (int d = 0; d < dim; ++d)
    spec.stddev[d] = std::max(1e-12, std::sqrt(var[d] / static_cast<double>(train_ids.size())));
  spec.zscore = true;
}

// ---------------------------------------------------------------------------
// Ground-truth label mapping: five merged road-type classes. Matching is
// case-insensitive and treats '_' and '-' alike; unknown labels stay absent
// and are excluded from the supervised loss.

struct LabelMap {
  std::unordered_map<std::string, int> table;

  static std::string normalize(const std::string& raw) {
    std::string s;
    s.reserve(raw.size());
    for (char c : raw) {
      if (c == '_') c = '-';
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return s;
  }

  static LabelMap standard() {
    LabelMap lm;
    auto add = [&lm](std::initializer_list<const char*> names, int cls) {
      for (const char* n : names) lm.table[n] = cls;
    };
    add({"highway", "yes", "primary", "secondary", "motorway-link", "trunk-link",
         "primary-link", "secondary-link"}, 0);
    add({"tertiary", "tertiary-link"}, 1);
    add({"road", "planned", "unclassified"}, 2);
    add({"residential"}, 3);
    add({"living-street"}, 4);
    return lm;
  }

  static LabelMap from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open label map: " + path);
    nlohmann::json j;
    in >> j;
    LabelMap lm;
    for (auto it = j.begin(); it != j.end(); ++it) lm.table[normalize(it.key())] = it.value().get<int>();
    return lm;
  }

  std::optional<int> classify(const std::string& raw) const {
    if (raw.empty()) return std::nullopt;
    auto it = table.find(normalize(raw));
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
};

inline LineGraph map_labels(const LineGraph& lg, const LabelMap& lm) {
  LineGraph out = lg;
  out.labels.assign(lg.size(), std::nullopt);
  for (std::size_t r = 0; r < lg.size(); ++r)
    out.labels[r] = lm.classify(lg.raw_labels[r]);
  return out;
}

inline std::array<std::int64_t, 5> class_histogram(const LineGraph& lg) {
  std::array<std::int64_t, 5> counts{0, 0, 0, 0, 0};
  for (const auto& l : lg.labels)
    if (l && *l >= 0 && *l < 5) counts[static_cast<std::size_t>(*l)] += 1;
  return counts;
}

}  // namespace roadgnn
