#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/geo.hpp"

namespace roadgnn {

using NodeId = std::int64_t;
using EdgeId = std::int64_t;

struct RoadNode {
  NodeId id = 0;
  double lon = 0.0;
  double lat = 0.0;
};

struct RoadEdge {
  EdgeId id = 0;
  NodeId u = 0;  // endpoint_a
  NodeId v = 0;  // endpoint_b
  double length = 0.0;                  // meters
  std::vector<LonLat> geometry;         // polyline, runs from u to v
  std::optional<int> maxspeed;          // km/h
  std::optional<std::string> highway;   // raw road-type label
};

// Primal road graph: intersections as nodes, road segments as edges.
// Values are immutable after construction; all transformations below return
// fresh graphs.
struct RoadGraph {
  std::vector<RoadNode> nodes;
  std::vector<RoadEdge> edges;

  std::unordered_map<NodeId, std::size_t> node_index() const {
    std::unordered_map<NodeId, std::size_t> ix;
    ix.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) ix[nodes[i].id] = i;
    return ix;
  }

  std::unordered_map<NodeId, int> degrees() const {
    std::unordered_map<NodeId, int> d;
    for (const auto& n : nodes) d[n.id] = 0;
    for (const auto& e : edges) {
      d[e.u] += 1;
      d[e.v] += 1;
    }
    return d;
  }
};

enum class GraphFormat { GraphJson, GraphMl };

namespace detail {

inline std::string fmt_id(EdgeId id) { return std::to_string(id); }

inline std::pair<NodeId, NodeId> unordered_pair(NodeId a, NodeId b) {
  return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

}  // namespace detail

// Collects every invariant violation instead of stopping at the first.
// `preprocessed` additionally checks the post-preprocessing invariants
// (simple graph, geometry endpoints coinciding with node coordinates).
inline std::vector<std::string> validate(const RoadGraph& g, bool preprocessed = false) {
  std::vector<std::string> out;
  std::unordered_map<NodeId, std::size_t> seen_nodes;
  for (const auto& n : g.nodes) {
    if (seen_nodes.count(n.id)) out.push_back("duplicate node id " + std::to_string(n.id));
    seen_nodes[n.id] = 1;
  }
  std::unordered_map<EdgeId, int> seen_edges;
  std::map<std::pair<NodeId, NodeId>, int> pair_count;
  for (const auto& e : g.edges) {
    if (seen_edges.count(e.id)) out.push_back("duplicate edge id " + detail::fmt_id(e.id));
    seen_edges[e.id] = 1;
    if (!seen_nodes.count(e.u))
      out.push_back("edge " + detail::fmt_id(e.id) + " references missing node " + std::to_string(e.u));
    if (!seen_nodes.count(e.v))
      out.push_back("edge " + detail::fmt_id(e.id) + " references missing node " + std::to_string(e.v));
    if (!(e.length > 0.0))
      out.push_back("edge " + detail::fmt_id(e.id) + " has non-positive length");
    if (e.geometry.size() < 2)
      out.push_back("edge " + detail::fmt_id(e.id) + " has fewer than 2 geometry points");
    pair_count[detail::unordered_pair(e.u, e.v)] += 1;
  }
  if (preprocessed) {
    for (const auto& [p, c] : pair_count) {
      if (c > 1)
        out.push_back("parallel edges between " + std::to_string(p.first) + " and " +
                      std::to_string(p.second));
    }
    auto ix = g.node_index();
    for (const auto& e : g.edges) {
      auto iu = ix.find(e.u);
      auto iv = ix.find(e.v);
      if (iu == ix.end() || iv == ix.end() || e.geometry.size() < 2) continue;
      const RoadNode& a = g.nodes[iu->second];
      const RoadNode& b = g.nodes[iv->second];
      const LonLat& first = e.geometry.front();
      const LonLat& last = e.geometry.back();
      if (std::abs(first[0] - a.lon) > 1e-9 || std::abs(first[1] - a.lat) > 1e-9 ||
          std::abs(last[0] - b.lon) > 1e-9 || std::abs(last[1] - b.lat) > 1e-9) {
        out.push_back("edge " + detail::fmt_id(e.id) + " geometry does not start/end at endpoints");
      }
    }
  }
  return out;
}

inline void throw_on_violations(const std::vector<std::string>& violations) {
  if (violations.empty()) return;
  std::string msg = "graph invariant violations:";
  for (const auto& v : violations) msg += "\n  - " + v;
  throw invariant_error(msg);
}

// ---------------------------------------------------------------------------
// graph-json

inline nlohmann::json road_graph_to_json(const RoadGraph& g) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    j["nodes"].push_back({{"id", n.id}, {"lon", n.lon}, {"lat", n.lat}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) {
    nlohmann::json je = {{"id", e.id}, {"u", e.u}, {"v", e.v}, {"length", e.length}};
    nlohmann::json geom = nlohmann::json::array();
    for (const auto& p : e.geometry) geom.push_back({p[0], p[1]});
    je["geometry"] = geom;
    if (e.maxspeed) je["maxspeed"] = *e.maxspeed;
    if (e.highway) je["highway"] = *e.highway;
    j["edges"].push_back(je);
  }
  return j;
}

inline RoadGraph road_graph_from_json(const nlohmann::json& j) {
  RoadGraph g;
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
    throw parse_error("graph-json: top level must contain \"nodes\" and \"edges\"");
  for (const auto& jn : j.at("nodes")) {
    RoadNode n;
    n.id = jn.at("id").get<NodeId>();
    n.lon = jn.at("lon").get<double>();
    n.lat = jn.at("lat").get<double>();
    g.nodes.push_back(n);
  }
  std::unordered_map<NodeId, std::size_t> ix;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) ix[g.nodes[i].id] = i;
  for (const auto& je : j.at("edges")) {
    RoadEdge e;
    e.id = je.at("id").get<EdgeId>();
    e.u = je.at("u").get<NodeId>();
    e.v = je.at("v").get<NodeId>();
    e.length = je.at("length").get<double>();
    if (je.contains("geometry") && !je.at("geometry").is_null()) {
      for (const auto& jp : je.at("geometry"))
        e.geometry.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
    }
    if (e.geometry.empty()) {
      // Default straight segment between endpoint coordinates.
      auto iu = ix.find(e.u);
      auto iv = ix.find(e.v);
      if (iu != ix.end() && iv != ix.end()) {
        e.geometry = {{g.nodes[iu->second].lon, g.nodes[iu->second].lat},
                      {g.nodes[iv->second].lon, g.nodes[iv->second].lat}};
      }
    }
    if (je.contains("maxspeed") && !je.at("maxspeed").is_null()) {
      if (je.at("maxspeed").is_string()) {
        try {
          e.maxspeed = std::stoi(je.at("maxspeed").get<std::string>());
        } catch (...) {
        }
      } else {
        e.maxspeed = je.at("maxspeed").get<int>();
      }
    }
    if (je.contains("highway") && !je.at("highway").is_null())
      e.highway = je.at("highway").get<std::string>();
    g.edges.push_back(e);
  }
  return g;
}

// ---------------------------------------------------------------------------
// GraphML import (subset: node/edge <data> attributes, WKT LINESTRING
// geometry). Node coordinates are read from attr.name lon/lat or x/y.

namespace graphml {

inline std::string xml_unescape(std::string s) {
  auto rep = [&s](const std::string& from, const std::string& to) {
    std::size_t p = 0;
    while ((p = s.find(from, p)) != std::string::npos) {
      s.replace(p, from.size(), to);
      p += to.size();
    }
  };
  rep("&lt;", "<");
  rep("&gt;", ">");
  rep("&quot;", "\"");
  rep("&apos;", "'");
  rep("&amp;", "&");
  return s;
}

inline std::optional<std::string> attr(const std::string& tag, const std::string& name) {
  const std::string pat = name + "=\"";
  auto p = tag.find(pat);
  if (p == std::string::npos) return std::nullopt;
  p += pat.size();
  auto q = tag.find('"', p);
  if (q == std::string::npos) return std::nullopt;
  return xml_unescape(tag.substr(p, q - p));
}

struct Element {
  std::string open_tag;
  std::string body;
};

// Scans for <name ...>...</name> and self-closing <name .../> elements.
inline std::vector<Element> elements(const std::string& text, const std::string& name) {
  std::vector<Element> out;
  std::size_t pos = 0;
  const std::string open = "<" + name;
  const std::string close = "</" + name + ">";
  while ((pos = text.find(open, pos)) != std::string::npos) {
    const char after = pos + open.size() < text.size() ? text[pos + open.size()] : '\0';
    if (after != ' ' && after != '>' && after != '\t' && after != '\n' && after != '/') {
      pos += open.size();
      continue;
    }
    auto tag_end = text.find('>', pos);
    if (tag_end == std::string::npos) break;
    Element el;
    el.open_tag = text.substr(pos, tag_end - pos + 1);
    if (text[tag_end - 1] == '/') {
      pos = tag_end + 1;
    } else {
      auto body_end = text.find(close, tag_end);
      if (body_end == std::string::npos) break;
      el.body = text.substr(tag_end + 1, body_end - tag_end - 1);
      pos = body_end + close.size();
    }
    out.push_back(std::move(el));
  }
  return out;
}

inline std::unordered_map<std::string, std::string> data_values(
    const std::string& body, const std::unordered_map<std::string, std::string>& key_names) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& d : elements(body, "data")) {
    auto key = attr(d.open_tag, "key");
    if (!key) continue;
    auto it = key_names.find(*key);
    const std::string name = it != key_names.end() ? it->second : *key;
    out[name] = xml_unescape(d.body);
  }
  return out;
}

inline std::vector<LonLat> parse_wkt_linestring(const std::string& s) {
  std::vector<LonLat> pts;
  auto p = s.find('(');
  auto q = s.rfind(')');
  if (p == std::string::npos || q == std::string::npos || q <= p) return pts;
  std::string inner = s.substr(p + 1, q - p - 1);
  std::stringstream ss(inner);
  std::string pair;
  while (std::getline(ss, pair, ',')) {
    std::stringstream ps(pair);
    double x, y;
    if (ps >> x >> y) pts.push_back({x, y});
  }
  return pts;
}

inline RoadGraph parse(const std::string& text) {
  // key id -> attr.name, per declared <key> elements.
  std::unordered_map<std::string, std::string> key_names;
  for (const auto& k : elements(text, "key")) {
    auto id = attr(k.open_tag, "id");
    auto nm = attr(k.open_tag, "attr.name");
    if (id && nm) key_names[*id] = *nm;
  }

  RoadGraph g;
  std::unordered_map<std::string, NodeId> node_ids;
  auto intern = [&node_ids](const std::string& raw) {
    auto it = node_ids.find(raw);
    if (it != node_ids.end()) return it->second;
    NodeId id;
    try {
      std::size_t used = 0;
      id = std::stoll(raw, &used);
      if (used != raw.size()) id = static_cast<NodeId>(node_ids.size());
    } catch (...) {
      id = static_cast<NodeId>(node_ids.size());
    }
    node_ids[raw] = id;
    return id;
  };

  for (const auto& n : elements(text, "node")) {
    auto raw = attr(n.open_tag, "id");
    if (!raw) throw parse_error("graphml: node without id");
    RoadNode node;
    node.id = intern(*raw);
    auto vals = data_values(n.body, key_names);
    auto get = [&vals](const char* a, const char* b) -> std::optional<double> {
      for (const char* k : {a, b}) {
        auto it = vals.find(k);
        if (it != vals.end()) {
          try {
            return std::stod(it->second);
          } catch (...) {
          }
        }
      }
      return std::nullopt;
    };
    auto lon = get("lon", "x");
    auto lat = get("lat", "y");
    if (!lon || !lat)
      throw parse_error("graphml: node " + *raw + " missing lon/x or lat/y coordinate");
    node.lon = *lon;
    node.lat = *lat;
    g.nodes.push_back(node);
  }

  std::unordered_map<NodeId, std::size_t> ix;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) ix[g.nodes[i].id] = i;

  EdgeId next_edge_id = 0;
  for (const auto& el : elements(text, "edge")) {
    auto src = attr(el.open_tag, "source");
    auto dst = attr(el.open_tag, "target");
    if (!src || !dst) throw parse_error("graphml: edge without source/target");
    RoadEdge e;
    e.id = next_edge_id++;
    e.u = intern(*src);
    e.v = intern(*dst);
    auto vals = data_values(el.body, key_names);
    if (auto it = vals.find("length"); it != vals.end()) {
      try {
        e.length = std::stod(it->second);
      } catch (...) {
      }
    }
    if (auto it = vals.find("maxspeed"); it != vals.end()) {
      try {
        e.maxspeed = static_cast<int>(std::stod(it->second));
      } catch (...) {
      }
    }
    if (auto it = vals.find("highway"); it != vals.end() && !it->second.empty())
      e.highway = it->second;
    if (auto it = vals.find("geometry"); it != vals.end())
      e.geometry = parse_wkt_linestring(it->second);
    if (e.geometry.empty()) {
      auto iu = ix.find(e.u);
      auto iv = ix.find(e.v);
      if (iu != ix.end() && iv != ix.end())
        e.geometry = {{g.nodes[iu->second].lon, g.nodes[iu->second].lat},
                      {g.nodes[iv->second].lon, g.nodes[iv->second].lat}};
    }
    g.edges.push_back(e);
  }
  return g;
}

}  // namespace graphml

inline RoadGraph load_graph(const std::string& path, GraphFormat format = GraphFormat::GraphJson) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open graph file: " + path);
  RoadGraph g;
  if (format == GraphFormat::GraphJson) {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& ex) {
      throw parse_error("malformed graph-json in " + path + ": " + ex.what());
    }
    g = road_graph_from_json(j);
  } else {
    std::stringstream ss;
    ss << in.rdbuf();
    g = graphml::parse(ss.str());
  }
  throw_on_violations(validate(g, /*preprocessed=*/false));
  return g;
}

inline void save_graph(const RoadGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write graph file: " + path);
  out << road_graph_to_json(g).dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// Preprocessing

// Removes direction and consolidates parallel edges per unordered endpoint
// pair. The shortest member keeps its attributes (ties go to the smaller
// edge id). Idempotent.
inline RoadGraph undirect_and_merge_parallel(const RoadGraph& g) {
  std::map<std::pair<NodeId, NodeId>, std::size_t> keep;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto key = detail::unordered_pair(g.edges[i].u, g.edges[i].v);
    auto it = keep.find(key);
    if (it == keep.end()) {
      keep[key] = i;
      continue;
    }
    const RoadEdge& cur = g.edges[it->second];
    const RoadEdge& cand = g.edges[i];
    if (cand.length < cur.length || (cand.length == cur.length && cand.id < cur.id))
      it->second = i;
  }
  RoadGraph out;
  out.nodes = g.nodes;
  out.edges.reserve(keep.size());
  for (const auto& [key, idx] : keep) out.edges.push_back(g.edges[idx]);
  std::sort(out.edges.begin(), out.edges.end(),
            [](const RoadEdge& a, const RoadEdge& b) { return a.id < b.id; });
  return out;
}

// Merges nodes lying within `radius_m` of each other (haversine, transitive
// closure) onto the group centroid; reattaches incident edges and drops the
// self-loops this produces. Never merges parallel edges.
inline RoadGraph consolidate_intersections(const RoadGraph& g, double radius_m) {
  if (!(radius_m > 0.0)) throw config_error("consolidation radius must be > 0");
  const std::size_t n = g.nodes.size();
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  // Latitude-banded sweep: only node pairs within radius_m in latitude can
  // be within radius_m overall.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&g](std::size_t a, std::size_t b) {
    return g.nodes[a].lat < g.nodes[b].lat;
  });
  const double lat_band = radius_m / 111194.9 + 1e-12;  // meters per degree latitude
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const RoadNode& na = g.nodes[order[a]];
      const RoadNode& nb = g.nodes[order[b]];
      if (nb.lat - na.lat > lat_band) break;
      if (haversine_m(na.lon, na.lat, nb.lon, nb.lat) <= radius_m) unite(order[a], order[b]);
    }
  }

  // Group -> centroid node keeping the smallest member id.
  std::unordered_map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
  RoadGraph out;
  std::unordered_map<NodeId, NodeId> remap;
  std::vector<std::size_t> roots;
  roots.reserve(groups.size());
  for (const auto& [root, members] : groups) roots.push_back(root);
  std::sort(roots.begin(), roots.end());
  std::unordered_map<NodeId, LonLat> new_coord;
  for (std::size_t root : roots) {
    const auto& members = groups[root];
    double lon = 0.0, lat = 0.0;
    NodeId min_id = g.nodes[members.front()].id;
    for (std::size_t m : members) {
      lon += g.nodes[m].lon;
      lat += g.nodes[m].lat;
      min_id = std::min(min_id, g.nodes[m].id);
    }
    lon /= static_cast<double>(members.size());
    lat /= static_cast<double>(members.size());
    out.nodes.push_back({min_id, lon, lat});
    new_coord[min_id] = {lon, lat};
    for (std::size_t m : members) remap[g.nodes[m].id] = min_id;
  }
  std::sort(out.nodes.begin(), out.nodes.end(),
            [](const RoadNode& a, const RoadNode& b) { return a.id < b.id; });

  for (const auto& e : g.edges) {
    RoadEdge ne = e;
    ne.u = remap.at(e.u);
    ne.v = remap.at(e.v);
    if (ne.u == ne.v) continue;  // collapsed segment
    if (ne.geometry.size() >= 2) {
      ne.geometry.front() = new_coord.at(ne.u);
      ne.geometry.back() = new_coord.at(ne.v);
    }
    out.edges.push_back(std::move(ne));
  }
  return out;
}

namespace detail {

inline std::vector<LonLat> join_geometry(const RoadEdge& e, NodeId from, const RoadEdge& f,
                                         NodeId mid) {
  auto oriented = [](const RoadEdge& edge, NodeId start) {
    std::vector<LonLat> geo = edge.geometry;
    if (edge.u != start) std::reverse(geo.begin(), geo.end());
    return geo;
  };
  std::vector<LonLat> a = oriented(e, from);
  std::vector<LonLat> b = oriented(f, mid);
  if (!b.empty()) a.insert(a.end(), b.begin() + 1, b.end());
  return a;
}

}  // namespace detail

// Removes degree-2 nodes whose two incident edges carry the same raw
// road-type label, concatenating the edges (lengths summed, geometries
// joined). Repeats to a fixed point. Reductions that would create a
// parallel edge or a self-loop are skipped so the graph stays simple.
inline RoadGraph reduce_interstitial(const RoadGraph& g) {
  RoadGraph cur = g;
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<NodeId, std::vector<std::size_t>> incident;
    for (std::size_t i = 0; i < cur.edges.size(); ++i) {
      incident[cur.edges[i].u].push_back(i);
      if (cur.edges[i].v != cur.edges[i].u) incident[cur.edges[i].v].push_back(i);
    }
    std::set<std::pair<NodeId, NodeId>> pairs;
    for (const auto& e : cur.edges) pairs.insert(detail::unordered_pair(e.u, e.v));

    std::vector<NodeId> candidates;
    for (const auto& n : cur.nodes) {
      auto it = incident.find(n.id);
      if (it != incident.end() && it->second.size() == 2 && it->second[0] != it->second[1])
        candidates.push_back(n.id);
    }
    std::sort(candidates.begin(), candidates.end());

    std::vector<bool> edge_dead(cur.edges.size(), false);
    std::unordered_map<NodeId, bool> node_dead;
    std::vector<RoadEdge> new_edges;

    for (NodeId nid : candidates) {
      const auto& inc = incident[nid];
      std::size_t i1 = inc[0], i2 = inc[1];
      if (edge_dead[i1] || edge_dead[i2]) continue;
      const RoadEdge& e1 = cur.edges[i1];
      const RoadEdge& e2 = cur.edges[i2];
      if (e1.u == e1.v || e2.u == e2.v) continue;
      if (e1.highway != e2.highway) continue;
      const NodeId a = e1.u == nid ? e1.v : e1.u;
      const NodeId c = e2.u == nid ? e2.v : e2.u;
      if (a == c || a == nid || c == nid) continue;
      if (pairs.count(detail::unordered_pair(a, c))) continue;

      RoadEdge merged;
      // The longer member donates the secondary attributes.
      const RoadEdge& donor =
          e1.length > e2.length ? e1 : (e2.length > e1.length ? e2 : (e1.id < e2.id ? e1 : e2));
      merged.id = std::min(e1.id, e2.id);
      merged.u = a;
      merged.v = c;
      merged.length = e1.length + e2.length;
      merged.geometry = detail::join_geometry(e1, a, e2, nid);
      merged.maxspeed = donor.maxspeed;
      merged.highway = e1.highway;
      edge_dead[i1] = edge_dead[i2] = true;
      node_dead[nid] = true;
      pairs.insert(detail::unordered_pair(a, c));
      new_edges.push_back(std::move(merged));
      changed = true;
    }

    if (!changed) break;
    RoadGraph next;
    for (const auto& n : cur.nodes)
      if (!node_dead.count(n.id)) next.nodes.push_back(n);
    for (std::size_t i = 0; i < cur.edges.size(); ++i)
      if (!edge_dead[i]) next.edges.push_back(cur.edges[i]);
    next.edges.insert(next.edges.end(), new_edges.begin(), new_edges.end());
    std::sort(next.edges.begin(), next.edges.end(),
              [](const RoadEdge& a, const RoadEdge& b) { return a.id < b.id; });
    cur = std::move(next);
  }
  return cur;
}

}  // namespace roadgnn
