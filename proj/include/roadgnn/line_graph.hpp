#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/road_graph.hpp"

namespace roadgnn {

using LNodeId = std::uint32_t;

// Line graph L(G): one node per primal edge, adjacency by shared endpoint.
// Optional per-node payloads (features, labels, raw label strings, graph ids
// for multi-city datasets) live here so the whole training input is one
// artifact.
struct LineGraph {
  struct LNode {
    LNodeId id = 0;
    EdgeId source_edge = 0;
  };

  std::vector<LNode> nodes;
  std::vector<std::vector<LNodeId>> adj;     // sorted, symmetric, no self-loops
  std::vector<std::vector<double>> features; // empty until featurized
  std::vector<std::optional<int>> labels;    // class 0..4, absent if unmapped
  std::vector<std::string> raw_labels;       // raw road-type strings ("" = absent)
  std::vector<std::uint32_t> graph_ids;      // empty unless multi-graph

  std::size_t size() const { return nodes.size(); }

  int degree(LNodeId v) const { return static_cast<int>(adj[v].size()); }

  bool operator==(const LineGraph& o) const {
    auto node_eq = [](const LNode& a, const LNode& b) {
      return a.id == b.id && a.source_edge == b.source_edge;
    };
    if (nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (!node_eq(nodes[i], o.nodes[i])) return false;
    return adj == o.adj && features == o.features && labels == o.labels &&
           raw_labels == o.raw_labels && graph_ids == o.graph_ids;
  }
};

struct NodeSplit {
  std::vector<LNodeId> train, val, test;
};

inline std::vector<std::string> validate_split(const NodeSplit& s, std::size_t n_nodes) {
  std::vector<std::string> out;
  std::vector<int> seen(n_nodes, 0);
  auto mark = [&](const std::vector<LNodeId>& ids, const char* name) {
    for (LNodeId v : ids) {
      if (v >= n_nodes) {
        out.push_back(std::string(name) + " split references node out of range");
        continue;
      }
      seen[v] += 1;
    }
  };
  mark(s.train, "train");
  mark(s.val, "val");
  mark(s.test, "test");
  for (std::size_t v = 0; v < n_nodes; ++v) {
    if (seen[v] == 0) out.push_back("node " + std::to_string(v) + " missing from split");
    if (seen[v] > 1) out.push_back("node " + std::to_string(v) + " assigned to several splits");
  }
  return out;
}

// Line graph transformation. Nodes are g's edges in ascending edge-id
// order; two line-graph nodes are adjacent iff their source edges share at
// least one endpoint. Requires a simple undirected graph; an empty edge set
// yields an empty line graph.
inline LineGraph to_line_graph(const RoadGraph& g) {
  {
    std::set<std::pair<NodeId, NodeId>> pairs;
    for (const auto& e : g.edges) {
      if (!pairs.insert(detail::unordered_pair(e.u, e.v)).second)
        throw invariant_error("to_line_graph requires a simple graph (parallel edges found)");
    }
  }
  std::vector<std::size_t> order(g.edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&g](std::size_t a, std::size_t b) { return g.edges[a].id < g.edges[b].id; });

  LineGraph lg;
  lg.nodes.resize(order.size());
  lg.adj.resize(order.size());
  lg.labels.assign(order.size(), std::nullopt);
  lg.raw_labels.assign(order.size(), "");
  std::unordered_map<NodeId, std::vector<LNodeId>> incident;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const RoadEdge& e = g.edges[order[r]];
    lg.nodes[r] = {static_cast<LNodeId>(r), e.id};
    lg.raw_labels[r] = e.highway.value_or("");
    incident[e.u].push_back(static_cast<LNodeId>(r));
    if (e.v != e.u) incident[e.v].push_back(static_cast<LNodeId>(r));
  }
  std::vector<std::set<LNodeId>> nb(order.size());
  for (const auto& [nid, inc] : incident) {
    for (std::size_t i = 0; i < inc.size(); ++i)
      for (std::size_t j = i + 1; j < inc.size(); ++j) {
        nb[inc[i]].insert(inc[j]);
        nb[inc[j]].insert(inc[i]);
      }
  }
  for (std::size_t r = 0; r < order.size(); ++r)
    lg.adj[r].assign(nb[r].begin(), nb[r].end());
  return lg;
}

// ---------------------------------------------------------------------------
// Serialization. Pinned keys: lnodes, adj, features, labels. Extra keys
// (raw_labels, graph_ids, split) carry the rest of the training artifact.

inline nlohmann::json line_graph_to_json(const LineGraph& lg, const NodeSplit* split = nullptr) {
  nlohmann::json j;
  j["lnodes"] = nlohmann::json::array();
  for (const auto& n : lg.nodes) j["lnodes"].push_back({{"id", n.id}, {"edge", n.source_edge}});
  j["adj"] = lg.adj;
  j["features"] = lg.features;
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : lg.labels) {
    if (l)
      labels.push_back(*l);
    else
      labels.push_back(nullptr);
  }
  j["labels"] = labels;
  bool any_raw = false;
  for (const auto& r : lg.raw_labels) any_raw = any_raw || !r.empty();
  if (any_raw) j["raw_labels"] = lg.raw_labels;
  if (!lg.graph_ids.empty()) j["graph_ids"] = lg.graph_ids;
  if (split)
    j["split"] = {{"train", split->train}, {"val", split->val}, {"test", split->test}};
  return j;
}

inline LineGraph line_graph_from_json(const nlohmann::json& j, NodeSplit* split = nullptr) {
  LineGraph lg;
  if (!j.contains("lnodes") || !j.contains("adj"))
    throw parse_error("line-graph file must contain \"lnodes\" and \"adj\"");
  for (const auto& jn : j.at("lnodes"))
    lg.nodes.push_back({jn.at("id").get<LNodeId>(), jn.at("edge").get<EdgeId>()});
  lg.adj = j.at("adj").get<std::vector<std::vector<LNodeId>>>();
  if (j.contains("features") && !j.at("features").empty())
    lg.features = j.at("features").get<std::vector<std::vector<double>>>();
  lg.labels.assign(lg.nodes.size(), std::nullopt);
  if (j.contains("labels")) {
    const auto& jl = j.at("labels");
    for (std::size_t i = 0; i < jl.size() && i < lg.labels.size(); ++i)
      if (!jl[i].is_null()) lg.labels[i] = jl[i].get<int>();
  }
  lg.raw_labels.assign(lg.nodes.size(), "");
  if (j.contains("raw_labels")) lg.raw_labels = j.at("raw_labels").get<std::vector<std::string>>();
  if (j.contains("graph_ids")) lg.graph_ids = j.at("graph_ids").get<std::vector<std::uint32_t>>();
  if (split && j.contains("split")) {
    split->train = j.at("split").at("train").get<std::vector<LNodeId>>();
    split->val = j.at("split").at("val").get<std::vector<LNodeId>>();
    split->test = j.at("split").at("test").get<std::vector<LNodeId>>();
  }
  if (lg.adj.size() != lg.nodes.size())
    throw parse_error("line-graph file: adj size does not match lnodes size");
  return lg;
}

inline void save_line_graph(const LineGraph& lg, const std::string& path,
                            const NodeSplit* split = nullptr) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write line-graph file: " + path);
  out << line_graph_to_json(lg, split).dump(1) << "\n";
}

inline LineGraph load_line_graph(const std::string& path, NodeSplit* split = nullptr) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open line-graph file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw parse_error("malformed line-graph file " + path + ": " + ex.what());
  }
  return line_graph_from_json(j, split);
}

// Disjoint union preserving per-part node order; parts get consecutive
// graph ids.
inline LineGraph merge_line_graphs(const std::vector<LineGraph>& parts) {
  LineGraph out;
  LNodeId offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const LineGraph& part = parts[p];
    for (std::size_t i = 0; i < part.size(); ++i) {
      out.nodes.push_back({static_cast<LNodeId>(offset + i), part.nodes[i].source_edge});
      std::vector<LNodeId> nb = part.adj[i];
      for (auto& v : nb) v += offset;
      out.adj.push_back(std::move(nb));
      out.labels.push_back(part.labels[i]);
      out.raw_labels.push_back(i < part.raw_labels.size() ? part.raw_labels[i] : "");
      if (!part.features.empty()) out.features.push_back(part.features[i]);
      out.graph_ids.push_back(static_cast<std::uint32_t>(p));
    }
    offset += static_cast<LNodeId>(part.size());
  }
  return out;
}

}  // namespace roadgnn
