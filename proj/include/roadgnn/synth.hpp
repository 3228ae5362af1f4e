#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "roadgnn/geo.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/rng.hpp"
#include "roadgnn/road_graph.hpp"

namespace roadgnn {

namespace synth_detail {

constexpr double kBaseLon = 15.60;
constexpr double kBaseLat = 58.40;

inline RoadEdge make_edge(EdgeId id, const RoadNode& a, const RoadNode& b, double length,
                          int maxspeed, const std::string& highway) {
  RoadEdge e;
  e.id = id;
  e.u = a.id;
  e.v = b.id;
  e.length = length;
  e.geometry = {{a.lon, a.lat}, {b.lon, b.lat}};
  e.maxspeed = maxspeed;
  e.highway = highway;
  return e;
}

}  // namespace synth_detail

// Straight path of n nodes (n-1 edges).
inline RoadGraph synth_path(int n_nodes, std::uint64_t seed) {
  if (n_nodes < 2) throw config_error("synth path: size must be >= 2 nodes");
  (void)seed;
  RoadGraph g;
  for (int i = 0; i < n_nodes; ++i)
    g.nodes.push_back({i, synth_detail::kBaseLon + 0.001 * i, synth_detail::kBaseLat});
  for (int i = 0; i + 1 < n_nodes; ++i) {
    const double len = haversine_m(g.nodes[i].lon, g.nodes[i].lat, g.nodes[i + 1].lon,
                                   g.nodes[i + 1].lat);
    g.edges.push_back(synth_detail::make_edge(i, g.nodes[i], g.nodes[i + 1], len, 50, "residential"));
  }
  return g;
}

// Star with `leaves` edges around a central node.
inline RoadGraph synth_star(int leaves, std::uint64_t seed) {
  if (leaves < 1) throw config_error("synth star: size must be >= 1 leaf");
  (void)seed;
  RoadGraph g;
  g.nodes.push_back({0, synth_detail::kBaseLon, synth_detail::kBaseLat});
  for (int i = 0; i < leaves; ++i) {
    const double angle = 2.0 * M_PI * i / leaves;
    g.nodes.push_back({i + 1, synth_detail::kBaseLon + 0.001 * std::cos(angle),
                       synth_detail::kBaseLat + 0.001 * std::sin(angle)});
    const double len = haversine_m(g.nodes[0].lon, g.nodes[0].lat, g.nodes.back().lon,
                                   g.nodes.back().lat);
    g.edges.push_back(synth_detail::make_edge(i, g.nodes[0], g.nodes.back(), len, 50, "residential"));
  }
  return g;
}

// side x side grid: 2 * side * (side - 1) edges. Every fifth row/column is
// a faster "secondary" corridor for variety.
inline RoadGraph synth_grid_city(int side, std::uint64_t seed) {
  if (side < 2) throw config_error("synth grid-city: size must be >= 2");
  (void)seed;
  RoadGraph g;
  const double step = 0.0009;
  auto node_id = [side](int r, int c) { return r * side + c; };
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      g.nodes.push_back({node_id(r, c), synth_detail::kBaseLon + step * c,
                         synth_detail::kBaseLat + step * r});
  EdgeId eid = 0;
  auto add = [&g, &eid](const RoadNode& a, const RoadNode& b, bool major) {
    const double len = haversine_m(a.lon, a.lat, b.lon, b.lat);
    g.edges.push_back(synth_detail::make_edge(eid++, a, b, len, major ? 50 : 30,
                                              major ? "secondary" : "residential"));
  };
  for (int r = 0; r < side; ++r)
    for (int c = 0; c + 1 < side; ++c)
      add(g.nodes[node_id(r, c)], g.nodes[node_id(r, c + 1)], r % 5 == 0);
  for (int r = 0; r + 1 < side; ++r)
    for (int c = 0; c < side; ++c)
      add(g.nodes[node_id(r, c)], g.nodes[node_id(r + 1, c)], c % 5 == 0);
  return g;
}

// ---------------------------------------------------------------------------
// Planted-label generator. Produces a primal graph whose road-type labels
// are, by construction, a deterministic function of two-hop feature sums in
// the line graph, which makes a two-hop encoder provably sufficient:
//
//   1. Topology: a circulant ring (edges i..i+1 and i..i+2 over size/2
//      nodes), giving a connected simple graph of `size` edges with minimum
//      degree 4. No node has degree 2 and no two nodes sit within the 10 m
//      consolidation radius, so the standard preprocessing chain leaves the
//      graph untouched. Coordinates are lattice points assigned by a random
//      permutation, which decouples position features from topology.
//   2. Regions: the line graph is partitioned into 5 balanced, connected
//      regions by round-robin multi-source BFS from seeded start nodes.
//   3. Carried markers: each edge carries its region's marker with
//      probability 1 - noise, otherwise a uniformly random marker. The
//      marker is encoded in the speed limit (30/40/50/60/70), i.e. in the
//      one-hot block of the raw features.
//   4. Labels: edge e is labeled argmax over classes of the carried-marker
//      counts in its line-graph two-hop neighborhood excluding e itself
//      (ties to the smaller class), then written as the canonical raw
//      road-type string of that class.
//
// Own-edge attributes only carry the (noisy) marker, so a classifier on raw
// features alone stays far below a neighborhood-aggregating encoder.
struct PlantedParams {
  double noise = 0.5;
  int regions = 5;
};

inline RoadGraph synth_planted_label(int n_edges, std::uint64_t seed,
                                     const PlantedParams& params = {}) {
  if (n_edges < 20) throw config_error("synth planted-label: size must be >= 20 edges");
  SplitMix64 rng = SplitMix64::substream(seed, 0x9147ull);

  const int n_nodes = n_edges / 2;
  RoadGraph g;
  {
    // Shuffled lattice with ~29 m x 55 m spacing.
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_nodes))));
    std::vector<std::uint32_t> cells = rng.permutation(static_cast<std::uint32_t>(side * side));
    for (int i = 0; i < n_nodes; ++i) {
      const int cell = static_cast<int>(cells[static_cast<std::size_t>(i)]);
      g.nodes.push_back({i, synth_detail::kBaseLon + 0.0005 * (cell % side),
                         synth_detail::kBaseLat + 0.0005 * (cell / side)});
    }
  }
  std::vector<std::pair<NodeId, NodeId>> edge_ends;
  for (int i = 0; i < n_nodes; ++i) edge_ends.emplace_back(i, (i + 1) % n_nodes);
  for (int i = 0; i < n_nodes; ++i) edge_ends.emplace_back(i, (i + 2) % n_nodes);
  if (static_cast<int>(edge_ends.size()) < n_edges)
    edge_ends.emplace_back(0, n_nodes / 2);  // odd size: one extra chord

  auto node_ix = [&g](NodeId id) { return static_cast<std::size_t>(id); };
  for (EdgeId i = 0; i < n_edges; ++i) {
    const auto [a, b] = edge_ends[static_cast<std::size_t>(i)];
    g.edges.push_back(synth_detail::make_edge(i, g.nodes[node_ix(a)], g.nodes[node_ix(b)],
                                              40.0 + rng.uniform(0.0, 20.0), 30, "residential"));
  }
  const LineGraph lg = to_line_graph(g);
  const std::size_t n = lg.size();

  // Balanced multi-source BFS regions over the line graph.
  std::vector<int> region(n, -1);
  std::vector<std::deque<LNodeId>> frontier(static_cast<std::size_t>(params.regions));
  {
    std::set<LNodeId> seeds;
    while (static_cast<int>(seeds.size()) < params.regions)
      seeds.insert(static_cast<LNodeId>(rng.uniform_int(n)));
    int r = 0;
    for (LNodeId s : seeds) {
      region[s] = r;
      frontier[static_cast<std::size_t>(r)].push_back(s);
      ++r;
    }
    bool any = true;
    while (any) {
      any = false;
      for (int q = 0; q < params.regions; ++q) {
        auto& f = frontier[static_cast<std::size_t>(q)];
        while (!f.empty()) {
          const LNodeId v = f.front();
          f.pop_front();
          LNodeId grabbed = n;  // first unclaimed neighbor
          for (LNodeId u : lg.adj[v])
            if (region[u] < 0) {
              grabbed = u;
              break;
            }
          if (grabbed != n) {
            region[grabbed] = q;
            f.push_back(v);
            f.push_back(grabbed);
            any = true;
            break;
          }
        }
      }
    }
    for (std::size_t v = 0; v < n; ++v)
      if (region[v] < 0) region[v] = 0;  // unreachable fallback; ring keeps graph connected
  }

  // Carried marker per edge, encoded as a speed limit.
  static const int kSpeeds[5] = {30, 40, 50, 60, 70};
  static const char* kClassStrings[5] = {"primary", "tertiary", "unclassified", "residential",
                                         "living_street"};
  std::vector<int> carried(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    carried[v] = rng.next_double() < params.noise
                     ? static_cast<int>(rng.uniform_int(5))
                     : region[v];
  }

  // Two-hop neighborhoods (distance 1 or 2, excluding self).
  for (std::size_t v = 0; v < n; ++v) {
    std::set<LNodeId> ball;
    for (LNodeId u : lg.adj[v]) {
      ball.insert(u);
      for (LNodeId w : lg.adj[u]) ball.insert(w);
    }
    ball.erase(static_cast<LNodeId>(v));
    int counts[5] = {0, 0, 0, 0, 0};
    for (LNodeId u : ball) counts[carried[u]] += 1;
    int label = 0;
    for (int c = 1; c < 5; ++c)
      if (counts[c] > counts[label]) label = c;
    RoadEdge& e = g.edges[v];  // line-graph node v is edge v (ids are 0..E-1)
    e.maxspeed = kSpeeds[carried[v]];
    e.highway = kClassStrings[label];
  }
  return g;
}

}  // namespace roadgnn
