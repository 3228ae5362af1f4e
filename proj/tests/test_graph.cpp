#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "roadgnn/line_graph.hpp"
#include "roadgnn/road_graph.hpp"
#include "roadgnn/synth.hpp"
#include "testutil.hpp"

using namespace roadgnn;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("load_graph: minimal two-node file") {
  const std::string path = temp_file("rg_minimal.json");
  write_file(path, R"({"nodes":[{"id":0,"lon":15.6,"lat":58.4},{"id":1,"lon":15.601,"lat":58.4}],
    "edges":[{"id":0,"u":0,"v":1,"length":60.5,"geometry":[[15.6,58.4],[15.601,58.4]],
              "maxspeed":50,"highway":"residential"}]})");
  const RoadGraph g = load_graph(path);
  CHECK(g.nodes.size() == 2);
  CHECK(g.edges.size() == 1);
  CHECK(g.edges[0].maxspeed == 50);
  CHECK(*g.edges[0].highway == "residential");
}

TEST_CASE("load_graph: dangling endpoint reference is diagnosed") {
  const std::string path = temp_file("rg_dangling.json");
  write_file(path, R"({"nodes":[{"id":0,"lon":0,"lat":0}],
    "edges":[{"id":0,"u":0,"v":7,"length":1.0,"geometry":[[0,0],[1,1]]}]})");
  CHECK_THROWS_WITH_AS(load_graph(path), doctest::Contains("missing node 7"), Error);
}

TEST_CASE("load_graph: non-positive length is diagnosed") {
  const std::string path = temp_file("rg_len.json");
  write_file(path, R"({"nodes":[{"id":0,"lon":0,"lat":0},{"id":1,"lon":1,"lat":1}],
    "edges":[{"id":0,"u":0,"v":1,"length":0.0,"geometry":[[0,0],[1,1]]}]})");
  CHECK_THROWS_WITH_AS(load_graph(path), doctest::Contains("non-positive length"), Error);
}

TEST_CASE("load_graph: malformed file") {
  const std::string path = temp_file("rg_bad.json");
  write_file(path, "{nonsense");
  CHECK_THROWS_AS(load_graph(path), Error);
}

TEST_CASE("load_graph: large file round-trips the edge count") {
  // Path graph with 13199 edges, the transductive dataset scale.
  RoadGraph g;
  const int n = 13200;
  for (int i = 0; i < n; ++i) g.nodes.push_back({i, 15.0 + 1e-4 * i, 58.0});
  for (int i = 0; i + 1 < n; ++i) {
    RoadEdge e;
    e.id = i;
    e.u = i;
    e.v = i + 1;
    e.length = 11.1;
    e.geometry = {{g.nodes[i].lon, g.nodes[i].lat}, {g.nodes[i + 1].lon, g.nodes[i + 1].lat}};
    g.edges.push_back(e);
  }
  const std::string path = temp_file("rg_linkoping_scale.json");
  save_graph(g, path);
  const RoadGraph loaded = load_graph(path);
  CHECK(loaded.edges.size() == 13199);
}

TEST_CASE("undirect_and_merge_parallel") {
  SUBCASE("two antiparallel edges collapse to one") {
    RoadGraph g = testutil::simple_graph(2, {{0, 1}, {1, 0}});
    const RoadGraph out = undirect_and_merge_parallel(g);
    CHECK(out.edges.size() == 1);
  }
  SUBCASE("three parallels keep the shortest attributes") {
    RoadGraph g = testutil::simple_graph(2, {{0, 1}, {0, 1}, {0, 1}});
    g.edges[0].length = 7.0;
    g.edges[1].length = 5.0;
    g.edges[1].maxspeed = 70;
    g.edges[2].length = 9.0;
    const RoadGraph out = undirect_and_merge_parallel(g);
    REQUIRE(out.edges.size() == 1);
    CHECK(out.edges[0].length == 5.0);
    CHECK(out.edges[0].maxspeed == 70);
  }
  SUBCASE("already simple graph is unchanged; idempotent") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      const RoadGraph g = testutil::random_simple_graph(seed, 12, 30);
      const RoadGraph once = undirect_and_merge_parallel(g);
      const RoadGraph twice = undirect_and_merge_parallel(once);
      CHECK(once.edges.size() == g.edges.size());
      REQUIRE(twice.edges.size() == once.edges.size());
      for (std::size_t i = 0; i < once.edges.size(); ++i) {
        CHECK(twice.edges[i].id == once.edges[i].id);
        CHECK(twice.edges[i].length == once.edges[i].length);
      }
    }
  }
}

TEST_CASE("consolidate_intersections") {
  auto mk = [](std::vector<std::pair<double, double>> coords,
               std::vector<std::pair<int, int>> ends) {
    RoadGraph g;
    for (std::size_t i = 0; i < coords.size(); ++i)
      g.nodes.push_back({static_cast<NodeId>(i), coords[i].first, coords[i].second});
    for (std::size_t e = 0; e < ends.size(); ++e) {
      RoadEdge edge;
      edge.id = static_cast<EdgeId>(e);
      edge.u = ends[e].first;
      edge.v = ends[e].second;
      edge.length = 5.0;
      edge.geometry = {{g.nodes[edge.u].lon, g.nodes[edge.u].lat},
                       {g.nodes[edge.v].lon, g.nodes[edge.v].lat}};
      g.edges.push_back(edge);
    }
    return g;
  };
  const double deg5m = 5.0 / 111194.9;    // ~5 m in latitude degrees
  const double deg50m = 50.0 / 111194.9;  // ~50 m

  SUBCASE("nodes 5 m apart merge") {
    RoadGraph g = mk({{15.6, 58.4}, {15.6, 58.4 + deg5m}, {15.61, 58.4}},
                     {{0, 2}, {1, 2}});
    const RoadGraph out = consolidate_intersections(g, 10.0);
    CHECK(out.nodes.size() == 2);
    CHECK(out.edges.size() == 2);
  }
  SUBCASE("nodes 50 m apart stay distinct") {
    RoadGraph g = mk({{15.6, 58.4}, {15.6, 58.4 + deg50m}}, {{0, 1}});
    const RoadGraph out = consolidate_intersections(g, 10.0);
    CHECK(out.nodes.size() == 2);
    CHECK(out.edges.size() == 1);
  }
  SUBCASE("8 m chain merges transitively") {
    const double deg8m = 8.0 / 111194.9;
    std::vector<std::pair<double, double>> coords;
    std::vector<std::pair<int, int>> ends;
    for (int i = 0; i < 6; ++i) coords.push_back({15.6, 58.4 + deg8m * i});
    coords.push_back({15.7, 58.4});  // far node to keep an edge alive
    for (int i = 0; i < 6; ++i) ends.push_back({i, 6});
    RoadGraph g = mk(coords, ends);
    // Independent union-find oracle over pairwise distances.
    std::vector<int> parent(g.nodes.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (std::size_t a = 0; a < g.nodes.size(); ++a)
      for (std::size_t b = a + 1; b < g.nodes.size(); ++b)
        if (haversine_m(g.nodes[a].lon, g.nodes[a].lat, g.nodes[b].lon, g.nodes[b].lat) <= 10.0)
          parent[std::max(find(a), find(b))] = std::min(find(a), find(b));
    std::set<int> roots;
    for (std::size_t i = 0; i < parent.size(); ++i) roots.insert(find(static_cast<int>(i)));
    const RoadGraph out = consolidate_intersections(g, 10.0);
    CHECK(out.nodes.size() == roots.size());
    CHECK(out.nodes.size() == 2);  // the 6-chain plus the far node
  }
  SUBCASE("never increases node count, preserves length mass minus self-loops") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
      const RoadGraph g = testutil::random_simple_graph(seed, 15, 40);
      const RoadGraph out = consolidate_intersections(g, 25.0);
      CHECK(out.nodes.size() <= g.nodes.size());
      double before = 0.0, after = 0.0, dropped = 0.0;
      for (const auto& e : g.edges) before += e.length;
      for (const auto& e : out.edges) after += e.length;
      // Recompute which edges collapsed.
      std::unordered_map<NodeId, std::size_t> ix;
      for (std::size_t i = 0; i < out.nodes.size(); ++i) ix[out.nodes[i].id] = i;
      std::set<EdgeId> kept;
      for (const auto& e : out.edges) kept.insert(e.id);
      for (const auto& e : g.edges)
        if (!kept.count(e.id)) dropped += e.length;
      CHECK(after + dropped == doctest::Approx(before).epsilon(1e-12));
    }
  }
}

TEST_CASE("reduce_interstitial") {
  SUBCASE("matching-type degree-2 node merges with summed length") {
    RoadGraph g = testutil::simple_graph(3, {{0, 1}, {1, 2}}, {"residential"});
    g.edges[0].length = 12.5;
    g.edges[1].length = 7.5;
    const RoadGraph out = reduce_interstitial(g);
    REQUIRE(out.edges.size() == 1);
    CHECK(out.edges[0].length == doctest::Approx(20.0));
    CHECK(out.nodes.size() == 2);
    CHECK(out.edges[0].geometry.size() == 3);
  }
  SUBCASE("degree-3 node untouched") {
    const RoadGraph g = testutil::simple_graph(4, {{0, 1}, {1, 2}, {1, 3}}, {"residential"});
    const RoadGraph out = reduce_interstitial(g);
    CHECK(out.edges.size() == 3);
    CHECK(out.nodes.size() == 4);
  }
  SUBCASE("type mismatch blocks the merge") {
    RoadGraph g = testutil::simple_graph(3, {{0, 1}, {1, 2}});
    g.edges[0].highway = "residential";
    g.edges[1].highway = "primary";
    const RoadGraph out = reduce_interstitial(g);
    CHECK(out.edges.size() == 2);
  }
  SUBCASE("five collinear interstitial nodes collapse to one edge, exact sum") {
    std::vector<std::pair<int, int>> ends;
    for (int i = 0; i < 6; ++i) ends.push_back({i, i + 1});
    RoadGraph g = testutil::simple_graph(7, ends, {"residential"});
    double expected = 0.0;
    for (const auto& e : g.edges) expected += e.length;
    const RoadGraph out = reduce_interstitial(g);
    REQUIRE(out.edges.size() == 1);
    CHECK(out.edges[0].length == doctest::Approx(expected).epsilon(1e-15));
    CHECK(out.edges[0].geometry.size() == 7);
    CHECK(out.nodes.size() == 2);
  }
  SUBCASE("idempotent on random graphs") {
    for (std::uint64_t seed : {21ull, 22ull, 23ull, 24ull}) {
      const RoadGraph g = undirect_and_merge_parallel(testutil::random_simple_graph(seed, 14, 25));
      const RoadGraph once = reduce_interstitial(g);
      const RoadGraph twice = reduce_interstitial(once);
      REQUIRE(twice.edges.size() == once.edges.size());
      for (std::size_t i = 0; i < once.edges.size(); ++i) {
        CHECK(twice.edges[i].id == once.edges[i].id);
        CHECK(twice.edges[i].length == once.edges[i].length);
      }
    }
  }
}

TEST_CASE("to_line_graph") {
  SUBCASE("triangle maps to triangle") {
    const RoadGraph g = testutil::simple_graph(3, {{0, 1}, {1, 2}, {0, 2}});
    const LineGraph lg = to_line_graph(g);
    REQUIRE(lg.size() == 3);
    for (std::size_t v = 0; v < 3; ++v) CHECK(lg.adj[v].size() == 2);
  }
  SUBCASE("two-edge path: one line edge") {
    const LineGraph lg = to_line_graph(testutil::simple_graph(3, {{0, 1}, {1, 2}}));
    REQUIRE(lg.size() == 2);
    CHECK(lg.adj[0] == std::vector<LNodeId>{1});
    CHECK(lg.adj[1] == std::vector<LNodeId>{0});
  }
  SUBCASE("3-edge star becomes K3 (brute-force oracle)") {
    const RoadGraph g = testutil::simple_graph(4, {{0, 1}, {0, 2}, {0, 3}});
    const LineGraph lg = to_line_graph(g);
    const auto oracle = testutil::brute_force_line_adjacency(g);
    REQUIRE(lg.size() == 3);
    for (std::size_t v = 0; v < lg.size(); ++v)
      CHECK(std::set<LNodeId>(lg.adj[v].begin(), lg.adj[v].end()) == oracle[v]);
  }
  SUBCASE("empty edge set gives empty line graph") {
    RoadGraph g;
    g.nodes.push_back({0, 0.0, 0.0});
    CHECK(to_line_graph(g).size() == 0);
  }
  SUBCASE("parallel edges rejected") {
    const RoadGraph g = testutil::simple_graph(2, {{0, 1}, {1, 0}});
    CHECK_THROWS_AS(to_line_graph(g), Error);
  }
  SUBCASE("matches brute force and handshake identity on random graphs") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const RoadGraph g = undirect_and_merge_parallel(testutil::random_simple_graph(seed));
      const LineGraph lg = to_line_graph(g);
      REQUIRE(lg.size() == g.edges.size());
      const auto oracle = testutil::brute_force_line_adjacency(g);
      std::size_t degree_sum = 0;
      for (std::size_t v = 0; v < lg.size(); ++v) {
        CHECK(std::set<LNodeId>(lg.adj[v].begin(), lg.adj[v].end()) == oracle[v]);
        degree_sum += lg.adj[v].size();
      }
      std::size_t expected = 0;
      for (const auto& [nid, d] : g.degrees())
        expected += static_cast<std::size_t>(d) * static_cast<std::size_t>(d - 1);
      CHECK(degree_sum == expected);
    }
  }
}

TEST_CASE("line graph save/load") {
  SUBCASE("K3 round trip is identical") {
    const LineGraph lg = to_line_graph(testutil::simple_graph(3, {{0, 1}, {1, 2}, {0, 2}}));
    const std::string path = temp_file("lg_k3.json");
    save_line_graph(lg, path);
    CHECK(load_line_graph(path) == lg);
    // Second save is byte-identical.
    const std::string path2 = temp_file("lg_k3b.json");
    save_line_graph(load_line_graph(path), path2);
    std::ifstream a(path), b(path2);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
  SUBCASE("empty graph round trip") {
    LineGraph lg;
    const std::string path = temp_file("lg_empty.json");
    save_line_graph(lg, path);
    CHECK(load_line_graph(path).size() == 0);
  }
  SUBCASE("1000-node random line graph deep-compares equal") {
    const RoadGraph g = synth_planted_label(1000, 99);
    const LineGraph lg = to_line_graph(g);
    REQUIRE(lg.size() == 1000);
    const std::string path = temp_file("lg_1000.json");
    NodeSplit split = make_transductive_split(lg.size(), 100, 200, 3);
    save_line_graph(lg, path, &split);
    NodeSplit split2;
    CHECK(load_line_graph(path, &split2) == lg);
    CHECK(split2.train == split.train);
    CHECK(split2.val == split.val);
    CHECK(split2.test == split.test);
  }
}

TEST_CASE("validate flags geometry endpoint mismatch after preprocessing") {
  RoadGraph g = testutil::simple_graph(2, {{0, 1}});
  g.edges[0].geometry[0][0] += 1e-6;
  CHECK(validate(g, false).empty());
  const auto violations = validate(g, true);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find("geometry") != std::string::npos);
}

TEST_CASE("graphml import") {
  const std::string path = temp_file("rg.graphml");
  write_file(path, R"(<?xml version="1.0" encoding="UTF-8"?>
<graphml>
  <key id="d0" for="node" attr.name="x" attr.type="double"/>
  <key id="d1" for="node" attr.name="y" attr.type="double"/>
  <key id="d2" for="edge" attr.name="length" attr.type="double"/>
  <key id="d3" for="edge" attr.name="highway" attr.type="string"/>
  <key id="d4" for="edge" attr.name="maxspeed" attr.type="string"/>
  <key id="d5" for="edge" attr.name="geometry" attr.type="string"/>
  <graph edgedefault="undirected">
    <node id="10"><data key="d0">15.60</data><data key="d1">58.40</data></node>
    <node id="11"><data key="d0">15.61</data><data key="d1">58.40</data></node>
    <edge source="10" target="11">
      <data key="d2">612.5</data>
      <data key="d3">residential</data>
      <data key="d4">50</data>
      <data key="d5">LINESTRING (15.60 58.40, 15.605 58.401, 15.61 58.40)</data>
    </edge>
  </graph>
</graphml>)");
  const RoadGraph g = load_graph(path, GraphFormat::GraphMl);
  REQUIRE(g.nodes.size() == 2);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].length == doctest::Approx(612.5));
  CHECK(*g.edges[0].maxspeed == 50);
  CHECK(*g.edges[0].highway == "residential");
  REQUIRE(g.edges[0].geometry.size() == 3);
  CHECK(g.edges[0].geometry[1][0] == doctest::Approx(15.605));
}

TEST_CASE("merge_line_graphs keeps parts disjoint with graph ids") {
  const LineGraph a = to_line_graph(testutil::simple_graph(3, {{0, 1}, {1, 2}}));
  const LineGraph b = to_line_graph(testutil::simple_graph(4, {{0, 1}, {0, 2}, {0, 3}}));
  const LineGraph m = merge_line_graphs({a, b});
  REQUIRE(m.size() == 5);
  CHECK(m.graph_ids == std::vector<std::uint32_t>{0, 0, 1, 1, 1});
  CHECK(m.adj[0] == std::vector<LNodeId>{1});
  CHECK(m.adj[2] == std::vector<LNodeId>{3, 4});
}
