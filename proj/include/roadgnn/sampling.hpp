#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/rng.hpp"

namespace roadgnn {

struct WalkConfig {
  int num_walks = 25;   // N_w
  int local_len = 5;    // L_l
  int global_len = 10;  // L_g, defaults to 2 * L_l
  std::uint64_t seed = 1;

  static WalkConfig make(int num_walks, int local_len, std::uint64_t seed) {
    WalkConfig c;
    c.num_walks = num_walks;
    c.local_len = local_len;
    c.global_len = 2 * local_len;
    c.seed = seed;
    return c;
  }
};

// Per-node multisets of topological neighbors: N_l from repeated one-step
// samples, N_g from unbiased random-walk endpoints, N_t their multiset
// union, shuffled. The source node itself never appears in its own sets.
struct NeighborhoodTable {
  std::vector<std::vector<LNodeId>> local;
  std::vector<std::vector<LNodeId>> global;
  std::vector<std::vector<LNodeId>> topo;
  WalkConfig config;

  nlohmann::json to_json() const {
    return {{"schema", 1},
            {"num_walks", config.num_walks},
            {"local_len", config.local_len},
            {"global_len", config.global_len},
            {"seed", config.seed},
            {"local", local},
            {"global", global},
            {"topo", topo}};
  }

  static NeighborhoodTable from_json(const nlohmann::json& j) {
    NeighborhoodTable t;
    t.config.num_walks = j.at("num_walks").get<int>();
    t.config.local_len = j.at("local_len").get<int>();
    t.config.global_len = j.at("global_len").get<int>();
    t.config.seed = j.at("seed").get<std::uint64_t>();
    t.local = j.at("local").get<std::vector<std::vector<LNodeId>>>();
    t.global = j.at("global").get<std::vector<std::vector<LNodeId>>>();
    t.topo = j.at("topo").get<std::vector<std::vector<LNodeId>>>();
    return t;
  }
};

inline void save_neighborhood_table(const NeighborhoodTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write neighborhood table: " + path);
  out << t.to_json().dump() << "\n";
}

inline NeighborhoodTable load_neighborhood_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open neighborhood table: " + path);
  nlohmann::json j;
  in >> j;
  return NeighborhoodTable::from_json(j);
}

// Topological neighborhood search. Per source node v and per walk: L_l
// one-step samples from N(v) feed the local set, then an unbiased walk of
// L_g steps (the first step seeded from N(v) before the loop) contributes
// its endpoint to the global set; both sets guard against re-adding v.
// Isolated nodes end up with empty sets, which is flagged, not fatal.
// Each node draws from its own (seed, node) substream, so table
// construction is order-independent and parallelizable across nodes.
inline NeighborhoodTable build_topological_neighborhood(const LineGraph& lg,
                                                        const WalkConfig& cfg) {
  if (lg.size() == 0) throw invariant_error("build_topological_neighborhood: empty line graph");
  if (cfg.num_walks < 1 || cfg.local_len < 1 || cfg.global_len < 1)
    throw config_error("walk config requires num_walks, local_len, global_len >= 1");

  NeighborhoodTable table;
  table.config = cfg;
  const std::size_t n = lg.size();
  table.local.resize(n);
  table.global.resize(n);
  table.topo.resize(n);

  for (std::size_t v = 0; v < n; ++v) {
    const auto& nbrs = lg.adj[v];
    if (nbrs.empty()) continue;
    SplitMix64 rng = SplitMix64::substream(cfg.seed, v);
    auto step = [&rng, &lg](LNodeId from) {
      const auto& nb = lg.adj[from];
      return nb[rng.uniform_int(nb.size())];
    };
    for (int w = 0; w < cfg.num_walks; ++w) {
      for (int l = 0; l < cfg.local_len; ++l) {
        const LNodeId u = nbrs[rng.uniform_int(nbrs.size())];
        if (u != v) table.local[v].push_back(u);
      }
      LNodeId u0 = static_cast<LNodeId>(v);  // trails one position behind the walk head
      LNodeId u1 = static_cast<LNodeId>(v);
      LNodeId u2 = nbrs[rng.uniform_int(nbrs.size())];
      for (int l = 0; l < cfg.global_len; ++l) {
        u0 = u1;
        u1 = u2;
        u2 = step(u1);
      }
      (void)u0;
      if (u1 != v) table.global[v].push_back(u1);
    }
    table.topo[v] = table.local[v];
    table.topo[v].insert(table.topo[v].end(), table.global[v].begin(), table.global[v].end());
    rng.shuffle(table.topo[v]);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Fixed-fanout neighbor sampling for the two-hop encoder.

struct FanoutPlan {
  int hop1 = 9;
  int hop2 = 3;
};

struct FanoutSample {
  std::vector<LNodeId> hop1;  // |batch| * hop1
  std::vector<LNodeId> hop2;  // |batch| * hop1 * hop2
};

// Uniform with replacement from the direct adjacency; a node without
// neighbors repeats itself.
inline FanoutSample sample_fanout(const LineGraph& lg, const std::vector<LNodeId>& batch,
                                  const FanoutPlan& plan, std::uint64_t seed) {
  if (plan.hop1 < 1 || plan.hop2 < 1) throw config_error("fanout sizes must be >= 1");
  FanoutSample s;
  s.hop1.reserve(batch.size() * static_cast<std::size_t>(plan.hop1));
  SplitMix64 rng(seed);
  auto draw = [&rng, &lg](LNodeId v) {
    const auto& nb = lg.adj[v];
    if (nb.empty()) return v;
    return nb[rng.uniform_int(nb.size())];
  };
  for (LNodeId v : batch)
    for (int i = 0; i < plan.hop1; ++i) s.hop1.push_back(draw(v));
  s.hop2.reserve(s.hop1.size() * static_cast<std::size_t>(plan.hop2));
  for (LNodeId v : s.hop1)
    for (int i = 0; i < plan.hop2; ++i) s.hop2.push_back(draw(v));
  return s;
}

// ---------------------------------------------------------------------------
// Negative sampling for the unsupervised loss.

enum class NegativeDistribution { DegreeToThreeQuarters, Uniform };

// Unigram sampler over all nodes, weight = degree^0.75 (or uniform for
// ablation). Draws exclude the source node and its topological neighborhood
// by rejection; callers wanting many draws should reuse one instance.
class NegativeSampler {
 public:
  NegativeSampler(const LineGraph& lg,
                  NegativeDistribution dist = NegativeDistribution::DegreeToThreeQuarters)
      : cum_(lg.size(), 0.0) {
    double total = 0.0;
    for (std::size_t v = 0; v < lg.size(); ++v) {
      const double w = dist == NegativeDistribution::Uniform
                           ? 1.0
                           : std::pow(static_cast<double>(lg.adj[v].size()), 0.75);
      weights_.push_back(w);
      total += w;
      cum_[v] = total;
    }
    total_ = total;
  }

  double weight(LNodeId v) const { return weights_[v]; }

  std::vector<LNodeId> sample(LNodeId v, int count, const NeighborhoodTable& table,
                              SplitMix64& rng) const {
    if (count < 1) throw config_error("negative sample count must be >= 1");
    std::unordered_set<LNodeId> excluded(table.topo[v].begin(), table.topo[v].end());
    excluded.insert(v);
    double excluded_weight = 0.0;
    for (LNodeId u : excluded) excluded_weight += weights_[u];
    if (!(total_ - excluded_weight > 1e-12))
      throw invariant_error("negative sampling: exclusion leaves empty support for node " +
                            std::to_string(v));
    std::vector<LNodeId> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
      const double x = rng.next_double() * total_;
      const auto it = std::upper_bound(cum_.begin(), cum_.end(), x);
      const LNodeId cand =
          static_cast<LNodeId>(std::min<std::size_t>(it - cum_.begin(), cum_.size() - 1));
      if (excluded.count(cand)) continue;
      out.push_back(cand);
    }
    return out;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> cum_;
  double total_ = 0.0;
};

inline std::vector<LNodeId> sample_negatives(const LineGraph& lg, LNodeId v, int count,
                                             const NeighborhoodTable& table, std::uint64_t seed,
                                             NegativeDistribution dist =
                                                 NegativeDistribution::DegreeToThreeQuarters) {
  NegativeSampler sampler(lg, dist);
  SplitMix64 rng(seed);
  return sampler.sample(v, count, table, rng);
}

}  // namespace roadgnn
