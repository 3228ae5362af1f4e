#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "roadgnn/error.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/sampling.hpp"
#include "roadgnn/tensor.hpp"

namespace roadgnn {

// Everything a training run consumes: the featurized line graph, the split,
// and the topological neighborhood table. Reads of the test ids go through
// test_ids() so protocols can assert how often the test set was touched.
struct Dataset {
  LineGraph lg;
  NodeSplit split;
  NeighborhoodTable topo;
  ad::Mat features;          // one row per line-graph node
  std::vector<int> labels;   // -1 = absent
  mutable long test_reads = 0;

  std::size_t size() const { return lg.size(); }
  int feature_dim() const { return features.cols; }

  const std::vector<LNodeId>& train_ids() const { return split.train; }
  const std::vector<LNodeId>& val_ids() const { return split.val; }
  const std::vector<LNodeId>& test_ids() const {
    ++test_reads;
    return split.test;
  }

  std::vector<LNodeId> labeled(const std::vector<LNodeId>& ids) const {
    std::vector<LNodeId> out;
    for (LNodeId v : ids)
      if (labels[v] >= 0) out.push_back(v);
    return out;
  }

  static Dataset from_parts(LineGraph lg_in, NodeSplit split_in, NeighborhoodTable topo_in) {
    Dataset d;
    d.lg = std::move(lg_in);
    d.split = std::move(split_in);
    d.topo = std::move(topo_in);
    if (d.lg.features.empty())
      throw invariant_error("dataset: line graph has no features; run the prepare stage first");
    const int dim = static_cast<int>(d.lg.features.front().size());
    d.features = ad::Mat(static_cast<int>(d.lg.size()), dim);
    for (std::size_t i = 0; i < d.lg.size(); ++i) {
      if (static_cast<int>(d.lg.features[i].size()) != dim)
        throw invariant_error("dataset: ragged feature rows");
      for (int j = 0; j < dim; ++j) d.features.at(static_cast<int>(i), j) = d.lg.features[i][j];
    }
    d.labels.assign(d.lg.size(), -1);
    for (std::size_t i = 0; i < d.lg.size(); ++i)
      if (d.lg.labels[i]) d.labels[i] = *d.lg.labels[i];
    throw_on_violations(validate_split(d.split, d.lg.size()));
    return d;
  }

  // Loads the line-graph artifact; the neighborhood table comes from the
  // sidecar cache when present, otherwise it is built from `walks`.
  static Dataset load(const std::string& lg_path, const WalkConfig& walks) {
    NodeSplit split;
    LineGraph lg = load_line_graph(lg_path, &split);
    if (split.train.empty() && split.val.empty() && split.test.empty())
      throw invariant_error("dataset: line-graph file carries no split; re-run prepare");
    const std::string topo_path = sidecar_path(lg_path, "topo");
    NeighborhoodTable topo;
    if (std::filesystem::exists(topo_path)) {
      topo = load_neighborhood_table(topo_path);
    } else {
      topo = build_topological_neighborhood(lg, walks);
    }
    return from_parts(std::move(lg), std::move(split), std::move(topo));
  }

  static std::string sidecar_path(const std::string& lg_path, const std::string& tag) {
    std::filesystem::path p(lg_path);
    std::filesystem::path stem = p.parent_path() / p.stem();
    return stem.string() + "." + tag + ".json";
  }
};

// Seeded split helper for prepare/synthetic datasets: shuffles all node ids
// and carves off validation and test sets of the requested sizes.
inline NodeSplit make_transductive_split(std::size_t n, std::size_t val_count,
                                         std::size_t test_count, std::uint64_t seed) {
  if (val_count + test_count >= n)
    throw config_error("split: val + test must leave at least one training node");
  std::vector<LNodeId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<LNodeId>(i);
  SplitMix64 rng = SplitMix64::substream(seed, 0x5917ull);
  rng.shuffle(ids);
  NodeSplit s;
  s.val.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(val_count));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(val_count),
                ids.begin() + static_cast<std::ptrdiff_t>(val_count + test_count));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(val_count + test_count), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// Inductive split over whole graphs: the last `val_graphs` + `test_graphs`
// graph ids (shuffled by seed) are held out, mirroring a 13/2/2 allocation.
inline NodeSplit make_inductive_split(const LineGraph& lg, std::size_t n_graphs,
                                      std::size_t val_graphs, std::size_t test_graphs,
                                      std::uint64_t seed) {
  if (lg.graph_ids.size() != lg.size())
    throw invariant_error("inductive split requires per-node graph ids");
  if (val_graphs + test_graphs >= n_graphs)
    throw config_error("split: val + test graphs must leave at least one training graph");
  std::vector<std::uint32_t> gids(n_graphs);
  for (std::size_t i = 0; i < n_graphs; ++i) gids[i] = static_cast<std::uint32_t>(i);
  SplitMix64 rng = SplitMix64::substream(seed, 0x1d5ull);
  rng.shuffle(gids);
  std::vector<int> role(n_graphs, 0);  // 0 train, 1 val, 2 test
  for (std::size_t i = 0; i < val_graphs; ++i) role[gids[i]] = 1;
  for (std::size_t i = val_graphs; i < val_graphs + test_graphs; ++i) role[gids[i]] = 2;
  NodeSplit s;
  for (std::size_t v = 0; v < lg.size(); ++v) {
    switch (role[lg.graph_ids[v]]) {
      case 0: s.train.push_back(static_cast<LNodeId>(v)); break;
      case 1: s.val.push_back(static_cast<LNodeId>(v)); break;
      default: s.test.push_back(static_cast<LNodeId>(v)); break;
    }
  }
  return s;
}

}  // namespace roadgnn
