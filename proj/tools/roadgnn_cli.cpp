// Command-line pipeline: synth -> prepare -> train/grid -> eval (+ inspect).
// Every stage is deterministic given its inputs and --seed; failures print a
// machine-readable error JSON on stderr and exit nonzero (2 for usage or
// config errors, 1 otherwise).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "roadgnn/data.hpp"
#include "roadgnn/error.hpp"
#include "roadgnn/eval.hpp"
#include "roadgnn/features.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/road_graph.hpp"
#include "roadgnn/sampling.hpp"
#include "roadgnn/synth.hpp"
#include "roadgnn/training.hpp"

namespace {

using namespace roadgnn;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw parse_error("malformed JSON in " + path + ": " + ex.what());
  }
  return j;
}

GraphFormat parse_format(const std::string& fmt, const std::string& path) {
  if (fmt == "graph-json") return GraphFormat::GraphJson;
  if (fmt == "graphml") return GraphFormat::GraphMl;
  if (fmt == "auto")
    return path.size() > 8 && path.substr(path.size() - 8) == ".graphml" ? GraphFormat::GraphMl
                                                                         : GraphFormat::GraphJson;
  throw config_error("unknown graph format: " + fmt);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const std::string& kind, int size, std::uint64_t seed, const std::string& out) {
  RoadGraph g;
  if (kind == "path")
    g = synth_path(size, seed);
  else if (kind == "star")
    g = synth_star(size, seed);
  else if (kind == "grid-city")
    g = synth_grid_city(size, seed);
  else if (kind == "planted-label")
    g = synth_planted_label(size, seed);
  else
    throw config_error("unknown synth kind: " + kind +
                       " (expected path, star, grid-city or planted-label)");
  throw_on_violations(validate(g, /*preprocessed=*/true));
  save_graph(g, out);
  nlohmann::json summary = {{"kind", kind}, {"nodes", g.nodes.size()}, {"edges", g.edges.size()},
                            {"out", out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareOptions {
  std::vector<std::string> inputs;
  std::string format = "auto";
  std::string out;
  double radius = 10.0;
  bool consolidate_first = false;
  bool zscore = false;
  int geometry_points = 20;
  int val_count = 0;   // 0 -> 15% of nodes
  int test_count = 0;  // 0 -> 25% of nodes
  int val_graphs = 2;
  int test_graphs = 2;
  int walks = 25;
  int local_len = 5;
  std::uint64_t seed = 1;
  std::string label_map_path;
};

RoadGraph preprocess(const RoadGraph& raw, const PrepareOptions& opt) {
  RoadGraph g = raw;
  if (opt.consolidate_first && opt.radius > 0.0) g = consolidate_intersections(g, opt.radius);
  g = undirect_and_merge_parallel(g);
  if (!opt.consolidate_first && opt.radius > 0.0) g = consolidate_intersections(g, opt.radius);
  // Consolidation can leave new parallels behind; merge again before
  // interstitial reduction so the graph stays simple.
  g = undirect_and_merge_parallel(g);
  g = reduce_interstitial(g);
  throw_on_violations(validate(g, /*preprocessed=*/true));
  return g;
}

int cmd_prepare(const PrepareOptions& opt) {
  if (opt.inputs.empty()) throw config_error("prepare: at least one --input is required");
  const bool inductive = opt.inputs.size() > 1;
  const LabelMap label_map = opt.label_map_path.empty()
                                 ? LabelMap::standard()
                                 : LabelMap::from_json_file(opt.label_map_path);

  std::vector<RoadGraph> graphs;
  std::vector<LineGraph> lgs;
  for (const auto& path : opt.inputs) {
    RoadGraph g = preprocess(load_graph(path, parse_format(opt.format, path)), opt);
    LineGraph lg = map_labels(to_line_graph(g), label_map);
    graphs.push_back(std::move(g));
    lgs.push_back(std::move(lg));
  }

  NodeSplit split;
  LineGraph combined;
  std::vector<int> train_graph(graphs.size(), 1);
  if (inductive) {
    combined = merge_line_graphs(lgs);
    split = make_inductive_split(combined, graphs.size(),
                                 static_cast<std::size_t>(opt.val_graphs),
                                 static_cast<std::size_t>(opt.test_graphs), opt.seed);
    std::fill(train_graph.begin(), train_graph.end(), 0);
    for (std::size_t v = 0; v < combined.size(); ++v) train_graph[combined.graph_ids[v]] = 1;
    for (LNodeId v : split.val) train_graph[combined.graph_ids[v]] = 0;
    for (LNodeId v : split.test) train_graph[combined.graph_ids[v]] = 0;
  } else {
    combined = lgs.front();
    const std::size_t n = combined.size();
    const std::size_t val = opt.val_count > 0 ? static_cast<std::size_t>(opt.val_count) : n * 15 / 100;
    const std::size_t test = opt.test_count > 0 ? static_cast<std::size_t>(opt.test_count) : n * 25 / 100;
    split = make_transductive_split(n, val, test, opt.seed);
  }

  // Speed vocabulary from the training portion only.
  std::vector<int> training_speeds;
  if (inductive) {
    for (std::size_t p = 0; p < graphs.size(); ++p) {
      if (!train_graph[p]) continue;
      for (const auto& e : graphs[p].edges)
        if (e.maxspeed) training_speeds.push_back(*e.maxspeed);
    }
  } else {
    std::unordered_map<EdgeId, const RoadEdge*> by_id;
    for (const auto& e : graphs.front().edges) by_id[e.id] = &e;
    for (LNodeId v : split.train) {
      const RoadEdge* e = by_id.at(combined.nodes[v].source_edge);
      if (e->maxspeed) training_speeds.push_back(*e->maxspeed);
    }
  }
  FeatureSpec spec = make_feature_spec(training_speeds, opt.geometry_points);

  LineGraph featurized;
  if (inductive) {
    std::vector<LineGraph> parts;
    for (std::size_t p = 0; p < graphs.size(); ++p)
      parts.push_back(featurize(lgs[p], graphs[p], spec));
    featurized = merge_line_graphs(parts);
  } else {
    featurized = featurize(combined, graphs.front(), spec);
  }
  if (opt.zscore) {
    fit_zscore(spec, featurized, split.train);
    for (auto& row : featurized.features)
      for (std::size_t d = 0; d < row.size(); ++d)
        row[d] = (row[d] - spec.mean[d]) / spec.stddev[d];
  }

  const WalkConfig walks = WalkConfig::make(opt.walks, opt.local_len, opt.seed);
  const NeighborhoodTable topo = build_topological_neighborhood(featurized, walks);
  long isolated = 0;
  for (const auto& t : topo.topo)
    if (t.empty()) ++isolated;

  save_line_graph(featurized, opt.out, &split);
  save_feature_spec(spec, Dataset::sidecar_path(opt.out, "featurespec"));
  save_neighborhood_table(topo, Dataset::sidecar_path(opt.out, "topo"));

  const auto hist = class_histogram(featurized);
  nlohmann::json summary = {{"graphs", graphs.size()},
                            {"lnodes", featurized.size()},
                            {"feature_dim", spec.total_dim()},
                            {"speed_vocab", spec.speed_vocab.size()},
                            {"split", {{"train", split.train.size()},
                                       {"val", split.val.size()},
                                       {"test", split.test.size()}}},
                            {"class_histogram", hist},
                            {"isolated_nodes", isolated},
                            {"out", opt.out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / grid

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = TrainConfig::from_json(read_json_file(config_path));
  const Dataset data = Dataset::load(cfg.data_path, cfg.walks);
  RunResult result = train(cfg, data);
  if (!out_dir.empty()) write_run_artifacts(out_dir, cfg, result);
  nlohmann::json j = result.metrics_json();
  j["aggregator"] = cfg.aggregator;
  if (!out_dir.empty()) j["run_dir"] = out_dir;
  std::cout << j.dump(1) << "\n";
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out_dir, int workers) {
  const TrainConfig base = TrainConfig::from_json(read_json_file(config_path),
                                                  /*require_lr_dim=*/false);
  const Dataset data = Dataset::load(base.data_path, base.walks);
  const GridOutcome outcome = grid_search(base, data, out_dir, workers);
  const GridCell& best = outcome.cells[outcome.best_index];
  nlohmann::json j = {{"cells", outcome.cells.size()},
                      {"best", {{"lr", best.config.lr}, {"dim", best.config.dim}}},
                      {"best_val_f1", best.result.best_val_f1},
                      {"test_f1", outcome.test_f1}};
  if (!out_dir.empty()) j["run_root"] = out_dir;
  std::cout << j.dump(1) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

void print_metrics_table(const MetricsReport& rep) {
  std::printf("class  precision  recall  f1\n");
  for (int c = 0; c < kNumClasses; ++c)
    std::printf("%5d  %9.4f  %6.4f  %6.4f\n", c + 1, rep.precision[c], rep.recall[c], rep.f1[c]);
  std::printf("micro-F1: %.4f", rep.micro);
  if (rep.runs > 1) std::printf("  (mean of %d runs, stddev %.4f)", rep.runs, rep.stddev);
  std::printf("\n");
}

int cmd_eval_run(const std::string& run_dir, bool as_json) {
  const TrainConfig cfg = TrainConfig::from_json(read_json_file(run_dir + "/config.json"));
  const Dataset data = Dataset::load(cfg.data_path, cfg.walks);
  Trainer trainer(cfg, data);
  trainer.store().restore_values(ad::ParamStore::load(run_dir + "/checkpoint.json"));

  const std::vector<LNodeId> test = data.labeled(data.test_ids());
  std::vector<int> truth;
  for (LNodeId v : test) truth.push_back(data.labels[v]);

  MetricsReport rep;
  if (cfg.mode == Mode::Supervised) {
    rep = metrics_from_predictions(trainer.predict(test), truth);
  } else {
    const std::vector<LNodeId> train_labeled = data.labeled(data.train_ids());
    std::vector<LNodeId> all = train_labeled;
    all.insert(all.end(), test.begin(), test.end());
    const ad::Mat z = trainer.embed(all);
    std::vector<int> labels;
    for (LNodeId v : all) labels.push_back(data.labels[v]);
    std::vector<LNodeId> tr(train_labeled.size()), ev(test.size());
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = static_cast<LNodeId>(i);
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = static_cast<LNodeId>(tr.size() + i);
    rep = downstream_classify(z, labels, tr, ev, cfg.eval_runs,
                              SplitMix64::substream(cfg.seed, 0xE7A1ull).next_u64());
  }
  {
    std::ofstream out(run_dir + "/test_metrics.json");
    out << rep.to_json().dump(1) << "\n";
  }
  if (as_json)
    std::cout << rep.to_json().dump(1) << "\n";
  else
    print_metrics_table(rep);
  return 0;
}

// Table-2 style comparison: baselines plus one row per run directory under
// --runs-root, with unsupervised and supervised columns.
int cmd_eval_table(const std::string& data_path, const std::string& runs_root, int runs,
                   std::uint64_t seed, const std::string& csv_path) {
  const Dataset data = Dataset::load(data_path, WalkConfig::make(25, 5, seed));
  const std::vector<LNodeId> test = data.labeled(data.test_ids());
  std::vector<int> truth;
  for (LNodeId v : test) truth.push_back(data.labels[v]);

  const double random_f1 = micro_f1(random_predictions(truth.size(), seed), truth);
  const MetricsReport raw = raw_feature_baseline(data.features, data.labels, data.train_ids(),
                                                 test, runs, seed);

  std::map<std::string, std::map<std::string, double>> rows;  // approach -> column -> f1
  if (!runs_root.empty()) {
    for (const auto& entry : std::filesystem::directory_iterator(runs_root)) {
      if (!entry.is_directory()) continue;
      const std::string metrics_path = entry.path().string() + "/test_metrics.json";
      const std::string config_path = entry.path().string() + "/config.json";
      if (!std::filesystem::exists(metrics_path) || !std::filesystem::exists(config_path)) continue;
      const nlohmann::json m = read_json_file(metrics_path);
      const nlohmann::json c = read_json_file(config_path);
      rows[c.at("aggregator").get<std::string>()][c.at("mode").get<std::string>()] =
          m.at("micro_f1").get<double>();
    }
  }

  std::vector<std::pair<std::string, std::map<std::string, double>>> table;
  table.push_back({"Random Baseline", {{"unsupervised", random_f1}, {"supervised", random_f1}}});
  table.push_back({"Raw Features", {{"unsupervised", raw.micro}, {"supervised", raw.micro}}});
  for (const auto& [agg, cols] : rows) table.push_back({agg, cols});

  std::printf("%-18s %8s %8s\n", "Approach", "Unsup.", "Sup.");
  for (const auto& [name, cols] : table) {
    auto cell = [&cols](const char* key) {
      auto it = cols.find(key);
      if (it == cols.end()) return std::string("-");
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.2f", it->second);
      return std::string(buf);
    };
    std::printf("%-18s %8s %8s\n", name.c_str(), cell("unsupervised").c_str(),
                cell("supervised").c_str());
  }
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << "approach,unsupervised,supervised\n";
    for (const auto& [name, cols] : table) {
      csv << name;
      for (const char* key : {"unsupervised", "supervised"}) {
        auto it = cols.find(key);
        csv << ",";
        if (it != cols.end()) csv << it->second;
      }
      csv << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

int cmd_inspect(const std::string& input) {
  const nlohmann::json j = input.size() > 8 && input.substr(input.size() - 8) == ".graphml"
                               ? nlohmann::json()
                               : read_json_file(input);
  nlohmann::json summary;
  if (j.is_object() && j.contains("lnodes")) {
    NodeSplit split;
    const LineGraph lg = line_graph_from_json(j, &split);
    double degree_sum = 0.0;
    for (const auto& nb : lg.adj) degree_sum += static_cast<double>(nb.size());
    summary = {{"type", "line-graph"},
               {"lnodes", lg.size()},
               {"avg_degree", lg.size() ? degree_sum / static_cast<double>(lg.size()) : 0.0},
               {"feature_dim", lg.features.empty() ? 0 : lg.features.front().size()},
               {"class_histogram", class_histogram(lg)},
               {"split", {{"train", split.train.size()},
                          {"val", split.val.size()},
                          {"test", split.test.size()}}}};
  } else {
    const RoadGraph g = load_graph(input, parse_format("auto", input));
    double len = 0.0;
    for (const auto& e : g.edges) len += e.length;
    summary = {{"type", "road-graph"},
               {"nodes", g.nodes.size()},
               {"edges", g.edges.size()},
               {"avg_degree", g.nodes.empty() ? 0.0
                                              : 2.0 * static_cast<double>(g.edges.size()) /
                                                    static_cast<double>(g.nodes.size())},
               {"total_length_m", len}};
  }
  std::cout << summary.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road-network line-graph representation learning toolkit"};
  app.require_subcommand(1);

  // synth
  std::string synth_kind, synth_out;
  int synth_size = 0;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "generate a synthetic road graph");
  synth->add_option("--kind", synth_kind, "path | star | grid-city | planted-label")->required();
  synth->add_option("--size", synth_size, "nodes (path), edges (star, planted-label), side (grid-city)")
      ->required();
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--out", synth_out, "output graph-json path")->required();

  // prepare
  PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare", "preprocess graphs into a line-graph artifact");
  prepare->add_option("--input", prep.inputs, "input graph file(s); several imply inductive")
      ->required();
  prepare->add_option("--format", prep.format, "graph-json | graphml | auto");
  prepare->add_option("--out", prep.out, "output line-graph path")->required();
  prepare->add_option("--radius", prep.radius, "intersection consolidation radius in meters (0 = off)");
  prepare->add_flag("--consolidate-first", prep.consolidate_first,
                    "consolidate intersections before removing directions");
  prepare->add_flag("--zscore", prep.zscore, "standardize features with training statistics");
  prepare->add_option("--geometry-points", prep.geometry_points, "resampled points per segment");
  prepare->add_option("--val-count", prep.val_count, "validation nodes (transductive)");
  prepare->add_option("--test-count", prep.test_count, "test nodes (transductive)");
  prepare->add_option("--val-graphs", prep.val_graphs, "validation graphs (inductive)");
  prepare->add_option("--test-graphs", prep.test_graphs, "test graphs (inductive)");
  prepare->add_option("--walks", prep.walks, "random walks per node");
  prepare->add_option("--local-len", prep.local_len, "local walk length (global is twice this)");
  prepare->add_option("--seed", prep.seed, "random seed");
  prepare->add_option("--label-map", prep.label_map_path, "JSON file overriding the label map");

  // train
  std::string train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "train one model from a config file");
  train_cmd->add_option("--config", train_config, "train config JSON")->required();
  train_cmd->add_option("--out-dir", train_out, "run directory for artifacts");

  // grid
  std::string grid_config, grid_out;
  int grid_workers = 1;
  auto* grid_cmd = app.add_subcommand("grid", "exhaustive lr x dim grid search");
  grid_cmd->add_option("--config", grid_config, "train config JSON (lr/dim ignored)")->required();
  grid_cmd->add_option("--out-dir", grid_out, "root directory for per-cell runs");
  grid_cmd->add_option("--workers", grid_workers, "concurrent cells");

  // eval
  std::string eval_run_dir, eval_data, eval_runs_root, eval_csv;
  int eval_runs = 50;
  std::uint64_t eval_seed = 1;
  bool eval_json = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a run or print the comparison table");
  eval_cmd->add_option("--run-dir", eval_run_dir, "run directory to score on the test split");
  eval_cmd->add_option("--data", eval_data, "line-graph artifact (table mode)");
  eval_cmd->add_option("--runs-root", eval_runs_root, "directory of run directories (table mode)");
  eval_cmd->add_option("--runs", eval_runs, "classifier repetitions for baselines");
  eval_cmd->add_option("--seed", eval_seed, "random seed");
  eval_cmd->add_option("--csv", eval_csv, "also write the table as CSV");
  eval_cmd->add_flag("--json", eval_json, "print metrics as JSON");

  // inspect
  std::string inspect_input;
  auto* inspect_cmd = app.add_subcommand("inspect", "summarize a graph or line-graph file");
  inspect_cmd->add_option("--input", inspect_input, "file to summarize")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_kind, synth_size, synth_seed, synth_out);
    if (prepare->parsed()) return cmd_prepare(prep);
    if (train_cmd->parsed()) return cmd_train(train_config, train_out);
    if (grid_cmd->parsed()) return cmd_grid(grid_config, grid_out, grid_workers);
    if (eval_cmd->parsed()) {
      if (!eval_run_dir.empty()) return cmd_eval_run(eval_run_dir, eval_json);
      if (!eval_data.empty())
        return cmd_eval_table(eval_data, eval_runs_root, eval_runs, eval_seed, eval_csv);
      throw config_error("eval: pass --run-dir or --data");
    }
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_input);
  } catch (const Error& e) {
    nlohmann::json err = {{"error", e.kind()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.kind() == "config" ? 2 : 1;
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
