#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "roadgnn/aggregators.hpp"
#include "roadgnn/data.hpp"
#include "roadgnn/error.hpp"
#include "roadgnn/eval.hpp"
#include "roadgnn/optim.hpp"
#include "roadgnn/sampling.hpp"
#include "roadgnn/tensor.hpp"

namespace roadgnn {

enum class Mode { Supervised, Unsupervised };
enum class Task { Transductive, Inductive };

struct TrainConfig {
  Mode mode = Mode::Supervised;
  Task task = Task::Transductive;
  std::string aggregator = "gain";
  double lr = 1e-3;
  int dim = 64;
  int epochs = 500;      // 1000 unsupervised / 500 supervised by default
  int batch = 1024;      // 1024 transductive / 2048 inductive by default
  double dropout = 0.1;
  int negatives = 12;
  FanoutPlan fanouts;    // 9, 3
  EpsilonPolicy epsilon = EpsilonPolicy::FixedZero;
  InnerSigma sigma = InnerSigma::Identity;
  int heads = 1;
  std::uint64_t seed = 1;
  int val_every = 10;
  int probe_runs = 1;    // probe repetitions during unsupervised validation
  int eval_runs = 50;    // classifier repetitions for final unsupervised eval
  WalkConfig walks = WalkConfig::make(25, 5, 1);
  std::string data_path;

  AggregatorConfig aggregator_config() const {
    AggregatorConfig c;
    c.kind = aggregator_from_key(aggregator);
    c.heads = heads;
    c.sigma = sigma;
    c.epsilon = epsilon;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"schema", 1},
            {"mode", mode == Mode::Supervised ? "supervised" : "unsupervised"},
            {"task", task == Task::Transductive ? "transductive" : "inductive"},
            {"aggregator", aggregator},
            {"lr", lr},
            {"dim", dim},
            {"epochs", epochs},
            {"batch", batch},
            {"dropout", dropout},
            {"negatives", negatives},
            {"fanouts", {fanouts.hop1, fanouts.hop2}},
            {"epsilon", epsilon == EpsilonPolicy::FixedZero
                            ? "fixed-zero"
                            : (epsilon == EpsilonPolicy::LearnFrom0p001 ? "learn-0.001" : "learn-0.5")},
            {"sigma", sigma == InnerSigma::Identity ? "identity" : "elu"},
            {"heads", heads},
            {"seed", seed},
            {"val_every", val_every},
            {"probe_runs", probe_runs},
            {"eval_runs", eval_runs},
            {"walks", walks.num_walks},
            {"local_len", walks.local_len},
            {"data", data_path}};
  }

  static TrainConfig from_json(const nlohmann::json& j, bool require_lr_dim = true) {
    TrainConfig c;
    auto need = [&j](const char* key) {
      if (!j.contains(key)) throw config_error(std::string("config: missing required key \"") + key + "\"");
      return j.at(key);
    };
    const std::string mode = need("mode").get<std::string>();
    if (mode == "supervised")
      c.mode = Mode::Supervised;
    else if (mode == "unsupervised")
      c.mode = Mode::Unsupervised;
    else
      throw config_error("config: mode must be \"supervised\" or \"unsupervised\"");
    const std::string task = need("task").get<std::string>();
    if (task == "transductive")
      c.task = Task::Transductive;
    else if (task == "inductive")
      c.task = Task::Inductive;
    else
      throw config_error("config: task must be \"transductive\" or \"inductive\"");
    c.aggregator = need("aggregator").get<std::string>();
    aggregator_from_key(c.aggregator);
    c.data_path = need("data").get<std::string>();
    if (require_lr_dim) {
      c.lr = need("lr").get<double>();
      c.dim = need("dim").get<int>();
    } else {
      c.lr = j.value("lr", c.lr);
      c.dim = j.value("dim", c.dim);
    }
    c.epochs = j.value("epochs", c.mode == Mode::Unsupervised ? 1000 : 500);
    c.batch = j.value("batch", c.task == Task::Transductive ? 1024 : 2048);
    c.dropout = j.value("dropout", 0.1);
    c.negatives = j.value("negatives", 12);
    if (j.contains("fanouts")) {
      c.fanouts.hop1 = j.at("fanouts").at(0).get<int>();
      c.fanouts.hop2 = j.at("fanouts").at(1).get<int>();
    }
    if (j.contains("epsilon")) {
      const std::string e = j.at("epsilon").get<std::string>();
      if (e == "fixed-zero")
        c.epsilon = EpsilonPolicy::FixedZero;
      else if (e == "learn-0.001")
        c.epsilon = EpsilonPolicy::LearnFrom0p001;
      else if (e == "learn-0.5")
        c.epsilon = EpsilonPolicy::LearnFrom0p5;
      else
        throw config_error("config: epsilon must be fixed-zero, learn-0.001 or learn-0.5");
    }
    if (j.contains("sigma")) {
      const std::string sg = j.at("sigma").get<std::string>();
      if (sg == "identity")
        c.sigma = InnerSigma::Identity;
      else if (sg == "elu")
        c.sigma = InnerSigma::Elu;
      else
        throw config_error("config: sigma must be identity or elu");
    }
    c.heads = j.value("heads", 1);
    c.seed = j.value("seed", std::uint64_t{1});
    c.val_every = j.value("val_every", 10);
    c.probe_runs = j.value("probe_runs", 1);
    c.eval_runs = j.value("eval_runs", 50);
    c.walks = WalkConfig::make(j.value("walks", 25), j.value("local_len", 5), c.seed);
    if (j.contains("global_len")) c.walks.global_len = j.at("global_len").get<int>();
    return c;
  }
};

struct RunResult {
  std::vector<std::pair<int, double>> loss_curve;  // (epoch, mean batch loss)
  std::vector<std::pair<int, double>> val_history; // (epoch, micro-F1)
  int best_epoch = -1;
  double best_val_f1 = -1.0;
  ad::ParamStore best_params;
  double test_f1 = std::numeric_limits<double>::quiet_NaN();
  std::size_t clamp_activations = 0;
  long positives_checked = 0;

  nlohmann::json metrics_json() const {
    nlohmann::json j = {{"best_epoch", best_epoch},
                        {"best_val_f1", best_val_f1},
                        {"loss_curve", loss_curve},
                        {"val_history", val_history},
                        {"clamp_activations", clamp_activations}};
    if (std::isfinite(test_f1)) j["test_f1"] = test_f1;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Losses

// Graph-based unsupervised loss: -log sig(z_v . z_pos) minus the mean over
// sampled negatives of log sig(-z_v . z_neg). Rows are expected to be
// l2-normalized; sigmoid outputs are clamped away from 0/1 by 1e-12 before
// the log, with activations counted.
inline ad::Var unsup_loss(ad::Var z_v, ad::Var z_pos, ad::Var z_negs, int negatives_per_node,
                          std::size_t* clamp_activations = nullptr) {
  if (z_negs.rows() != z_v.rows() * negatives_per_node)
    throw engine_error("unsup_loss: negative rows != batch * negatives");
  ad::Var pos_term = ad::neg(
      ad::log_op(ad::clamp(ad::sigmoid(ad::rowwise_dot(z_v, z_pos)), 1e-12, 1.0 - 1e-12,
                           clamp_activations)));
  ad::Var rep = ad::repeat_rows(z_v, negatives_per_node);
  ad::Var neg_term_each = ad::neg(
      ad::log_op(ad::clamp(ad::sigmoid(ad::neg(ad::rowwise_dot(rep, z_negs))), 1e-12,
                           1.0 - 1e-12, clamp_activations)));
  ad::Var neg_term = ad::group_mean(neg_term_each, negatives_per_node);
  return ad::mean_all(ad::add(pos_term, neg_term));
}

// Cross entropy of a one-layer linear classifier on the embeddings; rows
// without a label are excluded.
inline ad::Var sup_loss(ad::Var embeddings, const std::vector<int>& labels, ad::Var clf_w,
                        ad::Var clf_b) {
  return ad::cross_entropy(ad::add_rowvec(ad::matmul(embeddings, clf_w), clf_b), labels);
}

// ---------------------------------------------------------------------------
// Training loop

namespace train_detail {

inline std::vector<int> predict_classes(const ad::Mat& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows));
  for (int i = 0; i < logits.rows; ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline ad::Mat linear_forward(const ad::Mat& X, const ad::Mat& W, const ad::Mat& b) {
  ad::Mat out(X.rows, W.cols);
  ad::kernel::matmul_acc(X.a.data(), W.a.data(), out.a.data(), X.rows, X.cols, W.cols);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += b.at(0, j);
  return out;
}

}  // namespace train_detail

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& data)
      : cfg_(cfg),
        data_(data),
        encoder_(cfg.aggregator_config(), data.feature_dim(), cfg.dim) {
    encoder_.init_params(store_, cfg.seed);
    if (cfg_.mode == Mode::Supervised) {
      store_.create("clf/W", ad::init_params(cfg_.dim, kNumClasses, ad::InitScheme::GlorotUniform,
                                             SplitMix64::substream(cfg_.seed, 0xC1Full).next_u64()));
      store_.create("clf/b", ad::init_params(1, kNumClasses, ad::InitScheme::Zeros, 0));
    } else {
      neg_sampler_.emplace(data.lg);
    }
  }

  ad::ParamStore& store() { return store_; }
  const TwoHopEncoder& encoder() const { return encoder_; }

  // One full pass over the training pool in shuffled batch order per epoch.
  // The loss curve and validation score are recorded every `val_every`
  // epochs; the best validation checkpoint is kept. Deterministic per seed.
  RunResult train() {
    RunResult result;
    const std::vector<LNodeId> pool = training_pool();
    if (pool.empty()) throw train_error("training pool is empty");

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<LNodeId> order = pool;
      SplitMix64 shuffle_rng = SplitMix64::substream(cfg_.seed, 0xE90C4ull + static_cast<std::uint64_t>(epoch));
      shuffle_rng.shuffle(order);
      double epoch_loss = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg_.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
        std::vector<LNodeId> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
        const double loss = train_batch(batch, epoch, batches, result);
        if (!std::isfinite(loss))
          throw train_error("NaN/Inf loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + " (aggregator " + cfg_.aggregator +
                            ", lr " + std::to_string(cfg_.lr) + ")");
        epoch_loss += loss;
        ++batches;
      }
      epoch_loss /= std::max(1, batches);

      if ((epoch + 1) % cfg_.val_every == 0 || epoch + 1 == cfg_.epochs) {
        result.loss_curve.emplace_back(epoch + 1, epoch_loss);
        const double val = validation_f1();
        result.val_history.emplace_back(epoch + 1, val);
        if (val > result.best_val_f1) {
          result.best_val_f1 = val;
          result.best_epoch = epoch + 1;
          result.best_params = store_.clone_values();
        }
      }
    }
    if (result.best_epoch < 0) {
      result.best_params = store_.clone_values();
      result.best_epoch = cfg_.epochs;
    }
    result.clamp_activations = clamp_activations_;
    result.positives_checked = positives_checked_;
    return result;
  }

  // Embeddings under the current parameters, infer mode.
  ad::Mat embed(const std::vector<LNodeId>& ids, std::uint64_t seed_offset = 0xEEull) const {
    return encoder_.encode_all(const_cast<ad::ParamStore&>(store_), data_.lg, data_.features, ids,
                               cfg_.fanouts, SplitMix64::substream(cfg_.seed, seed_offset).next_u64());
  }

  // Supervised predictions for the given nodes under current parameters.
  std::vector<int> predict(const std::vector<LNodeId>& ids) const {
    const ad::Mat z = embed(ids);
    const ad::Mat logits = train_detail::linear_forward(z, store_.at("clf/W").value(),
                                                        store_.at("clf/b").value());
    return train_detail::predict_classes(logits);
  }

  double validation_f1() const { return split_f1(data_.val_ids(), 0xA11DAull, cfg_.probe_runs); }

  // Scores the test split once; reads of the ids are counted by the dataset.
  double test_f1() const { return split_f1(data_.test_ids(), 0x7E57ull, cfg_.eval_runs); }

 private:
  std::vector<LNodeId> training_pool() const {
    if (cfg_.mode == Mode::Supervised) return data_.labeled(data_.train_ids());
    std::vector<LNodeId> pool;
    for (LNodeId v : data_.train_ids())
      if (!data_.topo.topo[v].empty()) pool.push_back(v);
    return pool;
  }

  double train_batch(const std::vector<LNodeId>& batch, int epoch, int batch_index,
                     RunResult& result) {
    store_.zero_grad();
    const std::uint64_t sample_seed =
        SplitMix64::substream(cfg_.seed, (static_cast<std::uint64_t>(epoch) << 20) ^
                                             static_cast<std::uint64_t>(batch_index))
            .next_u64();
    ad::Var loss;
    if (cfg_.mode == Mode::Supervised) {
      ad::Var z = encoder_.encode(store_, data_.lg, data_.features, batch, cfg_.fanouts,
                                  RunMode::Train, cfg_.dropout, sample_seed);
      std::vector<int> ys;
      ys.reserve(batch.size());
      for (LNodeId v : batch) ys.push_back(data_.labels[v]);
      loss = sup_loss(z, ys, store_.at("clf/W"), store_.at("clf/b"));
    } else {
      loss = unsup_batch_loss(batch, sample_seed, result);
    }
    const double loss_value = loss.scalar();
    ad::backward(loss);
    store_.adam_step(cfg_.lr);
    return loss_value;
  }

  // Positives are resampled uniformly from the fixed N_t(v) each batch;
  // negatives come from the degree^0.75 unigram excluding v and N_t(v).
  // All distinct nodes in the batch union are encoded once and indexed.
  ad::Var unsup_batch_loss(const std::vector<LNodeId>& batch, std::uint64_t sample_seed,
                           RunResult& result) {
    SplitMix64 rng = SplitMix64::substream(sample_seed, 0x90511ull);
    std::vector<LNodeId> positives;
    positives.reserve(batch.size());
    std::vector<LNodeId> negatives;
    negatives.reserve(batch.size() * static_cast<std::size_t>(cfg_.negatives));
    for (LNodeId v : batch) {
      const auto& topo = data_.topo.topo[v];
      const LNodeId u = topo[rng.uniform_int(topo.size())];
      // Membership assertion: positives must come from N_t(v).
      if (std::find(topo.begin(), topo.end(), u) == topo.end())
        throw train_error("positive pair outside topological neighborhood");
      ++positives_checked_;
      positives.push_back(u);
      const auto negs = neg_sampler_->sample(v, cfg_.negatives, data_.topo, rng);
      negatives.insert(negatives.end(), negs.begin(), negs.end());
    }

    std::vector<LNodeId> uniq;
    uniq.reserve(batch.size() * 3);
    uniq.insert(uniq.end(), batch.begin(), batch.end());
    uniq.insert(uniq.end(), positives.begin(), positives.end());
    uniq.insert(uniq.end(), negatives.begin(), negatives.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::unordered_map<LNodeId, int> index;
    index.reserve(uniq.size());
    for (std::size_t i = 0; i < uniq.size(); ++i) index[uniq[i]] = static_cast<int>(i);

    ad::Var z_all = encoder_.encode(store_, data_.lg, data_.features, uniq, cfg_.fanouts,
                                    RunMode::Train, cfg_.dropout, sample_seed);
    auto rows_of = [&index](const std::vector<LNodeId>& ids) {
      std::vector<int> rows;
      rows.reserve(ids.size());
      for (LNodeId v : ids) rows.push_back(index.at(v));
      return rows;
    };
    ad::Var z_v = ad::gather_rows(z_all, rows_of(batch));
    ad::Var z_pos = ad::gather_rows(z_all, rows_of(positives));
    ad::Var z_neg = ad::gather_rows(z_all, rows_of(negatives));
    (void)result;
    return unsup_loss(z_v, z_pos, z_neg, cfg_.negatives, &clamp_activations_);
  }

  double split_f1(const std::vector<LNodeId>& ids, std::uint64_t salt, int probe_runs) const {
    const std::vector<LNodeId> labeled = data_.labeled(ids);
    if (labeled.empty()) throw train_error("no labeled nodes in evaluation split");
    std::vector<int> truth;
    truth.reserve(labeled.size());
    for (LNodeId v : labeled) truth.push_back(data_.labels[v]);
    if (cfg_.mode == Mode::Supervised) {
      return micro_f1(predict(labeled), truth);
    }
    // Unsupervised: linear probe fit on training embeddings, scored on the
    // requested split, averaged over probe_runs.
    const std::vector<LNodeId> train_labeled = data_.labeled(data_.train_ids());
    std::vector<LNodeId> all = train_labeled;
    all.insert(all.end(), labeled.begin(), labeled.end());
    const ad::Mat z = embed(all, salt);
    std::vector<int> all_labels;
    for (LNodeId v : all) all_labels.push_back(data_.labels[v]);
    std::vector<LNodeId> tr_rows(train_labeled.size()), ev_rows(labeled.size());
    for (std::size_t i = 0; i < train_labeled.size(); ++i) tr_rows[i] = static_cast<LNodeId>(i);
    for (std::size_t i = 0; i < labeled.size(); ++i)
      ev_rows[i] = static_cast<LNodeId>(train_labeled.size() + i);
    const MetricsReport rep = downstream_classify(z, all_labels, tr_rows, ev_rows, probe_runs,
                                                  SplitMix64::substream(cfg_.seed, salt).next_u64());
    return rep.micro;
  }

  TrainConfig cfg_;
  const Dataset& data_;
  TwoHopEncoder encoder_;
  ad::ParamStore store_;
  std::optional<NegativeSampler> neg_sampler_;
  std::size_t clamp_activations_ = 0;
  long positives_checked_ = 0;
};

inline RunResult train(const TrainConfig& cfg, const Dataset& data) {
  Trainer t(cfg, data);
  return t.train();
}

// Evaluates the best checkpoint of a finished run on the test split
// (supervised: classifier predictions; unsupervised: repeated downstream
// classifier). Touches the test ids exactly once.
inline double evaluate_test(const TrainConfig& cfg, const Dataset& data, RunResult& result) {
  Trainer t(cfg, data);
  t.store().restore_values(result.best_params);
  result.test_f1 = t.test_f1();
  return result.test_f1;
}

// ---------------------------------------------------------------------------
// Grid search (Table-3 grids)

inline std::vector<double> grid_learning_rates(Mode mode) {
  if (mode == Mode::Unsupervised) return {2e-8, 2e-7, 2e-6, 2e-5};
  return {1e-4, 1e-3, 1e-2};
}

inline std::vector<int> grid_dimensions() { return {64, 128, 256}; }

struct GridCell {
  TrainConfig config;
  RunResult result;
};

struct GridOutcome {
  std::vector<GridCell> cells;
  std::size_t best_index = 0;
  double test_f1 = std::numeric_limits<double>::quiet_NaN();
};

// Tie-break: lower learning rate first, then smaller dimension. Cells are
// generated in ascending (lr, dim) order, so keeping the first strict
// maximum implements the rule.
inline std::size_t select_best_cell(const std::vector<GridCell>& cells) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].result.best_val_f1 > cells[best].result.best_val_f1) best = i;
  return best;
}

inline void write_run_artifacts(const std::string& dir, const TrainConfig& cfg,
                                const RunResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/config.json");
    out << cfg.to_json().dump(1) << "\n";
  }
  {
    std::ofstream out(dir + "/loss.csv");
    out << "epoch,loss,val_f1\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      out << result.loss_curve[i].first << "," << result.loss_curve[i].second << ",";
      if (i < result.val_history.size()) out << result.val_history[i].second;
      out << "\n";
    }
  }
  result.best_params.save(dir + "/checkpoint.json");
  {
    std::ofstream out(dir + "/metrics.json");
    out << result.metrics_json().dump(1) << "\n";
  }
}

// Trains every (lr, dim) cell of the Table-3 grid for the configured mode,
// selects the best validation micro-F1 and reads the test set exactly once,
// on the winner. `workers` > 1 trains cells concurrently.
inline GridOutcome grid_search(const TrainConfig& base, const Dataset& data,
                               const std::string& run_root = "", int workers = 1) {
  GridOutcome out;
  for (double lr : grid_learning_rates(base.mode)) {
    for (int dim : grid_dimensions()) {
      GridCell cell;
      cell.config = base;
      cell.config.lr = lr;
      cell.config.dim = dim;
      out.cells.push_back(std::move(cell));
    }
  }

  const long test_reads_before = data.test_reads;
  if (workers <= 1) {
    for (auto& cell : out.cells) cell.result = train(cell.config, data);
  } else {
    std::vector<std::thread> threads;
    std::size_t next = 0;
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&]() {
      for (;;) {
        std::size_t mine;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= out.cells.size() || first_error) return;
          mine = next++;
        }
        try {
          out.cells[mine].result = train(out.cells[mine].config, data);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    const int n = std::min<int>(workers, static_cast<int>(out.cells.size()));
    threads.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  out.best_index = select_best_cell(out.cells);
  out.test_f1 = evaluate_test(out.cells[out.best_index].config, data,
                              out.cells[out.best_index].result);
  if (data.test_reads - test_reads_before != 1)
    throw train_error("grid search touched the test set " +
                      std::to_string(data.test_reads - test_reads_before) +
                      " times; expected exactly once");

  if (!run_root.empty()) {
    std::filesystem::create_directories(run_root);
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
      const auto& c = out.cells[i];
      char dir[64];
      std::snprintf(dir, sizeof(dir), "cell_lr%.0e_dim%d", c.config.lr, c.config.dim);
      write_run_artifacts(run_root + "/" + dir, c.config, c.result);
    }
    nlohmann::json best = {{"best_cell",
                            {{"lr", out.cells[out.best_index].config.lr},
                             {"dim", out.cells[out.best_index].config.dim}}},
                           {"best_val_f1", out.cells[out.best_index].result.best_val_f1},
                           {"test_f1", out.test_f1}};
    std::ofstream bf(run_root + "/best.json");
    bf << best.dump(1) << "\n";
  }
  return out;
}

}  // namespace roadgnn
