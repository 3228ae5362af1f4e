#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/rng.hpp"
#include "roadgnn/tensor.hpp"

namespace roadgnn {

constexpr int kNumClasses = 5;

// Prediction-pooled F1 over single-label multiclass predictions; equal to
// accuracy in this setting.
inline double micro_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty()) throw invariant_error("micro_f1: empty input");
  if (pred.size() != truth.size()) throw invariant_error("micro_f1: length mismatch");
  std::size_t tp = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++tp;
  return static_cast<double>(tp) / static_cast<double>(pred.size());
}

struct MetricsReport {
  double micro = 0.0;     // mean micro-F1 over runs
  double stddev = 0.0;    // std of per-run micro-F1
  int runs = 1;
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> confusion{};  // pooled, [truth][pred]
  std::array<double, kNumClasses> precision{}, recall{}, f1{};

  void finalize_per_class() {
    for (int c = 0; c < kNumClasses; ++c) {
      std::int64_t tp = confusion[c][c], fp = 0, fn = 0;
      for (int r = 0; r < kNumClasses; ++r) {
        if (r != c) {
          fp += confusion[r][c];
          fn += confusion[c][r];
        }
      }
      precision[c] = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
      recall[c] = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
      f1[c] = precision[c] + recall[c] == 0.0
                  ? 0.0
                  : 2.0 * precision[c] * recall[c] / (precision[c] + recall[c]);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& row : confusion) jc.push_back(row);
    return {{"micro_f1", micro},   {"stddev", stddev},       {"runs", runs},
            {"confusion", jc},     {"precision", precision}, {"recall", recall},
            {"f1_per_class", f1}};
  }
};

inline MetricsReport metrics_from_predictions(const std::vector<int>& pred,
                                              const std::vector<int>& truth) {
  MetricsReport r;
  r.micro = micro_f1(pred, truth);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (truth[i] >= 0 && truth[i] < kNumClasses && pred[i] >= 0 && pred[i] < kNumClasses)
      r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1;
  r.finalize_per_class();
  return r;
}

// ---------------------------------------------------------------------------
// Downstream linear probe: multinomial logistic regression trained with
// minibatch Adam on plain arrays, independent of the autodiff engine.

struct ProbeConfig {
  int epochs = 300;
  double lr = 0.05;
  int batch = 32;
};

namespace probe_detail {

struct Adam {
  std::vector<double> m, v;
  std::int64_t t = 0;
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double>& w, const std::vector<double>& g, double lr) {
    t += 1;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
    }
  }
};

}  // namespace probe_detail

// Fits softmax regression on (Xtr, ytr) and predicts classes for Xev.
// Fresh seeds vary both the initialization and the minibatch shuffling.
inline std::vector<int> softmax_fit_predict(const ad::Mat& Xtr, const std::vector<int>& ytr,
                                            const ad::Mat& Xev, std::uint64_t seed,
                                            const ProbeConfig& pc = {}) {
  const int n = Xtr.rows, d = Xtr.cols;
  if (n == 0) throw invariant_error("softmax probe: empty training set");
  {
    const int first = ytr.at(0);
    bool single = true;
    for (int y : ytr) single = single && y == first;
    if (single) throw invariant_error("softmax probe: degenerate single-class training split");
  }
  SplitMix64 rng(seed);
  const double bound = std::sqrt(6.0 / (d + kNumClasses));
  std::vector<double> W(static_cast<std::size_t>(d) * kNumClasses);
  for (auto& w : W) w = rng.uniform(-bound, bound);
  std::vector<double> b(kNumClasses, 0.0);
  probe_detail::Adam optW(W.size()), optB(b.size());

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> logits(kNumClasses), probs(kNumClasses);
  std::vector<double> gW(W.size()), gB(b.size());

  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(pc.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(pc.batch));
      std::fill(gW.begin(), gW.end(), 0.0);
      std::fill(gB.begin(), gB.end(), 0.0);
      for (std::size_t r = start; r < end; ++r) {
        const std::size_t i = order[r];
        const double* x = Xtr.a.data() + i * static_cast<std::size_t>(d);
        double mx = -1e300;
        for (int c = 0; c < kNumClasses; ++c) {
          double s = b[static_cast<std::size_t>(c)];
          for (int j = 0; j < d; ++j) s += x[j] * W[static_cast<std::size_t>(j) * kNumClasses + c];
          logits[static_cast<std::size_t>(c)] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
          probs[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - mx);
          z += probs[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < kNumClasses; ++c) {
          const double p = probs[static_cast<std::size_t>(c)] / z;
          const double delta = p - (c == ytr[i] ? 1.0 : 0.0);
          gB[static_cast<std::size_t>(c)] += delta;
          for (int j = 0; j < d; ++j)
            gW[static_cast<std::size_t>(j) * kNumClasses + c] += delta * x[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : gW) g *= inv;
      for (auto& g : gB) g *= inv;
      optW.step(W, gW, pc.lr);
      optB.step(b, gB, pc.lr);
    }
  }

  std::vector<int> pred(static_cast<std::size_t>(Xev.rows));
  for (int i = 0; i < Xev.rows; ++i) {
    const double* x = Xev.a.data() + static_cast<std::size_t>(i) * d;
    int best = 0;
    double best_s = -1e300;
    for (int c = 0; c < kNumClasses; ++c) {
      double s = b[static_cast<std::size_t>(c)];
      for (int j = 0; j < d; ++j) s += x[j] * W[static_cast<std::size_t>(j) * kNumClasses + c];
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    pred[static_cast<std::size_t>(i)] = best;
  }
  return pred;
}

namespace eval_detail {

inline ad::Mat take_rows(const ad::Mat& X, const std::vector<LNodeId>& ids) {
  ad::Mat out(static_cast<int>(ids.size()), X.cols);
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (int j = 0; j < X.cols; ++j)
      out.at(static_cast<int>(r), j) = X.at(static_cast<int>(ids[r]), j);
  return out;
}

}  // namespace eval_detail

// Repeated-classifier protocol: `runs` independently seeded probes fit on
// the training rows and scored on the eval rows; reports mean and standard
// deviation of micro-F1 plus the pooled confusion matrix.
inline MetricsReport downstream_classify(const ad::Mat& vectors, const std::vector<int>& labels,
                                         const std::vector<LNodeId>& train_ids,
                                         const std::vector<LNodeId>& eval_ids, int runs,
                                         std::uint64_t seed, const ProbeConfig& pc = {}) {
  std::vector<LNodeId> tr, ev;
  for (LNodeId v : train_ids)
    if (labels[v] >= 0) tr.push_back(v);
  for (LNodeId v : eval_ids)
    if (labels[v] >= 0) ev.push_back(v);
  if (tr.empty() || ev.empty())
    throw invariant_error("downstream_classify: no labeled nodes in a split");

  const ad::Mat Xtr = eval_detail::take_rows(vectors, tr);
  const ad::Mat Xev = eval_detail::take_rows(vectors, ev);
  std::vector<int> ytr, yev;
  for (LNodeId v : tr) ytr.push_back(labels[v]);
  for (LNodeId v : ev) yev.push_back(labels[v]);

  MetricsReport report;
  report.runs = runs;
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    const std::vector<int> pred =
        softmax_fit_predict(Xtr, ytr, Xev, SplitMix64::substream(seed, static_cast<std::uint64_t>(r)).next_u64(), pc);
    scores.push_back(micro_f1(pred, yev));
    for (std::size_t i = 0; i < pred.size(); ++i)
      report.confusion[static_cast<std::size_t>(yev[i])][static_cast<std::size_t>(pred[i])] += 1;
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  report.micro = mean;
  report.stddev = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size())) : 0.0;
  report.finalize_per_class();
  return report;
}

// Table-2 style baseline: the same probe applied to the raw feature vectors.
inline MetricsReport raw_feature_baseline(const ad::Mat& raw_features,
                                          const std::vector<int>& labels,
                                          const std::vector<LNodeId>& train_ids,
                                          const std::vector<LNodeId>& eval_ids, int runs,
                                          std::uint64_t seed, const ProbeConfig& pc = {}) {
  return downstream_classify(raw_features, labels, train_ids, eval_ids, runs, seed, pc);
}

// Uniform random predictions; the other Table-2 baseline.
inline std::vector<int> random_predictions(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<int> out(n);
  for (auto& p : out) p = static_cast<int>(rng.uniform_int(kNumClasses));
  return out;
}

}  // namespace roadgnn
