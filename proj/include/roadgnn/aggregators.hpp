#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roadgnn/error.hpp"
#include "roadgnn/line_graph.hpp"
#include "roadgnn/optim.hpp"
#include "roadgnn/rng.hpp"
#include "roadgnn/sampling.hpp"
#include "roadgnn/tensor.hpp"

namespace roadgnn {

enum class AggregatorKind {
  Gcn,
  SageMean,
  SageMeanPool,
  SageMaxPool,
  SageLstm,
  Gat,
  Gin,
  Gain,
  GainMultiHead,
};

inline const char* aggregator_key(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::Gcn: return "gcn";
    case AggregatorKind::SageMean: return "sage-mean";
    case AggregatorKind::SageMeanPool: return "sage-meanpool";
    case AggregatorKind::SageMaxPool: return "sage-maxpool";
    case AggregatorKind::SageLstm: return "sage-lstm";
    case AggregatorKind::Gat: return "gat";
    case AggregatorKind::Gin: return "gin";
    case AggregatorKind::Gain: return "gain";
    case AggregatorKind::GainMultiHead: return "gain-mh";
  }
  return "?";
}

inline AggregatorKind aggregator_from_key(const std::string& key) {
  for (AggregatorKind k :
       {AggregatorKind::Gcn, AggregatorKind::SageMean, AggregatorKind::SageMeanPool,
        AggregatorKind::SageMaxPool, AggregatorKind::SageLstm, AggregatorKind::Gat,
        AggregatorKind::Gin, AggregatorKind::Gain, AggregatorKind::GainMultiHead}) {
    if (key == aggregator_key(k)) return k;
  }
  throw config_error("unknown aggregator key: " + key +
                     " (expected one of gcn, sage-mean, sage-meanpool, sage-maxpool, "
                     "sage-lstm, gat, gin, gain, gain-mh)");
}

// Nonlinearity applied to the attention-weighted neighbor sum inside GAIN.
enum class InnerSigma { Identity, Elu };

enum class EpsilonPolicy { FixedZero, LearnFrom0p001, LearnFrom0p5 };

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::Gain;
  int heads = 1;  // M, attention heads (gat, gain-mh)
  InnerSigma sigma = InnerSigma::Identity;
  EpsilonPolicy epsilon = EpsilonPolicy::FixedZero;
  // Test hooks: bypass the output sigmoid / the MLP.
  bool output_identity = false;
  bool mlp_identity = false;
};

// Per-instance attention weights captured for inspection.
struct AttnInfo {
  std::vector<std::vector<double>> head_weights;  // per head, flattened groups
  int group = 0;                                  // members per source node
  bool includes_self = false;
};

namespace agg_detail {

inline ad::Var maybe_sigmoid(ad::Var x, const AggregatorConfig& cfg) {
  return cfg.output_identity ? x : ad::sigmoid(x);
}

inline std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  return SplitMix64::substream(seed, std::hash<std::string>{}(name)).next_u64();
}

inline void create_glorot(ad::ParamStore& s, const std::string& name, int r, int c,
                          std::uint64_t seed) {
  s.create(name, ad::init_params(r, c, ad::InitScheme::GlorotUniform, name_seed(seed, name)));
}

inline void create_zeros(ad::ParamStore& s, const std::string& name, int r, int c) {
  s.create(name, ad::init_params(r, c, ad::InitScheme::Zeros, 0));
}

inline void create_mlp(ad::ParamStore& s, const std::string& prefix, int din, int dout,
                       std::uint64_t seed) {
  create_glorot(s, prefix + "/W1", din, dout, seed);
  create_zeros(s, prefix + "/b1", 1, dout);
  create_glorot(s, prefix + "/W2", dout, dout, seed);
  create_zeros(s, prefix + "/b2", 1, dout);
}

// One-hidden-layer MLP with ELU hidden activation and linear output.
inline ad::Var mlp(ad::ParamStore& s, const std::string& prefix, ad::Var x, bool identity_hook) {
  if (identity_hook) return x;
  ad::Var h = ad::elu(ad::add_rowvec(ad::matmul(x, s.at(prefix + "/W1")), s.at(prefix + "/b1")));
  return ad::add_rowvec(ad::matmul(h, s.at(prefix + "/W2")), s.at(prefix + "/b2"));
}

inline void create_epsilon(ad::ParamStore& s, const std::string& prefix,
                           const AggregatorConfig& cfg) {
  if (cfg.epsilon == EpsilonPolicy::FixedZero) return;
  const double init = cfg.epsilon == EpsilonPolicy::LearnFrom0p001 ? 0.001 : 0.5;
  s.create(prefix + "/eps", ad::init_params(1, 1, ad::InitScheme::Constant, 0, init));
}

// (1 + eps) * x; with the fixed-zero policy the factor is exactly 1.
inline ad::Var eps_scale(ad::ParamStore& s, const std::string& prefix,
                         const AggregatorConfig& cfg, ad::Var x) {
  if (cfg.epsilon == EpsilonPolicy::FixedZero) return x;
  ad::Var one_plus = ad::add(s.at(prefix + "/eps"), ad::constant(ad::Mat::full(1, 1, 1.0)));
  return ad::mul_scalar(x, one_plus);
}

// Leaky-ReLU-scored softmax attention over `group` consecutive rows of ext
// against a repeated center; returns the weighted sum per source node.
inline ad::Var attention_weighted_sum(ad::Var center, ad::Var ext, ad::Var wa, int group,
                                      std::vector<double>* weights_out) {
  ad::Var paired = ad::concat_cols(ad::repeat_rows(center, group), ext);
  ad::Var scores = ad::leaky_relu(ad::matmul(paired, wa), 0.2);
  ad::Var alpha = ad::group_softmax(scores, group);
  if (weights_out) *weights_out = alpha.value().a;
  return ad::group_sum(ad::mul_colvec(ext, alpha), group);
}

}  // namespace agg_detail

// Registers the learnable symbols of one hop layer under `prefix`.
inline void register_aggregator_params(ad::ParamStore& s, const std::string& prefix,
                                       const AggregatorConfig& cfg, int din, int dout,
                                       std::uint64_t seed) {
  using namespace agg_detail;
  if (cfg.heads < 1) throw config_error("aggregator head count must be >= 1");
  switch (cfg.kind) {
    case AggregatorKind::Gcn:
      create_glorot(s, prefix + "/W", din, dout, seed);
      break;
    case AggregatorKind::SageMean:
      create_glorot(s, prefix + "/W", 2 * din, dout, seed);
      break;
    case AggregatorKind::SageMeanPool:
    case AggregatorKind::SageMaxPool:
      create_mlp(s, prefix + "/pool", din, din, seed);
      create_glorot(s, prefix + "/W", 2 * din, dout, seed);
      break;
    case AggregatorKind::SageLstm:
      create_glorot(s, prefix + "/lstm/Wih", din, 4 * din, seed);
      create_glorot(s, prefix + "/lstm/Whh", din, 4 * din, seed);
      create_zeros(s, prefix + "/lstm/b", 1, 4 * din);
      create_glorot(s, prefix + "/W", 2 * din, dout, seed);
      break;
    case AggregatorKind::Gat:
      for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + "/head" + std::to_string(h);
        create_glorot(s, hp + "/Wp", din, dout, seed);
        create_glorot(s, hp + "/Wa", 2 * dout, 1, seed);
      }
      break;
    case AggregatorKind::Gin:
      create_mlp(s, prefix + "/mlp", din, dout, seed);
      create_epsilon(s, prefix, cfg);
      break;
    case AggregatorKind::Gain:
      create_glorot(s, prefix + "/Wp", din, dout, seed);
      create_glorot(s, prefix + "/Wa", 2 * dout, 1, seed);
      create_mlp(s, prefix + "/mlp", dout, dout, seed);
      create_epsilon(s, prefix, cfg);
      break;
    case AggregatorKind::GainMultiHead:
      for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + "/head" + std::to_string(h);
        create_glorot(s, hp + "/Wp", din, din, seed);
        create_glorot(s, hp + "/Wa", 2 * din, 1, seed);
      }
      create_glorot(s, prefix + "/W", din, dout, seed);
      create_mlp(s, prefix + "/mlp", dout, dout, seed);
      create_epsilon(s, prefix, cfg);
      break;
  }
}

// ---------------------------------------------------------------------------
// Aggregation schemes. `self` is [m x din]; `neigh` is [m*g x din] holding g
// sampled neighbors per source node in consecutive rows.

// Shared transform of the mean over the self-plus-neighbors multiset.
inline ad::Var gcn_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                             ad::Var neigh, int g, const AggregatorConfig& cfg) {
  ad::Var summed = ad::add(self, ad::group_sum(neigh, g));
  ad::Var mean = ad::scale(summed, 1.0 / (g + 1));
  return agg_detail::maybe_sigmoid(ad::matmul(mean, s.at(prefix + "/W")), cfg);
}

enum class SageVariant { Mean, MeanPool, MaxPool, Lstm };

namespace agg_detail {

inline ad::Var sage_lstm_state(ad::ParamStore& s, const std::string& prefix, ad::Var neigh, int g,
                               int m, std::uint64_t perm_seed) {
  const int h_dim = s.at(prefix + "/lstm/Whh").rows();
  ad::Var h = ad::constant(ad::Mat::zeros(m, h_dim));
  ad::Var c = ad::constant(ad::Mat::zeros(m, h_dim));
  std::vector<std::vector<std::uint32_t>> perms(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    perms[static_cast<std::size_t>(i)] =
        SplitMix64::substream(perm_seed, static_cast<std::uint64_t>(i))
            .permutation(static_cast<std::uint32_t>(g));
  for (int t = 0; t < g; ++t) {
    std::vector<int> idx(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
      idx[static_cast<std::size_t>(i)] =
          i * g + static_cast<int>(perms[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
    ad::Var xt = ad::gather_rows(neigh, idx);
    ad::Var gates = ad::add_rowvec(
        ad::add(ad::matmul(xt, s.at(prefix + "/lstm/Wih")), ad::matmul(h, s.at(prefix + "/lstm/Whh"))),
        s.at(prefix + "/lstm/b"));
    ad::Var ig = ad::sigmoid(ad::slice_cols(gates, 0, h_dim));
    ad::Var fg = ad::sigmoid(ad::slice_cols(gates, h_dim, 2 * h_dim));
    ad::Var gg = ad::tanh_op(ad::slice_cols(gates, 2 * h_dim, 3 * h_dim));
    ad::Var og = ad::sigmoid(ad::slice_cols(gates, 3 * h_dim, 4 * h_dim));
    c = ad::add(ad::mul(fg, c), ad::mul(ig, gg));
    h = ad::mul(og, ad::tanh_op(c));
  }
  return h;
}

}  // namespace agg_detail

// sigma(W . (h_self || AGG(neighbors))). The pooling variants run each
// neighbor through the pool MLP first; the LSTM variant consumes a seeded
// random permutation of the neighbors and is the one order-sensitive
// aggregator.
inline ad::Var sage_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                              ad::Var neigh, int g, SageVariant variant,
                              const AggregatorConfig& cfg, std::uint64_t lstm_perm_seed = 0) {
  ad::Var agg;
  switch (variant) {
    case SageVariant::Mean:
      agg = ad::group_mean(neigh, g);
      break;
    case SageVariant::MeanPool:
      agg = ad::group_mean(agg_detail::mlp(s, prefix + "/pool", neigh, cfg.mlp_identity), g);
      break;
    case SageVariant::MaxPool:
      agg = ad::group_max(agg_detail::mlp(s, prefix + "/pool", neigh, cfg.mlp_identity), g);
      break;
    case SageVariant::Lstm:
      agg = agg_detail::sage_lstm_state(s, prefix, neigh, g, self.rows(), lstm_perm_seed);
      break;
  }
  ad::Var combined = ad::concat_cols(self, agg);
  return agg_detail::maybe_sigmoid(ad::matmul(combined, s.at(prefix + "/W")), cfg);
}

// Head-averaged attention over the first-order neighborhood including the
// node itself.
inline ad::Var gat_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                             ad::Var neigh, int g, const AggregatorConfig& cfg,
                             AttnInfo* attn = nullptr) {
  if (attn) {
    attn->head_weights.clear();
    attn->group = g + 1;
    attn->includes_self = true;
  }
  ad::Var acc;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + "/head" + std::to_string(h);
    ad::Var hp_self = ad::matmul(self, s.at(hp + "/Wp"));
    ad::Var hp_neigh = ad::matmul(neigh, s.at(hp + "/Wp"));
    ad::Var ext = ad::group_prepend(hp_self, hp_neigh, g);
    std::vector<double> w;
    ad::Var head_sum = agg_detail::attention_weighted_sum(hp_self, ext, s.at(hp + "/Wa"), g + 1,
                                                          attn ? &w : nullptr);
    if (attn) attn->head_weights.push_back(std::move(w));
    acc = h == 0 ? head_sum : ad::add(acc, head_sum);
  }
  return agg_detail::maybe_sigmoid(ad::scale(acc, 1.0 / cfg.heads), cfg);
}

// MLP((1 + eps) . h_self + sum of neighbors).
inline ad::Var gin_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                             ad::Var neigh, int g, const AggregatorConfig& cfg) {
  ad::Var inner = ad::add(agg_detail::eps_scale(s, prefix, cfg, self), ad::group_sum(neigh, g));
  return agg_detail::mlp(s, prefix + "/mlp", inner, cfg.mlp_identity);
}

// MLP((1 + eps) . h'_self + sigma(sum of attention-weighted transformed
// neighbors)); attention covers the neighbors only, never the node itself.
inline ad::Var gain_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                              ad::Var neigh, int g, const AggregatorConfig& cfg,
                              AttnInfo* attn = nullptr) {
  if (attn) {
    attn->head_weights.clear();
    attn->group = g;
    attn->includes_self = false;
  }
  ad::Var hp_self = ad::matmul(self, s.at(prefix + "/Wp"));
  ad::Var hp_neigh = ad::matmul(neigh, s.at(prefix + "/Wp"));
  std::vector<double> w;
  ad::Var weighted = agg_detail::attention_weighted_sum(hp_self, hp_neigh, s.at(prefix + "/Wa"),
                                                        g, attn ? &w : nullptr);
  if (attn) attn->head_weights.push_back(std::move(w));
  if (cfg.sigma == InnerSigma::Elu) weighted = ad::elu(weighted);
  ad::Var inner = ad::add(agg_detail::eps_scale(s, prefix, cfg, hp_self), weighted);
  return agg_detail::mlp(s, prefix + "/mlp", inner, cfg.mlp_identity);
}

// Multi-head form: MLP(W . ((1 + eps) . h_self + sigma(sum over heads and
// neighbors of attention-weighted transformed neighbors))). The self term
// stays untransformed and the heads are summed, not averaged.
inline ad::Var gain_multihead_aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self,
                                        ad::Var neigh, int g, const AggregatorConfig& cfg,
                                        AttnInfo* attn = nullptr) {
  if (attn) {
    attn->head_weights.clear();
    attn->group = g;
    attn->includes_self = false;
  }
  ad::Var acc;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + "/head" + std::to_string(h);
    ad::Var hp_self = ad::matmul(self, s.at(hp + "/Wp"));
    ad::Var hp_neigh = ad::matmul(neigh, s.at(hp + "/Wp"));
    std::vector<double> w;
    ad::Var head_sum = agg_detail::attention_weighted_sum(hp_self, hp_neigh, s.at(hp + "/Wa"), g,
                                                          attn ? &w : nullptr);
    if (attn) attn->head_weights.push_back(std::move(w));
    acc = h == 0 ? head_sum : ad::add(acc, head_sum);
  }
  if (cfg.sigma == InnerSigma::Elu) acc = ad::elu(acc);
  ad::Var inner = ad::add(agg_detail::eps_scale(s, prefix, cfg, self), acc);
  ad::Var projected = ad::matmul(inner, s.at(prefix + "/W"));
  return agg_detail::mlp(s, prefix + "/mlp", projected, cfg.mlp_identity);
}

inline ad::Var aggregate(ad::ParamStore& s, const std::string& prefix, ad::Var self, ad::Var neigh,
                         int g, const AggregatorConfig& cfg, AttnInfo* attn = nullptr,
                         std::uint64_t lstm_perm_seed = 0) {
  switch (cfg.kind) {
    case AggregatorKind::Gcn: return gcn_aggregate(s, prefix, self, neigh, g, cfg);
    case AggregatorKind::SageMean:
      return sage_aggregate(s, prefix, self, neigh, g, SageVariant::Mean, cfg);
    case AggregatorKind::SageMeanPool:
      return sage_aggregate(s, prefix, self, neigh, g, SageVariant::MeanPool, cfg);
    case AggregatorKind::SageMaxPool:
      return sage_aggregate(s, prefix, self, neigh, g, SageVariant::MaxPool, cfg);
    case AggregatorKind::SageLstm:
      return sage_aggregate(s, prefix, self, neigh, g, SageVariant::Lstm, cfg, lstm_perm_seed);
    case AggregatorKind::Gat: return gat_aggregate(s, prefix, self, neigh, g, cfg, attn);
    case AggregatorKind::Gin: return gin_aggregate(s, prefix, self, neigh, g, cfg);
    case AggregatorKind::Gain: return gain_aggregate(s, prefix, self, neigh, g, cfg, attn);
    case AggregatorKind::GainMultiHead:
      return gain_multihead_aggregate(s, prefix, self, neigh, g, cfg, attn);
  }
  throw config_error("unhandled aggregator kind");
}

// ---------------------------------------------------------------------------
// Two-hop encoder. Depth is fixed at K=2: the first layer turns raw features
// into hop-1 representations for the batch and its sampled neighbors, the
// second layer aggregates those into the batch embeddings, and rows are
// l2-normalized at the end. Dropout touches the inputs of both layers, only
// in train mode.

enum class RunMode { Train, Infer };

class TwoHopEncoder {
 public:
  TwoHopEncoder(AggregatorConfig cfg, int in_dim, int dim)
      : cfg_(cfg), in_dim_(in_dim), dim_(dim) {}

  const AggregatorConfig& config() const { return cfg_; }
  int dim() const { return dim_; }

  void init_params(ad::ParamStore& store, std::uint64_t seed) const {
    register_aggregator_params(store, "l1", cfg_, in_dim_, dim_, SplitMix64::substream(seed, 1).next_u64());
    register_aggregator_params(store, "l2", cfg_, dim_, dim_, SplitMix64::substream(seed, 2).next_u64());
  }

  ad::Var encode(ad::ParamStore& store, const LineGraph& lg, const ad::Mat& features,
                 const std::vector<LNodeId>& batch, const FanoutPlan& plan, RunMode mode,
                 double dropout_rate, std::uint64_t sample_seed) const {
    if (batch.empty()) throw invariant_error("encode: empty batch");
    const FanoutSample fs = sample_fanout(lg, batch, plan, sample_seed);
    ad::Var x0 = ad::constant(gather(features, batch));
    ad::Var x1 = ad::constant(gather(features, fs.hop1));
    ad::Var x2 = ad::constant(gather(features, fs.hop2));

    SplitMix64 drop_rng = SplitMix64::substream(sample_seed, 0xD50Full);
    const bool use_dropout = mode == RunMode::Train && dropout_rate > 0.0;
    if (use_dropout) {
      x0 = ad::dropout(x0, dropout_rate, drop_rng);
      x1 = ad::dropout(x1, dropout_rate, drop_rng);
      x2 = ad::dropout(x2, dropout_rate, drop_rng);
    }

    const std::uint64_t lstm1 = SplitMix64::substream(sample_seed, 0x157A1ull).next_u64();
    const std::uint64_t lstm2 = SplitMix64::substream(sample_seed, 0x157A2ull).next_u64();
    const std::uint64_t lstm3 = SplitMix64::substream(sample_seed, 0x157A3ull).next_u64();

    // Layer 1 runs twice with shared parameters: over the hop-1 support and
    // over the batch itself.
    ad::Var h1_support = aggregate(store, "l1", x1, x2, plan.hop2, cfg_, nullptr, lstm1);
    ad::Var h1_batch = aggregate(store, "l1", x0, x1, plan.hop1, cfg_, nullptr, lstm2);
    if (use_dropout) {
      h1_support = ad::dropout(h1_support, dropout_rate, drop_rng);
      h1_batch = ad::dropout(h1_batch, dropout_rate, drop_rng);
    }
    ad::Var h2 = aggregate(store, "l2", h1_batch, h1_support, plan.hop1, cfg_, nullptr, lstm3);
    return ad::l2_normalize_rows(h2);
  }

  // Embeddings for many nodes, deterministic in `seed`, computed in chunks.
  ad::Mat encode_all(ad::ParamStore& store, const LineGraph& lg, const ad::Mat& features,
                     const std::vector<LNodeId>& ids, const FanoutPlan& plan, std::uint64_t seed,
                     int chunk = 256) const {
    ad::Mat out(static_cast<int>(ids.size()), dim_);
    for (std::size_t start = 0, ci = 0; start < ids.size(); start += static_cast<std::size_t>(chunk), ++ci) {
      const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(chunk));
      std::vector<LNodeId> part(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                ids.begin() + static_cast<std::ptrdiff_t>(end));
      ad::Var z = encode(store, lg, features, part, plan, RunMode::Infer, 0.0,
                         SplitMix64::substream(seed, ci).next_u64());
      for (std::size_t r = 0; r < part.size(); ++r)
        for (int j = 0; j < dim_; ++j)
          out.at(static_cast<int>(start + r), j) = z.value().at(static_cast<int>(r), j);
    }
    return out;
  }

  static ad::Mat gather(const ad::Mat& features, const std::vector<LNodeId>& ids) {
    ad::Mat out(static_cast<int>(ids.size()), features.cols);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (int j = 0; j < features.cols; ++j)
        out.at(static_cast<int>(r), j) = features.at(static_cast<int>(ids[r]), j);
    return out;
  }

 private:
  AggregatorConfig cfg_;
  int in_dim_;
  int dim_;
};

}  // namespace roadgnn
