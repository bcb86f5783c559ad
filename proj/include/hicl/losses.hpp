#pragma once

// The two training losses.
//
// Hierarchical contrastive loss: for a feature x with ground-truth path P,
// every prototype on P is an attractor weighted by the per-level aggregation
// strength, and every prototype in the bank (all nodes, all levels) appears
// in the normalizing denominator. Gradients flow through the feature
// normalization x_bar = x/||x||; prototypes are constants here (they evolve
// only via EMA).
//
// Probabilistic loss: every classifier is visited for every example. On-path
// examples contribute cross entropy to the true child index; off-path
// examples contribute cross entropy to the "others" index with probability
// P_k (node's instance share scaled by beta), drawn from a dedicated seeded
// stream. The sum is divided by M*N regardless of how many "others" terms
// fired.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/memory_bank.hpp"
#include "hicl/model.hpp"
#include "hicl/numeric.hpp"
#include "hicl/rng.hpp"
#include "hicl/taxonomy.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

enum class Aggregation { ConstantOne, Linear, Quadratic };

inline double aggregation_weight(Aggregation agg, int level) {
  require_config(level >= 0, "aggregation_weight: negative level");
  switch (agg) {
    case Aggregation::ConstantOne:
      return 1.0;
    case Aggregation::Linear:
      return static_cast<double>(level);
    case Aggregation::Quadratic:
      return static_cast<double>(level) * static_cast<double>(level);
  }
  throw ConfigError("aggregation_weight: unknown aggregation");
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "constant" || s == "constant-1" || s == "const") return Aggregation::ConstantOne;
  if (s == "linear") return Aggregation::Linear;
  if (s == "quadratic") return Aggregation::Quadratic;
  throw ConfigError("unknown aggregation function: " + s);
}

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::ConstantOne:
      return "constant";
    case Aggregation::Linear:
      return "linear";
    case Aggregation::Quadratic:
      return "quadratic";
  }
  return "?";
}

struct HiCLConfig {
  double tau = 0.2;
  Aggregation agg = Aggregation::Linear;
};

struct ForegroundBatch {
  Matrix features;            // N x D_feat, adapter final-layer preactivations
  std::vector<int> leaf_ids;  // ground-truth leaves
  std::vector<LeafPath> paths;

  std::size_t size() const { return leaf_ids.size(); }

  static ForegroundBatch from(Matrix feats, std::vector<int> leaves, const Taxonomy& t) {
    ForegroundBatch b;
    require(feats.rows == leaves.size(), "ForegroundBatch: feature/label count mismatch");
    require(!leaves.empty(), "ForegroundBatch: empty batch");
    b.features = std::move(feats);
    b.leaf_ids = std::move(leaves);
    b.paths.reserve(b.leaf_ids.size());
    for (int leaf : b.leaf_ids) b.paths.push_back(t.path_of(leaf));
    return b;
  }
};

struct HiCLResult {
  double value = 0.0;
  Matrix dfeatures;  // d value / d features, same shape as the input
};

// Kernel over an explicit prototype matrix. `positives[i]` lists
// (prototype row, weight) pairs for example i; `weight_norm` divides the
// weighted sum. Exposed separately so degenerate configurations (single
// level, hand-picked weights) can be exercised directly.
inline HiCLResult hicl_core(const Matrix& features,
                            const std::vector<std::vector<std::pair<std::size_t, double>>>& positives,
                            const Matrix& protos, double tau, double weight_norm) {
  require(features.rows == positives.size(), "hicl_core: positives size mismatch");
  require(features.rows > 0, "hicl_core: empty batch");
  require(features.cols == protos.cols, "hicl_core: feature/prototype dim mismatch");
  require_config(tau > 0.0, "hicl_core: tau must be positive");
  require_config(weight_norm > 0.0, "hicl_core: weight norm must be positive");

  const std::size_t n = features.rows;
  const std::size_t dim = features.cols;
  const std::size_t p_count = protos.rows;
  const double inv_n = 1.0 / static_cast<double>(n);

  HiCLResult res;
  res.dfeatures = Matrix(n, dim);

  Vector sims(p_count), dls(p_count);
  for (std::size_t i = 0; i < n; ++i) {
    Vector v = features.row_vec(i);
    double r = norm2(v);
    if (r == 0.0) throw NumericError("hicl_loss: zero-norm feature at batch index " + std::to_string(i));
    Vector xb = scaled(v, 1.0 / r);

    for (std::size_t p = 0; p < p_count; ++p) {
      double s = 0.0;
      const double* row = protos.row(p);
      for (std::size_t d = 0; d < dim; ++d) s += xb[d] * row[d];
      sims[p] = s / tau;
    }
    double lse = log_sum_exp(sims);

    double wsum = 0.0;
    double attract = 0.0;
    for (const auto& [p, w] : positives[i]) {
      require(p < p_count, "hicl_core: positive index out of range");
      attract += w * (sims[p] - lse);
      wsum += w;
    }
    double loss_i = -attract / weight_norm;
    res.value += loss_i * inv_n;

    // d loss_i / d sims[q] = (wsum * softmax_q - a_q) / weight_norm
    double m = sims[0];
    for (double s : sims) m = std::max(m, s);
    double z = 0.0;
    for (std::size_t p = 0; p < p_count; ++p) {
      dls[p] = std::exp(sims[p] - m);
      z += dls[p];
    }
    for (std::size_t p = 0; p < p_count; ++p) dls[p] = wsum * (dls[p] / z) / weight_norm;
    for (const auto& [p, w] : positives[i]) dls[p] -= w / weight_norm;

    Vector g_xb(dim, 0.0);
    for (std::size_t p = 0; p < p_count; ++p) {
      if (dls[p] == 0.0) continue;
      const double* row = protos.row(p);
      double c = dls[p] / tau;
      for (std::size_t d = 0; d < dim; ++d) g_xb[d] += c * row[d];
    }
    // through the normalization: dv = (g - (g . xb) xb) / r
    double gdotx = dot(g_xb, xb);
    for (std::size_t d = 0; d < dim; ++d)
      res.dfeatures(i, d) = (g_xb[d] - gdotx * xb[d]) * (inv_n / r);
  }
  assert_finite(res.value, "hicl_core");
  return res;
}

// Full hierarchical contrastive loss against a memory bank. The denominator
// runs over every prototype in the bank; numerator terms over the example's
// own path, weighted by the aggregation function.
inline HiCLResult hicl_loss(const ForegroundBatch& batch, const MemoryBank& bank, const HiCLConfig& cfg) {
  require(batch.size() > 0, "hicl_loss: empty batch");
  const int depth = bank.depth();

  std::vector<int> ids = bank.node_ids();
  std::map<int, std::size_t> index_of;
  Matrix protos(ids.size(), bank.dim());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    index_of[ids[p]] = p;
    protos.set_row(p, bank.prototype(ids[p]));
  }

  double weight_norm = 0.0;
  for (int j = 0; j <= depth; ++j) weight_norm += aggregation_weight(cfg.agg, j);
  require_config(weight_norm > 0.0, "hicl_loss: aggregation weights sum to zero");

  std::vector<std::vector<std::pair<std::size_t, double>>> positives(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LeafPath& path = batch.paths[i];
    require(path.size() == static_cast<std::size_t>(depth) + 1, "hicl_loss: path/bank depth mismatch");
    for (int j = 0; j <= depth; ++j) {
      auto it = index_of.find(path[static_cast<std::size_t>(j)]);
      require(it != index_of.end(), "hicl_loss: bank has no prototype for a path node");
      double w = aggregation_weight(cfg.agg, j);
      if (w != 0.0) positives[i].push_back({it->second, w});
    }
  }
  return hicl_core(batch.features, positives, protos, cfg.tau, weight_norm);
}

// ---------------------------------------------------------------------------

struct ProbTable {
  std::map<int, double> values;  // internal node id -> others-training probability
  double beta = 0.5;
  long long total_instances = 0;

  double at(int node_id) const {
    auto it = values.find(node_id);
    require(it != values.end(), "ProbTable: no entry for node " + std::to_string(node_id));
    return it->second;
  }
};

// P_k = (subtree instance count / total) * beta, for every internal node.
inline ProbTable compute_node_probabilities(const Taxonomy& t, double beta) {
  require_config(beta >= 0.0 && beta <= 1.0, "compute_node_probabilities: beta must be in [0,1]");
  long long total = t.total_instances();
  require(total > 0, "compute_node_probabilities: taxonomy has zero total instances");
  ProbTable table;
  table.beta = beta;
  table.total_instances = total;
  for (int id : t.internal_nodes())
    table.values[id] =
        static_cast<double>(t.node(id).instance_count) / static_cast<double>(total) * beta;
  return table;
}

// One resolved cross-entropy term of the probabilistic loss.
struct ProbTerm {
  int node_id;
  std::size_t example;
  std::size_t target;  // child index, or d (the "others" slot)
};

struct ProbLossTerms {
  std::size_t classifier_count = 0;  // M
  std::size_t batch_size = 0;        // N
  std::vector<ProbTerm> terms;       // traversal order: node id ascending, then example
};

// Separates the Bernoulli draws from the differentiable part. Classifiers
// are visited in ascending node id order, examples in batch order; one
// uniform is consumed per off-path (classifier, example) pair whether or not
// the term fires, so the draw sequence does not depend on the table values.
inline ProbLossTerms resolve_prob_terms(const std::vector<LeafPath>& paths, const Taxonomy& t,
                                        const std::vector<int>& classifier_nodes,
                                        const ProbTable& table, Rng& bern) {
  ProbLossTerms out;
  out.classifier_count = classifier_nodes.size();
  out.batch_size = paths.size();
  for (const LeafPath& p : paths)
    require(p.size() == static_cast<std::size_t>(t.depth()) + 1, "prob_loss: label path not in taxonomy");

  for (int k : classifier_nodes) {
    const TaxonNode& nk = t.node(k);
    require(!nk.children.empty(), "prob_loss: classifier node " + std::to_string(k) + " is a leaf");
    std::map<int, std::size_t> child_index;
    for (std::size_t c = 0; c < nk.children.size(); ++c) child_index[nk.children[c]] = c;
    const std::size_t others = nk.children.size();
    const std::size_t level = static_cast<std::size_t>(nk.level);

    for (std::size_t i = 0; i < paths.size(); ++i) {
      const LeafPath& path = paths[i];
      if (path[level] == k) {
        auto it = child_index.find(path[level + 1]);
        require(it != child_index.end(), "prob_loss: path child not among classifier children");
        out.terms.push_back({k, i, it->second});
      } else {
        double u = bern.uniform();
        if (u < table.at(k)) out.terms.push_back({k, i, others});
      }
    }
  }
  return out;
}

struct ProbLossResult {
  double value = 0.0;
  std::map<int, Matrix> dlogits;              // node id -> N x (d+1)
  std::map<int, std::map<std::size_t, LayerCache>> caches;  // fired forward passes
};

// Evaluates resolved terms against a logits source: logits_fn(node_id,
// example) -> Vector. Terms accumulate in resolution order into a single
// scalar; with beta = 0 no "others" term ever resolves and the result is
// plain hierarchical cross entropy.
template <typename LogitsFn>
inline double prob_loss_core(const ProbLossTerms& terms, LogitsFn&& logits_fn,
                             std::map<int, Matrix>* dlogits = nullptr) {
  require(terms.classifier_count > 0 && terms.batch_size > 0, "prob_loss: empty head or batch");
  const double scale = 1.0 / (static_cast<double>(terms.classifier_count) * static_cast<double>(terms.batch_size));
  double acc = 0.0;
  for (const ProbTerm& t : terms.terms) {
    Vector logits = logits_fn(t.node_id, t.example);
    auto [loss, grad] = cross_entropy_from_logits(logits, t.target);
    acc += loss;
    if (dlogits) {
      Matrix& m = (*dlogits)[t.node_id];
      if (m.rows == 0) m = Matrix(terms.batch_size, logits.size());
      for (std::size_t c = 0; c < grad.size(); ++c) m(t.example, c) += scale * grad[c];
    }
  }
  return acc * scale;
}

// Full probabilistic loss for a batch against a hierarchical head.
inline ProbLossResult prob_loss(const ForegroundBatch& batch, const HierarchicalHead& head,
                                const Taxonomy& t, const ProbTable& table, Rng& bern) {
  ProbLossTerms terms = resolve_prob_terms(batch.paths, t, head.node_ids(), table, bern);
  ProbLossResult res;
  auto logits_fn = [&](int node, std::size_t i) -> Vector {
    LayerCache& cache = res.caches[node][i];
    if (cache.out.empty()) head.logits(node, batch.features.row_vec(i), &cache);
    return cache.out;
  };
  res.value = prob_loss_core(terms, logits_fn, &res.dlogits);
  assert_finite(res.value, "prob_loss");
  return res;
}

// lambda1 * hicl + lambda2 * prob.
inline double total_loss(double hicl, double prob, double lambda1 = 0.5, double lambda2 = 1.0) {
  return lambda1 * hicl + lambda2 * prob;
}

}  // namespace hicl
