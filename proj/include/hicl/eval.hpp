#pragma once

// Evaluation: an instance counts as correct only when the predicted path
// matches the ground-truth path at every level. Reports full-path accuracy,
// per-level accuracy, base/novel breakdown, and the greedy-vs-beam
// correction rate (examples where the wider beam fixes greedy's mistake).
// Also the instruments for the learned-space structure: empirical leaf
// prototypes and the within-parent vs cross-subtree cosine gap.

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "hicl/data.hpp"
#include "hicl/inference.hpp"
#include "hicl/model.hpp"
#include "hicl/taxonomy.hpp"

namespace hicl {

struct EvalReport {
  std::size_t examples = 0;
  double full_path_accuracy = 0.0;
  std::vector<double> per_level_accuracy;  // levels 1..L
  std::size_t base_examples = 0;
  std::size_t novel_examples = 0;
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
  std::size_t corrected = 0;       // greedy path != beam path and beam correct
  double correction_rate = 0.0;
  std::vector<PathPrediction> predictions;
  std::vector<PathPrediction> greedy_predictions;
};

// `eval_data` labels live in the head's taxonomy id space. `metric_t` is the
// hierarchical taxonomy used for per-level bookkeeping; for a flat-ablation
// head pass the original tree (leaf ids are shared), so level accuracies
// stay comparable across ablations.
inline EvalReport evaluate(const FeatureAdapter& adapter, const HierarchicalHead& head,
                           const Taxonomy& head_t, const Taxonomy& metric_t, const Dataset& eval_data,
                           const std::optional<SplitSpec>& split = std::nullopt,
                           const BeamConfig& beam = {}) {
  EvalReport rep;
  rep.examples = eval_data.size();
  rep.per_level_accuracy.assign(static_cast<std::size_t>(metric_t.depth()), 0.0);
  if (eval_data.size() == 0) return rep;

  std::size_t full_hits = 0, base_hits = 0, novel_hits = 0;
  std::vector<std::size_t> level_hits(static_cast<std::size_t>(metric_t.depth()), 0);

  for (std::size_t i = 0; i < eval_data.size(); ++i) {
    Vector feat = adapter.embed(eval_data.features.row_vec(i));
    PathPrediction pred = beam_predict(head, head_t, feat, beam);
    PathPrediction greedy = beam.width == 1 ? pred : greedy_predict(head, head_t, feat);

    int true_leaf = eval_data.examples[i].leaf_id;
    LeafPath true_path = metric_t.path_of(true_leaf);
    LeafPath pred_path = metric_t.path_of(pred.leaf_id);

    bool correct = pred.leaf_id == true_leaf;
    full_hits += correct;
    for (std::size_t j = 1; j < true_path.size(); ++j)
      level_hits[j - 1] += pred_path[j] == true_path[j];

    if (split) {
      if (split->base_leaf_ids.count(true_leaf)) {
        rep.base_examples += 1;
        base_hits += correct;
      } else if (split->novel_leaf_ids.count(true_leaf)) {
        rep.novel_examples += 1;
        novel_hits += correct;
      }
    }
    if (greedy.leaf_id != pred.leaf_id && correct) rep.corrected += 1;

    rep.predictions.push_back(std::move(pred));
    rep.greedy_predictions.push_back(std::move(greedy));
  }

  double n = static_cast<double>(eval_data.size());
  rep.full_path_accuracy = static_cast<double>(full_hits) / n;
  for (std::size_t j = 0; j < level_hits.size(); ++j)
    rep.per_level_accuracy[j] = static_cast<double>(level_hits[j]) / n;
  rep.base_accuracy = rep.base_examples ? static_cast<double>(base_hits) / rep.base_examples : 0.0;
  rep.novel_accuracy = rep.novel_examples ? static_cast<double>(novel_hits) / rep.novel_examples : 0.0;
  rep.correction_rate = static_cast<double>(rep.corrected) / n;
  return rep;
}

// Unit-normalized mean adapter feature per leaf. Loss-independent, so it
// measures the learned space the same way in every ablation.
inline std::map<int, Vector> empirical_leaf_prototypes(const FeatureAdapter& adapter,
                                                       const Dataset& data) {
  std::map<int, Vector> sums;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Vector f = adapter.embed(data.features.row_vec(i));
    auto [it, fresh] = sums.emplace(data.examples[i].leaf_id, Vector(f.size(), 0.0));
    axpy(1.0, f, it->second);
    counts[data.examples[i].leaf_id] += 1;
  }
  std::map<int, Vector> out;
  for (auto& [leaf, sum] : sums)
    out.emplace(leaf, normalized(scaled(sum, 1.0 / static_cast<double>(counts.at(leaf)))));
  return out;
}

struct HierarchyGap {
  double within_parent_mean = 0.0;  // mean cosine over leaf pairs sharing a parent
  double cross_subtree_mean = 0.0;  // mean cosine over leaf pairs in different top-level subtrees
  std::size_t within_pairs = 0;
  std::size_t cross_pairs = 0;
  double gap() const { return within_parent_mean - cross_subtree_mean; }
};

// Works over an id -> vector map so it applies both to empirical prototypes
// and to the memory bank's leaf entries.
inline HierarchyGap hierarchy_consistency_gap(const Taxonomy& t, const std::map<int, Vector>& leaf_vecs) {
  HierarchyGap g;
  double within_sum = 0.0, cross_sum = 0.0;
  std::vector<int> leaves;
  for (const auto& [id, v] : leaf_vecs) {
    require(t.contains(id) && t.is_leaf(id), "hierarchy_consistency_gap: id " + std::to_string(id) + " is not a leaf");
    leaves.push_back(id);
  }
  auto top_ancestor = [&t](int leaf) { return t.path_of(leaf)[1]; };
  for (std::size_t a = 0; a < leaves.size(); ++a) {
    for (std::size_t b = a + 1; b < leaves.size(); ++b) {
      double c = cosine(leaf_vecs.at(leaves[a]), leaf_vecs.at(leaves[b]));
      if (t.node(leaves[a]).parent == t.node(leaves[b]).parent) {
        within_sum += c;
        g.within_pairs += 1;
      } else if (top_ancestor(leaves[a]) != top_ancestor(leaves[b])) {
        cross_sum += c;
        g.cross_pairs += 1;
      }
    }
  }
  if (g.within_pairs) g.within_parent_mean = within_sum / static_cast<double>(g.within_pairs);
  if (g.cross_pairs) g.cross_subtree_mean = cross_sum / static_cast<double>(g.cross_pairs);
  return g;
}

struct BankCosineSummary {
  double parent_child_mean = 0.0;   // cosine between each node and its parent
  double within_parent_mean = 0.0;  // leaf prototypes sharing a parent
  double cross_branch_mean = 0.0;   // leaf prototypes in different top-level subtrees
};

inline BankCosineSummary bank_cosine_summary(const Taxonomy& t, const MemoryBank& bank) {
  BankCosineSummary s;
  double pc_sum = 0.0;
  std::size_t pc_n = 0;
  for (const auto& [id, n] : t.nodes()) {
    if (n.parent < 0) continue;
    pc_sum += cosine(bank.prototype(id), bank.prototype(n.parent));
    pc_n += 1;
  }
  if (pc_n) s.parent_child_mean = pc_sum / static_cast<double>(pc_n);

  std::map<int, Vector> leaf_protos;
  for (int leaf : t.leaves()) leaf_protos.emplace(leaf, bank.prototype(leaf));
  HierarchyGap g = hierarchy_consistency_gap(t, leaf_protos);
  s.within_parent_mean = g.within_parent_mean;
  s.cross_branch_mean = g.cross_subtree_mean;
  return s;
}

}  // namespace hicl
