#pragma once

// Root-to-leaf prediction. The score of a path is the product of the
// softmax probabilities of choosing each child along it, one factor per
// level 1..L. "Others" outputs are never path steps but stay in each
// softmax normalization, which is how a child classifier can veto its
// parent's mistake. Beam search is level-synchronous; the exhaustive
// variant enumerates every path and serves as the oracle.
//
// beam_predict returns the best result over beams of width 1..B. A single
// top-B pass can return a worse path for a larger B (a strong partial
// product can evict the eventual winner's prefix and then fade), which
// would break the contract that widening the beam never hurts. When B
// covers the widest level the search is a single untruncated pass.

#include <algorithm>
#include <map>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/model.hpp"
#include "hicl/taxonomy.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

struct PathPrediction {
  int leaf_id = -1;
  LeafPath path;
  std::vector<double> level_probs;  // levels 1..L
  double score = 0.0;               // product of level_probs
};

struct BeamConfig {
  std::size_t width = 3;
};

namespace detail {

// Softmax outputs per internal node, computed once per example.
inline std::map<int, Vector> node_probabilities(const HierarchicalHead& head, const Vector& feat) {
  std::map<int, Vector> out;
  for (int id : head.node_ids()) out.emplace(id, head.class_probabilities(id, feat));
  return out;
}

// One level-synchronous pass keeping the top-`width` partial products per
// level (ties by node id ascending).
inline PathPrediction beam_pass(const Taxonomy& t, const std::map<int, Vector>& probs,
                                std::size_t width) {
  struct Item {
    int node;
    double score;
    LeafPath path;
    std::vector<double> level_probs;
  };
  std::vector<Item> beam{{t.root_id(), 1.0, {t.root_id()}, {}}};

  for (int level = 0; level < t.depth(); ++level) {
    std::vector<Item> candidates;
    for (const Item& item : beam) {
      const TaxonNode& n = t.node(item.node);
      const Vector& p = probs.at(item.node);
      for (std::size_t c = 0; c < n.children.size(); ++c) {
        Item next = item;
        next.node = n.children[c];
        next.score = item.score * p[c];
        next.path.push_back(n.children[c]);
        next.level_probs.push_back(p[c]);
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Item& a, const Item& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.node < b.node;
    });
    if (candidates.size() > width) candidates.resize(width);
    beam = std::move(candidates);
  }

  const Item& best = beam.front();
  return {best.node, best.path, best.level_probs, best.score};
}

inline std::size_t widest_level(const Taxonomy& t) {
  std::map<int, std::size_t> width;
  for (const auto& [id, n] : t.nodes()) width[n.level] += 1;
  std::size_t w = 1;
  for (const auto& [level, count] : width)
    if (level >= 1) w = std::max(w, count);
  return w;
}

}  // namespace detail

// Evaluates the product over every root-to-leaf path and returns the best;
// ties broken by leaf id ascending (paths are enumerated in that order and
// only a strictly greater score displaces the incumbent).
inline PathPrediction exhaustive_predict(const HierarchicalHead& head, const Taxonomy& t,
                                         const Vector& feat) {
  auto probs = detail::node_probabilities(head, feat);
  PathPrediction best;
  best.score = -1.0;
  for (const LeafPath& path : t.enumerate_paths()) {
    double score = 1.0;
    std::vector<double> level_probs;
    level_probs.reserve(path.size() - 1);
    for (std::size_t j = 0; j + 1 < path.size(); ++j) {
      const TaxonNode& parent = t.node(path[j]);
      auto child_pos = std::find(parent.children.begin(), parent.children.end(), path[j + 1]);
      std::size_t idx = static_cast<std::size_t>(child_pos - parent.children.begin());
      double p = probs.at(path[j])[idx];
      level_probs.push_back(p);
      score *= p;
    }
    if (score > best.score) {
      best.leaf_id = path.back();
      best.path = path;
      best.level_probs = std::move(level_probs);
      best.score = score;
    }
  }
  return best;
}

// Best path over beams of width 1..cfg.width. Width 1 is greedy top-down;
// width >= the widest level is exact.
inline PathPrediction beam_predict(const HierarchicalHead& head, const Taxonomy& t,
                                   const Vector& feat, const BeamConfig& cfg = {}) {
  require_config(cfg.width >= 1, "beam_predict: beam width must be at least 1");
  auto probs = detail::node_probabilities(head, feat);
  std::size_t widest = detail::widest_level(t);
  if (cfg.width >= widest) return detail::beam_pass(t, probs, widest);

  PathPrediction best = detail::beam_pass(t, probs, 1);
  for (std::size_t b = 2; b <= cfg.width; ++b) {
    PathPrediction cand = detail::beam_pass(t, probs, b);
    if (cand.score > best.score || (cand.score == best.score && cand.leaf_id < best.leaf_id))
      best = std::move(cand);
  }
  return best;
}

inline PathPrediction greedy_predict(const HierarchicalHead& head, const Taxonomy& t,
                                     const Vector& feat) {
  return beam_predict(head, t, feat, {1});
}

inline std::vector<PathPrediction> predict_batch(const HierarchicalHead& head, const Taxonomy& t,
                                                 const Matrix& feats, const BeamConfig& cfg = {}) {
  std::vector<PathPrediction> out;
  out.reserve(feats.rows);
  for (std::size_t i = 0; i < feats.rows; ++i)
    out.push_back(beam_predict(head, t, feats.row_vec(i), cfg));
  return out;
}

}  // namespace hicl
