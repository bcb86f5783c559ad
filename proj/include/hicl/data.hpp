#pragma once

// Datasets of raw feature vectors with leaf labels. Two sources: a synthetic
// hierarchical-Gaussian generator (each taxonomy node draws a mean offset,
// a leaf's mean is the sum of its ancestors' offsets) and COCO-format
// annotation files with a sidecar feature table. Episode sampling provides
// the K-shot support sets and the balanced fine-tune set.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/rng.hpp"
#include "hicl/taxonomy.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

enum class Split { Train, Test };
enum class Source { Synthetic, Ingested };

struct LabeledExample {
  int leaf_id = -1;
  Split split = Split::Train;
  Source source = Source::Synthetic;
};

struct Dataset {
  std::uint64_t taxonomy_fingerprint = 0;
  Matrix features;  // n x d_in
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  std::size_t d_in() const { return features.cols; }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (examples[i].split == split) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> indices_of_leaf(int leaf, std::optional<Split> split = std::nullopt) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (examples[i].leaf_id == leaf && (!split || examples[i].split == *split)) out.push_back(i);
    return out;
  }

  std::map<int, long long> leaf_counts() const {
    std::map<int, long long> out;
    for (const auto& e : examples) out[e.leaf_id] += 1;
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.taxonomy_fingerprint = taxonomy_fingerprint;
    out.features = Matrix(idx.size(), features.cols);
    out.examples.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.features.set_row(r, features.row_vec(idx[r]));
      out.examples.push_back(examples[idx[r]]);
    }
    return out;
  }

  // Rewrites leaf ids from one taxonomy's id space into another's, matching
  // nodes by name path. A depth-1 target (the flat-head view) keys its leaves
  // by bare name, so fall back to the leaf's own name there.
  Dataset relabeled(const Taxonomy& from, const Taxonomy& to) const {
    Dataset out = *this;
    out.taxonomy_fingerprint = to.fingerprint();
    std::map<int, int> cache;
    for (auto& e : out.examples) {
      auto it = cache.find(e.leaf_id);
      if (it == cache.end()) {
        auto target = to.find_by_name_path(from.name_path(e.leaf_id));
        if (!target && to.depth() == 1) target = to.find_by_name_path(from.node(e.leaf_id).name);
        require(target.has_value(),
                "relabel: leaf '" + from.name_path(e.leaf_id) + "' not present in target taxonomy");
        it = cache.emplace(e.leaf_id, *target).first;
      }
      e.leaf_id = it->second;
    }
    return out;
  }
};

struct GenConfig {
  std::vector<double> sigma_level;  // per-level mean-offset scale, size depth+1
  double sigma_x = 0.5;             // within-class noise
  std::size_t examples_per_leaf = 20;
  std::size_t d_in = 64;
  std::uint64_t seed = 1;
};

// True leaf means implied by (taxonomy, config): sum of per-node offsets
// along the path. Recomputable independently of the generated dataset.
inline std::map<int, Vector> hierarchical_gaussian_means(const Taxonomy& t, const GenConfig& cfg) {
  require_config(cfg.sigma_level.size() == static_cast<std::size_t>(t.depth()) + 1,
                 "GenConfig: sigma_level must have depth+1 entries");
  for (double s : cfg.sigma_level) require_config(s >= 0.0, "GenConfig: negative sigma_level");
  Rng rng(cfg.seed);
  std::map<int, Vector> offsets;
  for (const auto& [id, n] : t.nodes()) {
    Rng r = rng.stream("gen-offset", static_cast<std::uint64_t>(id));
    Vector off(cfg.d_in);
    double sigma = cfg.sigma_level[static_cast<std::size_t>(n.level)];
    for (double& x : off) x = r.normal(0.0, sigma);
    offsets.emplace(id, std::move(off));
  }
  std::map<int, Vector> means;
  for (int leaf : t.leaves()) {
    Vector mean(cfg.d_in, 0.0);
    for (int node : t.path_of(leaf)) axpy(1.0, offsets.at(node), mean);
    means.emplace(leaf, std::move(mean));
  }
  return means;
}

inline Dataset generate_hierarchical_gaussian(const Taxonomy& t, const GenConfig& cfg) {
  require_config(cfg.sigma_x >= 0.0, "GenConfig: negative sigma_x");
  require_config(cfg.d_in > 0 && cfg.examples_per_leaf > 0, "GenConfig: dims and counts must be positive");
  std::map<int, Vector> means = hierarchical_gaussian_means(t, cfg);
  Rng rng(cfg.seed);

  std::vector<int> leaves = t.leaves();
  Dataset ds;
  ds.taxonomy_fingerprint = t.fingerprint();
  ds.features = Matrix(leaves.size() * cfg.examples_per_leaf, cfg.d_in);
  ds.examples.reserve(ds.features.rows);

  std::size_t row = 0;
  for (int leaf : leaves) {
    Rng r = rng.stream("gen-example", static_cast<std::uint64_t>(leaf));
    const Vector& mean = means.at(leaf);
    for (std::size_t k = 0; k < cfg.examples_per_leaf; ++k, ++row) {
      for (std::size_t d = 0; d < cfg.d_in; ++d)
        ds.features(row, d) = mean[d] + r.normal(0.0, cfg.sigma_x);
      ds.examples.push_back({leaf, Split::Train, Source::Synthetic});
    }
  }
  return ds;
}

// Per class c, moves min(cap, k_c - 10) examples to the test split
// (seeded-uniform, skipped where the value is <= 0). Mirrors the benchmark
// rule that reserves min(6, k-10) images per category.
inline Dataset test_split_builder(const Dataset& dataset, long long per_class_cap, std::uint64_t seed) {
  Dataset out = dataset;
  Rng rng(seed);
  std::map<int, std::vector<std::size_t>> by_leaf;
  for (std::size_t i = 0; i < out.examples.size(); ++i) by_leaf[out.examples[i].leaf_id].push_back(i);
  for (const auto& [leaf, idx] : by_leaf) {
    long long k_c = static_cast<long long>(idx.size());
    long long reserve = std::min(per_class_cap, k_c - 10);
    if (reserve <= 0) continue;
    Rng r = rng.stream("test-split", static_cast<std::uint64_t>(leaf));
    for (std::size_t pick : r.sample_without_replacement(idx.size(), static_cast<std::size_t>(reserve)))
      out.examples[idx[pick]].split = Split::Test;
  }
  return out;
}

struct Episode {
  std::size_t shots = 0;                           // K
  std::vector<std::size_t> support_indices;        // K per novel leaf
  std::vector<std::size_t> balanced_train_indices; // supports + K per base leaf
  std::vector<std::size_t> test_indices;           // novel train-tagged remainder
};

// K-shot episode over the train-tagged portion of the dataset. Supports are
// drawn seeded-uniform per novel leaf; the balanced train set adds a K-sized
// sample of every base leaf; remaining novel train examples become the
// episode's test pool.
inline Episode sample_k_shot(const Dataset& dataset, const SplitSpec& split, std::size_t shots,
                             std::uint64_t seed) {
  require_config(shots >= 1, "sample_k_shot: K must be at least 1");
  Rng rng(seed);
  Episode ep;
  ep.shots = shots;

  for (int leaf : std::set<int>(split.novel_leaf_ids)) {
    auto candidates = dataset.indices_of_leaf(leaf, Split::Train);
    require(candidates.size() >= shots + 1,
            "sample_k_shot: novel leaf " + std::to_string(leaf) + " has " +
                std::to_string(candidates.size()) + " train examples, needs at least " +
                std::to_string(shots + 1));
    Rng r = rng.stream("episode-novel", static_cast<std::uint64_t>(leaf));
    std::set<std::size_t> chosen;
    for (std::size_t pick : r.sample_without_replacement(candidates.size(), shots)) {
      ep.support_indices.push_back(candidates[pick]);
      chosen.insert(candidates[pick]);
    }
    for (std::size_t idx : candidates)
      if (!chosen.count(idx)) ep.test_indices.push_back(idx);
  }

  ep.balanced_train_indices = ep.support_indices;
  for (int leaf : std::set<int>(split.base_leaf_ids)) {
    auto candidates = dataset.indices_of_leaf(leaf, Split::Train);
    if (candidates.empty()) continue;
    Rng r = rng.stream("episode-base", static_cast<std::uint64_t>(leaf));
    std::size_t take = std::min(shots, candidates.size());
    for (std::size_t pick : r.sample_without_replacement(candidates.size(), take))
      ep.balanced_train_indices.push_back(candidates[pick]);
  }
  return ep;
}

// ---------------------------------------------------------------------------
// COCO-format ingestion. The reader consumes the standard images /
// annotations / categories keys; category names are matched against leaf
// name paths ('order/family/genus/species'), falling back to a bare leaf
// name when it is unambiguous. Raw features come from a caller-supplied
// source keyed by annotation id.

using FeatureSource = std::function<std::optional<Vector>(long long annotation_id)>;

struct CocoLoadReport {
  Dataset dataset;
  std::vector<std::string> unmatched_categories;
  std::size_t skipped_annotations = 0;
};

}  // namespace hicl
