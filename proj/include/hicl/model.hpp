#pragma once

// Feature adapter and hierarchical head. The adapter maps raw inputs to the
// feature space all losses operate on; its output is the final layer's
// preactivation (no trailing rectifier). The head owns one small classifier
// per internal taxonomy node; each classifier has d+1 outputs where d is the
// child count and the last output is the "others" virtual class.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hicl/memory_bank.hpp"
#include "hicl/numeric.hpp"
#include "hicl/taxonomy.hpp"

namespace hicl {

struct ModelDims {
  std::size_t d_in = 64;
  std::size_t adapter_hidden = 256;
  std::size_t d_feat = 128;
  std::size_t classifier_hidden = 256;
};

struct FeatureAdapter {
  TwoLayerNet net;

  static FeatureAdapter init(const ModelDims& dims, const Rng& rng) {
    Rng r = rng.stream("adapter-init");
    return {TwoLayerNet::init(dims.d_in, dims.adapter_hidden, dims.d_feat, r)};
  }

  std::size_t in_dim() const { return net.in_dim(); }
  std::size_t feat_dim() const { return net.out_dim(); }

  Vector embed(const Vector& raw, LayerCache* cache = nullptr) const {
    return net.forward(raw, cache);
  }
};

struct NodeClassifier {
  int node_id = -1;
  TwoLayerNet net;  // out dim = child count + 1; last index is "others"

  std::size_t child_count() const { return net.out_dim() - 1; }
  std::size_t others_index() const { return net.out_dim() - 1; }
};

class HierarchicalHead {
 public:
  HierarchicalHead() = default;

  // One classifier per internal node. Weight draws are streamed per node id
  // so the result does not depend on construction order.
  static HierarchicalHead build(const Taxonomy& t, const ModelDims& dims, const Rng& rng) {
    HierarchicalHead head;
    head.dims_ = dims;
    for (int id : t.internal_nodes()) {
      std::size_t d = t.node(id).children.size();
      Rng r = rng.stream("head-init", static_cast<std::uint64_t>(id));
      head.classifiers_.emplace(id, NodeClassifier{id, TwoLayerNet::init(dims.d_feat, dims.classifier_hidden, d + 1, r)});
    }
    return head;
  }

  // Grows this head to a merged taxonomy. Classifiers for brand-new internal
  // nodes are fresh; classifiers whose child list grew get new output rows
  // spliced in front of the "others" row, which stays last. Existing rows
  // are preserved bitwise, so old logits for old inputs do not change.
  static HierarchicalHead extend(const HierarchicalHead& head, const Taxonomy& old_t,
                                 const Taxonomy& new_t, const Rng& rng) {
    HierarchicalHead out;
    out.dims_ = head.dims_;
    for (int id : new_t.internal_nodes()) {
      const auto& new_children = new_t.node(id).children;
      if (!old_t.contains(id) || old_t.is_leaf(id)) {
        Rng r = rng.stream("head-extend", static_cast<std::uint64_t>(id));
        out.classifiers_.emplace(
            id, NodeClassifier{id, TwoLayerNet::init(head.dims_.d_feat, head.dims_.classifier_hidden,
                                                     new_children.size() + 1, r)});
        continue;
      }
      const auto& old_children = old_t.node(id).children;
      require(old_children.size() <= new_children.size() &&
                  std::equal(old_children.begin(), old_children.end(), new_children.begin()),
              "extend_head: children of node " + std::to_string(id) + " are not an append of the old list");
      const NodeClassifier& oldc = head.classifier(id);
      if (old_children.size() == new_children.size()) {
        out.classifiers_.emplace(id, oldc);
        continue;
      }
      NodeClassifier grown;
      grown.node_id = id;
      grown.net.w1 = oldc.net.w1;
      grown.net.b1 = oldc.net.b1;
      std::size_t d_new = new_children.size();
      grown.net.w2 = Matrix(d_new + 1, oldc.net.hidden_dim());
      grown.net.b2 = Vector(d_new + 1, 0.0);
      for (std::size_t r = 0; r < old_children.size(); ++r) {
        grown.net.w2.set_row(r, oldc.net.w2.row_vec(r));
        grown.net.b2[r] = oldc.net.b2[r];
      }
      // fresh rows for the appended children, same fan-in scaled scheme
      Rng r = rng.stream("head-extend", static_cast<std::uint64_t>(id));
      double scale = 1.0 / std::sqrt(static_cast<double>(oldc.net.hidden_dim()));
      for (std::size_t row = old_children.size(); row < d_new; ++row)
        for (std::size_t c = 0; c < oldc.net.hidden_dim(); ++c)
          grown.net.w2(row, c) = r.uniform(-scale, scale);
      // "others" row moves to stay last
      grown.net.w2.set_row(d_new, oldc.net.w2.row_vec(old_children.size()));
      grown.net.b2[d_new] = oldc.net.b2[old_children.size()];
      out.classifiers_.emplace(id, std::move(grown));
    }
    return out;
  }

  std::size_t classifier_count() const { return classifiers_.size(); }

  bool has(int node_id) const { return classifiers_.count(node_id) > 0; }

  const NodeClassifier& classifier(int node_id) const {
    auto it = classifiers_.find(node_id);
    require(it != classifiers_.end(), "HierarchicalHead: no classifier for node " + std::to_string(node_id));
    return it->second;
  }

  NodeClassifier& classifier(int node_id) {
    auto it = classifiers_.find(node_id);
    require(it != classifiers_.end(), "HierarchicalHead: no classifier for node " + std::to_string(node_id));
    return it->second;
  }

  Vector logits(int node_id, const Vector& feat, LayerCache* cache = nullptr) const {
    return classifier(node_id).net.forward(feat, cache);
  }

  // Softmax over the node's d+1 outputs ("others" last).
  Vector class_probabilities(int node_id, const Vector& feat) const {
    return softmax(logits(node_id, feat));
  }

  // Ascending node id.
  std::vector<int> node_ids() const {
    std::vector<int> out;
    out.reserve(classifiers_.size());
    for (const auto& [id, c] : classifiers_) out.push_back(id);
    return out;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& [id, c] : classifiers_) c.net.for_each_param("head/" + std::to_string(id), fn);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    for (const auto& [id, c] : classifiers_) c.net.for_each_param("head/" + std::to_string(id), fn);
  }

  const ModelDims& dims() const { return dims_; }

 private:
  std::map<int, NodeClassifier> classifiers_;
  ModelDims dims_;
};

inline Vector classify_node(const HierarchicalHead& head, int node_id, const Vector& feat) {
  return head.class_probabilities(node_id, feat);
}

// Prototype per node = unit-normalized mean of the adapter features of the
// examples under the node's subtree. Nodes with no examples fall back to a
// seeded random unit vector (or raise, in strict mode).
inline MemoryBank init_memories(const Taxonomy& t,
                                const std::vector<std::pair<int, Vector>>& labeled_raw,
                                const FeatureAdapter& adapter, double eps, const Rng& rng,
                                bool strict = false, bool renormalize = true) {
  if (strict) require(!labeled_raw.empty(), "init_memories: empty feature set in strict mode");
  MemoryBank bank(t.depth(), adapter.feat_dim(), eps, renormalize);

  std::map<int, Vector> sums;
  std::map<int, std::size_t> counts;
  for (const auto& [leaf, raw] : labeled_raw) {
    Vector feat = adapter.embed(raw);
    for (int node : t.path_of(leaf)) {
      auto [it, fresh] = sums.emplace(node, Vector(adapter.feat_dim(), 0.0));
      axpy(1.0, feat, it->second);
      counts[node] += 1;
    }
  }
  for (const auto& [id, n] : t.nodes()) {
    auto it = sums.find(id);
    if (it != sums.end() && norm2(it->second) > 0.0) {
      bank.set_prototype(id, scaled(it->second, 1.0 / static_cast<double>(counts.at(id))));
    } else {
      if (strict) throw DataError("init_memories: node " + std::to_string(id) + " has no examples (strict mode)");
      Rng r = rng.stream("memory-init", static_cast<std::uint64_t>(id));
      Vector v(adapter.feat_dim());
      for (double& x : v) x = r.normal();
      bank.set_prototype(id, v);
    }
  }
  return bank;
}

}  // namespace hicl
