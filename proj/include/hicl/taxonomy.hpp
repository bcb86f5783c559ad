#pragma once

// Hierarchical class tree with uniform leaf depth. Levels run 0 (an
// explicit root) to L (leaves, one per class). Children order is stable and
// defines classifier output indices.
//
// File format (tab separated, '#' comments, one node per line):
//
//   id <TAB> name <TAB> level <TAB> parent-id ('-' for root) <TAB> instance-count
//
// A parent line must precede its children; children order is line order.
// Internal instance counts are re-aggregated from leaf counts on load, so
// write followed by read is lossless.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/rng.hpp"

namespace hicl {

struct TaxonNode {
  int id = -1;
  std::string name;
  int level = 0;
  int parent = -1;  // -1 only for root
  std::vector<int> children;
  long long instance_count = 0;
};

// Root-to-leaf node id sequence, length depth+1.
using LeafPath = std::vector<int>;

struct SplitSpec {
  std::set<int> base_leaf_ids;
  std::set<int> novel_leaf_ids;
};

class Taxonomy {
 public:
  Taxonomy() = default;

  // Nodes may arrive in any order as long as the linkage is consistent.
  // Children order is taken from the nodes' own children lists.
  static Taxonomy from_nodes(std::vector<TaxonNode> nodes) {
    Taxonomy t;
    for (auto& n : nodes) {
      require(n.id >= 0, "taxonomy: node ids must be nonnegative");
      require(t.nodes_.emplace(n.id, std::move(n)).second, "taxonomy: duplicate node id");
    }
    t.finalize();
    return t;
  }

  int root_id() const { return root_id_; }
  int depth() const { return depth_; }
  std::size_t node_count() const { return nodes_.size(); }

  bool contains(int id) const { return nodes_.count(id) > 0; }

  const TaxonNode& node(int id) const {
    auto it = nodes_.find(id);
    require(it != nodes_.end(), "taxonomy: unknown node id " + std::to_string(id));
    return it->second;
  }

  bool is_leaf(int id) const { return node(id).level == depth_; }
  bool is_internal(int id) const { return !is_leaf(id); }

  // Ascending id.
  std::vector<int> leaves() const {
    std::vector<int> out;
    for (const auto& [id, n] : nodes_)
      if (n.level == depth_) out.push_back(id);
    return out;
  }

  // Ascending id; these are the classifier owners.
  std::vector<int> internal_nodes() const {
    std::vector<int> out;
    for (const auto& [id, n] : nodes_)
      if (n.level < depth_) out.push_back(id);
    return out;
  }

  std::size_t leaf_count() const { return leaves().size(); }

  long long total_instances() const { return node(root_id_).instance_count; }

  LeafPath path_of(int leaf_id) const {
    const TaxonNode& n = node(leaf_id);
    require(n.level == depth_, "path_of: node " + std::to_string(leaf_id) + " is not a leaf");
    LeafPath path(static_cast<std::size_t>(depth_) + 1);
    int cur = leaf_id;
    for (int j = depth_; j >= 0; --j) {
      path[static_cast<std::size_t>(j)] = cur;
      cur = node(cur).parent;
    }
    return path;
  }

  // One path per leaf, leaf id ascending.
  std::vector<LeafPath> enumerate_paths() const {
    std::vector<LeafPath> out;
    for (int leaf : leaves()) out.push_back(path_of(leaf));
    return out;
  }

  // Names joined by '/', root excluded (root is an artifact of the
  // representation, not a class). For the root itself returns its name.
  std::string name_path(int id) const {
    const TaxonNode& n = node(id);
    if (n.parent < 0) return n.name;
    std::vector<const std::string*> parts;
    int cur = id;
    while (cur != root_id_) {
      parts.push_back(&node(cur).name);
      cur = node(cur).parent;
    }
    std::string out;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
      if (!out.empty()) out += '/';
      out += **it;
    }
    return out;
  }

  std::optional<int> find_by_name_path(const std::string& path) const {
    auto it = by_name_path_.find(path);
    if (it == by_name_path_.end()) return std::nullopt;
    return it->second;
  }

  // Breadth-first, children order within each node. Root first.
  std::vector<int> bfs_order() const {
    std::vector<int> order;
    std::deque<int> queue{root_id_};
    while (!queue.empty()) {
      int id = queue.front();
      queue.pop_front();
      order.push_back(id);
      for (int c : node(id).children) queue.push_back(c);
    }
    return order;
  }

  // Leaf ids in the subtree rooted at id, ascending.
  std::vector<int> subtree_leaves(int id) const {
    std::vector<int> out;
    std::deque<int> queue{id};
    while (!queue.empty()) {
      int cur = queue.front();
      queue.pop_front();
      if (node(cur).level == depth_)
        out.push_back(cur);
      else
        for (int c : node(cur).children) queue.push_back(c);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Structure hash over name paths, levels and children order. Ids do not
  // participate, so a rebuilt tree with the same shape fingerprints equal.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
      h ^= 0xff;
      h *= 0x100000001b3ULL;
    };
    mix(std::to_string(depth_));
    for (int id : bfs_order()) {
      const TaxonNode& n = node(id);
      mix(n.name);
      mix(std::to_string(n.level));
      mix(std::to_string(n.children.size()));
    }
    return h;
  }

  // Replaces leaf counts and re-aggregates internals. Missing leaves get 0.
  Taxonomy with_leaf_counts(const std::map<int, long long>& counts) const {
    Taxonomy t = *this;
    for (auto& [id, n] : t.nodes_) {
      if (n.level != depth_) continue;
      auto it = counts.find(id);
      n.instance_count = it == counts.end() ? 0 : it->second;
    }
    t.aggregate_counts();
    return t;
  }

  // Subtree induced by the given leaves; ids, names, children order of the
  // surviving nodes are preserved. Internal counts re-aggregated.
  Taxonomy restrict_to_leaves(const std::set<int>& keep_leaves) const {
    require(!keep_leaves.empty(), "restrict_to_leaves: empty leaf set");
    std::set<int> keep;
    for (int leaf : keep_leaves) {
      require(is_leaf(leaf), "restrict_to_leaves: id " + std::to_string(leaf) + " is not a leaf");
      int cur = leaf;
      while (cur >= 0) {
        keep.insert(cur);
        cur = node(cur).parent;
      }
    }
    std::vector<TaxonNode> nodes;
    for (const auto& [id, n] : nodes_) {
      if (!keep.count(id)) continue;
      TaxonNode copy = n;
      copy.children.clear();
      for (int c : n.children)
        if (keep.count(c)) copy.children.push_back(c);
      nodes.push_back(std::move(copy));
    }
    return from_nodes(std::move(nodes));
  }

  // Depth-1 view: root plus all leaves as direct children (ascending id).
  // Leaf ids and counts carry over; used by the flat-softmax baseline.
  Taxonomy flattened() const {
    std::vector<TaxonNode> nodes;
    TaxonNode root = node(root_id_);
    root.level = 0;
    root.children = leaves();
    nodes.push_back(root);
    for (int leaf : root.children) {
      TaxonNode n = node(leaf);
      n.level = 1;
      n.parent = root_id_;
      n.children.clear();
      nodes.push_back(std::move(n));
    }
    return from_nodes(std::move(nodes));
  }

  int max_id() const { return nodes_.empty() ? -1 : nodes_.rbegin()->first; }

  const std::map<int, TaxonNode>& nodes() const { return nodes_; }

 private:
  void finalize() {
    require(!nodes_.empty(), "taxonomy: no nodes");

    int root = -1;
    for (const auto& [id, n] : nodes_) {
      if (n.parent < 0) {
        require(root < 0, "taxonomy: more than one root");
        require(n.level == 0, "taxonomy: root must have level 0");
        root = id;
      }
    }
    require(root >= 0, "taxonomy: no root");
    root_id_ = root;

    std::set<int> seen_children;
    for (const auto& [id, n] : nodes_) {
      for (int c : n.children) {
        const TaxonNode& child = node(c);
        require(child.parent == id, "taxonomy: child/parent linkage mismatch at node " + std::to_string(c));
        require(child.level == n.level + 1, "taxonomy: level must be parent level + 1 at node " + std::to_string(c));
        require(seen_children.insert(c).second, "taxonomy: node " + std::to_string(c) + " listed as child twice");
      }
      if (n.parent >= 0) {
        const TaxonNode& p = node(n.parent);
        bool linked = std::find(p.children.begin(), p.children.end(), id) != p.children.end();
        require(linked, "taxonomy: node " + std::to_string(id) + " missing from parent's children");
      }
    }

    std::vector<int> order = bfs_order();
    require(order.size() == nodes_.size(), "taxonomy: unreachable nodes present");

    depth_ = 0;
    for (const auto& [id, n] : nodes_) depth_ = std::max(depth_, n.level);
    // a lone root (the empty tree, no classes) is allowed as the degenerate
    // case so merges can take an absent novel side
    require(depth_ >= 1 || nodes_.size() == 1, "taxonomy: depth must be at least 1");
    for (const auto& [id, n] : nodes_)
      if (n.children.empty())
        require(n.level == depth_, "taxonomy: non-uniform depth (leaf node " + std::to_string(id) +
                                       " at level " + std::to_string(n.level) + ", expected " +
                                       std::to_string(depth_) + ")");

    aggregate_counts();

    by_name_path_.clear();
    for (const auto& [id, n] : nodes_) {
      require(!n.name.empty(), "taxonomy: empty node name at id " + std::to_string(id));
      require(n.name.find('/') == std::string::npos && n.name.find('\t') == std::string::npos,
              "taxonomy: node name may not contain '/' or tab: " + n.name);
      if (id == root_id_) continue;
      require(by_name_path_.emplace(name_path(id), id).second,
              "taxonomy: duplicate name path " + name_path(id));
    }
  }

  void aggregate_counts() {
    std::vector<int> order = bfs_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TaxonNode& n = nodes_.at(*it);
      if (n.children.empty()) {
        require(n.instance_count >= 0, "taxonomy: negative instance count");
        continue;
      }
      long long sum = 0;
      for (int c : n.children) sum += nodes_.at(c).instance_count;
      n.instance_count = sum;
    }
  }

  std::map<int, TaxonNode> nodes_;
  std::map<std::string, int> by_name_path_;
  int root_id_ = -1;
  int depth_ = 0;
};

inline Taxonomy load_taxonomy(std::istream& in) {
  std::vector<TaxonNode> nodes;
  std::map<int, std::vector<int>> children;  // file order
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id_s, name, level_s, parent_s, count_s;
    bool ok = static_cast<bool>(std::getline(ls, id_s, '\t')) &&
              static_cast<bool>(std::getline(ls, name, '\t')) &&
              static_cast<bool>(std::getline(ls, level_s, '\t')) &&
              static_cast<bool>(std::getline(ls, parent_s, '\t')) &&
              static_cast<bool>(std::getline(ls, count_s));
    require(ok, "taxonomy file: malformed line " + std::to_string(lineno));
    TaxonNode n;
    try {
      n.id = std::stoi(id_s);
      n.level = std::stoi(level_s);
      n.parent = parent_s == "-" ? -1 : std::stoi(parent_s);
      n.instance_count = std::stoll(count_s);
    } catch (const std::exception&) {
      throw DataError("taxonomy file: bad number on line " + std::to_string(lineno));
    }
    n.name = name;
    if (n.parent >= 0) children[n.parent].push_back(n.id);
    nodes.push_back(std::move(n));
  }
  for (auto& n : nodes) {
    auto it = children.find(n.id);
    if (it != children.end()) n.children = it->second;
  }
  return Taxonomy::from_nodes(std::move(nodes));
}

inline Taxonomy load_taxonomy_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open taxonomy file: " + path);
  return load_taxonomy(f);
}

// BFS order so that reading reproduces ids, parents and children order.
inline void save_taxonomy(std::ostream& out, const Taxonomy& t) {
  out << "# hicl taxonomy v1\n";
  out << "# id\tname\tlevel\tparent\tcount\n";
  for (int id : t.bfs_order()) {
    const TaxonNode& n = t.node(id);
    out << n.id << '\t' << n.name << '\t' << n.level << '\t';
    if (n.parent < 0)
      out << '-';
    else
      out << n.parent;
    out << '\t' << n.instance_count << '\n';
  }
}

inline void save_taxonomy_file(const std::string& path, const Taxonomy& t) {
  std::ofstream f(path);
  require(f.good(), "cannot open taxonomy file for writing: " + path);
  save_taxonomy(f, t);
}

// Long-tail split: sort the root's children by descending subtree instance
// count (ties by id ascending); leaves under the first top_k subtrees are
// base, the rest novel.
inline SplitSpec split_base_novel(const Taxonomy& t, int top_k) {
  const auto& root_children = t.node(t.root_id()).children;
  require_config(top_k >= 1 && static_cast<std::size_t>(top_k) < root_children.size(),
                 "split_base_novel: top_k must be in [1, #root children)");
  std::vector<int> order = root_children;
  std::stable_sort(order.begin(), order.end(), [&t](int a, int b) {
    long long ca = t.node(a).instance_count, cb = t.node(b).instance_count;
    if (ca != cb) return ca > cb;
    return a < b;
  });
  SplitSpec spec;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto leaves = t.subtree_leaves(order[i]);
    auto& dst = i < static_cast<std::size_t>(top_k) ? spec.base_leaf_ids : spec.novel_leaf_ids;
    dst.insert(leaves.begin(), leaves.end());
  }
  return spec;
}

struct MergeResult {
  Taxonomy merged;
  std::map<int, int> novel_to_merged;  // id in `novel` -> id in merged tree
};

// Union of two trees of the same depth; nodes are identified by name path.
// Base ids and children order are preserved; new nodes get fresh ids and
// are appended after existing children, so classifier output indices of the
// base tree remain valid. Leaf counts: base wins for shared leaves, novel
// fills in its own; internal counts re-aggregated.
inline MergeResult merge_taxonomies(const Taxonomy& base, const Taxonomy& novel) {
  std::map<int, int> mapping;
  mapping[novel.root_id()] = base.root_id();
  if (novel.node_count() == 1) return {base, std::move(mapping)};

  require(novel.depth() == base.depth(),
          "merge_taxonomies: depth mismatch (" + std::to_string(base.depth()) + " vs " +
              std::to_string(novel.depth()) + ")");

  std::vector<TaxonNode> nodes;
  nodes.reserve(base.node_count() + novel.node_count());
  for (const auto& [id, n] : base.nodes()) nodes.push_back(n);
  std::map<int, std::size_t> index_of;  // merged id -> position in `nodes`
  for (std::size_t i = 0; i < nodes.size(); ++i) index_of[nodes[i].id] = i;

  int next_id = std::max(base.max_id(), 0) + 1;
  for (int nid : novel.bfs_order()) {
    if (nid == novel.root_id()) continue;
    const TaxonNode& n = novel.node(nid);
    std::string npath = novel.name_path(nid);
    if (auto existing = base.find_by_name_path(npath)) {
      require(base.node(*existing).level == n.level,
              "merge_taxonomies: name path '" + npath + "' exists at a different level");
      mapping[nid] = *existing;
      continue;
    }
    TaxonNode fresh = n;
    fresh.id = next_id++;
    fresh.children.clear();
    fresh.parent = mapping.at(n.parent);
    nodes[index_of.at(fresh.parent)].children.push_back(fresh.id);
    index_of[fresh.id] = nodes.size();
    mapping[nid] = fresh.id;
    nodes.push_back(std::move(fresh));
  }
  return {Taxonomy::from_nodes(std::move(nodes)), std::move(mapping)};
}

}  // namespace hicl
