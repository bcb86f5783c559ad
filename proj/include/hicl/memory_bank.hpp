#pragma once

// Prototype memory: one unit-norm vector per taxonomy node, updated with an
// exponential moving average along ground-truth root-to-leaf paths. Deeper
// nodes update faster; the retention factor at level j is 1 - eps^(L-j+1).

#include <map>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/rng.hpp"
#include "hicl/taxonomy.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

// f(j) = 1 - eps^(L-j+1), strictly decreasing in j.
inline double momentum_coefficient(int level, int depth, double eps) {
  require_config(eps > 0.0 && eps < 1.0, "momentum_coefficient: eps must be in (0,1)");
  require_config(level >= 0 && level <= depth, "momentum_coefficient: level out of [0, depth]");
  return 1.0 - std::pow(eps, static_cast<double>(depth - level + 1));
}

class MemoryBank {
 public:
  MemoryBank() = default;

  MemoryBank(int depth, std::size_t feat_dim, double eps, bool renormalize = true)
      : depth_(depth), dim_(feat_dim), eps_(eps), renormalize_(renormalize) {
    require_config(eps > 0.0 && eps < 1.0, "MemoryBank: eps must be in (0,1)");
  }

  int depth() const { return depth_; }
  std::size_t dim() const { return dim_; }
  double eps() const { return eps_; }
  bool renormalize() const { return renormalize_; }
  std::size_t size() const { return protos_.size(); }

  bool has(int node_id) const { return protos_.count(node_id) > 0; }

  const Vector& prototype(int node_id) const {
    auto it = protos_.find(node_id);
    require(it != protos_.end(), "MemoryBank: no prototype for node " + std::to_string(node_id));
    return it->second;
  }

  // Sets (or replaces) a prototype; stored unit-normalized.
  void set_prototype(int node_id, const Vector& v) {
    require(v.size() == dim_, "MemoryBank: prototype dim mismatch");
    protos_[node_id] = normalized(v);
  }

  // Bitwise restore for checkpoint loading; the value is trusted to already
  // satisfy the norm invariant.
  void restore_prototype(int node_id, const Vector& v) {
    require(v.size() == dim_, "MemoryBank: prototype dim mismatch");
    protos_[node_id] = v;
  }

  // EMA step for every node on the path. Written in delta form
  //   m += (1 - f(j)) * (x_bar - m)
  // so that x_bar == m leaves the prototype bitwise unchanged.
  void ema_update(const Vector& x, const LeafPath& path) {
    require(x.size() == dim_, "ema_update: feature dim mismatch");
    Vector x_bar = normalized(x);  // throws on zero norm
    require(path.size() == static_cast<std::size_t>(depth_) + 1, "ema_update: path length mismatch");
    for (int j = 0; j <= depth_; ++j) {
      Vector& m = protos_.at(path[static_cast<std::size_t>(j)]);
      double keep = momentum_coefficient(j, depth_, eps_);
      double take = 1.0 - keep;
      for (std::size_t d = 0; d < dim_; ++d) m[d] += take * (x_bar[d] - m[d]);
      if (renormalize_) {
        double n = norm2(m);
        if (n != 1.0) {
          if (n == 0.0) throw NumericError("ema_update: prototype collapsed to zero");
          for (double& v : m) v /= n;
        }
      }
    }
  }

  // Prototype ids, ascending.
  std::vector<int> node_ids() const {
    std::vector<int> out;
    out.reserve(protos_.size());
    for (const auto& [id, p] : protos_) out.push_back(id);
    return out;
  }

  const std::map<int, Vector>& prototypes() const { return protos_; }

 private:
  std::map<int, Vector> protos_;
  int depth_ = 0;
  std::size_t dim_ = 0;
  double eps_ = 0.1;
  bool renormalize_ = true;
};

}  // namespace hicl
