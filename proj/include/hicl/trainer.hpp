#pragma once

// Training orchestration. One stage = seeded iteration loop over minibatch
// sampling, adapter embedding, the two losses, an SGD-with-momentum step,
// and EMA memory updates (always after the gradient step, in batch order).
// Two-stage flow: base training on the base taxonomy, then head/bank
// extension to the merged taxonomy and fine-tuning on the balanced set.
// Everything is a pure function of (data, config, seed): same seed, same
// checkpoint bytes.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hicl/checkpoint.hpp"
#include "hicl/data.hpp"
#include "hicl/io.hpp"
#include "hicl/losses.hpp"
#include "hicl/model.hpp"
#include "hicl/taxonomy.hpp"

namespace hicl {

struct TrainConfig {
  ModelDims dims;

  double tau = 0.2;
  double eps = 0.1;
  double beta = 0.5;
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  Aggregation agg = Aggregation::Linear;

  std::size_t beam_width = 3;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 penalty folded into the gradient
  std::size_t iterations = 1000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t shots = 5;
  std::string stage = "base";  // or "finetune"

  bool adapter_trainable = true;  // both stages by default
  bool renormalize_memories = true;

  // ablation switches: no hierarchical head = flat softmax over leaves;
  // no prob loss = plain (hierarchical) cross entropy, i.e. beta forced to 0
  bool hierarchical_head = true;
  bool use_hicl = true;
  bool use_prob_loss = true;

  // optional single-step decay
  std::size_t lr_step_iteration = 0;
  double lr_step_factor = 1.0;

  void validate() const {
    require_config(tau > 0.0, "config: tau must be positive");
    require_config(eps > 0.0 && eps < 1.0, "config: eps must be in (0,1)");
    require_config(beta >= 0.0 && beta <= 1.0, "config: beta must be in [0,1]");
    require_config(learning_rate >= 0.0, "config: learning rate must be nonnegative");
    require_config(batch_size >= 1, "config: batch size must be at least 1");
    require_config(beam_width >= 1, "config: beam width must be at least 1");
    require_config(stage == "base" || stage == "finetune", "config: stage must be base or finetune");
  }
};

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["d_in"] = c.dims.d_in;
  j["adapter_hidden"] = c.dims.adapter_hidden;
  j["d_feat"] = c.dims.d_feat;
  j["classifier_hidden"] = c.dims.classifier_hidden;
  j["tau"] = c.tau;
  j["eps"] = c.eps;
  j["beta"] = c.beta;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["agg"] = to_string(c.agg);
  j["beam_width"] = c.beam_width;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["shots"] = c.shots;
  j["stage"] = c.stage;
  j["adapter_trainable"] = c.adapter_trainable;
  j["renormalize_memories"] = c.renormalize_memories;
  j["hierarchical_head"] = c.hierarchical_head;
  j["use_hicl"] = c.use_hicl;
  j["use_prob_loss"] = c.use_prob_loss;
  j["lr_step_iteration"] = c.lr_step_iteration;
  j["lr_step_factor"] = c.lr_step_factor;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.dims.d_in = j.value("d_in", c.dims.d_in);
    c.dims.adapter_hidden = j.value("adapter_hidden", c.dims.adapter_hidden);
    c.dims.d_feat = j.value("d_feat", c.dims.d_feat);
    c.dims.classifier_hidden = j.value("classifier_hidden", c.dims.classifier_hidden);
    c.tau = j.value("tau", c.tau);
    c.eps = j.value("eps", c.eps);
    c.beta = j.value("beta", c.beta);
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    if (j.contains("agg")) c.agg = aggregation_from_string(j.at("agg").get<std::string>());
    c.beam_width = j.value("beam_width", c.beam_width);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.shots = j.value("shots", c.shots);
    c.stage = j.value("stage", c.stage);
    c.adapter_trainable = j.value("adapter_trainable", c.adapter_trainable);
    c.renormalize_memories = j.value("renormalize_memories", c.renormalize_memories);
    c.hierarchical_head = j.value("hierarchical_head", c.hierarchical_head);
    c.use_hicl = j.value("use_hicl", c.use_hicl);
    c.use_prob_loss = j.value("use_prob_loss", c.use_prob_loss);
    c.lr_step_iteration = j.value("lr_step_iteration", c.lr_step_iteration);
    c.lr_step_factor = j.value("lr_step_factor", c.lr_step_factor);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

struct MetricsRecord {
  std::uint64_t iteration = 0;
  double hicl = 0.0;
  double prob = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct TrainState {
  Taxonomy taxonomy;  // the taxonomy the head/bank were built over (flattened in the flat ablation)
  FeatureAdapter adapter;
  HierarchicalHead head;
  MemoryBank bank;
  OptimState opt;
  std::uint64_t iteration = 0;
  Rng batch_rng{0};
  Rng bern_rng{0};
  TrainConfig cfg;
  std::vector<MetricsRecord> metrics;
};

namespace detail {

// weight decay applies to the weight matrices only, never the biases
inline void add_weight_decay(TwoLayerNet::Grads& g, const TwoLayerNet& net, double wd) {
  if (wd == 0.0) return;
  for (std::size_t i = 0; i < g.w1.data.size(); ++i) g.w1.data[i] += wd * net.w1.data[i];
  for (std::size_t i = 0; i < g.w2.data.size(); ++i) g.w2.data[i] += wd * net.w2.data[i];
}

inline void sgd_step_net(TwoLayerNet& net, const TwoLayerNet::Grads& g, OptimState& opt,
                         const std::string& prefix) {
  sgd_step(net.w1.data, g.w1.data, opt, prefix + "/w1");
  sgd_step(net.b1, g.b1, opt, prefix + "/b1");
  sgd_step(net.w2.data, g.w2.data, opt, prefix + "/w2");
  sgd_step(net.b2, g.b2, opt, prefix + "/b2");
}

inline std::vector<std::pair<int, Vector>> labeled_raw(const Dataset& ds) {
  std::vector<std::pair<int, Vector>> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out.emplace_back(ds.examples[i].leaf_id, ds.features.row_vec(i));
  return out;
}

}  // namespace detail

// Fresh state for a stage: seeded adapter and head, memories initialized
// from subtree feature means of the training data.
inline TrainState make_train_state(const Dataset& train_data, const Taxonomy& t, const TrainConfig& cfg) {
  cfg.validate();
  Taxonomy t_eff = cfg.hierarchical_head ? t : t.flattened();
  TrainState st;
  st.cfg = cfg;
  Rng root(cfg.seed);
  st.adapter = FeatureAdapter::init(cfg.dims, root);
  st.head = HierarchicalHead::build(t_eff, cfg.dims, root);
  st.bank = init_memories(t_eff, detail::labeled_raw(train_data), st.adapter, cfg.eps, root,
                          /*strict=*/false, cfg.renormalize_memories);
  st.opt.learning_rate = cfg.learning_rate;
  st.opt.momentum = cfg.momentum;
  st.batch_rng = root.stream(cfg.stage + "/batch");
  st.bern_rng = root.stream(cfg.stage + "/bernoulli");
  st.taxonomy = std::move(t_eff);
  return st;
}

// Runs the iteration loop until state.iteration reaches cfg.iterations.
// With an initial state this continues exactly where that state stopped
// (used both for stage handoff and checkpoint resume).
inline TrainState train_stage(const Dataset& train_data, const Taxonomy& t, const TrainConfig& cfg,
                              std::optional<TrainState> init = std::nullopt) {
  cfg.validate();
  require(train_data.size() > 0, "train_stage: empty training set");

  TrainState state = init ? std::move(*init) : make_train_state(train_data, t, cfg);
  if (init) {
    Taxonomy t_eff = cfg.hierarchical_head ? t : t.flattened();
    require(t_eff.fingerprint() == state.taxonomy.fingerprint(),
            "train_stage: taxonomy fingerprint mismatch between state and arguments");
    state.cfg = cfg;
  }
  const Taxonomy& tax = state.taxonomy;

  for (const auto& e : train_data.examples)
    require(tax.contains(e.leaf_id) && tax.is_leaf(e.leaf_id),
            "train_stage: dataset label " + std::to_string(e.leaf_id) + " is not a taxonomy leaf");

  // "others" training probabilities reflect the class distribution of the
  // active training set; disabling the prob loss degenerates it to plain
  // cross entropy by forcing beta to zero.
  Taxonomy counted = tax.with_leaf_counts(train_data.leaf_counts());
  ProbTable table = compute_node_probabilities(counted, cfg.use_prob_loss ? cfg.beta : 0.0);

  const std::size_t n_batch = cfg.batch_size;
  const std::size_t d_feat = cfg.dims.d_feat;

  while (state.iteration < cfg.iterations) {
    double lr = cfg.learning_rate;
    if (cfg.lr_step_iteration > 0 && state.iteration >= cfg.lr_step_iteration) lr *= cfg.lr_step_factor;
    state.opt.learning_rate = lr;

    // minibatch: uniform with replacement
    std::vector<std::size_t> idx(n_batch);
    for (auto& i : idx) i = state.batch_rng.uniform_index(train_data.size());

    Matrix feats(n_batch, d_feat);
    std::vector<LayerCache> adapter_caches(n_batch);
    std::vector<int> leaves(n_batch);
    for (std::size_t i = 0; i < n_batch; ++i) {
      Vector f = state.adapter.embed(train_data.features.row_vec(idx[i]), &adapter_caches[i]);
      feats.set_row(i, f);
      leaves[i] = train_data.examples[idx[i]].leaf_id;
    }
    ForegroundBatch batch = ForegroundBatch::from(std::move(feats), std::move(leaves), tax);

    Matrix feature_grads(n_batch, d_feat);
    double hicl_value = 0.0;
    if (cfg.use_hicl) {
      HiCLResult h = hicl_loss(batch, state.bank, {cfg.tau, cfg.agg});
      hicl_value = h.value;
      for (std::size_t i = 0; i < n_batch; ++i)
        for (std::size_t d = 0; d < d_feat; ++d)
          feature_grads(i, d) += cfg.lambda1 * h.dfeatures(i, d);
    }

    ProbLossResult p = prob_loss(batch, state.head, tax, table, state.bern_rng);
    double total = total_loss(hicl_value, p.value, cfg.lambda1, cfg.lambda2);
    if (!std::isfinite(total))
      throw NumericError("train_stage: loss diverged at iteration " + std::to_string(state.iteration) +
                         " (hicl=" + std::to_string(hicl_value) + ", prob=" + std::to_string(p.value) + ")");

    // classifier grads, plus the prob loss' pull on the features
    std::map<int, TwoLayerNet::Grads> head_grads;
    for (const auto& [node, row_caches] : p.caches) {
      const Matrix& dl = p.dlogits.at(node);
      NodeClassifier& cls = state.head.classifier(node);
      auto [it, fresh] = head_grads.emplace(node, TwoLayerNet::Grads::zeros_like(cls.net));
      for (const auto& [i, cache] : row_caches) {
        Vector grad_out = dl.row_vec(i);
        for (double& g : grad_out) g *= cfg.lambda2;
        Vector dx = cls.net.backward(cache, grad_out, it->second);
        for (std::size_t d = 0; d < d_feat; ++d) feature_grads(i, d) += dx[d];
      }
    }

    TwoLayerNet::Grads adapter_grads = TwoLayerNet::Grads::zeros_like(state.adapter.net);
    if (cfg.adapter_trainable) {
      for (std::size_t i = 0; i < n_batch; ++i)
        state.adapter.net.backward(adapter_caches[i], feature_grads.row_vec(i), adapter_grads);
    }

    // parameter step; every trainable block steps every iteration so the
    // momentum state evolves uniformly
    if (cfg.adapter_trainable) {
      detail::add_weight_decay(adapter_grads, state.adapter.net, cfg.weight_decay);
      detail::sgd_step_net(state.adapter.net, adapter_grads, state.opt, "adapter");
    }
    for (int node : state.head.node_ids()) {
      auto it = head_grads.find(node);
      NodeClassifier& cls = state.head.classifier(node);
      TwoLayerNet::Grads zeros;
      TwoLayerNet::Grads& grads = it != head_grads.end()
                                      ? it->second
                                      : (zeros = TwoLayerNet::Grads::zeros_like(cls.net), zeros);
      detail::add_weight_decay(grads, cls.net, cfg.weight_decay);
      detail::sgd_step_net(cls.net, grads, state.opt, "head/" + std::to_string(node));
    }

    // memory maintenance strictly after the gradient step, batch order,
    // using the features that produced this iteration's losses
    for (std::size_t i = 0; i < n_batch; ++i)
      state.bank.ema_update(batch.features.row_vec(i), batch.paths[i]);

    state.metrics.push_back({state.iteration, hicl_value, p.value, total, lr});
    state.iteration += 1;
  }
  return state;
}

// Prototypes for nodes that joined the taxonomy at fine-tune time are the
// unit-normalized subtree feature means of the new training data (the novel
// supports); nodes without examples fall back to seeded random directions.
inline MemoryBank extend_memories(const MemoryBank& old_bank, const Taxonomy& t_all,
                                  const std::vector<std::pair<int, Vector>>& labeled_raw,
                                  const FeatureAdapter& adapter, const Rng& rng) {
  MemoryBank bank(t_all.depth(), old_bank.dim(), old_bank.eps(), old_bank.renormalize());
  std::map<int, Vector> sums;
  std::map<int, std::size_t> counts;
  for (const auto& [leaf, raw] : labeled_raw) {
    Vector feat = adapter.embed(raw);
    for (int node : t_all.path_of(leaf)) {
      auto [it, fresh] = sums.emplace(node, Vector(adapter.feat_dim(), 0.0));
      axpy(1.0, feat, it->second);
      counts[node] += 1;
    }
  }
  for (const auto& [id, n] : t_all.nodes()) {
    if (old_bank.has(id)) {
      bank.set_prototype(id, old_bank.prototype(id));
      continue;
    }
    auto it = sums.find(id);
    if (it != sums.end() && norm2(it->second) > 0.0) {
      bank.set_prototype(id, scaled(it->second, 1.0 / static_cast<double>(counts.at(id))));
    } else {
      Rng r = rng.stream("memory-extend", static_cast<std::uint64_t>(id));
      Vector v(adapter.feat_dim());
      for (double& x : v) x = r.normal();
      bank.set_prototype(id, v);
    }
  }
  return bank;
}

// Stage-2 starting point: head extended to the merged taxonomy (old rows
// preserved bitwise), bank extended, fresh optimizer and fresh stage-scoped
// rng streams. Until the first optimizer step the extended model computes
// exactly what the stage-1 model computed on old classes.
inline TrainState begin_finetune(const TrainState& base_state, const Taxonomy& t_all,
                                 const Dataset& balanced_data, const TrainConfig& cfg_ft) {
  cfg_ft.validate();
  require_config(cfg_ft.stage == "finetune", "begin_finetune: config stage must be 'finetune'");
  require_config(cfg_ft.hierarchical_head == base_state.cfg.hierarchical_head,
                 "begin_finetune: head structure flag differs from the base stage");

  Taxonomy t_all_eff = cfg_ft.hierarchical_head ? t_all : t_all.flattened();
  Rng root(cfg_ft.seed);

  TrainState st;
  st.cfg = cfg_ft;
  st.adapter = base_state.adapter;
  st.head = HierarchicalHead::extend(base_state.head, base_state.taxonomy, t_all_eff, root);
  st.bank = extend_memories(base_state.bank, t_all_eff, detail::labeled_raw(balanced_data),
                            st.adapter, root);
  st.opt.learning_rate = cfg_ft.learning_rate;
  st.opt.momentum = cfg_ft.momentum;
  st.batch_rng = root.stream("finetune/batch");
  st.bern_rng = root.stream("finetune/bernoulli");
  st.taxonomy = std::move(t_all_eff);
  return st;
}

struct TwoStageResult {
  TrainState base;
  TrainState finetuned;
  Taxonomy t_base;
  Taxonomy t_all;  // merged, hierarchical (not flattened)
};

// Full protocol: base training on the base subtree, merge, fine-tune on the
// balanced episode data. `full` keeps the original taxonomy's leaf ids; the
// balanced set is relabeled into the merged id space by name path.
inline TwoStageResult two_stage_train(const Dataset& full, const Taxonomy& t, const SplitSpec& split,
                                      const Episode& episode, const TrainConfig& cfg_base,
                                      const TrainConfig& cfg_ft) {
  require(!split.base_leaf_ids.empty(), "two_stage_train: empty base split");
  Taxonomy t_base = t.restrict_to_leaves(split.base_leaf_ids);
  Taxonomy t_all = t_base;
  if (!split.novel_leaf_ids.empty()) {
    Taxonomy t_novel = t.restrict_to_leaves(split.novel_leaf_ids);
    t_all = merge_taxonomies(t_base, t_novel).merged;
  }

  std::vector<std::size_t> base_train;
  for (std::size_t i = 0; i < full.size(); ++i)
    if (full.examples[i].split == Split::Train && split.base_leaf_ids.count(full.examples[i].leaf_id))
      base_train.push_back(i);
  Dataset base_data = full.subset(base_train).relabeled(t, t_base);

  TwoStageResult out;
  out.base = train_stage(base_data, t_base, cfg_base);

  Dataset balanced = full.subset(episode.balanced_train_indices).relabeled(t, t_all);
  TrainState start = begin_finetune(out.base, t_all, balanced, cfg_ft);
  out.finetuned = train_stage(balanced, t_all, cfg_ft, std::move(start));
  out.t_base = std::move(t_base);
  out.t_all = std::move(t_all);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing. The container carries the full resumable state: parameters,
// prototypes, optimizer velocities, rng streams, iteration counter, config
// echo and the (effective) taxonomy itself.

namespace detail {

inline void save_net(Checkpoint& ck, const std::string& prefix, const TwoLayerNet& net) {
  ck.add_tensor(prefix + "/w1", {net.w1.rows, net.w1.cols}, net.w1.data);
  ck.add_tensor(prefix + "/b1", {net.b1.size()}, net.b1);
  ck.add_tensor(prefix + "/w2", {net.w2.rows, net.w2.cols}, net.w2.data);
  ck.add_tensor(prefix + "/b2", {net.b2.size()}, net.b2);
}

inline void load_net(const Checkpoint& ck, const std::string& prefix, TwoLayerNet& net) {
  auto fill = [&ck, &prefix](const char* leaf, Vector& dst) {
    const auto& t = ck.tensor(prefix + "/" + leaf);
    require(t.data.size() == dst.size(), "checkpoint: shape mismatch for " + prefix + "/" + leaf);
    dst = t.data;
  };
  fill("w1", net.w1.data);
  fill("b1", net.b1);
  fill("w2", net.w2.data);
  fill("b2", net.b2);
}

}  // namespace detail

inline void save_train_state(const std::string& path, const TrainState& state) {
  Checkpoint ck;
  ck.taxonomy_fingerprint = state.taxonomy.fingerprint();

  std::ostringstream tax;
  save_taxonomy(tax, state.taxonomy);
  ck.add_blob("taxonomy", tax.str());

  json meta;
  meta["iteration"] = state.iteration;
  meta["config"] = train_config_to_json(state.cfg);
  ck.add_blob("meta", meta.dump());

  ck.add_blob("rng/batch", state.batch_rng.save_state());
  ck.add_blob("rng/bernoulli", state.bern_rng.save_state());

  detail::save_net(ck, "adapter", state.adapter.net);
  for (int node : state.head.node_ids())
    detail::save_net(ck, "head/" + std::to_string(node), state.head.classifier(node).net);
  for (const auto& [id, proto] : state.bank.prototypes())
    ck.add_tensor("memory/" + std::to_string(id), {proto.size()}, proto);
  for (const auto& [name, vel] : state.opt.velocity)
    ck.add_tensor("opt/" + name, {vel.size()}, vel);

  ck.save(path);
}

inline TrainState load_train_state(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);

  json meta;
  try {
    meta = json::parse(ck.blob("meta"));
  } catch (const json::exception& e) {
    throw DataError("checkpoint: corrupt meta blob: " + std::string(e.what()));
  }

  TrainState st;
  st.cfg = train_config_from_json(meta.at("config"));
  st.iteration = meta.at("iteration").get<std::uint64_t>();

  std::istringstream tax_in(ck.blob("taxonomy"));
  st.taxonomy = load_taxonomy(tax_in);
  require(st.taxonomy.fingerprint() == ck.taxonomy_fingerprint,
          "checkpoint: taxonomy fingerprint mismatch in " + path);

  Rng scratch(0);
  st.adapter.net = TwoLayerNet::init(st.cfg.dims.d_in, st.cfg.dims.adapter_hidden, st.cfg.dims.d_feat, scratch);
  detail::load_net(ck, "adapter", st.adapter.net);

  st.head = HierarchicalHead::build(st.taxonomy, st.cfg.dims, Rng(0));
  for (int node : st.head.node_ids())
    detail::load_net(ck, "head/" + std::to_string(node), st.head.classifier(node).net);

  st.bank = MemoryBank(st.taxonomy.depth(), st.cfg.dims.d_feat, st.cfg.eps, st.cfg.renormalize_memories);
  for (const auto& [id, n] : st.taxonomy.nodes()) {
    const auto& t = ck.tensor("memory/" + std::to_string(id));
    st.bank.restore_prototype(id, t.data);
  }

  st.opt.learning_rate = st.cfg.learning_rate;
  st.opt.momentum = st.cfg.momentum;
  for (const auto& [name, tensor] : ck.tensors())
    if (name.rfind("opt/", 0) == 0) st.opt.velocity[name.substr(4)] = tensor.data;

  st.batch_rng = Rng::load_state(ck.blob("rng/batch"));
  st.bern_rng = Rng::load_state(ck.blob("rng/bernoulli"));
  return st;
}

}  // namespace hicl
