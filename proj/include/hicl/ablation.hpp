#pragma once

// Component ablations: runs the full two-stage protocol for each variant of
// {hierarchical head, contrastive loss, probabilistic loss} (optionally
// overriding the aggregation function) on identical data and seeds, and
// reports per-seed and mean base/novel accuracies plus the learned-space
// hierarchy gap.

#include <optional>
#include <string>
#include <vector>

#include "hicl/data.hpp"
#include "hicl/eval.hpp"
#include "hicl/io.hpp"
#include "hicl/trainer.hpp"

namespace hicl {

struct AblationFlags {
  bool hihead = true;
  bool hicl = true;
  bool probloss = true;
};

inline void validate_flags(const AblationFlags& f) {
  require_config(!(f.probloss && !f.hihead), "ablation: probabilistic loss requires the hierarchical head");
}

struct AblationVariant {
  std::string name;
  AblationFlags flags;
  std::optional<Aggregation> agg;  // overrides the config's aggregation when set
};

struct ScenarioConfig {
  Taxonomy taxonomy;  // full tree with instance counts (drives the base/novel split)
  GenConfig gen;
  int split_top_k = 1;
  std::size_t shots = 5;
  long long test_cap = 6;  // per-class test reservation cap
  TrainConfig base_cfg;
  TrainConfig finetune_cfg;
};

// Base/novel leaf sets carried into another taxonomy's id space by name path
// (bare leaf names for a depth-1 target).
inline SplitSpec remap_split(const SplitSpec& split, const Taxonomy& from, const Taxonomy& to) {
  SplitSpec out;
  auto remap = [&](const std::set<int>& src, std::set<int>& dst) {
    for (int leaf : src) {
      auto target = to.find_by_name_path(from.name_path(leaf));
      if (!target && to.depth() == 1) target = to.find_by_name_path(from.node(leaf).name);
      require(target.has_value(), "remap_split: leaf '" + from.name_path(leaf) + "' missing in target");
      dst.insert(*target);
    }
  };
  remap(split.base_leaf_ids, out.base_leaf_ids);
  remap(split.novel_leaf_ids, out.novel_leaf_ids);
  return out;
}

struct AblationRun {
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
  double full_path_accuracy = 0.0;
  double hierarchy_gap = 0.0;
  double hierarchy_within = 0.0;
  double hierarchy_cross = 0.0;
  std::size_t corrected = 0;
};

struct AblationVariantResult {
  std::string name;
  AblationFlags flags;
  std::vector<AblationRun> runs;  // one per seed

  double mean_novel() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.novel_accuracy;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
  double mean_base() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.base_accuracy;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
  double mean_gap() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.hierarchy_gap;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationVariantResult> variants;

  const AblationVariantResult& variant(const std::string& name) const {
    for (const auto& v : variants)
      if (v.name == name) return v;
    throw DataError("ablation report: no variant named '" + name + "'");
  }

  json to_json() const {
    json j;
    j["seeds"] = seeds;
    json vs = json::array();
    for (const auto& v : variants) {
      json vj;
      vj["name"] = v.name;
      vj["hihead"] = v.flags.hihead;
      vj["hicl"] = v.flags.hicl;
      vj["probloss"] = v.flags.probloss;
      json runs = json::array();
      for (const auto& r : v.runs)
        runs.push_back({{"base_accuracy", r.base_accuracy},
                        {"novel_accuracy", r.novel_accuracy},
                        {"full_path_accuracy", r.full_path_accuracy},
                        {"hierarchy_gap", r.hierarchy_gap},
                        {"hierarchy_within", r.hierarchy_within},
                        {"hierarchy_cross", r.hierarchy_cross},
                        {"corrected", r.corrected}});
      vj["runs"] = std::move(runs);
      vj["mean_base_accuracy"] = v.mean_base();
      vj["mean_novel_accuracy"] = v.mean_novel();
      vj["mean_hierarchy_gap"] = v.mean_gap();
      vs.push_back(std::move(vj));
    }
    j["variants"] = std::move(vs);
    return j;
  }
};

// One full two-stage run for a given variant and seed; returns the trained
// state alongside the metrics so callers can inspect further.
struct ScenarioRun {
  TwoStageResult result;
  AblationRun metrics;
  SplitSpec split_all;  // in merged-taxonomy ids
  Dataset test_data;    // in merged-taxonomy ids
};

inline ScenarioRun run_scenario(const ScenarioConfig& scenario, const AblationFlags& flags,
                                std::optional<Aggregation> agg, std::uint64_t seed) {
  validate_flags(flags);
  const Taxonomy& t = scenario.taxonomy;

  GenConfig gen = scenario.gen;
  gen.seed = seed;
  Dataset ds = generate_hierarchical_gaussian(t, gen);
  ds = test_split_builder(ds, scenario.test_cap, seed);

  SplitSpec split = split_base_novel(t, scenario.split_top_k);
  Episode episode = sample_k_shot(ds, split, scenario.shots, seed);

  auto configure = [&](TrainConfig cfg, const char* stage) {
    cfg.seed = seed;
    cfg.stage = stage;
    cfg.hierarchical_head = flags.hihead;
    cfg.use_hicl = flags.hicl;
    cfg.use_prob_loss = flags.probloss;
    if (agg) cfg.agg = *agg;
    return cfg;
  };

  ScenarioRun run;
  run.result = two_stage_train(ds, t, split, episode, configure(scenario.base_cfg, "base"),
                               configure(scenario.finetune_cfg, "finetune"));

  run.test_data = ds.subset(ds.indices(Split::Test)).relabeled(t, run.result.t_all);
  run.split_all = remap_split(split, t, run.result.t_all);

  const TrainState& st = run.result.finetuned;
  EvalReport rep = evaluate(st.adapter, st.head, st.taxonomy, run.result.t_all, run.test_data,
                            run.split_all, {st.cfg.beam_width});

  HierarchyGap gap = hierarchy_consistency_gap(
      run.result.t_all, empirical_leaf_prototypes(st.adapter, run.test_data));

  run.metrics.base_accuracy = rep.base_accuracy;
  run.metrics.novel_accuracy = rep.novel_accuracy;
  run.metrics.full_path_accuracy = rep.full_path_accuracy;
  run.metrics.hierarchy_gap = gap.gap();
  run.metrics.hierarchy_within = gap.within_parent_mean;
  run.metrics.hierarchy_cross = gap.cross_subtree_mean;
  run.metrics.corrected = rep.corrected;
  return run;
}

inline AblationReport ablation_run(const ScenarioConfig& scenario,
                                   const std::vector<AblationVariant>& variants,
                                   const std::vector<std::uint64_t>& seeds) {
  require_config(!variants.empty() && !seeds.empty(), "ablation_run: need at least one variant and seed");
  AblationReport report;
  report.seeds = seeds;
  for (const AblationVariant& v : variants) {
    validate_flags(v.flags);
    AblationVariantResult res;
    res.name = v.name;
    res.flags = v.flags;
    for (std::uint64_t seed : seeds)
      res.runs.push_back(run_scenario(scenario, v.flags, v.agg, seed).metrics);
    report.variants.push_back(std::move(res));
  }
  return report;
}

// The component matrix mirrored by the standard report: flat baseline,
// head only, head + each loss, full method.
inline std::vector<AblationVariant> standard_ablation_variants() {
  return {
      {"baseline", {false, false, false}, std::nullopt},
      {"hihead", {true, false, false}, std::nullopt},
      {"hihead+probloss", {true, false, true}, std::nullopt},
      {"hihead+hicl", {true, true, false}, std::nullopt},
      {"full", {true, true, true}, std::nullopt},
  };
}

}  // namespace hicl
