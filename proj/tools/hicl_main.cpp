// Command-line surface: synthetic data generation, two-stage training,
// evaluation, ablation reports, embedding export and checkpoint inspection.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
// divergence.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hicl/hicl.hpp"

namespace fs = std::filesystem;
using namespace hicl;

namespace {

constexpr const char* kVersion = "0.1.0";

struct FileConfig {
  TrainConfig train;
  TrainConfig finetune;
  GenConfig gen;
  int split_top_k = 0;     // 0: no base/novel split, the whole tree is base
  long long test_cap = 6;  // per-class test reservation
  bool has_finetune_block = false;
};

FileConfig load_file_config(const std::string& path) {
  FileConfig fc;
  fc.finetune.stage = "finetune";
  if (path.empty()) return fc;
  json j = parse_json_file(path);
  if (j.contains("train")) fc.train = train_config_from_json(j.at("train"));
  if (j.contains("finetune")) {
    json merged = train_config_to_json(fc.train);
    merged.update(j.at("finetune"));
    fc.finetune = train_config_from_json(merged);
    fc.has_finetune_block = true;
  } else {
    json ft = train_config_to_json(fc.train);
    fc.finetune = train_config_from_json(ft);
  }
  fc.finetune.stage = "finetune";
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      if (d.contains("sigma_level")) fc.gen.sigma_level = d.at("sigma_level").get<std::vector<double>>();
      fc.gen.sigma_x = d.value("sigma_x", fc.gen.sigma_x);
      fc.gen.examples_per_leaf = d.value("examples_per_leaf", fc.gen.examples_per_leaf);
      fc.gen.d_in = d.value("d_in", fc.gen.d_in);
      fc.gen.seed = d.value("seed", fc.gen.seed);
    }
    fc.split_top_k = j.value("split_top_k", fc.split_top_k);
    fc.test_cap = j.value("test_cap", fc.test_cap);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return fc;
}

// Common flags shared by the training-style commands.
struct CommonArgs {
  std::string taxonomy_path;
  std::string dataset_path;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> beam_width;
  std::optional<int> split_top_k;
  std::string ablate;  // comma list of {hihead,hicl,probloss} to disable
  std::string stage = "base";
  std::string resume_path;
  std::string checkpoint_path;
};

AblationFlags parse_ablate(const std::string& list) {
  AblationFlags flags;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "hihead")
      flags.hihead = false;
    else if (item == "hicl")
      flags.hicl = false;
    else if (item == "probloss")
      flags.probloss = false;
    else
      throw ConfigError("--ablate: unknown component '" + item + "' (expected hihead, hicl, probloss)");
  }
  validate_flags(flags);
  return flags;
}

void apply_overrides(TrainConfig& cfg, const CommonArgs& args) {
  if (args.seed) cfg.seed = *args.seed;
  if (args.iterations) cfg.iterations = *args.iterations;
  if (args.shots) cfg.shots = *args.shots;
  if (args.beam_width) cfg.beam_width = *args.beam_width;
  if (!args.ablate.empty()) {
    AblationFlags flags = parse_ablate(args.ablate);
    cfg.hierarchical_head = flags.hihead;
    cfg.use_hicl = flags.hicl;
    cfg.use_prob_loss = flags.probloss;
  }
}

void write_manifest(const std::string& out_dir, const std::string& command, const CommonArgs& args,
                    std::uint64_t seed, std::uint64_t taxonomy_fingerprint) {
  json m;
  m["command"] = command;
  m["config"] = args.config_path;
  m["taxonomy"] = args.taxonomy_path;
  m["dataset"] = args.dataset_path;
  m["seed"] = seed;
  m["out"] = out_dir;
  m["taxonomy_fingerprint"] = fingerprint_hex(taxonomy_fingerprint);
  m["version"] = kVersion;
  write_text_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

void write_metrics(const std::string& out_dir, const std::vector<MetricsRecord>& metrics) {
  std::ostringstream os;
  for (const MetricsRecord& r : metrics) {
    json line{{"iteration", r.iteration}, {"hicl", r.hicl}, {"prob", r.prob},
              {"total", r.total},         {"lr", r.lr}};
    os << line.dump() << "\n";
  }
  write_text_file((fs::path(out_dir) / "metrics.jsonl").string(), os.str());
}

Dataset load_dataset_checked(const std::string& path, const Taxonomy& t) {
  Dataset ds = load_dataset(path);
  require(ds.taxonomy_fingerprint == t.fingerprint(),
          "dataset " + path + " was built against a different taxonomy (fingerprint mismatch)");
  return ds;
}

int cmd_gen_data(const CommonArgs& args, const FileConfig& fc) {
  Taxonomy t = load_taxonomy_file(args.taxonomy_path);
  GenConfig gen = fc.gen;
  if (args.seed) gen.seed = *args.seed;
  if (gen.sigma_level.empty()) {
    // default scale schedule: coarse splits wider apart, tapering with depth
    gen.sigma_level.assign(static_cast<std::size_t>(t.depth()) + 1, 0.0);
    for (int j = 0; j <= t.depth(); ++j)
      gen.sigma_level[static_cast<std::size_t>(j)] = j == 0 ? 0.0 : 2.0 / static_cast<double>(j);
  }

  // validate the requested split before producing any output
  int top_k = args.split_top_k ? *args.split_top_k : fc.split_top_k;
  std::optional<SplitSpec> split;
  if (top_k > 0) split = split_base_novel(t, top_k);

  fs::create_directories(args.out_dir);
  write_manifest(args.out_dir, "gen-data", args, gen.seed, t.fingerprint());

  Dataset ds = generate_hierarchical_gaussian(t, gen);
  ds = test_split_builder(ds, fc.test_cap, gen.seed);
  std::string path = (fs::path(args.out_dir) / "dataset.json").string();
  save_dataset(path, ds);

  std::size_t test_n = ds.indices(Split::Test).size();
  std::cout << "wrote " << path << "\n"
            << "  leaves: " << t.leaf_count() << "\n"
            << "  examples: " << ds.size() << " (train " << ds.size() - test_n << ", test "
            << test_n << ")\n";
  if (split)
    std::cout << "  split @top-" << top_k << ": base " << split->base_leaf_ids.size() << " / novel "
              << split->novel_leaf_ids.size() << " leaves\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const FileConfig& fc) {
  Taxonomy t = load_taxonomy_file(args.taxonomy_path);
  Dataset ds = load_dataset_checked(args.dataset_path, t);

  bool finetune = args.stage == "finetune";
  TrainConfig cfg = finetune ? fc.finetune : fc.train;
  cfg.stage = args.stage;
  apply_overrides(cfg, args);

  int top_k = args.split_top_k ? *args.split_top_k : fc.split_top_k;

  fs::create_directories(args.out_dir);
  write_manifest(args.out_dir, finetune ? "finetune" : "train", args, cfg.seed, t.fingerprint());
  write_text_file((fs::path(args.out_dir) / "config.json").string(),
                  train_config_to_json(cfg).dump(2) + "\n");

  TrainState final_state;
  if (!finetune) {
    SplitSpec split;
    Taxonomy t_train = t;
    Dataset train_data = ds;
    if (top_k > 0) {
      split = split_base_novel(t, top_k);
      t_train = t.restrict_to_leaves(split.base_leaf_ids);
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.examples[i].split == Split::Train && split.base_leaf_ids.count(ds.examples[i].leaf_id))
          keep.push_back(i);
      train_data = ds.subset(keep).relabeled(t, t_train);
    } else {
      train_data = ds.subset(ds.indices(Split::Train));
    }
    std::optional<TrainState> init;
    if (!args.resume_path.empty()) init = load_train_state(args.resume_path);
    final_state = train_stage(train_data, t_train, cfg, std::move(init));
  } else {
    require_config(top_k > 0, "finetune requires a base/novel split (--split-top-k or config split_top_k)");
    if (!args.resume_path.empty()) {
      std::optional<TrainState> init = load_train_state(args.resume_path);
      SplitSpec split = split_base_novel(t, top_k);
      Taxonomy t_base = t.restrict_to_leaves(split.base_leaf_ids);
      Taxonomy t_all = merge_taxonomies(t_base, t.restrict_to_leaves(split.novel_leaf_ids)).merged;
      Episode episode = sample_k_shot(ds, split, cfg.shots, cfg.seed);
      Dataset balanced = ds.subset(episode.balanced_train_indices).relabeled(t, t_all);
      final_state = train_stage(balanced, t_all, cfg, std::move(init));
    } else {
      require_config(!args.checkpoint_path.empty(), "finetune requires --checkpoint (the base-stage state)");
      TrainState base_state = load_train_state(args.checkpoint_path);
      SplitSpec split = split_base_novel(t, top_k);
      Taxonomy t_base = t.restrict_to_leaves(split.base_leaf_ids);
      require(base_state.cfg.hierarchical_head
                  ? base_state.taxonomy.fingerprint() == t_base.fingerprint()
                  : base_state.taxonomy.fingerprint() == t_base.flattened().fingerprint(),
              "finetune: base checkpoint was trained on a different base taxonomy");
      Taxonomy t_all = merge_taxonomies(t_base, t.restrict_to_leaves(split.novel_leaf_ids)).merged;
      Episode episode = sample_k_shot(ds, split, cfg.shots, cfg.seed);
      Dataset balanced = ds.subset(episode.balanced_train_indices).relabeled(t, t_all);
      TrainState start = begin_finetune(base_state, t_all, balanced, cfg);
      final_state = train_stage(balanced, t_all, cfg, std::move(start));
    }
  }

  write_metrics(args.out_dir, final_state.metrics);
  std::string ckpt = (fs::path(args.out_dir) / "checkpoint.ckpt").string();
  save_train_state(ckpt, final_state);
  std::cout << "trained " << final_state.iteration << " iterations; checkpoint at " << ckpt << "\n";
  if (!final_state.metrics.empty())
    std::cout << "final loss " << final_state.metrics.back().total << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const FileConfig& fc, const std::string& dump_path) {
  TrainState st = load_train_state(args.checkpoint_path);
  Taxonomy t = load_taxonomy_file(args.taxonomy_path);
  Dataset ds = load_dataset_checked(args.dataset_path, t);

  std::size_t beam = args.beam_width ? *args.beam_width : st.cfg.beam_width;
  int top_k = args.split_top_k ? *args.split_top_k : fc.split_top_k;

  // keep only test-tagged examples whose leaves the checkpoint knows
  std::vector<std::size_t> keep;
  std::size_t skipped = 0;
  for (std::size_t i : ds.indices(Split::Test)) {
    std::string path = t.name_path(ds.examples[i].leaf_id);
    auto hit = st.taxonomy.find_by_name_path(path);
    if (!hit && st.taxonomy.depth() == 1)
      hit = st.taxonomy.find_by_name_path(t.node(ds.examples[i].leaf_id).name);
    if (hit)
      keep.push_back(i);
    else
      skipped += 1;
  }
  Dataset test = ds.subset(keep).relabeled(t, st.taxonomy);

  std::optional<SplitSpec> split;
  if (top_k > 0) split = remap_split(split_base_novel(t, top_k), t, st.taxonomy);

  EvalReport rep = evaluate(st.adapter, st.head, st.taxonomy, st.taxonomy, test, split, {beam});

  json out;
  out["examples"] = rep.examples;
  out["skipped_unknown_leaves"] = skipped;
  out["full_path_accuracy"] = rep.full_path_accuracy;
  out["per_level_accuracy"] = rep.per_level_accuracy;
  out["beam_width"] = beam;
  out["correction_rate"] = rep.correction_rate;
  out["corrected"] = rep.corrected;
  if (split) {
    out["base_examples"] = rep.base_examples;
    out["novel_examples"] = rep.novel_examples;
    out["base_accuracy"] = rep.base_accuracy;
    out["novel_accuracy"] = rep.novel_accuracy;
  }
  std::cout << out.dump(2) << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_text_file((fs::path(args.out_dir) / "eval.json").string(), out.dump(2) + "\n");
  }

  if (!dump_path.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < rep.predictions.size(); ++i) {
      const PathPrediction& p = rep.predictions[i];
      json line;
      line["true_leaf"] = st.taxonomy.name_path(test.examples[i].leaf_id);
      line["predicted_leaf"] = st.taxonomy.name_path(p.leaf_id);
      line["level_probs"] = p.level_probs;
      line["score"] = p.score;
      line["greedy_leaf"] = st.taxonomy.name_path(rep.greedy_predictions[i].leaf_id);
      os << line.dump() << "\n";
    }
    write_text_file(dump_path, os.str());
  }
  return 0;
}

int cmd_export_embeddings(const CommonArgs& args, const std::string& out_file) {
  TrainState st = load_train_state(args.checkpoint_path);
  Taxonomy t = load_taxonomy_file(args.taxonomy_path);
  Dataset ds = load_dataset_checked(args.dataset_path, t).relabeled(t, st.taxonomy);

  std::ostringstream os;
  os << "leaf_path";
  for (std::size_t d = 0; d < st.cfg.dims.d_feat; ++d) os << "\tf" << d;
  os << "\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vector f = st.adapter.embed(ds.features.row_vec(i));
    os << st.taxonomy.name_path(ds.examples[i].leaf_id);
    for (double v : f) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << '\t' << buf;
    }
    os << "\n";
  }
  write_text_file(out_file, os.str());
  std::cout << "wrote " << ds.size() << " rows to " << out_file << "\n";
  return 0;
}

int cmd_inspect(const CommonArgs& args) {
  TrainState st = load_train_state(args.checkpoint_path);
  BankCosineSummary s = bank_cosine_summary(st.taxonomy, st.bank);

  std::map<int, std::size_t> classifiers_per_level;
  for (int id : st.head.node_ids()) classifiers_per_level[st.taxonomy.node(id).level] += 1;

  json out;
  out["iteration"] = st.iteration;
  out["taxonomy_fingerprint"] = fingerprint_hex(st.taxonomy.fingerprint());
  out["depth"] = st.taxonomy.depth();
  out["leaves"] = st.taxonomy.leaf_count();
  out["classifiers"] = st.head.classifier_count();
  json per_level = json::object();
  for (auto [level, n] : classifiers_per_level) per_level[std::to_string(level)] = n;
  out["classifiers_per_level"] = per_level;
  out["classifier_hidden"] = st.cfg.dims.classifier_hidden;
  out["d_feat"] = st.cfg.dims.d_feat;
  out["memory"] = {{"prototypes", st.bank.size()},
                   {"parent_child_cosine", s.parent_child_mean},
                   {"within_parent_leaf_cosine", s.within_parent_mean},
                   {"cross_branch_leaf_cosine", s.cross_branch_mean}};
  out["config"] = train_config_to_json(st.cfg);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args, const FileConfig& fc, const std::string& seeds_csv) {
  Taxonomy t = load_taxonomy_file(args.taxonomy_path);
  ScenarioConfig scenario;
  scenario.taxonomy = t;
  scenario.gen = fc.gen;
  if (scenario.gen.sigma_level.empty())
    scenario.gen.sigma_level.assign(static_cast<std::size_t>(t.depth()) + 1, 1.0);
  scenario.split_top_k = args.split_top_k ? *args.split_top_k : fc.split_top_k;
  require_config(scenario.split_top_k > 0, "ablate needs a base/novel split (--split-top-k)");
  scenario.shots = args.shots ? *args.shots : fc.train.shots;
  scenario.test_cap = fc.test_cap;
  scenario.base_cfg = fc.train;
  scenario.finetune_cfg = fc.finetune;
  if (args.iterations) {
    scenario.base_cfg.iterations = *args.iterations;
    scenario.finetune_cfg.iterations = *args.iterations;
  }
  if (args.beam_width) {
    scenario.base_cfg.beam_width = *args.beam_width;
    scenario.finetune_cfg.beam_width = *args.beam_width;
  }

  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) seeds.push_back(std::stoull(item));
  if (seeds.empty()) seeds = {1, 2, 3};
  if (args.seed) seeds = {*args.seed};

  fs::create_directories(args.out_dir);
  write_manifest(args.out_dir, "ablate", args, seeds.front(), t.fingerprint());

  AblationReport report = ablation_run(scenario, standard_ablation_variants(), seeds);
  std::string path = (fs::path(args.out_dir) / "ablation.json").string();
  write_text_file(path, report.to_json().dump(2) + "\n");

  std::cout << "variant                 base-acc  novel-acc  hierarchy-gap\n";
  for (const auto& v : report.variants) {
    std::printf("%-22s  %8.4f  %9.4f  %13.4f\n", v.name.c_str(), v.mean_base(), v.mean_novel(),
                v.mean_gap());
  }
  std::cout << "report at " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical few-shot classification over feature vectors"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonArgs args;
  std::string dump_path, out_file, seeds_csv;

  auto add_common = [&args](CLI::App* cmd, bool needs_taxonomy, bool needs_dataset) {
    auto* tax = cmd->add_option("--taxonomy", args.taxonomy_path, "taxonomy file");
    if (needs_taxonomy) tax->required()->check(CLI::ExistingFile);
    auto* data = cmd->add_option("--dataset", args.dataset_path, "dataset container");
    if (needs_dataset) data->required()->check(CLI::ExistingFile);
    cmd->add_option("--config", args.config_path, "config file (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "master seed (overrides config)");
    cmd->add_option("--out", args.out_dir, "output directory");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical-Gaussian dataset");
  add_common(gen, true, false);
  gen->get_option("--out")->required();
  gen->add_option("--split-top-k", args.split_top_k, "report the base/novel split at this top-k");

  CLI::App* train = app.add_subcommand("train", "run one training stage");
  add_common(train, true, true);
  train->get_option("--out")->required();
  train->add_option("--stage", args.stage, "base or finetune")->check(CLI::IsMember({"base", "finetune"}));
  train->add_option("--iterations", args.iterations, "iteration count (overrides config)");
  train->add_option("--shots", args.shots, "K for episode sampling");
  train->add_option("--beam-width", args.beam_width, "beam width");
  train->add_option("--split-top-k", args.split_top_k, "base/novel split at this top-k");
  train->add_option("--ablate", args.ablate, "disable components: comma list of hihead,hicl,probloss");
  train->add_option("--resume", args.resume_path, "resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--checkpoint", args.checkpoint_path, "base-stage checkpoint (finetune)")
      ->check(CLI::ExistingFile);

  CLI::App* finetune = app.add_subcommand("finetune", "extend to the merged taxonomy and fine-tune");
  add_common(finetune, true, true);
  finetune->get_option("--out")->required();
  finetune->add_option("--iterations", args.iterations, "iteration count (overrides config)");
  finetune->add_option("--shots", args.shots, "K for episode sampling");
  finetune->add_option("--beam-width", args.beam_width, "beam width");
  finetune->add_option("--split-top-k", args.split_top_k, "base/novel split at this top-k");
  finetune->add_option("--ablate", args.ablate, "disable components: comma list of hihead,hicl,probloss");
  finetune->add_option("--resume", args.resume_path, "resume an interrupted fine-tune stage")
      ->check(CLI::ExistingFile);
  finetune->add_option("--checkpoint", args.checkpoint_path, "base-stage checkpoint")
      ->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, true, true);
  eval->add_option("--checkpoint", args.checkpoint_path, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--beam-width", args.beam_width, "beam width");
  eval->add_option("--split-top-k", args.split_top_k, "base/novel breakdown at this top-k");
  eval->add_option("--dump-predictions", dump_path, "write one JSON record per example");

  CLI::App* expemb = app.add_subcommand("export-embeddings", "write adapter features as a TSV table");
  add_common(expemb, true, true);
  expemb->add_option("--checkpoint", args.checkpoint_path, "checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  expemb->add_option("--file", out_file, "output table path")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
  inspect->add_option("--checkpoint", args.checkpoint_path, "checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* ablate = app.add_subcommand("ablate", "run the component ablation matrix");
  add_common(ablate, true, false);
  ablate->get_option("--out")->required();
  ablate->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");
  ablate->add_option("--shots", args.shots, "K for episode sampling");
  ablate->add_option("--iterations", args.iterations, "per-stage iteration count");
  ablate->add_option("--beam-width", args.beam_width, "beam width");
  ablate->add_option("--split-top-k", args.split_top_k, "base/novel split at this top-k");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    FileConfig fc = load_file_config(args.config_path);
    if (gen->parsed()) return cmd_gen_data(args, fc);
    if (train->parsed()) return cmd_train(args, fc);
    if (finetune->parsed()) {
      args.stage = "finetune";
      return cmd_train(args, fc);
    }
    if (eval->parsed()) return cmd_eval(args, fc, dump_path);
    if (expemb->parsed()) return cmd_export_embeddings(args, out_file);
    if (inspect->parsed()) return cmd_inspect(args);
    if (ablate->parsed()) return cmd_ablate(args, fc, seeds_csv);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
