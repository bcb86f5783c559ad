// Minimal end-to-end walkthrough: load the demo taxonomy, synthesize
// features, run the two-stage protocol with a 5-shot episode, and print the
// evaluation. Run from the repository root:
//
//   ./build/samples/quickstart samples/songbirds.tax

#include <iostream>

#include "hicl/hicl.hpp"

using namespace hicl;

int main(int argc, char** argv) {
  std::string tax_path = argc > 1 ? argv[1] : "samples/songbirds.tax";
  Taxonomy t = load_taxonomy_file(tax_path);
  std::cout << "taxonomy: " << t.leaf_count() << " leaves, depth " << t.depth() << "\n";

  GenConfig gen;
  gen.sigma_level = {0.0, 2.0, 1.2, 0.8};
  gen.sigma_x = 0.6;
  gen.examples_per_leaf = 40;
  gen.d_in = 16;
  gen.seed = 7;
  Dataset ds = test_split_builder(generate_hierarchical_gaussian(t, gen), 10, gen.seed);

  SplitSpec split = split_base_novel(t, 2);  // raptors become the novel classes
  Episode episode = sample_k_shot(ds, split, 5, gen.seed);

  TrainConfig base_cfg;
  base_cfg.dims = {16, 32, 16, 32};
  base_cfg.iterations = 400;
  base_cfg.batch_size = 16;
  base_cfg.learning_rate = 0.1;
  base_cfg.seed = gen.seed;

  TrainConfig ft_cfg = base_cfg;
  ft_cfg.stage = "finetune";
  ft_cfg.iterations = 200;
  ft_cfg.learning_rate = 0.05;

  TwoStageResult r = two_stage_train(ds, t, split, episode, base_cfg, ft_cfg);

  Dataset test = ds.subset(ds.indices(Split::Test)).relabeled(t, r.t_all);
  SplitSpec split_all = remap_split(split, t, r.t_all);
  const TrainState& st = r.finetuned;
  EvalReport rep = evaluate(st.adapter, st.head, st.taxonomy, r.t_all, test, split_all, {3});

  std::cout << "full-path accuracy: " << rep.full_path_accuracy << "\n";
  for (std::size_t j = 0; j < rep.per_level_accuracy.size(); ++j)
    std::cout << "  level " << j + 1 << " accuracy: " << rep.per_level_accuracy[j] << "\n";
  std::cout << "base accuracy:  " << rep.base_accuracy << " (" << rep.base_examples << " examples)\n"
            << "novel accuracy: " << rep.novel_accuracy << " (" << rep.novel_examples << " examples)\n"
            << "beam corrections over greedy: " << rep.corrected << "\n";
  return 0;
}
