#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace hicl;
using hicl::testing::balanced_taxonomy;
using hicl::testing::bird_shaped_taxonomy;
using hicl::testing::chain_taxonomy;

namespace {

GenConfig small_gen(const Taxonomy& t, std::uint64_t seed, std::size_t per_leaf = 12) {
  GenConfig cfg;
  cfg.sigma_level.assign(static_cast<std::size_t>(t.depth()) + 1, 1.0);
  cfg.sigma_x = 0.3;
  cfg.examples_per_leaf = per_leaf;
  cfg.d_in = 6;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("generator with zero noise reproduces the leaf means") {
  Taxonomy t = balanced_taxonomy({2, 2});
  GenConfig cfg = small_gen(t, 5, 4);
  cfg.sigma_x = 0.0;
  Dataset ds = generate_hierarchical_gaussian(t, cfg);
  auto means = hierarchical_gaussian_means(t, cfg);
  REQUIRE(ds.size() == 4u * 4u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vector& mean = means.at(ds.examples[i].leaf_id);
    for (std::size_t d = 0; d < cfg.d_in; ++d) CHECK(ds.features(i, d) == mean[d]);
  }
}

TEST_CASE("generator is bit-reproducible for a fixed seed") {
  Taxonomy t = balanced_taxonomy({3, 2});
  GenConfig cfg = small_gen(t, 17);
  Dataset a = generate_hierarchical_gaussian(t, cfg);
  Dataset b = generate_hierarchical_gaussian(t, cfg);
  CHECK(a.features.data == b.features.data);
  Dataset c = generate_hierarchical_gaussian(t, small_gen(t, 18));
  CHECK(a.features.data != c.features.data);
}

TEST_CASE("empirical leaf means converge to the true means") {
  Taxonomy t = chain_taxonomy(2);
  GenConfig cfg = small_gen(t, 23, 1000);
  cfg.sigma_x = 0.5;
  Dataset ds = generate_hierarchical_gaussian(t, cfg);
  Vector mean(cfg.d_in, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t d = 0; d < cfg.d_in; ++d) mean[d] += ds.features(i, d);
  for (double& m : mean) m /= static_cast<double>(ds.size());
  const Vector truth = hierarchical_gaussian_means(t, cfg).at(2);
  double bound = 4.0 * cfg.sigma_x / std::sqrt(1000.0);
  for (std::size_t d = 0; d < cfg.d_in; ++d) CHECK(std::abs(mean[d] - truth[d]) < bound);
}

TEST_CASE("leaf means under a shared parent sit closer than across parents") {
  // sample-mean oracle over several seeds; the default scales taper with depth
  Taxonomy t = balanced_taxonomy({3, 3});
  std::size_t closer = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GenConfig cfg;
    cfg.sigma_level = {0.0, 2.0, 1.0};
    cfg.sigma_x = 0.1;
    cfg.d_in = 8;
    cfg.examples_per_leaf = 1;
    cfg.seed = seed;
    auto means = hierarchical_gaussian_means(t, cfg);
    auto leaves = t.leaves();
    for (std::size_t a = 0; a < leaves.size(); ++a) {
      for (std::size_t b = a + 1; b < leaves.size(); ++b) {
        Vector diff(cfg.d_in);
        for (std::size_t d = 0; d < cfg.d_in; ++d)
          diff[d] = means.at(leaves[a])[d] - means.at(leaves[b])[d];
        bool same_parent = t.node(leaves[a]).parent == t.node(leaves[b]).parent;
        if (!same_parent) continue;
        // compare against the mean distance to leaves of other parents
        double within = norm2(diff);
        double cross_sum = 0.0;
        std::size_t cross_n = 0;
        for (std::size_t c = 0; c < leaves.size(); ++c) {
          if (t.node(leaves[c]).parent == t.node(leaves[a]).parent) continue;
          Vector d2(cfg.d_in);
          for (std::size_t d = 0; d < cfg.d_in; ++d)
            d2[d] = means.at(leaves[a])[d] - means.at(leaves[c])[d];
          cross_sum += norm2(d2);
          cross_n += 1;
        }
        total += 1;
        closer += within < cross_sum / static_cast<double>(cross_n);
      }
    }
  }
  CHECK(static_cast<double>(closer) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("test_split_builder applies the min(cap, k-10) rule") {
  Taxonomy t = balanced_taxonomy({3});
  auto leaves = t.leaves();
  // per-leaf counts 10, 13, 1000
  std::vector<std::size_t> counts{10, 13, 1000};
  Dataset ds;
  ds.taxonomy_fingerprint = t.fingerprint();
  std::size_t total = 1023;
  ds.features = Matrix(total, 2);
  for (std::size_t li = 0; li < 3; ++li)
    for (std::size_t k = 0; k < counts[li]; ++k) ds.examples.push_back({leaves[li], Split::Train, Source::Synthetic});

  Dataset tagged = test_split_builder(ds, 6, 99);
  std::map<int, std::size_t> test_per_leaf;
  for (const auto& e : tagged.examples)
    if (e.split == Split::Test) test_per_leaf[e.leaf_id] += 1;
  CHECK(test_per_leaf[leaves[0]] == 0);  // min(6, 0)
  CHECK(test_per_leaf[leaves[1]] == 3);  // min(6, 3)
  CHECK(test_per_leaf[leaves[2]] == 6);  // min(6, 990)
}

TEST_CASE("sample_k_shot builds disjoint, seeded episodes") {
  Taxonomy t = balanced_taxonomy({2, 2});
  GenConfig cfg = small_gen(t, 31, 10);
  Dataset ds = generate_hierarchical_gaussian(t, cfg);
  SplitSpec split = split_base_novel(t.with_leaf_counts({{3, 100}, {4, 90}, {5, 3}, {6, 2}}), 1);

  SECTION("all-but-one shots leave one test example per novel leaf") {
    Episode ep = sample_k_shot(ds, split, 9, 7);
    std::map<int, std::size_t> test_per_leaf;
    for (std::size_t i : ep.test_indices) test_per_leaf[ds.examples[i].leaf_id] += 1;
    for (int leaf : split.novel_leaf_ids) CHECK(test_per_leaf[leaf] == 1);
  }

  SECTION("same seed gives the identical episode") {
    Episode a = sample_k_shot(ds, split, 5, 11);
    Episode b = sample_k_shot(ds, split, 5, 11);
    CHECK(a.support_indices == b.support_indices);
    CHECK(a.balanced_train_indices == b.balanced_train_indices);
    CHECK(a.test_indices == b.test_indices);
  }

  SECTION("support and test are disjoint, sizes 5/5 on a 10-example leaf") {
    Episode ep = sample_k_shot(ds, split, 5, 13);
    std::set<std::size_t> support(ep.support_indices.begin(), ep.support_indices.end());
    for (std::size_t i : ep.test_indices) CHECK_FALSE(support.count(i));
    std::map<int, std::size_t> sup_count, test_count;
    for (std::size_t i : ep.support_indices) sup_count[ds.examples[i].leaf_id] += 1;
    for (std::size_t i : ep.test_indices) test_count[ds.examples[i].leaf_id] += 1;
    for (int leaf : split.novel_leaf_ids) {
      CHECK(sup_count[leaf] == 5);
      CHECK(test_count[leaf] == 5);
    }
    // balanced set: K per base leaf plus the supports
    CHECK(ep.balanced_train_indices.size() ==
          split.base_leaf_ids.size() * 5 + ep.support_indices.size());
  }

  SECTION("an undersized novel leaf is reported by name") {
    CHECK_THROWS_WITH(sample_k_shot(ds, split, 10, 7),
                      Catch::Matchers::ContainsSubstring("novel leaf"));
  }
}

TEST_CASE("episode sampling is a pure function of dataset and seed") {
  Taxonomy t = balanced_taxonomy({2, 3});
  Dataset ds = generate_hierarchical_gaussian(t, small_gen(t, 41, 8));
  SplitSpec split = split_base_novel(t.with_leaf_counts([&t] {
                                       std::map<int, long long> c;
                                       long long v = 100;
                                       for (int leaf : t.leaves()) c[leaf] = v--;
                                       return c;
                                     }()),
                                     1);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Episode a = sample_k_shot(ds, split, 3, seed);
    Episode b = sample_k_shot(ds, split, 3, seed);
    CHECK(a.support_indices == b.support_indices);
    CHECK(a.test_indices == b.test_indices);
  }
}

TEST_CASE("dataset container round-trips and digests deterministically") {
  Taxonomy t = balanced_taxonomy({2, 2});
  Dataset ds = generate_hierarchical_gaussian(t, small_gen(t, 51, 5));
  ds.examples[3].split = Split::Test;

  json j = dataset_to_json(ds);
  Dataset back = dataset_from_json(j);
  CHECK(back.features.data == ds.features.data);
  CHECK(back.taxonomy_fingerprint == ds.taxonomy_fingerprint);
  REQUIRE(back.examples.size() == ds.examples.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.examples[i].leaf_id == ds.examples[i].leaf_id);
    CHECK(back.examples[i].split == ds.examples[i].split);
  }
  CHECK(dataset_to_json(back).dump() == j.dump());
}

TEST_CASE("relabeling maps leaves by name path") {
  Taxonomy t = bird_shaped_taxonomy();
  SplitSpec split = split_base_novel(t, 7);
  Taxonomy base = t.restrict_to_leaves(split.base_leaf_ids);
  Taxonomy novel = t.restrict_to_leaves(split.novel_leaf_ids);
  Taxonomy merged = merge_taxonomies(base, novel).merged;

  Dataset ds;
  ds.taxonomy_fingerprint = t.fingerprint();
  ds.features = Matrix(2, 3);
  int base_leaf = *split.base_leaf_ids.begin();
  int novel_leaf = *split.novel_leaf_ids.begin();
  ds.examples.push_back({base_leaf, Split::Train, Source::Synthetic});
  ds.examples.push_back({novel_leaf, Split::Train, Source::Synthetic});

  Dataset re = ds.relabeled(t, merged);
  CHECK(re.examples[0].leaf_id == base_leaf);  // base ids survive the merge
  CHECK(merged.name_path(re.examples[1].leaf_id) == t.name_path(novel_leaf));

  // the novel leaf has no name path in the base-only tree
  CHECK_THROWS_AS(ds.relabeled(t, base), DataError);
}

TEST_CASE("coco ingestion") {
  Taxonomy t = balanced_taxonomy({2, 2});
  // name leaves for category matching
  auto leafname = [&t](int leaf) { return t.name_path(leaf); };

  json doc;
  doc["images"] = json::array({{{"id", 1}}, {{"id", 2}}});
  doc["categories"] = json::array();
  doc["annotations"] = json::array();

  SECTION("an empty annotation list gives an empty dataset") {
    CocoLoadReport rep = load_coco_annotations(doc, t, [](long long) { return std::nullopt; });
    CHECK(rep.dataset.size() == 0);
  }

  SECTION("annotations land on the right leaves") {
    doc["categories"].push_back({{"id", 10}, {"name", leafname(3)}});
    doc["categories"].push_back({{"id", 20}, {"name", leafname(5)}});
    doc["annotations"].push_back({{"id", 100}, {"image_id", 1}, {"category_id", 10}});
    doc["annotations"].push_back({{"id", 101}, {"image_id", 1}, {"category_id", 20}});
    doc["annotations"].push_back({{"id", 102}, {"image_id", 2}, {"category_id", 10}});
    std::map<long long, Vector> feats{{100, {1, 0}}, {101, {0, 1}}, {102, {2, 0}}};
    CocoLoadReport rep = load_coco_annotations(doc, t, feature_source_from_map(feats));
    REQUIRE(rep.dataset.size() == 3);
    CHECK(rep.dataset.examples[0].leaf_id == 3);
    CHECK(rep.dataset.examples[1].leaf_id == 5);
    CHECK(rep.dataset.examples[2].leaf_id == 3);
    CHECK(rep.dataset.features.row_vec(1) == Vector{0, 1});
    CHECK(rep.dataset.examples[0].source == Source::Ingested);
  }

  SECTION("a category outside the taxonomy fails strictly, by name") {
    doc["categories"].push_back({{"id", 10}, {"name", "no-such-bird"}});
    CHECK_THROWS_WITH(load_coco_annotations(doc, t, [](long long) { return std::nullopt; }),
                      Catch::Matchers::ContainsSubstring("no-such-bird"));
  }

  SECTION("non-strict mode reports unmatched categories and skips their annotations") {
    doc["categories"].push_back({{"id", 10}, {"name", "no-such-bird"}});
    doc["annotations"].push_back({{"id", 100}, {"image_id", 1}, {"category_id", 10}});
    CocoLoadReport rep =
        load_coco_annotations(doc, t, [](long long) { return std::nullopt; }, /*strict=*/false);
    CHECK(rep.dataset.size() == 0);
    CHECK(rep.unmatched_categories == std::vector<std::string>{"no-such-bird"});
    CHECK(rep.skipped_annotations == 1);
  }

  SECTION("a missing feature is an error") {
    doc["categories"].push_back({{"id", 10}, {"name", leafname(3)}});
    doc["annotations"].push_back({{"id", 100}, {"image_id", 1}, {"category_id", 10}});
    CHECK_THROWS_WITH(load_coco_annotations(doc, t, [](long long) { return std::nullopt; }),
                      Catch::Matchers::ContainsSubstring("annotation id 100"));
  }

  SECTION("bare leaf names match when unambiguous") {
    doc["categories"].push_back({{"id", 10}, {"name", t.node(4).name}});
    doc["annotations"].push_back({{"id", 100}, {"image_id", 1}, {"category_id", 10}});
    std::map<long long, Vector> feats{{100, {1, 1}}};
    CocoLoadReport rep = load_coco_annotations(doc, t, feature_source_from_map(feats));
    REQUIRE(rep.dataset.size() == 1);
    CHECK(rep.dataset.examples[0].leaf_id == 4);
  }
}

TEST_CASE("generated volume matches leaves times examples-per-leaf") {
  Taxonomy t = bird_shaped_taxonomy();
  GenConfig cfg;
  cfg.sigma_level = {0.5, 1.0, 0.8, 0.6, 0.4};
  cfg.sigma_x = 0.2;
  cfg.examples_per_leaf = 20;
  cfg.d_in = 4;
  cfg.seed = 3;
  Dataset ds = generate_hierarchical_gaussian(t, cfg);
  CHECK(ds.size() == 28640);  // 1432 leaves x 20
}
