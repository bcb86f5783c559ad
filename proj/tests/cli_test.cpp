#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "test_support.hpp"

using namespace hicl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hicl-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

int run(const std::string& args, const std::string& log) {
  std::string cmd = std::string(HICL_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_demo_taxonomy(const std::string& path) {
  Taxonomy t = hicl::testing::balanced_taxonomy({3, 2}, {60, 55, 50, 45, 14, 13});
  save_taxonomy_file(path, t);
}

std::string write_config(const TempDir& dir) {
  json cfg;
  cfg["train"] = {{"d_in", 6},          {"adapter_hidden", 8}, {"d_feat", 6},
                  {"classifier_hidden", 8}, {"iterations", 8},     {"batch_size", 4},
                  {"learning_rate", 0.05},  {"seed", 3}};
  cfg["finetune"] = {{"iterations", 4}};
  cfg["data"] = {{"sigma_level", {0.0, 1.5, 1.0}}, {"sigma_x", 0.4}, {"examples_per_leaf", 16},
                 {"d_in", 6}};
  cfg["split_top_k"] = 2;
  cfg["test_cap"] = 4;
  std::string path = dir.file("config.json");
  write_text_file(path, cfg.dump(2));
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  TempDir dir;
  CHECK(run("definitely-not-a-command", dir.file("log")) == 2);
  CHECK(run("train", dir.file("log")) == 2);  // missing required options
}

TEST_CASE("missing input files are usage errors, not crashes") {
  TempDir dir;
  int rc = run("train --taxonomy /nonexistent.tax --dataset /nonexistent.json --out " + dir.file("run"),
               dir.file("log"));
  CHECK(rc == 2);  // flagged by option validation
}

TEST_CASE("gen-data writes a summary and a deterministic container") {
  TempDir dir;
  write_demo_taxonomy(dir.file("demo.tax"));
  std::string cfg = write_config(dir);

  int rc = run("gen-data --taxonomy " + dir.file("demo.tax") + " --config " + cfg + " --seed 11 --out " +
                   dir.file("a") + " --split-top-k 2",
               dir.file("log_a"));
  REQUIRE(rc == 0);
  CHECK(slurp(dir.file("log_a")).find("examples: 96") != std::string::npos);
  CHECK(fs::exists(dir.file("a/manifest.json")));

  rc = run("gen-data --taxonomy " + dir.file("demo.tax") + " --config " + cfg + " --seed 11 --out " +
               dir.file("b"),
           dir.file("log_b"));
  REQUIRE(rc == 0);
  CHECK(slurp(dir.file("a/dataset.json")) == slurp(dir.file("b/dataset.json")));

  rc = run("gen-data --taxonomy " + dir.file("demo.tax") + " --config " + cfg + " --seed 12 --out " +
               dir.file("c"),
           dir.file("log_c"));
  REQUIRE(rc == 0);
  CHECK(slurp(dir.file("a/dataset.json")) != slurp(dir.file("c/dataset.json")));
}

TEST_CASE("train, finetune, eval, export and inspect run end to end") {
  TempDir dir;
  write_demo_taxonomy(dir.file("demo.tax"));
  std::string cfg = write_config(dir);
  std::string tax = " --taxonomy " + dir.file("demo.tax");
  std::string data = " --dataset " + dir.file("gen/dataset.json");

  REQUIRE(run("gen-data" + tax + " --config " + cfg + " --seed 5 --out " + dir.file("gen"),
              dir.file("log0")) == 0);

  SECTION("zero iterations succeed immediately with a checkpoint") {
    int rc = run("train" + tax + data + " --config " + cfg + " --iterations 0 --out " + dir.file("r0"),
                 dir.file("log1"));
    CHECK(rc == 0);
    CHECK(fs::exists(dir.file("r0/checkpoint.ckpt")));
    CHECK(fs::exists(dir.file("r0/manifest.json")));
  }

  SECTION("the full pipeline produces evaluable artifacts") {
    REQUIRE(run("train" + tax + data + " --config " + cfg + " --out " + dir.file("base"),
                dir.file("log2")) == 0);
    REQUIRE(fs::exists(dir.file("base/checkpoint.ckpt")));
    CHECK(fs::exists(dir.file("base/metrics.jsonl")));

    REQUIRE(run("finetune" + tax + data + " --config " + cfg + " --shots 3 --checkpoint " +
                    dir.file("base/checkpoint.ckpt") + " --out " + dir.file("ft"),
                dir.file("log3")) == 0);
    REQUIRE(fs::exists(dir.file("ft/checkpoint.ckpt")));

    int rc = run("eval" + tax + data + " --config " + cfg + " --checkpoint " +
                     dir.file("ft/checkpoint.ckpt") + " --beam-width 3 --dump-predictions " +
                     dir.file("preds.jsonl"),
                 dir.file("log4"));
    REQUIRE(rc == 0);
    std::string eval_out = slurp(dir.file("log4"));
    CHECK(eval_out.find("full_path_accuracy") != std::string::npos);
    CHECK(eval_out.find("novel_accuracy") != std::string::npos);
    CHECK(fs::exists(dir.file("preds.jsonl")));

    rc = run("export-embeddings" + tax + data + " --checkpoint " + dir.file("ft/checkpoint.ckpt") +
                 " --file " + dir.file("emb.tsv"),
             dir.file("log5"));
    REQUIRE(rc == 0);
    std::string tsv = slurp(dir.file("emb.tsv"));
    std::size_t rows = static_cast<std::size_t>(std::count(tsv.begin(), tsv.end(), '\n'));
    CHECK(rows == 96 + 1);  // header + one row per example

    // re-export is byte-identical
    rc = run("export-embeddings" + tax + data + " --checkpoint " + dir.file("ft/checkpoint.ckpt") +
                 " --file " + dir.file("emb2.tsv"),
             dir.file("log6"));
    REQUIRE(rc == 0);
    CHECK(slurp(dir.file("emb.tsv")) == slurp(dir.file("emb2.tsv")));

    rc = run("inspect --checkpoint " + dir.file("ft/checkpoint.ckpt"), dir.file("log7"));
    REQUIRE(rc == 0);
    CHECK(slurp(dir.file("log7")).find("parent_child_cosine") != std::string::npos);
  }

  SECTION("resume reproduces the uninterrupted run byte for byte") {
    REQUIRE(run("train" + tax + data + " --config " + cfg + " --iterations 8 --out " + dir.file("full"),
                dir.file("log8")) == 0);
    REQUIRE(run("train" + tax + data + " --config " + cfg + " --iterations 4 --out " + dir.file("half"),
                dir.file("log9")) == 0);
    REQUIRE(run("train" + tax + data + " --config " + cfg + " --iterations 8 --resume " +
                    dir.file("half/checkpoint.ckpt") + " --out " + dir.file("resumed"),
                dir.file("log10")) == 0);
    CHECK(slurp(dir.file("full/checkpoint.ckpt")) == slurp(dir.file("resumed/checkpoint.ckpt")));
  }

  SECTION("a truncated checkpoint is a data error (exit 3)") {
    REQUIRE(run("train" + tax + data + " --config " + cfg + " --iterations 1 --out " + dir.file("t"),
                dir.file("log11")) == 0);
    std::string bytes = slurp(dir.file("t/checkpoint.ckpt"));
    write_text_file(dir.file("cut.ckpt"), bytes.substr(0, bytes.size() / 3));
    CHECK(run("inspect --checkpoint " + dir.file("cut.ckpt"), dir.file("log12")) == 3);
  }

  SECTION("a dataset generated against another taxonomy is a data error") {
    Taxonomy other = hicl::testing::balanced_taxonomy({4, 2}, {9, 9, 8, 8, 5, 5, 2, 2});
    save_taxonomy_file(dir.file("other.tax"), other);
    REQUIRE(run("gen-data --taxonomy " + dir.file("other.tax") + " --config " + cfg + " --out " +
                    dir.file("othergen"),
                dir.file("log13")) == 0);
    int rc = run("train" + tax + " --dataset " + dir.file("othergen/dataset.json") + " --config " + cfg +
                     " --out " + dir.file("bad"),
                 dir.file("log14"));
    CHECK(rc == 3);
    CHECK(slurp(dir.file("log14")).find("fingerprint") != std::string::npos);
  }
}

TEST_CASE("the ablation command writes the component report") {
  TempDir dir;
  write_demo_taxonomy(dir.file("demo.tax"));
  json cfg;
  cfg["train"] = {{"d_in", 5},           {"adapter_hidden", 6}, {"d_feat", 5},
                  {"classifier_hidden", 6}, {"iterations", 6},     {"batch_size", 4},
                  {"learning_rate", 0.05}};
  cfg["finetune"] = {{"iterations", 3}};
  cfg["data"] = {{"sigma_level", {0.0, 1.5, 1.0}}, {"sigma_x", 0.4}, {"examples_per_leaf", 12}, {"d_in", 5}};
  cfg["split_top_k"] = 2;
  cfg["test_cap"] = 2;
  write_text_file(dir.file("cfg.json"), cfg.dump());

  int rc = run("ablate --taxonomy " + dir.file("demo.tax") + " --config " + dir.file("cfg.json") +
                   " --shots 3 --seeds 1,2 --out " + dir.file("ab"),
               dir.file("log"));
  REQUIRE(rc == 0);
  REQUIRE(fs::exists(dir.file("ab/ablation.json")));
  json report = json::parse(slurp(dir.file("ab/ablation.json")));
  CHECK(report.at("variants").size() == 5);
  CHECK(report.at("seeds").size() == 2);
  // per-seed and mean columns are both present
  CHECK(report.at("variants")[0].contains("runs"));
  CHECK(report.at("variants")[0].contains("mean_novel_accuracy"));
}
