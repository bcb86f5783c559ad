#pragma once

// JSON-backed interchange: the dataset container, the COCO-format
// annotation reader with its sidecar feature table, and small read/write
// helpers. Serialization is deterministic (object keys are emitted sorted,
// doubles round-trip exactly), so identical inputs produce identical bytes.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "hicl/common.hpp"
#include "hicl/data.hpp"
#include "hicl/taxonomy.hpp"

namespace hicl {

using json = nlohmann::json;

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open file for writing: " + path);
  f << content;
  require(f.good(), "write failed: " + path);
}

inline json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path + ": " + e.what());
  }
}

inline std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

inline std::uint64_t fingerprint_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

// ---------------------------------------------------------------------------
// Dataset container.

inline json dataset_to_json(const Dataset& ds) {
  json j;
  j["format"] = "hicl-dataset";
  j["version"] = 1;
  j["taxonomy_fingerprint"] = fingerprint_hex(ds.taxonomy_fingerprint);
  j["d_in"] = ds.d_in();
  json examples = json::array();
  for (const auto& e : ds.examples) {
    examples.push_back({{"leaf", e.leaf_id},
                        {"split", e.split == Split::Train ? "train" : "test"},
                        {"source", e.source == Source::Synthetic ? "synthetic" : "ingested"}});
  }
  j["examples"] = std::move(examples);
  json feats = json::array();
  for (std::size_t r = 0; r < ds.features.rows; ++r) feats.push_back(ds.features.row_vec(r));
  j["features"] = std::move(feats);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  require(j.value("format", "") == "hicl-dataset", "dataset: unrecognized container format");
  require(j.value("version", 0) == 1, "dataset: unsupported container version");
  Dataset ds;
  ds.taxonomy_fingerprint = fingerprint_from_hex(j.at("taxonomy_fingerprint").get<std::string>());
  std::size_t d_in = j.at("d_in").get<std::size_t>();
  const json& examples = j.at("examples");
  const json& feats = j.at("features");
  require(examples.size() == feats.size(), "dataset: example/feature count mismatch");
  ds.features = Matrix(examples.size(), d_in);
  ds.examples.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const json& e = examples[i];
    LabeledExample le;
    le.leaf_id = e.at("leaf").get<int>();
    std::string split = e.at("split").get<std::string>();
    require(split == "train" || split == "test", "dataset: bad split tag '" + split + "'");
    le.split = split == "train" ? Split::Train : Split::Test;
    std::string source = e.at("source").get<std::string>();
    require(source == "synthetic" || source == "ingested", "dataset: bad source tag '" + source + "'");
    le.source = source == "synthetic" ? Source::Synthetic : Source::Ingested;
    ds.examples.push_back(le);
    const json& row = feats[i];
    require(row.size() == d_in, "dataset: feature row " + std::to_string(i) + " has wrong dimension");
    for (std::size_t d = 0; d < d_in; ++d) ds.features(i, d) = row[d].get<double>();
  }
  assert_finite(ds.features.data, "dataset features");
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  write_text_file(path, dataset_to_json(ds).dump() + "\n");
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// COCO-format annotations + sidecar features.

// Sidecar: one JSON object mapping annotation id (as a string key) to the
// raw feature vector.
inline std::map<long long, Vector> load_feature_sidecar(const json& j) {
  require(j.is_object(), "feature sidecar: expected an object keyed by annotation id");
  std::map<long long, Vector> out;
  for (const auto& [key, val] : j.items()) {
    long long id = 0;
    try {
      id = std::stoll(key);
    } catch (const std::exception&) {
      throw DataError("feature sidecar: non-numeric annotation id key '" + key + "'");
    }
    out[id] = val.get<Vector>();
  }
  return out;
}

inline FeatureSource feature_source_from_map(std::map<long long, Vector> table) {
  return [table = std::move(table)](long long id) -> std::optional<Vector> {
    auto it = table.find(id);
    if (it == table.end()) return std::nullopt;
    return it->second;
  };
}

inline CocoLoadReport load_coco_annotations(const json& doc, const Taxonomy& t,
                                            const FeatureSource& features, bool strict = true) {
  require(doc.contains("images") && doc.contains("annotations") && doc.contains("categories"),
          "coco: document must contain images/annotations/categories");

  // Bare leaf names are accepted only while unambiguous.
  std::map<std::string, int> by_bare_name;
  std::set<std::string> ambiguous;
  for (int leaf : t.leaves()) {
    const std::string& name = t.node(leaf).name;
    if (!by_bare_name.emplace(name, leaf).second) ambiguous.insert(name);
  }

  std::map<long long, int> category_to_leaf;  // category id -> leaf id
  CocoLoadReport report;
  for (const json& cat : doc.at("categories")) {
    long long cid = cat.at("id").get<long long>();
    std::string name = cat.at("name").get<std::string>();
    std::optional<int> leaf = t.find_by_name_path(name);
    if (leaf && !t.is_leaf(*leaf)) leaf.reset();
    if (!leaf && name.find('/') == std::string::npos && !ambiguous.count(name)) {
      auto it = by_bare_name.find(name);
      if (it != by_bare_name.end()) leaf = it->second;
    }
    if (!leaf) {
      if (strict) throw DataError("coco: category '" + name + "' does not match any taxonomy leaf");
      report.unmatched_categories.push_back(name);
      continue;
    }
    category_to_leaf[cid] = *leaf;
  }

  std::size_t d_in = 0;
  std::vector<std::pair<int, Vector>> rows;
  for (const json& ann : doc.at("annotations")) {
    long long aid = ann.at("id").get<long long>();
    long long cid = ann.at("category_id").get<long long>();
    auto cit = category_to_leaf.find(cid);
    if (cit == category_to_leaf.end()) {
      report.skipped_annotations += 1;
      continue;
    }
    std::optional<Vector> feat = features(aid);
    require(feat.has_value(), "coco: no feature for annotation id " + std::to_string(aid));
    if (d_in == 0) d_in = feat->size();
    require(feat->size() == d_in, "coco: inconsistent feature dimension at annotation " + std::to_string(aid));
    rows.emplace_back(cit->second, std::move(*feat));
  }

  Dataset& ds = report.dataset;
  ds.taxonomy_fingerprint = t.fingerprint();
  ds.features = Matrix(rows.size(), d_in);
  ds.examples.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.features.set_row(i, rows[i].second);
    ds.examples.push_back({rows[i].first, Split::Train, Source::Ingested});
  }
  assert_finite(ds.features.data, "coco features");
  return report;
}

}  // namespace hicl
