#include "lagamc/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"

namespace lagamc {

using nlohmann::json;

std::string trim(std::string_view text) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto begin = std::find_if_not(text.begin(), text.end(), is_space);
  auto end = std::find_if_not(text.rbegin(), std::string_view::reverse_iterator(begin), is_space);
  return std::string(begin, end.base());
}

std::string_view to_string(DescriptionSource source) {
  switch (source) {
    case DescriptionSource::seed: return "seed";
    case DescriptionSource::refined: return "refined";
    case DescriptionSource::manual: return "manual";
  }
  return "seed";
}

DescriptionSource description_source_from_string(std::string_view text) {
  if (text == "seed") return DescriptionSource::seed;
  if (text == "refined") return DescriptionSource::refined;
  if (text == "manual") return DescriptionSource::manual;
  throw ValidationError("unknown description source: " + std::string(text));
}

LabelCatalog::LabelCatalog(std::vector<LabelDescription> rows) : rows_(std::move(rows)) {
  by_name_.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    auto& row = rows_[i];
    row.name = trim(row.name);
    if (row.name.empty()) {
      throw ValidationError("catalog row " + std::to_string(i) + " has an empty label name");
    }
    if (!by_name_.emplace(row.name, i).second) {
      throw ValidationError("duplicate label in catalog: " + row.name);
    }
  }
}

std::optional<std::size_t> LabelCatalog::index_of(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t LabelCatalog::require_index(std::string_view name) const {
  if (auto idx = index_of(name)) return *idx;
  throw ValidationError("label not in catalog: " + std::string(name));
}

std::vector<std::string> LabelCatalog::names() const {
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (const auto& row : rows_) out.push_back(row.name);
  return out;
}

std::string LabelCatalog::content_hash() const {
  std::string canonical;
  for (const auto& row : rows_) {
    canonical += json(row.name).dump();
    canonical += '\x1f';
    canonical += json(row.refined_text).dump();
    canonical += '\x1e';
  }
  return sha256_hex(canonical);
}

LabelCatalog LabelCatalog::with_seed_fallback() const {
  auto rows = rows_;
  for (auto& row : rows) {
    if (trim(row.refined_text).empty()) {
      row.refined_text = row.initial_text;
      row.source = DescriptionSource::seed;
    }
  }
  return LabelCatalog(std::move(rows));
}

json catalog_to_json(const LabelCatalog& catalog) {
  json labels = json::array();
  for (const auto& row : catalog.rows()) {
    labels.push_back({{"name", row.name},
                      {"initial_text", row.initial_text},
                      {"refined_text", row.refined_text},
                      {"source", to_string(row.source)}});
  }
  return json{{"labels", std::move(labels)}};
}

LabelCatalog catalog_from_json(const json& j) {
  if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array()) {
    throw ValidationError("catalog must be an object with a \"labels\" array");
  }
  std::vector<LabelDescription> rows;
  for (const auto& item : j["labels"]) {
    if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) {
      throw ValidationError("catalog entry without a string \"name\"");
    }
    LabelDescription row;
    row.name = item["name"].get<std::string>();
    row.initial_text = item.value("initial_text", std::string{});
    row.refined_text = item.value("refined_text", std::string{});
    row.source = description_source_from_string(item.value("source", std::string{"seed"}));
    rows.push_back(std::move(row));
  }
  return LabelCatalog(std::move(rows));
}

LabelCatalog load_catalog(const std::filesystem::path& path) {
  const auto text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed catalog " + path.string() + ": " + e.what());
  }
  return catalog_from_json(j);
}

void save_catalog(const std::filesystem::path& path, const LabelCatalog& catalog) {
  write_file_atomic(path, catalog_to_json(catalog).dump(2) + "\n");
}

std::string_view to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::train: return "train";
    case SplitKind::dev: return "dev";
    case SplitKind::test: return "test";
    case SplitKind::other: return "other";
  }
  return "other";
}

namespace {

std::vector<std::string> split_on(std::string_view text, std::string_view delimiter) {
  std::vector<std::string> out;
  if (delimiter.empty()) {
    out.emplace_back(text);
    return out;
  }
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(delimiter, start);
    out.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + delimiter.size();
  }
  return out;
}

std::string field_as_id(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  if (value.is_number_unsigned()) return std::to_string(value.get<unsigned long long>());
  throw std::invalid_argument("id must be a string or integer");
}

}  // namespace

DatasetSplit load_dataset(const std::filesystem::path& path, const DatasetSchema& schema,
                          SplitKind kind) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset: " + path.string());

  DatasetSplit split;
  split.kind = kind;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    Document doc;
    try {
      const auto record = json::parse(line);
      if (!record.is_object()) throw std::invalid_argument("record is not a JSON object");
      for (const auto* field : {&schema.id_field, &schema.text_field, &schema.labels_field}) {
        if (!record.contains(*field)) throw std::invalid_argument("missing field \"" + *field + "\"");
      }
      doc.id = field_as_id(record[schema.id_field]);
      if (!record[schema.text_field].is_string()) throw std::invalid_argument("text must be a string");
      doc.text = record[schema.text_field].get<std::string>();

      std::vector<std::string> raw;
      const auto& labels = record[schema.labels_field];
      if (labels.is_array()) {
        for (const auto& l : labels) {
          if (!l.is_string()) throw std::invalid_argument("label entries must be strings");
          raw.push_back(l.get<std::string>());
        }
      } else if (labels.is_string() && schema.labels_delimiter) {
        raw = split_on(labels.get<std::string>(), *schema.labels_delimiter);
      } else {
        throw std::invalid_argument("labels must be an array");
      }
      for (auto& name : raw) {
        auto t = trim(name);
        if (t.empty()) continue;
        if (std::find(doc.gold_labels.begin(), doc.gold_labels.end(), t) == doc.gold_labels.end()) {
          doc.gold_labels.push_back(std::move(t));
        }
      }
    } catch (const json::parse_error& e) {
      throw ValidationError("malformed record at " + where + ": " + e.what());
    } catch (const std::exception& e) {
      throw ValidationError("malformed record at " + where + ": " + e.what());
    }
    if (!seen.insert(doc.id).second) {
      throw ValidationError("duplicate document id \"" + doc.id + "\" at " + where);
    }
    split.documents.push_back(std::move(doc));
  }
  return split;
}

json document_to_json(const Document& doc) {
  return json{{"id", doc.id}, {"text", doc.text}, {"labels", doc.gold_labels}};
}

void save_dataset(const std::filesystem::path& path, const DatasetSplit& split) {
  std::string out;
  for (const auto& doc : split.documents) {
    out += document_to_json(doc).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

json stats_to_json(const DatasetStats& stats) {
  return json{{"n_train", stats.n_train},
              {"n_dev", stats.n_dev},
              {"n_test", stats.n_test},
              {"n_labels", stats.n_labels},
              {"max_labels_per_sample", stats.max_labels_per_sample},
              {"avg_desc_length", stats.avg_desc_length}};
}

std::size_t whitespace_token_count(std::string_view text) {
  std::istringstream ss{std::string(text)};
  std::size_t n = 0;
  std::string tok;
  while (ss >> tok) ++n;
  return n;
}

DatasetStats compute_stats(const DatasetSplit& train, const DatasetSplit& dev,
                           const DatasetSplit& test, const LabelCatalog& catalog) {
  DatasetStats stats;
  stats.n_train = train.size();
  stats.n_dev = dev.size();
  stats.n_test = test.size();
  stats.n_labels = catalog.size();
  for (const auto* split : {&train, &dev, &test}) {
    for (const auto& doc : split->documents) {
      stats.max_labels_per_sample = std::max(stats.max_labels_per_sample, doc.gold_labels.size());
    }
  }
  if (!catalog.empty()) {
    std::size_t total = 0;
    for (const auto& row : catalog.rows()) total += whitespace_token_count(row.refined_text);
    stats.avg_desc_length = static_cast<double>(total) / static_cast<double>(catalog.size());
  }
  return stats;
}

std::string_view to_string(ValidationIssue::Kind kind) {
  switch (kind) {
    case ValidationIssue::Kind::unknown_label: return "unknown_label";
    case ValidationIssue::Kind::empty_text: return "empty_text";
    case ValidationIssue::Kind::empty_gold: return "empty_gold";
  }
  return "unknown";
}

std::vector<ValidationIssue> validate(const DatasetSplit& split, const LabelCatalog& catalog) {
  std::vector<ValidationIssue> issues;
  for (const auto& doc : split.documents) {
    if (trim(doc.text).empty()) {
      issues.push_back({ValidationIssue::Kind::empty_text, doc.id, "empty text"});
    }
    if (doc.gold_labels.empty()) {
      issues.push_back({ValidationIssue::Kind::empty_gold, doc.id, "empty gold label set"});
    }
    for (const auto& name : doc.gold_labels) {
      if (!catalog.index_of(name)) {
        issues.push_back({ValidationIssue::Kind::unknown_label, doc.id, name});
      }
    }
  }
  return issues;
}

}  // namespace lagamc
