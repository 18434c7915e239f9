#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace lagamc {

struct Label {
  std::string name;
  std::size_t index = 0;
};

enum class DescriptionSource { seed, refined, manual };

std::string_view to_string(DescriptionSource source);
DescriptionSource description_source_from_string(std::string_view text);

/// One catalog row: the label plus its seed and refined descriptions.
struct LabelDescription {
  std::string name;
  std::string initial_text;
  std::string refined_text;
  DescriptionSource source = DescriptionSource::seed;
};

/// Ordered label set with one description per label. Immutable after
/// construction; row order is the catalog order used everywhere downstream.
class LabelCatalog {
 public:
  LabelCatalog() = default;
  /// Throws ValidationError on empty or duplicate names.
  explicit LabelCatalog(std::vector<LabelDescription> rows);

  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  Label label(std::size_t index) const { return {rows_.at(index).name, index}; }
  const LabelDescription& description(std::size_t index) const { return rows_.at(index); }
  const std::vector<LabelDescription>& rows() const noexcept { return rows_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Throws ValidationError naming the label when absent.
  std::size_t require_index(std::string_view name) const;
  std::vector<std::string> names() const;

  /// Fingerprint over names and refined descriptions, in order.
  std::string content_hash() const;

  /// Returns a copy where every label lacking a refined description falls
  /// back to its initial text.
  LabelCatalog with_seed_fallback() const;

 private:
  std::vector<LabelDescription> rows_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

LabelCatalog load_catalog(const std::filesystem::path& path);
void save_catalog(const std::filesystem::path& path, const LabelCatalog& catalog);
nlohmann::json catalog_to_json(const LabelCatalog& catalog);
LabelCatalog catalog_from_json(const nlohmann::json& j);

struct Document {
  std::string id;
  std::string text;
  /// Distinct label names in input order.
  std::vector<std::string> gold_labels;
};

enum class SplitKind { train, dev, test, other };

std::string_view to_string(SplitKind kind);

struct DatasetSplit {
  SplitKind kind = SplitKind::other;
  std::vector<Document> documents;

  std::size_t size() const noexcept { return documents.size(); }
  bool empty() const noexcept { return documents.empty(); }
};

/// Field names of a foreign corpus. When `labels_delimiter` is set, a string
/// labels field is split on it; otherwise the field must be a JSON array.
struct DatasetSchema {
  std::string id_field = "id";
  std::string text_field = "text";
  std::string labels_field = "labels";
  std::optional<std::string> labels_delimiter;
};

/// Reads JSONL, one document per non-blank line, preserving file order.
/// Errors (ValidationError): missing file, malformed record with its line
/// number, duplicate id.
DatasetSplit load_dataset(const std::filesystem::path& path, const DatasetSchema& schema = {},
                          SplitKind kind = SplitKind::other);
void save_dataset(const std::filesystem::path& path, const DatasetSplit& split);
nlohmann::json document_to_json(const Document& doc);

struct DatasetStats {
  std::size_t n_train = 0;
  std::size_t n_dev = 0;
  std::size_t n_test = 0;
  std::size_t n_labels = 0;
  std::size_t max_labels_per_sample = 0;
  double avg_desc_length = 0.0;
};

nlohmann::json stats_to_json(const DatasetStats& stats);

/// Whitespace-delimited token count.
std::size_t whitespace_token_count(std::string_view text);

DatasetStats compute_stats(const DatasetSplit& train, const DatasetSplit& dev,
                           const DatasetSplit& test, const LabelCatalog& catalog);

struct ValidationIssue {
  enum class Kind { unknown_label, empty_text, empty_gold };
  Kind kind;
  std::string document_id;
  std::string detail;
};

std::string_view to_string(ValidationIssue::Kind kind);

/// Empty result iff every document has text, a non-empty gold set, and only
/// catalog labels.
std::vector<ValidationIssue> validate(const DatasetSplit& split, const LabelCatalog& catalog);

std::string trim(std::string_view text);

}  // namespace lagamc
