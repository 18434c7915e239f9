#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lagamc/catalog.hpp"

namespace lagamc {

/// Prompt sections rendered ahead of each input text.
struct PromptTemplate {
  std::string instruction;
  std::string task_name;
  std::string task_description;
  std::string separator = "\n";

  /// Throws ValidationError when instruction or task description is empty.
  void check() const;
};

PromptTemplate load_template(const std::filesystem::path& path);
void save_template(const std::filesystem::path& path, const PromptTemplate& tmpl);
nlohmann::json template_to_json(const PromptTemplate& tmpl);
PromptTemplate template_from_json(const nlohmann::json& j);

struct PromptRecord {
  std::string document_id;
  std::string prompt;
  std::optional<std::string> target;
};

/// "Instruction: ..", "Task: ..", "Description: .." and the document text,
/// joined by the template separator.
std::string build_prompt(const PromptTemplate& tmpl, const Document& doc);

/// Refined descriptions of the gold labels in catalog order, each ending in
/// exactly one period, joined by single spaces.
std::string build_target(const Document& doc, const LabelCatalog& catalog);

/// Trims a description and gives it exactly one terminating period.
std::string terminate_sentence(std::string_view description);

/// Splits generated text at a period followed by whitespace or end of text.
/// Pieces are trimmed, have internal whitespace collapsed, are re-terminated
/// with one period, and empty pieces are dropped.
std::vector<std::string> split_generated(std::string_view text);

/// Word-level normal form of generated text: single spaces, one period per
/// sentence end, and a final period.
std::string normalize_generated(std::string_view text);

/// Keeps the first `max_tokens` whitespace tokens. Sets `truncated` when
/// anything was dropped.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens, bool& truncated);

struct BoundaryWarning {
  std::string label;
  std::size_t pieces = 0;
};

/// Labels whose refined description the sentence splitter would cut into
/// more than one piece (abbreviations, internal full stops).
std::vector<BoundaryWarning> lint_boundaries(const LabelCatalog& catalog);

/// Builds one record per document. Targets longer than `max_target_tokens`
/// (0 disables the limit) are truncated, and each truncation is reported in
/// `warnings`.
std::vector<PromptRecord> build_records(const DatasetSplit& split, const LabelCatalog& catalog,
                                        const PromptTemplate& tmpl,
                                        std::size_t max_target_tokens,
                                        std::vector<std::string>* warnings = nullptr);

void save_records(const std::filesystem::path& path, const std::vector<PromptRecord>& records);
std::vector<PromptRecord> load_records(const std::filesystem::path& path);

}  // namespace lagamc
