#include "lagamc/promptkit.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"

namespace lagamc {

using nlohmann::json;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string strip_trailing_periods(std::string text) {
  while (!text.empty() && (text.back() == '.' || is_space(text.back()))) text.pop_back();
  return text;
}

}  // namespace

void PromptTemplate::check() const {
  if (trim(instruction).empty()) throw ValidationError("prompt template: empty instruction");
  if (trim(task_description).empty()) {
    throw ValidationError("prompt template: empty task description");
  }
}

json template_to_json(const PromptTemplate& tmpl) {
  return json{{"instruction", tmpl.instruction},
              {"task_name", tmpl.task_name},
              {"task_description", tmpl.task_description},
              {"separator", tmpl.separator}};
}

PromptTemplate template_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("prompt template must be a JSON object");
  PromptTemplate tmpl;
  tmpl.instruction = j.value("instruction", std::string{});
  tmpl.task_name = j.value("task_name", std::string{});
  tmpl.task_description = j.value("task_description", std::string{});
  tmpl.separator = j.value("separator", std::string{"\n"});
  tmpl.check();
  return tmpl;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  try {
    return template_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed template " + path.string() + ": " + e.what());
  }
}

void save_template(const std::filesystem::path& path, const PromptTemplate& tmpl) {
  write_file_atomic(path, template_to_json(tmpl).dump(2) + "\n");
}

std::string build_prompt(const PromptTemplate& tmpl, const Document& doc) {
  tmpl.check();
  if (trim(doc.text).empty()) {
    throw ValidationError("document " + doc.id + ": empty text cannot be prompted");
  }
  std::string out;
  out.reserve(tmpl.instruction.size() + tmpl.task_description.size() + doc.text.size() + 64);
  out += "Instruction: ";
  out += tmpl.instruction;
  out += tmpl.separator;
  out += "Task: ";
  out += tmpl.task_name;
  out += tmpl.separator;
  out += "Description: ";
  out += tmpl.task_description;
  out += tmpl.separator;
  out += doc.text;
  return out;
}

std::string terminate_sentence(std::string_view description) {
  auto body = strip_trailing_periods(trim(description));
  if (body.empty()) return {};
  body.push_back('.');
  return body;
}

std::string build_target(const Document& doc, const LabelCatalog& catalog) {
  std::vector<std::size_t> indices;
  indices.reserve(doc.gold_labels.size());
  for (const auto& name : doc.gold_labels) {
    auto idx = catalog.index_of(name);
    if (!idx) throw ValidationError("document " + doc.id + ": unknown gold label \"" + name + "\"");
    indices.push_back(*idx);
  }
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());

  std::string out;
  for (auto idx : indices) {
    const auto& row = catalog.description(idx);
    auto sentence = terminate_sentence(row.refined_text);
    if (sentence.empty()) {
      throw ValidationError("label \"" + row.name + "\" has no refined description");
    }
    if (!out.empty()) out.push_back(' ');
    out += sentence;
  }
  return out;
}

std::vector<std::string> split_generated(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '.') continue;
    const bool boundary = i + 1 == text.size() || is_space(text[i + 1]);
    if (!boundary) continue;
    auto piece = strip_trailing_periods(collapse_whitespace(text.substr(start, i - start)));
    if (!piece.empty()) pieces.push_back(piece + ".");
    start = i + 1;
  }
  if (start < text.size()) {
    auto piece = strip_trailing_periods(collapse_whitespace(text.substr(start)));
    if (!piece.empty()) pieces.push_back(piece + ".");
  }
  return pieces;
}

std::string normalize_generated(std::string_view text) {
  std::istringstream words{std::string(text)};
  std::string word;
  std::string out;
  std::string sentence;
  auto flush = [&] {
    if (sentence.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out += sentence;
    out.push_back('.');
    sentence.clear();
  };
  while (words >> word) {
    const bool ends = word.back() == '.';
    while (!word.empty() && word.back() == '.') word.pop_back();
    if (!word.empty()) {
      if (!sentence.empty()) sentence.push_back(' ');
      sentence += word;
    }
    if (ends) flush();
  }
  flush();
  return out;
}

std::string truncate_tokens(std::string_view text, std::size_t max_tokens, bool& truncated) {
  truncated = false;
  std::istringstream words{std::string(text)};
  std::string word;
  std::string out;
  std::size_t n = 0;
  while (words >> word) {
    if (n == max_tokens) {
      truncated = true;
      break;
    }
    if (!out.empty()) out.push_back(' ');
    out += word;
    ++n;
  }
  return out;
}

std::vector<BoundaryWarning> lint_boundaries(const LabelCatalog& catalog) {
  std::vector<BoundaryWarning> out;
  for (const auto& row : catalog.rows()) {
    const auto pieces = split_generated(row.refined_text).size();
    if (pieces > 1) out.push_back({row.name, pieces});
  }
  return out;
}

std::vector<PromptRecord> build_records(const DatasetSplit& split, const LabelCatalog& catalog,
                                        const PromptTemplate& tmpl,
                                        std::size_t max_target_tokens,
                                        std::vector<std::string>* warnings) {
  std::vector<PromptRecord> records;
  records.reserve(split.size());
  for (const auto& doc : split.documents) {
    PromptRecord rec;
    rec.document_id = doc.id;
    rec.prompt = build_prompt(tmpl, doc);
    if (!doc.gold_labels.empty()) {
      auto target = build_target(doc, catalog);
      if (max_target_tokens > 0) {
        bool truncated = false;
        auto cut = truncate_tokens(target, max_target_tokens, truncated);
        if (truncated) {
          if (warnings) {
            warnings->push_back("document " + doc.id + ": target truncated from " +
                                std::to_string(whitespace_token_count(target)) + " to " +
                                std::to_string(max_target_tokens) + " tokens");
          }
          target = std::move(cut);
        }
      }
      rec.target = std::move(target);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_records(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json j{{"id", rec.document_id}, {"prompt", rec.prompt}};
    j["target"] = rec.target ? json(*rec.target) : json(nullptr);
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<PromptRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open prompt records: " + path.string());
  std::vector<PromptRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      PromptRecord rec;
      rec.document_id = j.at("id").get<std::string>();
      rec.prompt = j.at("prompt").get<std::string>();
      if (j.contains("target") && !j["target"].is_null()) rec.target = j["target"].get<std::string>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ValidationError("malformed prompt record at " + path.string() + ":" +
                            std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace lagamc
