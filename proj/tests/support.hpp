#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lagamc/catalog.hpp"
#include "lagamc/model.hpp"
#include "lagamc/promptkit.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(LAGAMC_SOURCE_DIR); }
inline fs::path toy_dir() { return source_dir() / "data" / "toy"; }

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "lagamc-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline lagamc::LabelCatalog make_catalog(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::vector<lagamc::LabelDescription> out;
  for (const auto& [name, text] : rows) {
    out.push_back({name, text, text, lagamc::DescriptionSource::refined});
  }
  return lagamc::LabelCatalog(std::move(out));
}

inline lagamc::Document doc(std::string id, std::string text, std::vector<std::string> labels) {
  return {std::move(id), std::move(text), std::move(labels)};
}

inline lagamc::PromptTemplate semeval_template() {
  return {"First read the task description. There could be multiple categories description for a tweet.",
          "Multi-label Text Classification", "Generate label description for the given texts.", "\n"};
}

/// Generator whose output is looked up by prompt suffix (the document text).
class ScriptedGenerator : public lagamc::Generator {
 public:
  ScriptedGenerator(std::shared_ptr<const lagamc::Vocabulary> vocab,
                    std::map<std::string, std::string> by_text)
      : vocab_(std::move(vocab)), by_text_(std::move(by_text)) {}

  Forward forward(std::string_view, std::string_view) override {
    throw std::logic_error("scripted generator cannot be trained");
  }
  std::string generate(std::string_view prompt, std::size_t) override {
    for (const auto& [text, out] : by_text_) {
      if (prompt.size() >= text.size() && prompt.substr(prompt.size() - text.size()) == text) {
        return out;
      }
    }
    throw std::runtime_error("no scripted output");
  }
  std::vector<lagamc::ag::Var> trainable_parameters() override { return {}; }
  lagamc::ParameterCount parameter_count() const override { return {}; }
  const lagamc::Vocabulary& vocabulary() const override { return *vocab_; }

 private:
  std::shared_ptr<const lagamc::Vocabulary> vocab_;
  std::map<std::string, std::string> by_text_;
};

}  // namespace testing
