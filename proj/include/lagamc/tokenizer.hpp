#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace lagamc {

/// Word-level vocabulary shared by the reference generator and encoder.
/// Punctuation marks are their own tokens; ids 0-3 are reserved.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Vocabulary();
  /// Tokens are deduplicated and sorted so the id assignment does not depend
  /// on input order.
  static Vocabulary build(const std::vector<std::string>& texts);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int id(std::string_view token) const;
  /// Padding, begin and end markers carry no content.
  bool is_control(int id) const noexcept { return id == kPad || id == kBos || id == kEos; }

  std::vector<int> encode(std::string_view text) const;
  /// Control tokens are skipped.
  std::string decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Splits on whitespace and detaches punctuation marks.
std::vector<std::string> split_words(std::string_view text);

}  // namespace lagamc
