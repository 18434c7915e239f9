#include "lagamc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace lagamc {

namespace {

constexpr std::string_view kSeparated = ".,;:!?()[]{}\"";
constexpr std::string_view kNoSpaceBefore = ".,;:!?)]}";
constexpr std::string_view kNoSpaceAfter = "([{";
const std::vector<std::string> kReserved = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_separated(char c) { return kSeparated.find(c) != std::string_view::npos; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
      ++i;
      continue;
    }
    if (c == '<') {
      const auto close = text.find('>', i);
      if (close != std::string_view::npos) {
        const auto candidate = text.substr(i, close - i + 1);
        if (std::find(kReserved.begin(), kReserved.end(), candidate) != kReserved.end()) {
          flush();
          out.emplace_back(candidate);
          i = close + 1;
          continue;
        }
      }
    }
    if (is_separated(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
    ++i;
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& t : kReserved) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  }
  Vocabulary vocab;
  for (const auto& w : words) {
    if (vocab.ids_.count(w)) continue;
    vocab.ids_.emplace(w, static_cast<int>(vocab.tokens_.size()));
    vocab.tokens_.push_back(w);
  }
  return vocab;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  bool glue_next = true;
  for (int id : ids) {
    if (is_control(id)) continue;
    const auto& tok = token(id);
    const bool glue = glue_next || (tok.size() == 1 && kNoSpaceBefore.find(tok[0]) != std::string_view::npos);
    if (!glue) out.push_back(' ');
    out += tok;
    glue_next = tok.size() == 1 && kNoSpaceAfter.find(tok[0]) != std::string_view::npos;
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json(tokens_); }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < kReserved.size() ||
      !std::equal(kReserved.begin(), kReserved.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary must start with the reserved tokens");
  }
  Vocabulary vocab;
  for (std::size_t i = kReserved.size(); i < tokens.size(); ++i) {
    if (!vocab.ids_.emplace(tokens[i], static_cast<int>(vocab.tokens_.size())).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + tokens[i]);
    }
    vocab.tokens_.push_back(tokens[i]);
  }
  return vocab;
}

}  // namespace lagamc
