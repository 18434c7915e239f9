#include "lagamc/descgen.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"

namespace lagamc {

using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string quote(std::string_view text) {
  std::string out = "\"";
  for (char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::optional<std::string> label_line(const std::string& prompt) {
  static constexpr std::string_view kPrefix = "Label: ";
  if (prompt.compare(0, kPrefix.size(), kPrefix) != 0) return std::nullopt;
  auto end = prompt.find('\n');
  return prompt.substr(kPrefix.size(), end == std::string::npos ? end : end - kPrefix.size());
}

}  // namespace

void RefinementRequest::check() const {
  if (trim(label_name).empty()) throw ValidationError("refinement request without a label name");
  if (examples.empty()) {
    throw ValidationError("refinement request for \"" + label_name + "\" has no examples");
  }
  for (const auto& ex : examples) {
    if (std::find(ex.labels.begin(), ex.labels.end(), label_name) == ex.labels.end()) {
      throw ValidationError("refinement example for \"" + label_name +
                            "\" does not carry that label");
    }
  }
}

StubClient::StubClient(std::map<std::string, std::string> by_prompt,
                       std::map<std::string, std::string> by_label,
                       std::optional<std::string> fallback)
    : by_prompt_(std::move(by_prompt)), by_label_(std::move(by_label)), fallback_(std::move(fallback)) {}

StubClient StubClient::from_file(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed stub file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("stub file must hold a JSON object");
  std::map<std::string, std::string> by_prompt;
  std::map<std::string, std::string> by_label;
  std::optional<std::string> fallback;
  if (j.contains("by_prompt")) by_prompt = j["by_prompt"].get<std::map<std::string, std::string>>();
  if (j.contains("by_label")) by_label = j["by_label"].get<std::map<std::string, std::string>>();
  if (j.contains("fallback") && j["fallback"].is_string()) fallback = j["fallback"].get<std::string>();
  return StubClient(std::move(by_prompt), std::move(by_label), std::move(fallback));
}

std::string StubClient::complete(const std::string& prompt, int, double) {
  if (auto it = by_prompt_.find(prompt); it != by_prompt_.end()) return it->second;
  auto label = label_line(prompt);
  if (label) {
    if (auto it = by_label_.find(*label); it != by_label_.end()) return it->second;
  }
  if (fallback_) {
    auto out = *fallback_;
    const std::string name = label.value_or("");
    for (auto pos = out.find("{label}"); pos != std::string::npos; pos = out.find("{label}", pos)) {
      out.replace(pos, 7, name);
      pos += name.size();
    }
    return out;
  }
  throw std::runtime_error("stub client has no response for this prompt");
}

std::string complete_with_retry(GenerationClient& client, const std::string& prompt,
                                int max_tokens, double temperature, const RetryPolicy& policy,
                                int* attempts) {
  const int max_attempts = std::max(1, policy.max_attempts);
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    if (attempts) *attempts = attempt;
    try {
      return client.complete(prompt, max_tokens, temperature);
    } catch (const std::exception&) {
      if (attempt >= max_attempts) throw;
    }
    if (policy.sleep) {
      policy.sleep(backoff);
    } else {
      std::this_thread::sleep_for(backoff);
    }
    backoff = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(backoff.count()) * policy.backoff_multiplier));
  }
}

std::vector<Document> pick_examples(const DatasetSplit& train, const Label& label, std::size_t k,
                                    std::uint64_t seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < train.documents.size(); ++i) {
    const auto& gold = train.documents[i].gold_labels;
    if (std::find(gold.begin(), gold.end(), label.name) != gold.end()) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw ValidationError("label \"" + label.name + "\" never occurs in the training split");
  }
  std::mt19937_64 rng(mix_seed(seed, label.index));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(k, candidates.size()));
  std::vector<Document> out;
  out.reserve(candidates.size());
  for (auto i : candidates) out.push_back(train.documents[i]);
  return out;
}

std::string build_refinement_prompt(const RefinementRequest& request) {
  request.check();
  std::ostringstream out;
  out << "Label: " << request.label_name << '\n';
  out << "Initial Description: " << request.initial_description << '\n';
  out << "Dataset: " << request.dataset_blurb << '\n';
  out << "Examples from the dataset:\n";
  for (std::size_t i = 0; i < request.examples.size(); ++i) {
    const auto& ex = request.examples[i];
    out << request.example_kind << ' ' << (i + 1) << ": " << quote(ex.text) << '\n';
    out << "Prediction: " << join(ex.labels, ", ") << '\n';
  }
  out << "Task: Generate a suitable label description for `" << request.label_name
      << "` that fits the context of this dataset.";
  return out.str();
}

int RefineOutcome::retries() const {
  int total = 0;
  for (const auto& l : labels) total += std::max(0, l.attempts - 1);
  return total;
}

RefineOutcome refine_catalog(const LabelCatalog& catalog, const DatasetSplit& train,
                             GenerationClient& client, const RefineOptions& options) {
  const auto n = catalog.size();
  std::vector<LabelDescription> rows = catalog.rows();
  std::vector<LabelRefinementLog> logs(n);
  std::vector<std::string> errors(n);
  std::vector<std::size_t> todo;

  for (std::size_t i = 0; i < n; ++i) {
    logs[i].label = rows[i].name;
    const bool has_description = !trim(rows[i].refined_text).empty() &&
                                 rows[i].source != DescriptionSource::seed;
    if (has_description) {
      logs[i].skipped = true;
      continue;
    }
    if (trim(rows[i].initial_text).empty()) {
      throw ValidationError("label \"" + rows[i].name + "\" has no initial description");
    }
    todo.push_back(i);
  }

  // Prompts are built up front so example selection never depends on thread timing.
  std::vector<std::string> prompts(n);
  for (auto i : todo) {
    RefinementRequest req;
    req.label_name = rows[i].name;
    req.initial_description = rows[i].initial_text;
    req.dataset_blurb = options.dataset_blurb;
    req.example_kind = options.example_kind;
    std::vector<Document> picked;
    try {
      picked = pick_examples(train, catalog.label(i), options.examples_per_label, options.seed);
    } catch (const ValidationError& e) {
      errors[i] = e.what();
      continue;
    }
    for (auto& doc : picked) req.examples.push_back({std::move(doc.text), std::move(doc.gold_labels)});
    prompts[i] = build_refinement_prompt(req);
  }

  std::vector<std::optional<std::string>> responses(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto slot = next.fetch_add(1); slot < todo.size(); slot = next.fetch_add(1)) {
      const auto i = todo[slot];
      if (prompts[i].empty()) continue;
      try {
        responses[i] = complete_with_retry(client, prompts[i], options.max_tokens,
                                           options.temperature, options.retry, &logs[i].attempts);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const auto n_workers = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(1, todo.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RefineOutcome outcome;
  std::size_t failed = 0;
  for (auto i : todo) {
    auto text = responses[i] ? trim(*responses[i]) : std::string{};
    if (!text.empty()) {
      rows[i].refined_text = std::move(text);
      rows[i].source = DescriptionSource::refined;
      logs[i].refined = true;
      continue;
    }
    ++failed;
    rows[i].refined_text = trim(rows[i].initial_text);
    rows[i].source = DescriptionSource::seed;
    outcome.warnings.push_back("label \"" + rows[i].name + "\": refinement failed (" +
                               (errors[i].empty() ? std::string("empty response") : errors[i]) +
                               "), keeping the initial description");
  }
  if (!todo.empty() && failed == todo.size()) {
    throw StageError("prepare-descriptions",
                     "every refinement call failed; first error: " + outcome.warnings.front());
  }
  outcome.catalog = LabelCatalog(std::move(rows));
  outcome.labels = std::move(logs);
  return outcome;
}

}  // namespace lagamc
