#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lagamc/catalog.hpp"

namespace lagamc {

struct RefinementExample {
  std::string text;
  std::vector<std::string> labels;
};

/// Inputs for one description-refinement call.
struct RefinementRequest {
  std::string label_name;
  std::string initial_description;
  std::string dataset_blurb;
  /// Noun used to introduce each example ("Tweet 1:", "Text 1:").
  std::string example_kind = "Text";
  std::vector<RefinementExample> examples;

  /// Throws ValidationError unless there is at least one example and every
  /// example's labels include `label_name`.
  void check() const;
};

/// Text-completion service. Implementations must be safe to call from
/// several threads at once.
class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  virtual std::string complete(const std::string& prompt, int max_tokens, double temperature) = 0;
};

/// Deterministic client answering from canned responses. Lookup order: the
/// exact prompt, then the label named on the prompt's "Label:" line, then the
/// fallback template with "{label}" substituted. Throws when nothing matches.
class StubClient : public GenerationClient {
 public:
  StubClient() = default;
  StubClient(std::map<std::string, std::string> by_prompt,
             std::map<std::string, std::string> by_label,
             std::optional<std::string> fallback = std::nullopt);

  /// JSON object with optional "by_prompt", "by_label" and "fallback" keys.
  static StubClient from_file(const std::filesystem::path& path);

  std::string complete(const std::string& prompt, int max_tokens, double temperature) override;

 private:
  std::map<std::string, std::string> by_prompt_;
  std::map<std::string, std::string> by_label_;
  std::optional<std::string> fallback_;
};

/// Chat-completions endpoint over HTTP(S). The API key is read from the
/// named environment variable at call time and never stored in config.
class ChatCompletionsClient : public GenerationClient {
 public:
  struct Options {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{60};
  };

  explicit ChatCompletionsClient(Options options);
  std::string complete(const std::string& prompt, int max_tokens, double temperature) override;

 private:
  Options options_;
  std::string scheme_host_port_;
  std::string path_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double backoff_multiplier = 2.0;
  /// Replaced in tests to avoid real waiting.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Calls the client until it succeeds or `policy.max_attempts` is spent.
/// `attempts` receives the number of calls made. Rethrows the last failure.
std::string complete_with_retry(GenerationClient& client, const std::string& prompt,
                                int max_tokens, double temperature, const RetryPolicy& policy,
                                int* attempts = nullptr);

/// Up to `k` training documents carrying `label`, chosen by a seeded shuffle.
/// Throws ValidationError when the label never occurs in `train`.
std::vector<Document> pick_examples(const DatasetSplit& train, const Label& label, std::size_t k,
                                    std::uint64_t seed);

std::string build_refinement_prompt(const RefinementRequest& request);

struct RefineOptions {
  std::size_t examples_per_label = 2;
  std::uint64_t seed = 0;
  int max_tokens = 128;
  double temperature = 0.7;
  std::string dataset_blurb;
  std::string example_kind = "Text";
  RetryPolicy retry;
  std::size_t concurrency = 4;
};

struct LabelRefinementLog {
  std::string label;
  int attempts = 0;
  bool refined = false;
  /// Description already present, client not called.
  bool skipped = false;
};

struct RefineOutcome {
  LabelCatalog catalog;
  std::vector<LabelRefinementLog> labels;
  std::vector<std::string> warnings;

  /// Calls beyond the first, summed over labels.
  int retries() const;
};

/// Refines every label that lacks a refined or manual description. Labels
/// whose calls keep failing fall back to their seed text with a warning.
/// Throws StageError when every attempted label failed.
RefineOutcome refine_catalog(const LabelCatalog& catalog, const DatasetSplit& train,
                             GenerationClient& client, const RefineOptions& options);

}  // namespace lagamc
