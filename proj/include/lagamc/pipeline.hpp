#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lagamc/catalog.hpp"
#include "lagamc/descgen.hpp"
#include "lagamc/evalkit.hpp"
#include "lagamc/trainer.hpp"

namespace lagamc {

enum class Stage { prepare_descriptions, build_prompts, train, predict, evaluate };

constexpr Stage kStages[] = {Stage::prepare_descriptions, Stage::build_prompts, Stage::train,
                             Stage::predict, Stage::evaluate};

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view text);

struct DescriptionSettings {
  bool enabled = false;
  /// Canned responses; when unset the chat endpoint below is used.
  std::optional<std::filesystem::path> stub;
  ChatCompletionsClient::Options endpoint;
  RefineOptions refine;
};

/// Parsed run configuration. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
  std::filesystem::path train;
  std::filesystem::path test;
  std::optional<std::filesystem::path> dev;
  std::filesystem::path catalog;
  std::filesystem::path prompt_template;
  DatasetSchema schema;
  DescriptionSettings descriptions;
  TrainConfig training;
  std::optional<double> threshold;
  std::size_t max_target_tokens = 0;
  EvalOptions evaluation;
  /// Snapshot recorded in the manifest.
  nlohmann::json snapshot;
};

/// Throws ValidationError for malformed configs and missing input files.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = {});

struct RunOptions {
  std::filesystem::path run_dir;
  /// Stop after this stage.
  std::optional<Stage> until;
  /// Resume even though inputs changed; every stage is re-executed.
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::function<void(const std::string&)> log;
};

struct StageOutcome {
  Stage stage;
  /// "executed", "skipped" or "disabled".
  std::string action;
};

struct RunSummary {
  nlohmann::json manifest;
  std::vector<StageOutcome> outcomes;
};

/// Runs every stage in order, persisting outputs and a manifest in the run
/// directory. Completed stages whose outputs are unchanged are skipped.
/// Throws ValidationError before any stage runs when inputs are invalid or
/// changed since the last run (without `force`), and StageError naming the
/// stage when one fails.
RunSummary run_pipeline(const std::filesystem::path& config_path, const RunOptions& options);

struct InspectResult {
  bool ok = false;
  std::string text;
};

/// Stage table, training losses and headline metrics of a run directory.
InspectResult inspect_run(const std::filesystem::path& run_dir);

}  // namespace lagamc
