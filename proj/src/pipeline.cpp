#include "lagamc/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <map>
#include <sstream>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"
#include "lagamc/matcher.hpp"
#include "lagamc/promptkit.hpp"

namespace lagamc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void say(const RunOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

/// Holds `<run_dir>/.lock` for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw ValidationError("run directory " + dir.string() +
                            " is locked by another run (remove .lock if no run is active)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

fs::path resolve(const fs::path& base, const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ValidationError(std::string("run config: missing path '") + key + "'");
  }
  fs::path p = j.at(key).get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) throw ValidationError(std::string("run config: ") + key + " not found: " + p.string());
  return p.lexically_normal();
}

/// Fingerprint of a file, or of a directory as the hash of its sorted
/// (relative path, file hash) pairs.
std::string fingerprint(const fs::path& p) {
  if (!fs::is_directory(p)) return file_fingerprint(p);
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), p).generic_string()] = file_fingerprint(e.path());
  }
  std::string acc;
  for (const auto& [name, h] : files) acc += name + "\t" + h + "\n";
  return sha256_hex(acc);
}

json load_manifest(const fs::path& dir) {
  const auto p = dir / kManifest;
  if (!fs::exists(p)) return nullptr;
  try {
    auto j = json::parse(read_file(p));
    if (!j.is_object() || !j.contains("stages") || !j.at("stages").is_array()) {
      throw ValidationError("manifest lacks a stages array");
    }
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + " is corrupt: " + e.what());
  }
}

void save_manifest(const fs::path& dir, const json& manifest) {
  write_file_atomic(dir / kManifest, manifest.dump(2) + "\n");
}

const json* last_record(const json& manifest, Stage stage) {
  const json* found = nullptr;
  for (const auto& r : manifest.at("stages")) {
    if (r.value("stage", "") == to_string(stage)) found = &r;
  }
  return found;
}

bool outputs_intact(const fs::path& dir, const json& record) {
  if (record.value("status", "") != "completed") return false;
  for (const auto& [rel, fp] : record.at("outputs").items()) {
    const auto p = dir / rel;
    if (!fs::exists(p) || fingerprint(p) != fp.get<std::string>()) return false;
  }
  return true;
}

LabelCatalog effective_input_catalog(const RunConfig& cfg) { return load_catalog(cfg.catalog).with_seed_fallback(); }

void reject_issues(const DatasetSplit& split, const LabelCatalog& catalog, const fs::path& path) {
  for (const auto& issue : validate(split, catalog)) {
    if (issue.kind == ValidationIssue::Kind::empty_gold) continue;
    throw ValidationError(path.string() + ": document " + issue.document_id + ": " +
                          std::string(to_string(issue.kind)) + " " + issue.detail);
  }
}

std::unique_ptr<GenerationClient> make_client(const DescriptionSettings& d) {
  if (d.stub) return std::make_unique<StubClient>(StubClient::from_file(*d.stub));
  return std::make_unique<ChatCompletionsClient>(d.endpoint);
}

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::prepare_descriptions: return "prepare-descriptions";
    case Stage::build_prompts: return "build-prompts";
    case Stage::train: return "train";
    case Stage::predict: return "predict";
    case Stage::evaluate: return "evaluate";
  }
  return "unknown";
}

Stage stage_from_string(std::string_view text) {
  for (auto s : kStages) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError("unknown stage: " + std::string(text));
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(path.string() + ": run config must be an object");
  const auto base = fs::absolute(path).parent_path();

  RunConfig c;
  try {
    const json data = j.value("data", json::object());
    c.train = resolve(base, data, "train");
    c.test = resolve(base, data, "test");
    if (data.contains("dev")) c.dev = resolve(base, data, "dev");
    c.catalog = resolve(base, j, "catalog");
    c.prompt_template = resolve(base, j, "template");

    if (j.contains("schema")) {
      const auto& s = j.at("schema");
      c.schema.id_field = s.value("id_field", c.schema.id_field);
      c.schema.text_field = s.value("text_field", c.schema.text_field);
      c.schema.labels_field = s.value("labels_field", c.schema.labels_field);
      if (s.contains("labels_delimiter")) c.schema.labels_delimiter = s.at("labels_delimiter").get<std::string>();
    }

    if (j.contains("descriptions")) {
      const auto& d = j.at("descriptions");
      if (d.contains("api_key")) {
        throw ValidationError("API keys are read from the environment, not from config files");
      }
      c.descriptions.enabled = d.value("enabled", true);
      if (d.contains("stub")) c.descriptions.stub = resolve(base, d, "stub");
      c.descriptions.endpoint.endpoint = d.value("endpoint", c.descriptions.endpoint.endpoint);
      c.descriptions.endpoint.model = d.value("model", c.descriptions.endpoint.model);
      c.descriptions.endpoint.api_key_env = d.value("api_key_env", c.descriptions.endpoint.api_key_env);
      auto& r = c.descriptions.refine;
      r.examples_per_label = d.value("examples_per_label", r.examples_per_label);
      r.max_tokens = d.value("max_tokens", r.max_tokens);
      r.temperature = d.value("temperature", r.temperature);
      r.dataset_blurb = d.value("dataset_blurb", r.dataset_blurb);
      r.example_kind = d.value("example_kind", r.example_kind);
      r.concurrency = d.value("concurrency", r.concurrency);
      r.retry.max_attempts = d.value("max_attempts", r.retry.max_attempts);
    }

    json training = j.value("training", json::object());
    if (seed) training["seed"] = *seed;
    c.training = train_config_from_json(training);
    c.descriptions.refine.seed = c.training.seed;

    if (j.contains("threshold") && !j.at("threshold").is_null()) c.threshold = j.at("threshold").get<double>();
    c.max_target_tokens = j.value("max_target_tokens", std::size_t{0});

    const json ev = j.value("evaluation", json::object());
    if (ev.contains("rare")) {
      if (ev.at("rare").is_null()) c.evaluation.rare_fraction.reset();
      else c.evaluation.rare_fraction = ev.at("rare").get<double>();
    }
    c.evaluation.buckets = ev.value("buckets", c.evaluation.buckets);
    c.evaluation.max_k = ev.value("max_k", c.evaluation.max_k);
    c.evaluation.unseen = ev.value("unseen", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  c.snapshot = j;
  if (seed) c.snapshot["training"]["seed"] = *seed;
  return c;
}

RunSummary run_pipeline(const fs::path& config_path, const RunOptions& options) {
  const auto cfg = load_run_config(config_path, options.seed);

  // Everything a stage needs is loaded and checked before any stage runs.
  const auto input_catalog = effective_input_catalog(cfg);
  const auto tmpl = load_template(cfg.prompt_template);
  tmpl.check();
  const auto train_split = load_dataset(cfg.train, cfg.schema, SplitKind::train);
  const auto test_split = load_dataset(cfg.test, cfg.schema, SplitKind::test);
  if (train_split.empty()) throw ValidationError(cfg.train.string() + ": training split is empty");
  reject_issues(train_split, input_catalog, cfg.train);
  reject_issues(test_split, input_catalog, cfg.test);
  for (const auto& name : cfg.evaluation.unseen) input_catalog.require_index(name);

  json inputs = {{"config", sha256_hex(cfg.snapshot.dump())},
                 {"train", file_fingerprint(cfg.train)},
                 {"test", file_fingerprint(cfg.test)},
                 {"catalog", file_fingerprint(cfg.catalog)},
                 {"template", file_fingerprint(cfg.prompt_template)}};
  if (cfg.dev) inputs["dev"] = file_fingerprint(*cfg.dev);
  if (cfg.descriptions.stub) inputs["stub"] = file_fingerprint(*cfg.descriptions.stub);

  const auto dir = options.run_dir;
  fs::create_directories(dir);
  RunLock lock(dir);

  json manifest = load_manifest(dir);
  bool invalidated = false;
  if (manifest.is_null()) {
    manifest = {{"run_id", sha256_hex(cfg.snapshot.dump() + now_utc()).substr(0, 16)},
                {"created_at", now_utc()},
                {"config", cfg.snapshot},
                {"inputs", inputs},
                {"artifacts",
                 {{"catalog", "catalog.json"},
                  {"prompts", "prompts"},
                  {"model", "artifacts"},
                  {"predictions", "predictions.jsonl"},
                  {"report", "report.json"}}},
                {"stages", json::array()}};
  } else if (manifest.value("inputs", json::object()) != inputs) {
    if (!options.force) {
      throw ValidationError("inputs or config changed since the last run in " + dir.string() +
                            "; rerun with --force to start over");
    }
    manifest["inputs"] = inputs;
    manifest["config"] = cfg.snapshot;
    manifest["stages"].push_back({{"stage", "all"}, {"status", "invalidated"}, {"at", now_utc()}});
    invalidated = true;
  }
  save_manifest(dir, manifest);

  RunSummary summary;
  bool upstream_executed = invalidated;
  for (auto stage : kStages) {
    const std::string name(to_string(stage));
    if (stage == Stage::prepare_descriptions && !cfg.descriptions.enabled) {
      summary.outcomes.push_back({stage, "disabled"});
    } else {
      const json* prev = last_record(manifest, stage);
      if (!upstream_executed && prev && outputs_intact(dir, *prev)) {
        say(options, "[" + name + "] skipped (completed earlier)");
        summary.outcomes.push_back({stage, "skipped"});
      } else {
        say(options, "[" + name + "] running");
        json record = {{"stage", name}, {"started_at", now_utc()}};
        std::vector<std::string> outputs;
        try {
          switch (stage) {
            case Stage::prepare_descriptions: {
              auto client = make_client(cfg.descriptions);
              auto outcome = refine_catalog(input_catalog, train_split, *client, cfg.descriptions.refine);
              for (const auto& w : outcome.warnings) say(options, "  warning: " + w);
              fs::create_directories(dir / "descriptions");
              save_catalog(dir / "descriptions" / "catalog.json", outcome.catalog);
              json log = json::array();
              for (const auto& l : outcome.labels) {
                log.push_back({{"label", l.label}, {"attempts", l.attempts}, {"refined", l.refined}, {"skipped", l.skipped}});
              }
              write_file_atomic(dir / "descriptions" / "log.json",
                                json({{"labels", log}, {"warnings", outcome.warnings}, {"retries", outcome.retries()}}).dump(2) + "\n");
              outputs = {"descriptions/catalog.json", "descriptions/log.json"};
              break;
            }
            case Stage::build_prompts: {
              const auto catalog = cfg.descriptions.enabled
                                       ? load_catalog(dir / "descriptions" / "catalog.json").with_seed_fallback()
                                       : input_catalog;
              save_catalog(dir / "catalog.json", catalog);
              for (const auto& w : lint_boundaries(catalog)) {
                say(options, "  warning: description of '" + w.label + "' splits into " +
                                 std::to_string(w.pieces) + " sentences");
              }
              std::vector<std::string> warnings;
              fs::create_directories(dir / "prompts");
              save_records(dir / "prompts" / "train.jsonl",
                           build_records(train_split, catalog, tmpl, cfg.max_target_tokens, &warnings));
              save_records(dir / "prompts" / "test.jsonl", build_records(test_split, catalog, tmpl, 0));
              for (const auto& w : warnings) say(options, "  warning: " + w);
              outputs = {"catalog.json", "prompts/train.jsonl", "prompts/test.jsonl"};
              break;
            }
            case Stage::train: {
              const auto catalog = load_catalog(dir / "catalog.json");
              const auto records = load_records(dir / "prompts" / "train.jsonl");
              const auto config = resolve_budgets(cfg.training, records);
              auto models = make_models(config, build_vocabulary(records, &catalog));
              say(options, "  trainable fraction " +
                               std::to_string(models.generator->parameter_count().trainable_fraction()));
              auto artifacts = train(config, records, *models.generator, *models.encoder, [&](const EpochLog& e) {
                std::ostringstream line;
                line << "  epoch " << e.epoch << " hybrid " << e.hybrid << " lambda " << e.lambda;
                say(options, line.str());
              });
              fs::remove_all(dir / "artifacts");
              save_artifacts(dir / "artifacts", models, artifacts);
              outputs = {"artifacts"};
              break;
            }
            case Stage::predict: {
              const auto catalog = load_catalog(dir / "catalog.json");
              auto models = load_artifacts(dir / "artifacts");
              const auto labmat = embed_catalog(*models.encoder, catalog);
              std::vector<MatchResult> results;
              for (const auto& doc : test_split.documents) {
                results.push_back(predict(doc, *models.generator, *models.encoder, catalog, labmat, tmpl,
                                          models.config.max_output_tokens, cfg.threshold));
              }
              save_predictions(dir / "predictions.jsonl", results, catalog);
              outputs = {"predictions.jsonl"};
              break;
            }
            case Stage::evaluate: {
              const auto catalog = load_catalog(dir / "catalog.json");
              const auto preds = align(test_split, load_predictions(dir / "predictions.jsonl", catalog));
              const auto report = evaluate(preds, catalog, &train_split, cfg.evaluation);
              write_file_atomic(dir / "report.json", report_to_json(report).dump(2) + "\n");
              say(options, "  micro_f1 " + std::to_string(report.overall.micro_f1) + " macro_f1 " +
                               std::to_string(report.overall.macro_f1));
              outputs = {"report.json"};
              break;
            }
          }
        } catch (const std::exception& e) {
          record["status"] = "failed";
          record["finished_at"] = now_utc();
          record["error"] = e.what();
          manifest["stages"].push_back(record);
          save_manifest(dir, manifest);
          if (dynamic_cast<const StageError*>(&e)) throw;
          throw StageError(name, e.what());
        }
        json fps = json::object();
        for (const auto& o : outputs) fps[o] = fingerprint(dir / o);
        record["status"] = "completed";
        record["finished_at"] = now_utc();
        record["outputs"] = fps;
        manifest["stages"].push_back(record);
        save_manifest(dir, manifest);
        upstream_executed = true;
        summary.outcomes.push_back({stage, "executed"});
      }
    }
    if (options.until && *options.until == stage) break;
  }
  summary.manifest = manifest;
  return summary;
}

InspectResult inspect_run(const fs::path& run_dir) {
  InspectResult out;
  if (!fs::exists(run_dir / kManifest)) {
    out.text = "no manifest in " + run_dir.string() + "\n";
    return out;
  }
  json manifest;
  try {
    manifest = load_manifest(run_dir);
  } catch (const std::exception& e) {
    out.text = std::string("cannot read manifest: ") + e.what() + "\n";
    return out;
  }

  std::ostringstream s;
  s << "run " << manifest.value("run_id", "?") << " created " << manifest.value("created_at", "?") << "\n";
  s << "stages:\n";
  const bool descriptions = manifest.value("config", json::object())
                                .value("descriptions", json::object())
                                .value("enabled", manifest["config"].contains("descriptions"));
  for (auto stage : kStages) {
    std::string status = "pending";
    if (stage == Stage::prepare_descriptions && !descriptions) status = "disabled";
    if (const json* r = last_record(manifest, stage)) status = r->value("status", "unknown");
    s << "  " << std::left << std::setw(22) << to_string(stage) << status << "\n";
  }
  try {
    if (fs::exists(run_dir / "artifacts" / "log.jsonl")) {
      const auto log = load_training_log(run_dir / "artifacts");
      if (!log.empty()) {
        s << "training: " << log.size() << " epochs, hybrid loss " << log.front().hybrid << " -> "
          << log.back().hybrid << ", lambda " << log.back().lambda << "\n";
      }
    }
    if (fs::exists(run_dir / "report.json")) {
      const auto report = json::parse(read_file(run_dir / "report.json"));
      s << "micro_f1 " << report.at("micro_f1").get<double>() << "\n";
      s << "macro_f1 " << report.at("macro_f1").get<double>() << "\n";
    }
  } catch (const std::exception& e) {
    s << "warning: " << e.what() << "\n";
  }
  out.ok = true;
  out.text = s.str();
  return out;
}

}  // namespace lagamc
