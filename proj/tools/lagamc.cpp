// lagamc: command-line front end for the label-description classification
// pipeline. Exit codes: 0 success, 2 invalid input, 3 stage failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lagamc/catalog.hpp"
#include "lagamc/descgen.hpp"
#include "lagamc/error.hpp"
#include "lagamc/evalkit.hpp"
#include "lagamc/fingerprint.hpp"
#include "lagamc/matcher.hpp"
#include "lagamc/pipeline.hpp"
#include "lagamc/promptkit.hpp"
#include "lagamc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lagamc;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void note(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

void write_json_file(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative multi-label text classification with label descriptions"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the random seed");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  // stats
  auto* stats = app.add_subcommand("stats", "Dataset and catalog statistics");
  std::string st_train, st_test, st_dev, st_catalog;
  stats->add_option("--train", st_train)->required();
  stats->add_option("--test", st_test)->required();
  stats->add_option("--dev", st_dev);
  stats->add_option("--catalog", st_catalog)->required();

  // prepare-descriptions
  auto* prep = app.add_subcommand("prepare-descriptions", "Refine label descriptions with a language model");
  std::string pd_catalog, pd_train, pd_out, pd_stub, pd_endpoint, pd_model, pd_blurb, pd_kind = "Text";
  std::string pd_key_env = "OPENAI_API_KEY";
  std::size_t pd_examples = 2, pd_concurrency = 4;
  int pd_max_tokens = 128, pd_attempts = 3;
  double pd_temperature = 0.7;
  prep->add_option("--catalog", pd_catalog)->required();
  prep->add_option("--train", pd_train)->required();
  prep->add_option("--out", pd_out)->required();
  prep->add_option("--offline-stub,--stub", pd_stub, "Canned responses instead of a live endpoint");
  prep->add_option("--endpoint", pd_endpoint);
  prep->add_option("--model", pd_model);
  prep->add_option("--api-key-env", pd_key_env, "Environment variable holding the API key");
  prep->add_option("--examples", pd_examples);
  prep->add_option("--blurb", pd_blurb, "One-line dataset summary");
  prep->add_option("--example-kind", pd_kind);
  prep->add_option("--max-tokens", pd_max_tokens);
  prep->add_option("--temperature", pd_temperature);
  prep->add_option("--concurrency", pd_concurrency);
  prep->add_option("--max-attempts", pd_attempts);

  // build-prompts
  auto* bp = app.add_subcommand("build-prompts", "Render prompt/target records");
  std::string bp_input, bp_catalog, bp_template, bp_out;
  std::size_t bp_max_target = 0;
  bool bp_no_targets = false;
  bp->add_option("--train,--input", bp_input, "Documents to render")->required();
  bp->add_option("--catalog", bp_catalog)->required();
  bp->add_option("--template", bp_template)->required();
  bp->add_option("--out", bp_out)->required();
  bp->add_option("--max-target-tokens", bp_max_target);
  bp->add_flag("--no-targets", bp_no_targets);

  // train
  auto* tr = app.add_subcommand("train", "Fine-tune the reference generator and encoder");
  std::string tr_config, tr_prompts, tr_out, tr_catalog;
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--prompts", tr_prompts)->required();
  tr->add_option("--out-dir", tr_out)->required();
  tr->add_option("--catalog", tr_catalog, "Extend the vocabulary with every label description");

  // predict
  auto* pr = app.add_subcommand("predict", "Generate descriptions and match them to labels");
  std::string pr_artifacts, pr_catalog, pr_input, pr_out, pr_template;
  std::optional<double> pr_threshold;
  pr->add_option("--artifacts", pr_artifacts)->required();
  pr->add_option("--catalog", pr_catalog)->required();
  pr->add_option("--input", pr_input)->required();
  pr->add_option("--template", pr_template)->required();
  pr->add_option("--out", pr_out)->required();
  pr->add_option("--threshold", pr_threshold);

  // bench-matcher
  auto* bm = app.add_subcommand("bench-matcher", "Time batched against sequential matching");
  std::size_t bm_sentences = 10000, bm_labels = 1000, bm_dim = 1024;
  bm->add_option("--sentences", bm_sentences);
  bm->add_option("--labels", bm_labels);
  bm->add_option("--dim", bm_dim);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predictions");
  std::string ev_gold, ev_pred, ev_catalog, ev_out, ev_train, ev_unseen;
  double ev_rare = 0.15;
  std::size_t ev_buckets = 4, ev_max_k = 5;
  ev->add_option("--gold", ev_gold)->required();
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--catalog", ev_catalog)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--train", ev_train, "Training split, enables the rare-label slice");
  ev->add_option("--rare", ev_rare);
  ev->add_option("--buckets", ev_buckets);
  ev->add_option("--max-k", ev_max_k);
  ev->add_option("--unseen", ev_unseen, "Comma-separated held-out labels");

  // split-zeroshot
  auto* zs = app.add_subcommand("split-zeroshot", "Hold labels out of training");
  std::string zs_train, zs_test, zs_catalog, zs_out;
  std::size_t zs_n = 4;
  std::uint64_t zs_seed = 0;
  zs->add_option("--train", zs_train)->required();
  zs->add_option("--test", zs_test)->required();
  zs->add_option("--catalog", zs_catalog)->required();
  zs->add_option("--n", zs_n);
  zs->add_option("--seed", zs_seed);
  zs->add_option("--out-dir", zs_out)->required();

  // run
  auto* run = app.add_subcommand("run", "Run the whole pipeline");
  std::string run_config, run_dir, run_until;
  bool run_force = false;
  run->add_option("--config", run_config)->required();
  run->add_option("--run-dir", run_dir, "Defaults to runs/<config name>");
  run->add_option("--until", run_until, "Stop after this stage");
  run->add_flag("--force", run_force, "Start over when inputs changed");

  // inspect
  auto* ins = app.add_subcommand("inspect", "Summarise a run directory");
  std::string ins_dir;
  ins->add_option("run_dir", ins_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*stats) {
      const auto catalog = load_catalog(st_catalog);
      const auto train = load_dataset(st_train, {}, SplitKind::train);
      const auto test = load_dataset(st_test, {}, SplitKind::test);
      const auto dev = st_dev.empty() ? DatasetSplit{SplitKind::dev, {}} : load_dataset(st_dev, {}, SplitKind::dev);
      auto out = stats_to_json(compute_stats(train, dev, test, catalog));
      json issues = json::array();
      for (const auto* split : {&train, &dev, &test}) {
        for (const auto& i : validate(*split, catalog)) {
          issues.push_back({{"split", to_string(split->kind)}, {"document", i.document_id},
                            {"kind", to_string(i.kind)}, {"detail", i.detail}});
        }
      }
      out["issues"] = issues;
      std::cout << out.dump(2) << "\n";
    } else if (*prep) {
      const auto catalog = load_catalog(pd_catalog);
      const auto train = load_dataset(pd_train, {}, SplitKind::train);
      std::unique_ptr<GenerationClient> client;
      if (!pd_stub.empty()) {
        client = std::make_unique<StubClient>(StubClient::from_file(pd_stub));
      } else {
        ChatCompletionsClient::Options o;
        if (!pd_endpoint.empty()) o.endpoint = pd_endpoint;
        if (!pd_model.empty()) o.model = pd_model;
        o.api_key_env = pd_key_env;
        client = std::make_unique<ChatCompletionsClient>(o);
      }
      RefineOptions ro;
      ro.examples_per_label = pd_examples;
      ro.seed = g.seed.value_or(0);
      ro.max_tokens = pd_max_tokens;
      ro.temperature = pd_temperature;
      ro.dataset_blurb = pd_blurb;
      ro.example_kind = pd_kind;
      ro.concurrency = pd_concurrency;
      ro.retry.max_attempts = pd_attempts;
      const auto outcome = refine_catalog(catalog, train, *client, ro);
      save_catalog(pd_out, outcome.catalog);
      for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
      note(g, "retries: " + std::to_string(outcome.retries()));
    } else if (*bp) {
      const auto catalog = load_catalog(bp_catalog).with_seed_fallback();
      const auto tmpl = load_template(bp_template);
      tmpl.check();
      auto split = load_dataset(bp_input);
      std::vector<std::string> warnings;
      auto records = build_records(split, catalog, tmpl, bp_max_target, &warnings);
      if (bp_no_targets) {
        for (auto& r : records) r.target.reset();
      }
      for (const auto& w : lint_boundaries(catalog)) {
        std::cerr << "warning: description of '" << w.label << "' splits into " << w.pieces << " sentences\n";
      }
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      save_records(bp_out, records);
    } else if (*tr) {
      auto config = load_train_config(tr_config);
      if (g.seed) config.seed = *g.seed;
      const auto records = load_records(tr_prompts);
      config = resolve_budgets(config, records);
      std::optional<LabelCatalog> catalog;
      if (!tr_catalog.empty()) catalog = load_catalog(tr_catalog).with_seed_fallback();
      auto models = make_models(config, build_vocabulary(records, catalog ? &*catalog : nullptr));
      const auto pc = models.generator->parameter_count();
      note(g, "trainable parameters " + std::to_string(pc.trainable) + " / " + std::to_string(pc.total));
      auto artifacts = train(config, records, *models.generator, *models.encoder, [&](const EpochLog& e) {
        note(g, epoch_log_to_json(e).dump());
      });
      save_artifacts(tr_out, models, artifacts);
    } else if (*pr) {
      const auto catalog = load_catalog(pr_catalog).with_seed_fallback();
      const auto tmpl = load_template(pr_template);
      const auto split = load_dataset(pr_input);
      auto models = load_artifacts(pr_artifacts);
      const auto labmat = embed_catalog(*models.encoder, catalog);
      std::vector<MatchResult> results;
      for (const auto& doc : split.documents) {
        results.push_back(predict(doc, *models.generator, *models.encoder, catalog, labmat, tmpl,
                                  models.config.max_output_tokens, pr_threshold));
      }
      save_predictions(pr_out, results, catalog);
    } else if (*bm) {
      std::cout << benchmark_to_json(benchmark_matcher(bm_sentences, bm_labels, bm_dim, g.seed.value_or(0))).dump(2)
                << "\n";
    } else if (*ev) {
      const auto catalog = load_catalog(ev_catalog);
      const auto gold = load_dataset(ev_gold, {}, SplitKind::test);
      const auto preds = align(gold, load_predictions(ev_pred, catalog));
      EvalOptions options;
      options.rare_fraction = ev_rare;
      options.buckets = ev_buckets;
      options.max_k = ev_max_k;
      options.unseen = split_csv(ev_unseen);
      std::optional<DatasetSplit> train;
      if (!ev_train.empty()) train = load_dataset(ev_train, {}, SplitKind::train);
      const auto report = evaluate(preds, catalog, train ? &*train : nullptr, options);
      write_json_file(ev_out, report_to_json(report));
      std::cout << "micro_f1 " << report.overall.micro_f1 << "\nmacro_f1 " << report.overall.macro_f1 << "\n";
    } else if (*zs) {
      const auto catalog = load_catalog(zs_catalog);
      const auto split = zero_shot_split(load_dataset(zs_train, {}, SplitKind::train),
                                         load_dataset(zs_test, {}, SplitKind::test), catalog, zs_n,
                                         g.seed.value_or(zs_seed));
      fs::create_directories(zs_out);
      save_dataset(fs::path(zs_out) / "train.jsonl", split.train);
      save_dataset(fs::path(zs_out) / "test.jsonl", split.test);
      write_json_file(fs::path(zs_out) / "unseen.json", split.unseen);
      std::cout << json(split.unseen).dump() << "\n";
    } else if (*run) {
      RunOptions options;
      options.run_dir = run_dir.empty() ? fs::path("runs") / fs::path(run_config).stem() : fs::path(run_dir);
      if (!run_until.empty()) options.until = stage_from_string(run_until);
      options.force = run_force;
      options.seed = g.seed;
      options.log = [&](const std::string& m) { std::cerr << m << "\n"; };
      const auto summary = run_pipeline(run_config, options);
      for (const auto& o : summary.outcomes) std::cout << to_string(o.stage) << ": " << o.action << "\n";
      std::cout << "run directory: " << options.run_dir.string() << "\n";
    } else if (*ins) {
      const auto result = inspect_run(ins_dir);
      (result.ok ? std::cout : std::cerr) << result.text;
      return result.ok ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
