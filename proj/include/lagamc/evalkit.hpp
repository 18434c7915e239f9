#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lagamc/catalog.hpp"
#include "lagamc/matcher.hpp"

namespace lagamc {

/// Gold and predicted label-name sets aligned by document.
struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> gold;
  std::vector<std::vector<std::string>> predicted;

  std::size_t size() const noexcept { return ids.size(); }
  void add(std::string id, std::vector<std::string> gold_labels, std::vector<std::string> predicted_labels);
  PredictionSet subset(const std::vector<std::size_t>& rows) const;
};

/// Pairs every gold document with its prediction. Throws ValidationError
/// when the id sets differ.
PredictionSet align(const DatasetSplit& gold, const std::vector<MatchResult>& predictions);

struct LabelScore {
  std::string label;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double f1 = 0.0;
};

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct F1Report {
  std::size_t documents = 0;
  double micro_f1 = 0.0;
  /// Unweighted mean over every catalog label.
  double macro_f1 = 0.0;
  std::vector<LabelScore> per_label;
};

/// Throws ValidationError when a gold or predicted name is not in the catalog.
F1Report compute_f1(const PredictionSet& preds, const LabelCatalog& catalog);

/// Scores restricted to a label subset, on documents whose gold set touches it.
struct LabelSlice {
  std::vector<std::string> labels;
  std::size_t documents = 0;
  /// Macro-F1 over `labels` only; 0 when no document qualifies.
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<LabelScore> per_label;

  bool empty() const noexcept { return documents == 0; }
};

LabelSlice label_slice(const PredictionSet& preds, const LabelCatalog& catalog,
                       const std::vector<std::string>& labels);

/// The ceil(fraction * p) least frequent training labels; ties by catalog
/// index.
std::vector<std::string> rare_labels(const DatasetSplit& train, const LabelCatalog& catalog,
                                     double fraction);
LabelSlice rare_label_slice(const DatasetSplit& train, const PredictionSet& test_preds,
                            const LabelCatalog& catalog, double fraction = 0.15);

struct ZeroShotSplit {
  DatasetSplit train;
  DatasetSplit test;
  /// Catalog order.
  std::vector<std::string> unseen;
};

/// Picks `n_unseen` labels among those present in test and drops every
/// training document that carries one. Throws ValidationError when there are
/// too few candidates or when training would become empty.
ZeroShotSplit zero_shot_split(const DatasetSplit& train, const DatasetSplit& test,
                              const LabelCatalog& catalog, std::size_t n_unseen, std::uint64_t seed);

struct LengthBucket {
  std::vector<std::string> ids;
  double mean_length = 0.0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};

/// Whitespace length of the concatenated gold descriptions.
std::size_t gold_description_length(const std::vector<std::string>& gold, const LabelCatalog& catalog);

/// Documents ranked by (gold description length, id) and cut into
/// `n_buckets` contiguous groups; the first n % n_buckets get one extra.
std::vector<LengthBucket> length_buckets(const PredictionSet& preds, const LabelCatalog& catalog,
                                         std::size_t n_buckets);

struct LabelCountRow {
  std::size_t k = 0;
  std::size_t n_actual = 0;
  std::size_t n_predicted = 0;
};

struct LabelCountTable {
  std::vector<LabelCountRow> rows;
  std::size_t empty_gold = 0;
  std::size_t empty_predictions = 0;
  std::size_t actual_above_max = 0;
  std::size_t predicted_above_max = 0;
};

LabelCountTable label_count_table(const PredictionSet& preds, std::size_t max_k = 5);

struct EvalOptions {
  /// Disabled when unset or when no training split is supplied.
  std::optional<double> rare_fraction = 0.15;
  std::size_t buckets = 4;
  std::size_t max_k = 5;
  std::vector<std::string> unseen;
};

struct EvalReport {
  F1Report overall;
  std::optional<LabelSlice> rare;
  std::vector<LengthBucket> buckets;
  std::optional<LabelSlice> zero_shot;
  LabelCountTable label_counts;
};

EvalReport evaluate(const PredictionSet& preds, const LabelCatalog& catalog, const DatasetSplit* train,
                    const EvalOptions& options);
nlohmann::json report_to_json(const EvalReport& report);

}  // namespace lagamc
