#include "lagamc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "lagamc/error.hpp"

namespace lagamc {

using nlohmann::json;

namespace {

std::vector<std::size_t> indices(const std::vector<std::string>& names, const LabelCatalog& catalog) {
  std::vector<std::size_t> out;
  for (const auto& n : names) out.push_back(catalog.require_index(n));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct Counts {
  std::vector<std::size_t> tp, fp, fn;
  explicit Counts(std::size_t p) : tp(p), fp(p), fn(p) {}
};

Counts count(const PredictionSet& preds, const LabelCatalog& catalog) {
  Counts c(catalog.size());
  for (std::size_t d = 0; d < preds.size(); ++d) {
    const auto g = indices(preds.gold[d], catalog);
    const auto p = indices(preds.predicted[d], catalog);
    std::vector<std::size_t> both;
    std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(both));
    for (auto i : both) ++c.tp[i];
    for (auto i : p) {
      if (!std::binary_search(g.begin(), g.end(), i)) ++c.fp[i];
    }
    for (auto i : g) {
      if (!std::binary_search(p.begin(), p.end(), i)) ++c.fn[i];
    }
  }
  return c;
}

LabelScore score(const LabelCatalog& catalog, const Counts& c, std::size_t i) {
  return {catalog.description(i).name, c.tp[i], c.fp[i], c.fn[i], f1_from_counts(c.tp[i], c.fp[i], c.fn[i])};
}

json scores_to_json(const std::vector<LabelScore>& scores) {
  json out = json::array();
  for (const auto& s : scores) {
    out.push_back({{"label", s.label}, {"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}, {"f1", s.f1}});
  }
  return out;
}

json slice_to_json(const LabelSlice& s) {
  return {{"labels", s.labels},
          {"documents", s.documents},
          {"empty", s.empty()},
          {"macro_f1", s.macro_f1},
          {"micro_f1", s.micro_f1},
          {"per_label", scores_to_json(s.per_label)}};
}

}  // namespace

void PredictionSet::add(std::string id, std::vector<std::string> gold_labels,
                        std::vector<std::string> predicted_labels) {
  ids.push_back(std::move(id));
  gold.push_back(std::move(gold_labels));
  predicted.push_back(std::move(predicted_labels));
}

PredictionSet PredictionSet::subset(const std::vector<std::size_t>& rows) const {
  PredictionSet out;
  for (auto r : rows) out.add(ids.at(r), gold.at(r), predicted.at(r));
  return out;
}

PredictionSet align(const DatasetSplit& gold, const std::vector<MatchResult>& predictions) {
  std::unordered_map<std::string, const MatchResult*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.document_id, &p).second) {
      throw ValidationError("duplicate prediction for document " + p.document_id);
    }
  }
  PredictionSet out;
  for (const auto& doc : gold.documents) {
    auto it = by_id.find(doc.id);
    if (it == by_id.end()) throw ValidationError("no prediction for document " + doc.id);
    out.add(doc.id, doc.gold_labels, it->second->predicted_labels);
    by_id.erase(it);
  }
  if (!by_id.empty()) {
    throw ValidationError("prediction for unknown document " + by_id.begin()->first);
  }
  return out;
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const auto denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

F1Report compute_f1(const PredictionSet& preds, const LabelCatalog& catalog) {
  const auto c = count(preds, catalog);
  F1Report out;
  out.documents = preds.size();
  std::size_t tp = 0, fp = 0, fn = 0;
  double macro = 0.0;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    out.per_label.push_back(score(catalog, c, i));
    macro += out.per_label.back().f1;
    tp += c.tp[i];
    fp += c.fp[i];
    fn += c.fn[i];
  }
  out.micro_f1 = f1_from_counts(tp, fp, fn);
  out.macro_f1 = catalog.empty() ? 0.0 : macro / static_cast<double>(catalog.size());
  return out;
}

LabelSlice label_slice(const PredictionSet& preds, const LabelCatalog& catalog,
                       const std::vector<std::string>& labels) {
  LabelSlice out;
  const auto members = indices(labels, catalog);
  for (auto i : members) out.labels.push_back(catalog.description(i).name);

  std::vector<std::size_t> rows;
  for (std::size_t d = 0; d < preds.size(); ++d) {
    const auto g = indices(preds.gold[d], catalog);
    const bool touches = std::any_of(g.begin(), g.end(), [&](std::size_t i) {
      return std::binary_search(members.begin(), members.end(), i);
    });
    if (touches) rows.push_back(d);
  }
  out.documents = rows.size();
  if (rows.empty() || members.empty()) return out;

  const auto c = count(preds.subset(rows), catalog);
  std::size_t tp = 0, fp = 0, fn = 0;
  double macro = 0.0;
  for (auto i : members) {
    out.per_label.push_back(score(catalog, c, i));
    macro += out.per_label.back().f1;
    tp += c.tp[i];
    fp += c.fp[i];
    fn += c.fn[i];
  }
  out.macro_f1 = macro / static_cast<double>(members.size());
  out.micro_f1 = f1_from_counts(tp, fp, fn);
  return out;
}

std::vector<std::string> rare_labels(const DatasetSplit& train, const LabelCatalog& catalog, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("rare fraction must lie in (0, 1]");
  std::vector<std::size_t> freq(catalog.size(), 0);
  for (const auto& doc : train.documents) {
    for (auto i : indices(doc.gold_labels, catalog)) ++freq[i];
  }
  std::vector<std::size_t> order(catalog.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return freq[a] < freq[b]; });
  // The small offset keeps products like 0.15 * 20 from rounding up past 3.
  const auto n = std::min(catalog.size(),
                          static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(catalog.size()) - 1e-9)));
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (auto i : order) out.push_back(catalog.description(i).name);
  return out;
}

LabelSlice rare_label_slice(const DatasetSplit& train, const PredictionSet& test_preds,
                            const LabelCatalog& catalog, double fraction) {
  return label_slice(test_preds, catalog, rare_labels(train, catalog, fraction));
}

ZeroShotSplit zero_shot_split(const DatasetSplit& train, const DatasetSplit& test,
                              const LabelCatalog& catalog, std::size_t n_unseen, std::uint64_t seed) {
  if (n_unseen >= catalog.size() && n_unseen > 0) {
    throw ValidationError("n_unseen must be smaller than the number of labels");
  }
  ZeroShotSplit out{train, test, {}};
  if (n_unseen == 0) return out;

  std::vector<bool> in_test(catalog.size(), false);
  for (const auto& doc : test.documents) {
    for (auto i : indices(doc.gold_labels, catalog)) in_test[i] = true;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (in_test[i]) candidates.push_back(i);
  }
  if (candidates.size() < n_unseen) {
    throw ValidationError("only " + std::to_string(candidates.size()) +
                          " labels occur in test; cannot hold out " + std::to_string(n_unseen));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(n_unseen);
  std::sort(candidates.begin(), candidates.end());
  for (auto i : candidates) out.unseen.push_back(catalog.description(i).name);

  out.train.documents.clear();
  for (const auto& doc : train.documents) {
    const auto g = indices(doc.gold_labels, catalog);
    const bool hit = std::any_of(g.begin(), g.end(), [&](std::size_t i) {
      return std::binary_search(candidates.begin(), candidates.end(), i);
    });
    if (!hit) out.train.documents.push_back(doc);
  }
  if (out.train.documents.empty()) throw ValidationError("holding out the unseen labels empties the training split");
  return out;
}

std::size_t gold_description_length(const std::vector<std::string>& gold, const LabelCatalog& catalog) {
  Document doc;
  doc.gold_labels = gold;
  return whitespace_token_count(build_target(doc, catalog));
}

std::vector<LengthBucket> length_buckets(const PredictionSet& preds, const LabelCatalog& catalog,
                                         std::size_t n_buckets) {
  if (n_buckets == 0) throw ValidationError("n_buckets must be at least 1");
  const auto n = preds.size();
  std::vector<std::size_t> length(n);
  for (std::size_t d = 0; d < n; ++d) length[d] = gold_description_length(preds.gold[d], catalog);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (length[a] != length[b]) return length[a] < length[b];
    return preds.ids[a] < preds.ids[b];
  });

  std::vector<LengthBucket> out;
  std::size_t start = 0;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const auto size = n / n_buckets + (b < n % n_buckets ? 1 : 0);
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(start + size));
    start += size;
    LengthBucket bucket;
    if (!rows.empty()) {
      std::size_t total = 0;
      bucket.min_length = length[rows.front()];
      bucket.max_length = length[rows.back()];
      for (auto r : rows) {
        bucket.ids.push_back(preds.ids[r]);
        total += length[r];
      }
      bucket.mean_length = static_cast<double>(total) / static_cast<double>(rows.size());
      const auto f1 = compute_f1(preds.subset(rows), catalog);
      bucket.micro_f1 = f1.micro_f1;
      bucket.macro_f1 = f1.macro_f1;
    }
    out.push_back(std::move(bucket));
  }
  return out;
}

LabelCountTable label_count_table(const PredictionSet& preds, std::size_t max_k) {
  if (max_k == 0) throw ValidationError("max_k must be at least 1");
  LabelCountTable t;
  for (std::size_t k = 1; k <= max_k; ++k) t.rows.push_back({k, 0, 0});
  auto distinct = [](const std::vector<std::string>& v) {
    return std::set<std::string>(v.begin(), v.end()).size();
  };
  for (std::size_t d = 0; d < preds.size(); ++d) {
    const auto g = distinct(preds.gold[d]);
    const auto p = distinct(preds.predicted[d]);
    if (g == 0) ++t.empty_gold;
    else if (g > max_k) ++t.actual_above_max;
    else ++t.rows[g - 1].n_actual;
    if (p == 0) ++t.empty_predictions;
    else if (p > max_k) ++t.predicted_above_max;
    else ++t.rows[p - 1].n_predicted;
  }
  return t;
}

EvalReport evaluate(const PredictionSet& preds, const LabelCatalog& catalog, const DatasetSplit* train,
                    const EvalOptions& options) {
  EvalReport r;
  r.overall = compute_f1(preds, catalog);
  if (train && options.rare_fraction) r.rare = rare_label_slice(*train, preds, catalog, *options.rare_fraction);
  if (options.buckets > 0) r.buckets = length_buckets(preds, catalog, options.buckets);
  if (!options.unseen.empty()) r.zero_shot = label_slice(preds, catalog, options.unseen);
  r.label_counts = label_count_table(preds, options.max_k);
  return r;
}

json report_to_json(const EvalReport& r) {
  json slices = json::object();
  if (r.rare) slices["rare"] = slice_to_json(*r.rare);
  if (r.zero_shot) slices["zero_shot"] = slice_to_json(*r.zero_shot);
  json buckets = json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"documents", b.ids.size()},
                       {"ids", b.ids},
                       {"mean_length", b.mean_length},
                       {"min_length", b.min_length},
                       {"max_length", b.max_length},
                       {"micro_f1", b.micro_f1},
                       {"macro_f1", b.macro_f1}});
  }
  slices["buckets"] = std::move(buckets);

  json rows = json::array();
  for (const auto& row : r.label_counts.rows) {
    rows.push_back({{"k", row.k}, {"n_actual", row.n_actual}, {"n_predicted", row.n_predicted}});
  }
  return {{"documents", r.overall.documents},
          {"micro_f1", r.overall.micro_f1},
          {"macro_f1", r.overall.macro_f1},
          {"per_label", scores_to_json(r.overall.per_label)},
          {"slices", std::move(slices)},
          {"label_count_table",
           {{"rows", std::move(rows)},
            {"empty_gold", r.label_counts.empty_gold},
            {"empty_predictions", r.label_counts.empty_predictions},
            {"actual_above_max", r.label_counts.actual_above_max},
            {"predicted_above_max", r.label_counts.predicted_above_max}}}};
}

}  // namespace lagamc
