#include "lagamc/matcher.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"

namespace lagamc {

using nlohmann::json;

namespace {

std::vector<SentenceMatch> pick(const Eigen::MatrixXd& sims, std::optional<double> threshold) {
  std::vector<SentenceMatch> out(static_cast<std::size_t>(sims.rows()));
  for (Eigen::Index s = 0; s < sims.rows(); ++s) {
    Eigen::Index best = 0;
    double best_sim = sims(s, 0);
    for (Eigen::Index l = 1; l < sims.cols(); ++l) {
      if (sims(s, l) > best_sim) {
        best_sim = sims(s, l);
        best = l;
      }
    }
    auto& m = out[static_cast<std::size_t>(s)];
    m.similarity = best_sim;
    if (!threshold || best_sim >= *threshold) m.label = static_cast<std::size_t>(best);
  }
  return out;
}

Eigen::MatrixXd embed_all(const std::vector<std::string>& sentences, Encoder& enc) {
  ag::NoGradGuard no_grad;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(sentences.size()), static_cast<Eigen::Index>(enc.dim()));
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = enc.embed(sentences[i]).value().row(0);
  }
  return out;
}

void check_shapes(const Eigen::MatrixXd& sentences, const Eigen::MatrixXd& labels) {
  if (labels.rows() == 0) throw ValidationError("label embedding matrix is empty");
  if (sentences.rows() > 0 && sentences.cols() != labels.cols()) {
    throw ValidationError("sentence and label embeddings differ in dimension");
  }
}

}  // namespace

void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
}

LabelEmbeddingMatrix embed_catalog(Encoder& enc, const LabelCatalog& catalog) {
  if (catalog.empty()) throw ValidationError("cannot embed an empty catalog");
  std::vector<std::string> texts;
  for (const auto& row : catalog.rows()) {
    if (trim(row.refined_text).empty()) {
      throw ValidationError("label '" + row.name + "' has no refined description");
    }
    texts.push_back(row.refined_text);
  }
  return {embed_all(texts, enc), catalog.content_hash()};
}

std::vector<SentenceMatch> match_embeddings_batch(const Eigen::MatrixXd& sentences,
                                                  const Eigen::MatrixXd& labels,
                                                  std::optional<double> threshold) {
  check_shapes(sentences, labels);
  if (sentences.rows() == 0) return {};
  Eigen::MatrixXd sims = sentences * labels.transpose();
  return pick(sims, threshold);
}

std::vector<SentenceMatch> match_embeddings_sequential(const Eigen::MatrixXd& sentences,
                                                       const Eigen::MatrixXd& labels,
                                                       std::optional<double> threshold) {
  check_shapes(sentences, labels);
  const auto n = static_cast<std::size_t>(sentences.rows());
  const auto p = static_cast<std::size_t>(labels.rows());
  const auto d = static_cast<std::size_t>(labels.cols());
  // Row-major copies so each dot product walks contiguous memory.
  std::vector<double> s(n * d), l(p * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) s[i * d + k] = sentences(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < d; ++k) l[j * d + k] = labels(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }

  std::vector<SentenceMatch> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_sim = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += s[i * d + k] * l[j * d + k];
      if (j == 0 || dot > best_sim) {
        best_sim = dot;
        best = j;
      }
    }
    out[i].similarity = best_sim;
    if (!threshold || best_sim >= *threshold) out[i].label = best;
  }
  return out;
}

std::vector<SentenceMatch> match_batch(const std::vector<std::string>& sentences, Encoder& enc,
                                       const LabelEmbeddingMatrix& labmat,
                                       std::optional<double> threshold) {
  if (labmat.size() == 0) throw ValidationError("label embedding matrix is empty");
  if (sentences.empty()) return {};
  return match_embeddings_batch(embed_all(sentences, enc), labmat.rows, threshold);
}

std::vector<SentenceMatch> match_sequential(const std::vector<std::string>& sentences, Encoder& enc,
                                            const LabelEmbeddingMatrix& labmat,
                                            std::optional<double> threshold) {
  if (labmat.size() == 0) throw ValidationError("label embedding matrix is empty");
  if (sentences.empty()) return {};
  return match_embeddings_sequential(embed_all(sentences, enc), labmat.rows, threshold);
}

MatchResult match_generated(const std::string& document_id, const std::string& generated,
                            Encoder& enc, const LabelCatalog& catalog,
                            const LabelEmbeddingMatrix& labmat, std::optional<double> threshold) {
  MatchResult out;
  out.document_id = document_id;
  const auto sentences = split_generated(generated);
  const auto matches = match_batch(sentences, enc, labmat, threshold);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.sentences.push_back({sentences[i], matches[i].label, matches[i].similarity});
    if (!matches[i].label) continue;
    const auto& name = catalog.description(*matches[i].label).name;
    if (std::find(out.predicted_labels.begin(), out.predicted_labels.end(), name) ==
        out.predicted_labels.end()) {
      out.predicted_labels.push_back(name);
    }
  }
  return out;
}

MatchResult predict(const Document& doc, Generator& gen, Encoder& enc, const LabelCatalog& catalog,
                    const LabelEmbeddingMatrix& labmat, const PromptTemplate& tmpl,
                    std::size_t max_output_tokens, std::optional<double> threshold) {
  if (labmat.catalog_hash != catalog.content_hash()) {
    throw ValidationError("label embeddings were built from a different catalog");
  }
  const auto prompt = build_prompt(tmpl, doc);
  std::string generated;
  try {
    generated = gen.generate(prompt, max_output_tokens);
  } catch (const std::exception& e) {
    throw StageError("predict", "generation failed for document " + doc.id + ": " + e.what());
  }
  return match_generated(doc.id, generated, enc, catalog, labmat, threshold);
}

json match_result_to_json(const MatchResult& result, const LabelCatalog& catalog) {
  json sentences = json::array();
  for (const auto& s : result.sentences) {
    sentences.push_back({{"text", s.text},
                         {"label", s.label ? json(catalog.description(*s.label).name) : json(nullptr)},
                         {"similarity", s.similarity}});
  }
  return {{"id", result.document_id}, {"sentences", std::move(sentences)}, {"labels", result.predicted_labels}};
}

MatchResult match_result_from_json(const json& j, const LabelCatalog& catalog) {
  MatchResult out;
  try {
    out.document_id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (j.contains("sentences")) {
      for (const auto& s : j.at("sentences")) {
        MatchedSentence m{s.at("text").get<std::string>(), std::nullopt, s.at("similarity").get<double>()};
        if (!s.at("label").is_null()) m.label = catalog.require_index(s.at("label").get<std::string>());
        out.sentences.push_back(std::move(m));
      }
    }
    for (const auto& name : j.at("labels")) {
      const auto n = name.get<std::string>();
      catalog.require_index(n);
      if (std::find(out.predicted_labels.begin(), out.predicted_labels.end(), n) == out.predicted_labels.end()) {
        out.predicted_labels.push_back(n);
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed prediction record: ") + e.what());
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<MatchResult>& results,
                      const LabelCatalog& catalog) {
  std::string out;
  for (const auto& r : results) out += match_result_to_json(r, catalog).dump() + "\n";
  write_file_atomic(path, out);
}

std::vector<MatchResult> load_predictions(const std::filesystem::path& path, const LabelCatalog& catalog) {
  std::istringstream in(read_file(path));
  std::vector<MatchResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(match_result_from_json(json::parse(line), catalog));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

BenchmarkResult benchmark_matcher(std::size_t sentences, std::size_t labels, std::size_t dim,
                                  std::uint64_t seed) {
  if (labels == 0 || dim == 0) throw ValidationError("benchmark needs at least one label and dimension");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  auto random_unit = [&](std::size_t rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
    }
    normalize_rows(m);
    return m;
  };
  const auto s = random_unit(sentences);
  const auto l = random_unit(labels);

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto batched = match_embeddings_batch(s, l, std::nullopt);
  const auto t1 = clock::now();
  const auto sequential = match_embeddings_sequential(s, l, std::nullopt);
  const auto t2 = clock::now();

  BenchmarkResult out{sentences, labels, dim,
                      std::chrono::duration<double>(t1 - t0).count(),
                      std::chrono::duration<double>(t2 - t1).count(), true};
  for (std::size_t i = 0; i < batched.size(); ++i) {
    if (batched[i].label != sequential[i].label ||
        std::abs(batched[i].similarity - sequential[i].similarity) > 1e-6) {
      out.outputs_agree = false;
      break;
    }
  }
  return out;
}

json benchmark_to_json(const BenchmarkResult& r) {
  return {{"sentences", r.sentences},
          {"labels", r.labels},
          {"dim", r.dim},
          {"batched_seconds", r.batched_seconds},
          {"sequential_seconds", r.sequential_seconds},
          {"speedup", r.speedup()},
          {"outputs_agree", r.outputs_agree}};
}

}  // namespace lagamc
