#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lagamc/catalog.hpp"
#include "lagamc/model.hpp"
#include "lagamc/promptkit.hpp"

namespace lagamc {

/// One unit-norm row per catalog label, in catalog order.
struct LabelEmbeddingMatrix {
  Eigen::MatrixXd rows;
  std::string catalog_hash;

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
};

/// Throws ValidationError for an empty catalog or a label without any
/// description.
LabelEmbeddingMatrix embed_catalog(Encoder& enc, const LabelCatalog& catalog);

struct SentenceMatch {
  std::optional<std::size_t> label;
  double similarity = 0.0;
};

/// Row-normalises `m` in place. Zero rows stay zero.
void normalize_rows(Eigen::MatrixXd& m);

/// Rows of both matrices are expected to be unit norm, so the single product
/// S * L^T holds cosine similarities. With a threshold, a
/// sentence whose best similarity is below it gets no label. Ties go to the
/// lowest label index.
std::vector<SentenceMatch> match_embeddings_batch(const Eigen::MatrixXd& sentences,
                                                  const Eigen::MatrixXd& labels,
                                                  std::optional<double> threshold);
/// Scalar loops, one dot product at a time. Same contract as the batched
/// version.
std::vector<SentenceMatch> match_embeddings_sequential(const Eigen::MatrixXd& sentences,
                                                       const Eigen::MatrixXd& labels,
                                                       std::optional<double> threshold);

std::vector<SentenceMatch> match_batch(const std::vector<std::string>& sentences, Encoder& enc,
                                       const LabelEmbeddingMatrix& labmat,
                                       std::optional<double> threshold);
std::vector<SentenceMatch> match_sequential(const std::vector<std::string>& sentences, Encoder& enc,
                                            const LabelEmbeddingMatrix& labmat,
                                            std::optional<double> threshold);

struct MatchedSentence {
  std::string text;
  std::optional<std::size_t> label;
  double similarity = 0.0;
};

struct MatchResult {
  std::string document_id;
  std::vector<MatchedSentence> sentences;
  /// Assigned label names, first occurrence order, no repeats.
  std::vector<std::string> predicted_labels;
};

/// Matches already generated text against the label matrix.
MatchResult match_generated(const std::string& document_id, const std::string& generated,
                            Encoder& enc, const LabelCatalog& catalog,
                            const LabelEmbeddingMatrix& labmat, std::optional<double> threshold);

/// Prompt, generate, split and match one document. Throws ValidationError
/// when `labmat` was built from a different catalog and StageError naming the
/// document when generation fails.
MatchResult predict(const Document& doc, Generator& gen, Encoder& enc, const LabelCatalog& catalog,
                    const LabelEmbeddingMatrix& labmat, const PromptTemplate& tmpl,
                    std::size_t max_output_tokens, std::optional<double> threshold);

nlohmann::json match_result_to_json(const MatchResult& result, const LabelCatalog& catalog);
MatchResult match_result_from_json(const nlohmann::json& j, const LabelCatalog& catalog);
void save_predictions(const std::filesystem::path& path, const std::vector<MatchResult>& results,
                      const LabelCatalog& catalog);
std::vector<MatchResult> load_predictions(const std::filesystem::path& path,
                                          const LabelCatalog& catalog);

struct BenchmarkResult {
  std::size_t sentences = 0;
  std::size_t labels = 0;
  std::size_t dim = 0;
  double batched_seconds = 0.0;
  double sequential_seconds = 0.0;
  bool outputs_agree = false;

  double speedup() const { return batched_seconds > 0 ? sequential_seconds / batched_seconds : 0.0; }
};

/// Random unit vectors of the given shape, timed through both paths.
BenchmarkResult benchmark_matcher(std::size_t sentences, std::size_t labels, std::size_t dim,
                                  std::uint64_t seed);
nlohmann::json benchmark_to_json(const BenchmarkResult& result);

}  // namespace lagamc
