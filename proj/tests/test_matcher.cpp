#include <doctest.h>

#include <random>

#include "lagamc/error.hpp"
#include "lagamc/matcher.hpp"
#include "lagamc/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lagamc;
using Eigen::MatrixXd;

namespace {

MatrixXd raw_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

MatrixXd unit(MatrixXd m) {
  normalize_rows(m);
  return m;
}

MatrixXd random_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  return unit(raw_rows(n, d, rng));
}

const std::vector<std::pair<std::string, std::string>> kRows{
    {"Sports", "Sports news about teams, matches and players."},
    {"Weather", "Weather reports on rain, wind and forecasts."},
    {"Finance", "Finance coverage of markets, banks and stocks."},
    {"Health", "Health stories on doctors, patients and medicine."},
};

const std::string kNoise = "purple elephants dance quietly";

struct Fixture {
  LabelCatalog catalog = testing::make_catalog(kRows);
  std::shared_ptr<Vocabulary> vocab;
  std::unique_ptr<ReferenceEncoder> enc;
  LabelEmbeddingMatrix labmat;

  Fixture() {
    std::vector<std::string> texts{kNoise};
    for (const auto& [name, text] : kRows) texts.push_back(text);
    vocab = std::make_shared<Vocabulary>(Vocabulary::build(texts));
    enc = std::make_unique<ReferenceEncoder>(vocab, ReferenceEncoderConfig{64, false, 21});
    labmat = embed_catalog(*enc, catalog);
  }
};

}  // namespace

TEST_SUITE("matcher") {

TEST_CASE("catalog embedding shape, order and determinism") {
  Fixture f;
  CHECK(f.labmat.size() == 4);
  CHECK(f.labmat.rows.cols() == 64);
  for (Eigen::Index i = 0; i < f.labmat.rows.rows(); ++i) {
    CHECK(std::abs(f.labmat.rows.row(i).norm() - 1.0) < 1e-6);
  }
  const auto again = embed_catalog(*f.enc, f.catalog);
  CHECK(again.rows == f.labmat.rows);
  CHECK(again.catalog_hash == f.labmat.catalog_hash);
  CHECK(f.labmat.catalog_hash == f.catalog.content_hash());

  auto reversed_rows = kRows;
  std::reverse(reversed_rows.begin(), reversed_rows.end());
  const auto reversed = embed_catalog(*f.enc, testing::make_catalog(reversed_rows));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(reversed.rows.row(i) == f.labmat.rows.row(3 - i));
  CHECK(reversed.catalog_hash != f.labmat.catalog_hash);
  CHECK_THROWS_AS(embed_catalog(*f.enc, LabelCatalog{}), ValidationError);
}

TEST_CASE("self match and empty input") {
  Fixture f;
  for (std::size_t i = 0; i < kRows.size(); ++i) {
    const auto m = match_batch({kRows[i].second}, *f.enc, f.labmat, std::nullopt);
    REQUIRE(m.size() == 1);
    CHECK(m[0].label == i);
    CHECK(std::abs(m[0].similarity - 1.0) < 1e-5);
  }
  CHECK(match_batch({}, *f.enc, f.labmat, 0.4).empty());
  CHECK(match_sequential({}, *f.enc, f.labmat, 0.4).empty());
}

TEST_CASE("sub-threshold sentence gets no label") {
  Fixture f;
  const auto open = match_batch({kNoise}, *f.enc, f.labmat, std::nullopt);
  REQUIRE(open[0].label.has_value());
  REQUIRE(open[0].similarity < 0.4);
  const auto gated = match_batch({kNoise}, *f.enc, f.labmat, 0.4);
  CHECK_FALSE(gated[0].label.has_value());
  CHECK(gated[0].similarity == doctest::Approx(open[0].similarity));
}

TEST_CASE("batched and sequential paths agree") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = 1 + static_cast<Eigen::Index>(rng() % 200);
    const auto p = 1 + static_cast<Eigen::Index>(rng() % 50);
    const auto d = 1 + static_cast<Eigen::Index>(rng() % 32);
    const auto s = random_rows(n, d, rng);
    const auto l = random_rows(p, d, rng);
    const std::optional<double> threshold =
        trial % 2 ? std::optional<double>(0.2) : std::nullopt;
    const auto a = match_embeddings_batch(s, l, threshold);
    const auto b = match_embeddings_sequential(s, l, threshold);
    REQUIRE(a.size() == static_cast<std::size_t>(n));
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].label == b[i].label);
      CHECK(std::abs(a[i].similarity - b[i].similarity) < 1e-6);
    }
  }
}

TEST_CASE("similarities are cosines within bounds") {
  std::mt19937_64 rng(4);
  const auto s = random_rows(30, 8, rng);
  const auto l = random_rows(6, 8, rng);
  const auto out = match_embeddings_batch(s, l, std::nullopt);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double best = -2.0;
    std::size_t arg = 0;
    for (Eigen::Index j = 0; j < l.rows(); ++j) {
      const double c = oracle::cosine(s.row(i), l.row(j));
      if (c > best) {
        best = c;
        arg = static_cast<std::size_t>(j);
      }
    }
    const auto& m = out[static_cast<std::size_t>(i)];
    CHECK(m.similarity >= -1.0 - 1e-6);
    CHECK(m.similarity <= 1.0 + 1e-6);
    CHECK(m.label == arg);
    CHECK(std::abs(m.similarity - best) < 1e-9);
  }
}

TEST_CASE("ties go to the lowest index") {
  MatrixXd l(3, 2);
  l << 0, 1, 1, 0, 1, 0;
  MatrixXd s(1, 2);
  s << 1, 0;
  CHECK(match_embeddings_batch(s, l, std::nullopt)[0].label == 1);
  CHECK(match_embeddings_sequential(s, l, std::nullopt)[0].label == 1);
}

TEST_CASE("threshold is inclusive and monotone") {
  MatrixXd l(1, 2);
  l << 1, 0;
  MatrixXd s(1, 2);
  s << 0.6, 0.8;
  CHECK(match_embeddings_batch(s, l, 0.6)[0].label == 0);
  CHECK_FALSE(match_embeddings_batch(s, l, 0.6000001)[0].label.has_value());

  std::mt19937_64 rng(8);
  const auto sr = random_rows(100, 6, rng);
  const auto lr = random_rows(10, 6, rng);
  std::vector<bool> prev(100, true);
  for (double t : {-1.0, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    const auto out = match_embeddings_batch(sr, lr, t);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const bool has = out[i].label.has_value();
      CHECK((prev[i] || !has));
      if (has) CHECK(out[i].similarity >= t);
      prev[i] = has;
    }
  }
}

TEST_CASE("positive scaling leaves label choices unchanged") {
  std::mt19937_64 rng(12);
  const auto s = raw_rows(50, 10, rng);
  const auto l = raw_rows(7, 10, rng);
  const auto base = match_embeddings_batch(unit(s), unit(l), std::nullopt);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    const MatrixXd s2 = s * c;
    const MatrixXd l2 = l * (c + 1.0);
    const auto scaled = match_embeddings_batch(unit(s2), unit(l2), std::nullopt);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i].label == base[i].label);
  }
}

TEST_CASE("normalize rows keeps zero rows") {
  MatrixXd m(2, 2);
  m << 3, 4, 0, 0;
  normalize_rows(m);
  CHECK(m(0, 0) == doctest::Approx(0.6));
  CHECK(m.row(1).norm() == 0.0);
}

TEST_CASE("predict through a scripted generator") {
  Fixture f;
  const auto tmpl = testing::semeval_template();
  testing::ScriptedGenerator gen(
      f.vocab, {{"doc one", kRows[0].second + " " + kRows[2].second},
                {"doc two", kRows[1].second + " " + kNoise + "."},
                {"doc three", kRows[3].second + " " + kRows[3].second},
                {"doc four", ""}});

  const auto one = predict(testing::doc("1", "doc one", {}), gen, *f.enc, f.catalog, f.labmat, tmpl,
                           32, 0.4);
  CHECK(one.predicted_labels == std::vector<std::string>{"Sports", "Finance"});

  const auto two = predict(testing::doc("2", "doc two", {}), gen, *f.enc, f.catalog, f.labmat, tmpl,
                           32, 0.4);
  CHECK(two.predicted_labels == std::vector<std::string>{"Weather"});
  REQUIRE(two.sentences.size() == 2);
  CHECK_FALSE(two.sentences[1].label.has_value());

  const auto three = predict(testing::doc("3", "doc three", {}), gen, *f.enc, f.catalog, f.labmat,
                             tmpl, 32, std::nullopt);
  CHECK(three.predicted_labels == std::vector<std::string>{"Health"});
  CHECK(three.sentences.size() == 2);

  const auto four = predict(testing::doc("4", "doc four", {}), gen, *f.enc, f.catalog, f.labmat,
                            tmpl, 32, std::nullopt);
  CHECK(four.predicted_labels.empty());
  CHECK(four.sentences.empty());

  try {
    predict(testing::doc("x9", "unscripted", {}), gen, *f.enc, f.catalog, f.labmat, tmpl, 32,
            std::nullopt);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("x9") != std::string::npos);
  }
}

TEST_CASE("mismatched catalog fingerprint is rejected") {
  Fixture f;
  auto rows = kRows;
  rows[0].second = "Sports coverage.";
  const auto other = testing::make_catalog(rows);
  testing::ScriptedGenerator gen(f.vocab, {{"t", "x"}});
  CHECK_THROWS_AS(predict(testing::doc("1", "t", {}), gen, *f.enc, other, f.labmat,
                          testing::semeval_template(), 8, std::nullopt),
                  ValidationError);
}

TEST_CASE("predictions round trip through jsonl") {
  Fixture f;
  std::vector<MatchResult> results{
      match_generated("a", kRows[0].second + " " + kNoise, *f.enc, f.catalog, f.labmat, 0.4),
      match_generated("b", "", *f.enc, f.catalog, f.labmat, 0.4)};
  testing::TempDir tmp;
  save_predictions(tmp / "p.jsonl", results, f.catalog);
  const auto back = load_predictions(tmp / "p.jsonl", f.catalog);
  REQUIRE(back.size() == 2);
  CHECK(back[0].document_id == "a");
  CHECK(back[0].predicted_labels == results[0].predicted_labels);
  CHECK(back[0].sentences.size() == 2);
  CHECK(back[1].predicted_labels.empty());
}

TEST_CASE("small benchmark agrees") {
  const auto r = benchmark_matcher(200, 30, 16, 1);
  CHECK(r.outputs_agree);
  CHECK(r.batched_seconds > 0.0);
  const auto j = benchmark_to_json(r);
  CHECK(j.contains("speedup"));
}

}  // TEST_SUITE
