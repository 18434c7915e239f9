#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lagamc/error.hpp"
#include "lagamc/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lagamc;
using ag::Matrix;

namespace {

Matrix row2(double a, double b) {
  Matrix m(1, 2);
  m << a, b;
  return m;
}

/// Emits a fixed string and a cross-entropy chosen by the test.
class FixedGenerator : public Generator {
 public:
  FixedGenerator(std::shared_ptr<Vocabulary> vocab, std::string output, double ce)
      : vocab_(std::move(vocab)), output_(std::move(output)), ce_(ce) {}
  Forward forward(std::string_view, std::string_view target) override {
    const auto ids = vocab_->encode(target);
    Matrix dist = Matrix::Zero(static_cast<Eigen::Index>(ids.size() + 1),
                               static_cast<Eigen::Index>(vocab_->size()));
    for (std::size_t i = 0; i < ids.size(); ++i) dist(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
    dist(static_cast<Eigen::Index>(ids.size()), Vocabulary::kEos) = 1.0;
    return {ag::add(ag::constant(Matrix::Constant(1, 1, ce_)), ag::scale(ag::sum(bias_), 0.0)),
            ag::constant(dist)};
  }
  std::string generate(std::string_view, std::size_t) override { return output_; }
  std::vector<ag::Var> trainable_parameters() override { return {bias_}; }
  ParameterCount parameter_count() const override { return {1, 1}; }
  const Vocabulary& vocabulary() const override { return *vocab_; }

 private:
  std::shared_ptr<Vocabulary> vocab_;
  std::string output_;
  double ce_;
  ag::Var bias_ = ag::Var::parameter(Matrix::Zero(1, 1));
};

std::vector<PromptRecord> toy_records() {
  const auto train = load_dataset(testing::toy_dir() / "train.jsonl");
  const auto catalog = load_catalog(testing::toy_dir() / "catalog.json");
  return build_records(train, catalog, load_template(testing::toy_dir() / "template.json"), 0);
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 8;
  c.learning_rate = 0.01;
  c.encoder_learning_rate = 2e-4;
  c.lora_rank = 0;
  c.hidden_size = 24;
  c.encoder_dim = 16;
  c.max_input_tokens = 48;
  c.max_output_tokens = 24;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("semantic loss examples") {
  CHECK(semantic_loss(row2(1, 0), row2(1, 0)) == doctest::Approx(0.0));
  CHECK(semantic_loss(row2(1, 0), row2(-1, 0)) == doctest::Approx(2.0));
  const double h = std::sqrt(0.5);
  CHECK(semantic_loss(row2(1, 0), row2(h, h)) == doctest::Approx(1.0 - h).epsilon(1e-12));
  CHECK(std::abs(semantic_loss(row2(1, 0), row2(h, h)) - 0.29289) < 1e-5);
  CHECK_THROWS_AS(semantic_loss(row2(1, 0), Matrix::Ones(1, 3)), ValidationError);
  CHECK_THROWS_AS(semantic_loss(row2(0, 0), row2(1, 0)), ValidationError);
  const auto v = semantic_loss(ag::constant(row2(1, 0)), ag::constant(row2(h, h)));
  CHECK(v.scalar() == doctest::Approx(1.0 - h));
}

TEST_CASE("hybrid loss examples and limits") {
  CHECK(hybrid_loss(2.0, 0.5, MixingWeight(0.5)) == doctest::Approx(1.25));
  CHECK(hybrid_loss(2.0, 0.5, MixingWeight::from_raw(40.0)) == doctest::Approx(2.0));
  CHECK(hybrid_loss(2.0, 0.5, MixingWeight::from_raw(-40.0)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(hybrid_loss(std::nan(""), 0.5, MixingWeight()), ValidationError);
  CHECK_THROWS_AS(hybrid_loss(1.0, std::numeric_limits<double>::infinity(), MixingWeight()),
                  ValidationError);
  CHECK_THROWS_AS(MixingWeight(0.0), ValidationError);
  CHECK_THROWS_AS(MixingWeight(1.0), ValidationError);
}

TEST_CASE("mixing weight is a strictly monotone map into (0, 1)") {
  double prev = 0.0;
  for (double raw = -30.0; raw <= 30.0; raw += 0.5) {
    const double v = MixingWeight::from_raw(raw).value();
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(MixingWeight(0.5).raw() == doctest::Approx(0.0));
  CHECK(MixingWeight(0.3).value() == doctest::Approx(0.3));
}

TEST_CASE("hybrid gradient with respect to the raw weight") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    const double raw = u(rng);
    const double ce = std::abs(u(rng)) + 0.1;
    const double sem = std::abs(u(rng)) / 1.5;
    auto lam = MixingWeight::from_raw(raw);
    hybrid_loss(ag::constant(Matrix::Constant(1, 1, ce)), ag::constant(Matrix::Constant(1, 1, sem)),
                lam)
        .backward();
    const Matrix x = Matrix::Constant(1, 1, raw);
    const Matrix numeric = oracle::finite_difference(
        [&](const Matrix& r) { return hybrid_loss(ce, sem, MixingWeight::from_raw(r(0, 0))); }, x);
    CHECK(lam.parameter().grad()(0, 0) == doctest::Approx(numeric(0, 0)).epsilon(1e-6));
    const double graph = hybrid_loss(ag::constant(Matrix::Constant(1, 1, ce)),
                                     ag::constant(Matrix::Constant(1, 1, sem)), lam)
                             .scalar();
    CHECK(hybrid_loss(ce, sem, lam) == doctest::Approx(graph));
  }
}

TEST_CASE("soft mode gradient on a two-token vocabulary") {
  auto vocab = std::make_shared<Vocabulary>(Vocabulary::build({"x y"}));
  REQUIRE(vocab->size() == 6);
  ReferenceEncoder enc(vocab, {8, true, 11});
  const auto target = enc.embed("x y").value();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix logits(3, static_cast<Eigen::Index>(vocab->size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = n(rng);

  auto x = ag::Var::parameter(logits);
  semantic_loss(enc.embed_soft(ag::softmax_rows(x)), ag::constant(target)).backward();
  const auto f = [&](const Matrix& l) {
    ag::NoGradGuard guard;
    return semantic_loss(enc.embed_soft(ag::softmax_rows(ag::constant(l))).value(), target);
  };
  const Matrix numeric = oracle::finite_difference(f, logits);
  CHECK(x.grad().allFinite());
  CHECK(oracle::relative_error(x.grad(), numeric) < 1e-4);
}

TEST_CASE("perfect generator has zero semantic loss in both modes") {
  auto vocab = std::make_shared<Vocabulary>(Vocabulary::build({"rain falls on the hills."}));
  ReferenceEncoder enc(vocab, {8, true, 1});
  FixedGenerator gen(vocab, "rain falls on the hills.", 0.3);
  const std::string target = "rain falls on the hills.";
  const auto fwd = gen.forward("p", target);
  for (auto mode : {SemanticMode::soft_embedding, SemanticMode::decoded_text}) {
    const auto produced = generated_embedding(gen, enc, "p", fwd, mode, 8);
    CHECK_FALSE(produced.empty_decode);
    CHECK(semantic_loss(produced.vector, enc.embed(target)).scalar() == doctest::Approx(0.0));
  }
  FixedGenerator silent(vocab, "", 0.3);
  const auto empty = generated_embedding(silent, enc, "p", fwd, SemanticMode::decoded_text, 8);
  CHECK(empty.empty_decode);
  CHECK(empty.vector.value().norm() == doctest::Approx(1.0));
}

TEST_CASE("config parsing") {
  const auto c = load_train_config(testing::source_dir() / "configs" / "toy_train.json");
  CHECK(c.epochs == 20);
  CHECK(c.lora_rank == 0);
  const auto j = train_config_to_json(c);
  CHECK(train_config_to_json(train_config_from_json(j)) == j);
  CHECK_THROWS_AS(train_config_from_json({{"epochz", 3}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"lambda_init", 1.0}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"semantic_mode", "psychic"}}), ValidationError);
  const TrainConfig defaults;
  CHECK(defaults.lora_rank == 2);
  CHECK(defaults.learning_rate == doctest::Approx(2e-4));
  CHECK(defaults.batch_size == 8);
  CHECK(defaults.epochs == 20);
}

TEST_CASE("budgets derive from mean lengths") {
  std::vector<PromptRecord> recs{{"a", "one two three", std::string("x y")},
                                 {"b", "one two three four five six seven eight nine ten",
                                  std::string("x y z.")}};
  TrainConfig c;
  const auto r = resolve_budgets(c, recs);
  CHECK(r.max_input_tokens == 8);
  CHECK(r.max_output_tokens == 8);
  recs[1].prompt += " a b c d e f g h i j k";
  CHECK(resolve_budgets(c, recs).max_input_tokens == 16);
  c.max_input_tokens = 5;
  CHECK(resolve_budgets(c, recs).max_input_tokens == 5);
}

TEST_CASE("zero epochs keeps the initial weights") {
  const auto records = toy_records();
  auto config = small_config();
  config.epochs = 0;
  auto models = make_models(config, build_vocabulary(records));
  const auto before = models.generator->forward(records[0].prompt, *records[0].target)
                          .cross_entropy.scalar();
  const auto out = train(config, records, *models.generator, *models.encoder);
  CHECK(out.log.empty());
  CHECK(out.lambda.value() == doctest::Approx(0.5));
  CHECK(models.generator->forward(records[0].prompt, *records[0].target).cross_entropy.scalar() ==
        before);
}

TEST_CASE("records without targets are rejected") {
  auto records = toy_records();
  records[3].target.reset();
  auto models = make_models(small_config(), build_vocabulary(records));
  CHECK_THROWS_AS(train(small_config(), records, *models.generator, *models.encoder),
                  ValidationError);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const auto records = toy_records();
  const auto config = small_config();
  auto run = [&] {
    auto models = make_models(config, build_vocabulary(records));
    std::size_t callbacks = 0;
    auto out = train(config, records, *models.generator, *models.encoder,
                     [&](const EpochLog&) { ++callbacks; });
    CHECK(callbacks == config.epochs);
    return std::make_pair(out.log, models.generator->generate(records[0].prompt, 16));
  };
  const auto [log, text] = run();
  REQUIRE(log.size() == config.epochs);
  CHECK(log.back().hybrid < log.front().hybrid);
  for (const auto& e : log) {
    CHECK(std::isfinite(e.hybrid));
    CHECK(e.lambda > 0.0);
    CHECK(e.lambda < 1.0);
    CHECK(e.hybrid >= 0.0);
  }
  const auto [log2, text2] = run();
  REQUIRE(log2.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].hybrid == log2[i].hybrid);
  CHECK(text == text2);
}

TEST_CASE("decoded mode trains and counts empty decodes") {
  auto records = toy_records();
  records.resize(8);
  auto config = small_config();
  config.epochs = 1;
  config.semantic_mode = SemanticMode::decoded_text;
  auto models = make_models(config, build_vocabulary(records));
  const auto out = train(config, records, *models.generator, *models.encoder);
  REQUIRE(out.log.size() == 1);
  CHECK(std::isfinite(out.log[0].hybrid));
  CHECK(out.empty_decodes <= records.size());
}

TEST_CASE("non-finite loss raises a stage error") {
  const auto records = toy_records();
  auto vocab = build_vocabulary(records);
  FixedGenerator gen(vocab, "x", std::nan(""));
  ReferenceEncoder enc(vocab, {8, true, 1});
  auto config = small_config();
  config.epochs = 1;
  try {
    train(config, records, gen, enc);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "train");
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("artifacts round trip") {
  auto records = toy_records();
  records.resize(16);
  auto config = small_config();
  config.epochs = 1;
  config.lora_rank = 2;
  auto models = make_models(config, build_vocabulary(records));
  const auto out = train(config, records, *models.generator, *models.encoder);
  testing::TempDir tmp;
  save_artifacts(tmp.path(), models, out);
  for (const auto* f : {"config.json", "vocab.json", "adapters/adapters.json",
                        "encoder/encoder.json", "lambda.json", "log.jsonl"}) {
    CHECK(std::filesystem::exists(tmp / f));
  }
  auto back = load_artifacts(tmp.path());
  CHECK(back.lambda.raw() == out.lambda.raw());
  CHECK(back.generator->generate(records[1].prompt, 12) ==
        models.generator->generate(records[1].prompt, 12));
  CHECK((back.encoder->embed("rain").value() - models.encoder->embed("rain").value()).norm() <
        1e-12);
  CHECK(load_training_log(tmp.path()).size() == 1);
  CHECK_THROWS_AS(load_artifacts(tmp / "missing"), ValidationError);
  std::filesystem::remove(tmp / "lambda.json");
  CHECK_THROWS_AS(load_artifacts(tmp.path()), ValidationError);
}

}  // TEST_SUITE
