#include "lagamc/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace lagamc {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ag::Matrix uniform(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  ag::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
  return m;
}

ag::Matrix normal(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
  return m;
}

std::size_t count(const ag::Var& v) { return v ? v.size() : 0; }

enum Salt : std::uint64_t {
  kEmbedding = 1,
  kContext = 2,
  kInputGates = 3,
  kContextGates = 4,
  kRecurrent = 5,
  kOutput = 6,
  kEncoderTable = 7,
};

}  // namespace

LoraLinear::LoraLinear(std::size_t in, std::size_t out, std::size_t rank, double alpha,
                       std::uint64_t seed, bool train_base)
    : rank_(rank), scale_(rank > 0 ? alpha / static_cast<double>(rank) : 0.0) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  weight = ag::Var(uniform(in, out, bound, seed), train_base);
  bias = ag::Var(ag::Matrix::Zero(1, static_cast<Eigen::Index>(out)), train_base);
  if (rank > 0) {
    lora_a = ag::Var::parameter(
        uniform(in, rank, 1.0 / std::sqrt(static_cast<double>(in)), derive_seed(seed, 99)));
    lora_b = ag::Var::parameter(ag::Matrix::Zero(static_cast<Eigen::Index>(rank),
                                                 static_cast<Eigen::Index>(out)));
  }
}

ag::Var LoraLinear::forward(const ag::Var& x) const {
  auto y = ag::add_row(ag::matmul(x, weight), bias);
  if (rank_ > 0) y = ag::add(y, ag::scale(ag::matmul(ag::matmul(x, lora_a), lora_b), scale_));
  return y;
}

std::vector<ag::Var> LoraLinear::trainable() const {
  std::vector<ag::Var> out;
  for (const auto& v : all()) {
    if (v.requires_grad()) out.push_back(v);
  }
  return out;
}

std::vector<ag::Var> LoraLinear::all() const {
  std::vector<ag::Var> out{weight, bias};
  if (rank_ > 0) {
    out.push_back(lora_a);
    out.push_back(lora_b);
  }
  return out;
}

ReferenceGenerator::ReferenceGenerator(std::shared_ptr<const Vocabulary> vocab,
                                       ReferenceGeneratorConfig config)
    : vocab_(std::move(vocab)), config_(config) {
  if (!vocab_) throw std::invalid_argument("generator needs a vocabulary");
  if (config_.hidden == 0) throw std::invalid_argument("generator hidden size must be positive");
  const auto h = config_.hidden;
  const auto v = vocab_->size();
  const bool full = config_.lora_rank == 0;
  const auto rank = config_.lora_rank;
  const auto alpha = config_.lora_alpha;
  const auto seed = config_.seed;

  embedding_ = ag::Var(normal(v, h, 1.0 / std::sqrt(static_cast<double>(h)), derive_seed(seed, kEmbedding)), full);
  context_proj_ = LoraLinear(h, h, rank, alpha, derive_seed(seed, kContext), full);
  input_gates_ = LoraLinear(h, 3 * h, 0, alpha, derive_seed(seed, kInputGates), full);
  context_gates_ = LoraLinear(h, 3 * h, 0, alpha, derive_seed(seed, kContextGates), full);
  recurrent_ = LoraLinear(h, 3 * h, rank, alpha, derive_seed(seed, kRecurrent), full);
  output_ = LoraLinear(h, v, 0, alpha, derive_seed(seed, kOutput), full);
}

std::vector<std::pair<std::string, const LoraLinear*>> ReferenceGenerator::layers() const {
  return {{"context_proj", &context_proj_},
          {"input_gates", &input_gates_},
          {"context_gates", &context_gates_},
          {"recurrent", &recurrent_},
          {"output", &output_}};
}

std::vector<int> ReferenceGenerator::prompt_ids(std::string_view prompt) const {
  auto ids = vocab_->encode(prompt);
  if (config_.max_input_tokens > 0 && ids.size() > config_.max_input_tokens) {
    ids.resize(config_.max_input_tokens);
  }
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

ag::Var ReferenceGenerator::context(const std::vector<int>& prompt) const {
  auto pooled = ag::mean_rows(ag::gather_rows(embedding_, prompt));
  return ag::tanh(context_proj_.forward(pooled));
}

ag::Var ReferenceGenerator::step(const ag::Var& gx, const ag::Var& hidden) const {
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  auto gh = recurrent_.forward(hidden);
  auto z = ag::sigmoid(ag::add(ag::slice_cols(gx, 0, h), ag::slice_cols(gh, 0, h)));
  auto r = ag::sigmoid(ag::add(ag::slice_cols(gx, h, h), ag::slice_cols(gh, h, h)));
  auto n = ag::tanh(ag::add(ag::slice_cols(gx, 2 * h, h), ag::mul(r, ag::slice_cols(gh, 2 * h, h))));
  auto keep = ag::add_scalar(ag::scale(z, -1.0), 1.0);
  return ag::add(ag::mul(keep, n), ag::mul(z, hidden));
}

Generator::Forward ReferenceGenerator::forward(std::string_view prompt, std::string_view target) {
  const auto c = context(prompt_ids(prompt));
  auto targets = vocab_->encode(target);
  std::vector<int> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), targets.begin(), targets.end());
  targets.push_back(Vocabulary::kEos);

  auto gates = ag::add_row(input_gates_.forward(ag::gather_rows(embedding_, inputs)),
                           context_gates_.forward(c));
  std::vector<ag::Var> states;
  states.reserve(inputs.size());
  auto hidden = c;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    hidden = step(ag::row(gates, static_cast<Eigen::Index>(s)), hidden);
    states.push_back(hidden);
  }
  auto logits = output_.forward(ag::concat_rows(states));
  return {ag::cross_entropy_rows(logits, targets), ag::softmax_rows(logits)};
}

std::string ReferenceGenerator::generate(std::string_view prompt, std::size_t max_tokens) {
  ag::NoGradGuard no_grad;
  const auto c = context(prompt_ids(prompt));
  const auto ctx_gates = context_gates_.forward(c);
  auto hidden = c;
  int prev = Vocabulary::kBos;
  std::vector<int> out;
  for (std::size_t s = 0; s < max_tokens; ++s) {
    auto gx = ag::add(input_gates_.forward(ag::gather_rows(embedding_, {prev})), ctx_gates);
    hidden = step(gx, hidden);
    const ag::Matrix logits = output_.forward(hidden).value();
    int best = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < logits.cols(); ++t) {
      if (t == Vocabulary::kPad || t == Vocabulary::kBos) continue;
      if (logits(0, t) > best_value) {
        best_value = logits(0, t);
        best = static_cast<int>(t);
      }
    }
    if (best < 0 || best == Vocabulary::kEos) break;
    out.push_back(best);
    prev = best;
  }
  return vocab_->decode(out);
}

std::vector<std::pair<std::string, ag::Var>> ReferenceGenerator::named_trainable() {
  std::vector<std::pair<std::string, ag::Var>> out;
  if (embedding_.requires_grad()) out.emplace_back("embedding", embedding_);
  for (const auto& [name, layer] : layers()) {
    if (layer->weight.requires_grad()) {
      out.emplace_back(name + ".weight", layer->weight);
      out.emplace_back(name + ".bias", layer->bias);
    }
    if (layer->adapted()) {
      out.emplace_back(name + ".lora_a", layer->lora_a);
      out.emplace_back(name + ".lora_b", layer->lora_b);
    }
  }
  return out;
}

std::vector<ag::Var> ReferenceGenerator::trainable_parameters() {
  std::vector<ag::Var> out;
  for (auto& [name, v] : named_trainable()) out.push_back(v);
  return out;
}

ParameterCount ReferenceGenerator::parameter_count() const {
  ParameterCount pc;
  pc.total += count(embedding_);
  if (embedding_.requires_grad()) pc.trainable += count(embedding_);
  for (const auto& [name, layer] : layers()) {
    for (const auto& v : layer->all()) {
      pc.total += count(v);
      if (v.requires_grad()) pc.trainable += count(v);
    }
  }
  return pc;
}

ReferenceEncoder::ReferenceEncoder(std::shared_ptr<const Vocabulary> vocab,
                                   ReferenceEncoderConfig config)
    : vocab_(std::move(vocab)), config_(config) {
  if (!vocab_) throw std::invalid_argument("encoder needs a vocabulary");
  if (config_.dim == 0) throw std::invalid_argument("encoder dimension must be positive");
  const auto v = vocab_->size();
  const auto d = config_.dim;
  table_ = ag::Var(normal(v, d, 1.0 / std::sqrt(static_cast<double>(d)),
                          derive_seed(config_.seed, kEncoderTable)),
                   config_.trainable);
  projection_ = ag::Var(ag::Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)),
                        config_.trainable);
  ag::Matrix mask = ag::Matrix::Ones(1, static_cast<Eigen::Index>(v));
  for (int id : {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kEos}) mask(0, id) = 0.0;
  content_mask_ = ag::constant(std::move(mask));
}

ag::Var ReferenceEncoder::from_counts(const ag::Var& counts) const {
  auto masked = ag::mul(counts, content_mask_);
  if (masked.value().sum() <= 1e-12) {
    ag::Matrix sentinel = ag::Matrix::Zero(1, counts.cols());
    sentinel(0, Vocabulary::kUnk) = 1.0;
    masked = ag::add(masked, ag::constant(std::move(sentinel)));
  }
  return ag::l2_normalize(ag::matmul(ag::matmul(masked, table_), projection_));
}

ag::Var ReferenceEncoder::embed(std::string_view text) {
  ag::Matrix counts = ag::Matrix::Zero(1, static_cast<Eigen::Index>(vocab_->size()));
  for (int id : vocab_->encode(text)) counts(0, id) += 1.0;
  return from_counts(ag::constant(std::move(counts)));
}

ag::Var ReferenceEncoder::embed_soft(const ag::Var& distributions) {
  if (static_cast<std::size_t>(distributions.cols()) != vocab_->size()) {
    throw std::invalid_argument("embed_soft: distributions do not match the encoder vocabulary");
  }
  return from_counts(ag::sum_rows(distributions));
}

std::vector<ag::Var> ReferenceEncoder::trainable_parameters() {
  if (!config_.trainable) return {};
  return {table_, projection_};
}

std::vector<std::pair<std::string, ag::Var>> ReferenceEncoder::named_parameters() {
  return {{"table", table_}, {"projection", projection_}};
}

nlohmann::json matrix_to_json(const ag::Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

ag::Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::invalid_argument("matrix payload size mismatch");
  }
  ag::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

}  // namespace lagamc
