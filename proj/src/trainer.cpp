#include "lagamc/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "lagamc/error.hpp"
#include "lagamc/fingerprint.hpp"
#include "lagamc/tokenizer.hpp"

namespace lagamc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::size_t round_up8(double mean) {
  const auto n = static_cast<std::size_t>(std::ceil(mean));
  return std::max<std::size_t>(8, (n + 7) / 8 * 8);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json tensors_to_json(const std::vector<std::pair<std::string, ag::Var>>& named) {
  json out = json::object();
  for (const auto& [name, v] : named) out[name] = matrix_to_json(v.value());
  return out;
}

void tensors_from_json(const json& j, std::vector<std::pair<std::string, ag::Var>> named,
                       const fs::path& where) {
  for (auto& [name, v] : named) {
    if (!j.contains(name)) throw ValidationError(where.string() + ": missing tensor " + name);
    auto m = matrix_from_json(j.at(name));
    if (m.rows() != v.rows() || m.cols() != v.cols()) {
      throw ValidationError(where.string() + ": tensor " + name + " has the wrong shape");
    }
    v.mutable_value() = std::move(m);
  }
}

}  // namespace

std::string_view to_string(SemanticMode mode) {
  return mode == SemanticMode::soft_embedding ? "soft_embedding" : "decoded_text";
}

SemanticMode semantic_mode_from_string(std::string_view text) {
  if (text == "soft_embedding") return SemanticMode::soft_embedding;
  if (text == "decoded_text") return SemanticMode::decoded_text;
  throw ValidationError("unknown semantic_mode: " + std::string(text));
}

void TrainConfig::check() const {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (!(encoder_learning_rate >= 0.0) || !std::isfinite(encoder_learning_rate)) {
    throw ValidationError("encoder_learning_rate must not be negative");
  }
  if (!(lambda_init > 0.0 && lambda_init < 1.0)) {
    throw ValidationError("lambda_init must lie strictly between 0 and 1");
  }
  if (hidden_size == 0) throw ValidationError("hidden_size must be positive");
  if (encoder_dim == 0) throw ValidationError("encoder_dim must be positive");
  if (!(lora_alpha > 0.0)) throw ValidationError("lora_alpha must be positive");
}

json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"encoder_learning_rate", c.encoder_learning_rate},
          {"lora_rank", c.lora_rank},
          {"max_input_tokens", c.max_input_tokens},
          {"max_output_tokens", c.max_output_tokens},
          {"lambda_init", c.lambda_init},
          {"semantic_mode", std::string(to_string(c.semantic_mode))},
          {"seed", c.seed},
          {"hidden_size", c.hidden_size},
          {"encoder_dim", c.encoder_dim},
          {"lora_alpha", c.lora_alpha},
          {"train_encoder", c.train_encoder}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "encoder_learning_rate") c.encoder_learning_rate = value.get<double>();
      else if (key == "lora_rank") c.lora_rank = value.get<std::size_t>();
      else if (key == "max_input_tokens") c.max_input_tokens = value.get<std::size_t>();
      else if (key == "max_output_tokens") c.max_output_tokens = value.get<std::size_t>();
      else if (key == "lambda_init") c.lambda_init = value.get<double>();
      else if (key == "semantic_mode") c.semantic_mode = semantic_mode_from_string(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "hidden_size") c.hidden_size = value.get<std::size_t>();
      else if (key == "encoder_dim") c.encoder_dim = value.get<std::size_t>();
      else if (key == "lora_alpha") c.lora_alpha = value.get<double>();
      else if (key == "train_encoder") c.train_encoder = value.get<bool>();
      else throw ValidationError("unknown train config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.check();
  return c;
}

TrainConfig load_train_config(const fs::path& path) { return train_config_from_json(read_json(path)); }

TrainConfig resolve_budgets(TrainConfig config, const std::vector<PromptRecord>& records) {
  if (records.empty()) return config;
  double in = 0.0;
  double out = 0.0;
  for (const auto& r : records) {
    in += static_cast<double>(split_words(r.prompt).size());
    if (r.target) out += static_cast<double>(split_words(*r.target).size());
  }
  const auto n = static_cast<double>(records.size());
  if (config.max_input_tokens == 0) config.max_input_tokens = round_up8(in / n);
  if (config.max_output_tokens == 0) config.max_output_tokens = round_up8(out / n);
  return config;
}

MixingWeight::MixingWeight(double initial_value) {
  if (!(initial_value > 0.0 && initial_value < 1.0)) {
    throw ValidationError("mixing weight must lie strictly between 0 and 1");
  }
  raw_ = ag::Var::parameter(ag::Matrix::Constant(1, 1, std::log(initial_value / (1.0 - initial_value))));
}

MixingWeight MixingWeight::from_raw(double raw) {
  MixingWeight w;
  w.raw_.mutable_value()(0, 0) = raw;
  return w;
}

double MixingWeight::value() const { return sigmoid(raw()); }

ag::Var MixingWeight::lambda() const { return ag::sigmoid(raw_); }

double semantic_loss(const ag::Matrix& v_gen, const ag::Matrix& v_target) {
  if (v_gen.size() != v_target.size() || v_gen.size() == 0) {
    throw ValidationError("semantic_loss: dimension mismatch");
  }
  if (v_gen.squaredNorm() == 0.0 || v_target.squaredNorm() == 0.0) {
    throw ValidationError("semantic_loss: zero vector");
  }
  const auto a = v_gen.reshaped();
  const auto b = v_target.reshaped();
  return 1.0 - a.dot(b);
}

ag::Var semantic_loss(const ag::Var& v_gen, const ag::Var& v_target) {
  if (v_gen.rows() != v_target.rows() || v_gen.cols() != v_target.cols()) {
    throw ValidationError("semantic_loss: dimension mismatch");
  }
  return ag::add_scalar(ag::scale(ag::dot(v_gen, v_target), -1.0), 1.0);
}

double hybrid_loss(double ce, double sem, const MixingWeight& lam) {
  if (!std::isfinite(ce) || !std::isfinite(sem)) throw ValidationError("hybrid_loss: non-finite input");
  const double l = lam.value();
  return l * ce + (1.0 - l) * sem;
}

ag::Var hybrid_loss(const ag::Var& ce, const ag::Var& sem, const MixingWeight& lam) {
  auto l = lam.lambda();
  return ag::add(ag::mul(l, ce), ag::mul(ag::add_scalar(ag::scale(l, -1.0), 1.0), sem));
}

GeneratedEmbedding generated_embedding(Generator& gen, Encoder& enc, const std::string& prompt,
                                       const Generator::Forward& forward, SemanticMode mode,
                                       std::size_t max_output_tokens) {
  if (mode == SemanticMode::soft_embedding) return {enc.embed_soft(forward.distributions), false};
  const auto text = gen.generate(prompt, max_output_tokens);
  return {enc.embed(text), trim(text).empty()};
}

Adam::Adam(std::vector<ag::Var> params, double learning_rate, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  params_.clear();
  add_group(std::move(params), learning_rate);
}

void Adam::add_group(std::vector<ag::Var> params, double learning_rate) {
  for (auto& p : params) {
    m_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    rates_.push_back(learning_rate);
    params_.push_back(std::move(p));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto& g = p.grad();
    if (g.size() == 0) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    p.mutable_value().array() -=
        rates_[i] * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

json epoch_log_to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"ce", log.ce},
          {"semantic", log.semantic},
          {"hybrid", log.hybrid},
          {"lambda", log.lambda}};
}

EpochLog epoch_log_from_json(const json& j) {
  return {j.at("epoch").get<std::size_t>(), j.at("ce").get<double>(), j.at("semantic").get<double>(),
          j.at("hybrid").get<double>(), j.at("lambda").get<double>()};
}

TrainedArtifacts train(const TrainConfig& config_in, const std::vector<PromptRecord>& records,
                       Generator& gen, Encoder& enc, const EpochCallback& on_epoch) {
  config_in.check();
  for (const auto& r : records) {
    if (!r.target) throw ValidationError("prompt record " + r.document_id + " has no target");
  }
  const auto config = resolve_budgets(config_in, records);

  TrainedArtifacts out{config, MixingWeight(config.lambda_init), {}, gen.parameter_count(), 0};
  if (records.empty() || config.epochs == 0) return out;

  auto params = gen.trainable_parameters();
  params.push_back(out.lambda.parameter());
  Adam opt(params, config.learning_rate);
  opt.add_group(enc.trainable_parameters(),
                config.encoder_learning_rate > 0 ? config.encoder_learning_rate : config.learning_rate);

  std::vector<std::size_t> order(records.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double ce_sum = 0.0, sem_sum = 0.0, hyb_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const auto end = std::min(order.size(), start + config.batch_size);
      opt.zero_grad();
      std::vector<ag::Var> losses;
      for (std::size_t k = start; k < end; ++k) {
        const auto& rec = records[order[k]];
        auto fwd = gen.forward(rec.prompt, *rec.target);
        auto produced = generated_embedding(gen, enc, rec.prompt, fwd, config.semantic_mode,
                                            config.max_output_tokens);
        if (produced.empty_decode) ++out.empty_decodes;
        auto sem = semantic_loss(produced.vector, enc.embed(*rec.target));
        auto hyb = hybrid_loss(fwd.cross_entropy, sem, out.lambda);
        ce_sum += fwd.cross_entropy.scalar();
        sem_sum += sem.scalar();
        hyb_sum += hyb.scalar();
        losses.push_back(hyb);
      }
      auto loss = ag::scale(ag::sum(ag::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
      if (!std::isfinite(loss.scalar())) {
        throw StageError("train", "non-finite loss in epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(batch));
      }
      loss.backward();
      opt.step();
    }
    const auto n = static_cast<double>(records.size());
    EpochLog entry{epoch, ce_sum / n, sem_sum / n, hyb_sum / n, out.lambda.value()};
    out.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return out;
}

std::shared_ptr<Vocabulary> build_vocabulary(const std::vector<PromptRecord>& records,
                                             const LabelCatalog* catalog) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.prompt);
    if (r.target) texts.push_back(*r.target);
  }
  if (catalog) {
    for (const auto& row : catalog->rows()) {
      texts.push_back(row.refined_text.empty() ? row.initial_text : row.refined_text);
    }
  }
  return std::make_shared<Vocabulary>(Vocabulary::build(texts));
}

ReferenceGeneratorConfig generator_config(const TrainConfig& c) {
  return {c.hidden_size, c.lora_rank, c.lora_alpha, c.max_input_tokens, c.seed};
}

ReferenceEncoderConfig encoder_config(const TrainConfig& c) {
  return {c.encoder_dim, c.train_encoder, c.seed ^ 0x5EEDE11C0DE5ULL};
}

ModelBundle make_models(const TrainConfig& config, std::shared_ptr<Vocabulary> vocab) {
  ModelBundle b;
  b.vocab = vocab;
  b.config = config;
  b.generator = std::make_unique<ReferenceGenerator>(vocab, generator_config(config));
  b.encoder = std::make_unique<ReferenceEncoder>(vocab, encoder_config(config));
  b.lambda = MixingWeight(config.lambda_init);
  return b;
}

void save_artifacts(const fs::path& dir, ModelBundle& models, const TrainedArtifacts& artifacts) {
  fs::create_directories(dir / "adapters");
  fs::create_directories(dir / "encoder");
  write_json(dir / "config.json", train_config_to_json(artifacts.config));
  write_json(dir / "vocab.json", models.vocab->to_json());

  const auto pc = models.generator->parameter_count();
  write_json(dir / "adapters" / "adapters.json",
             {{"trainable_parameters", pc.trainable},
              {"total_parameters", pc.total},
              {"tensors", tensors_to_json(models.generator->named_trainable())}});
  write_json(dir / "encoder" / "encoder.json",
             {{"tensors", tensors_to_json(models.encoder->named_parameters())}});
  write_json(dir / "lambda.json", {{"raw", artifacts.lambda.raw()}, {"value", artifacts.lambda.value()}});

  std::string log;
  for (const auto& e : artifacts.log) log += epoch_log_to_json(e).dump() + "\n";
  write_file_atomic(dir / "log.jsonl", log);
}

ModelBundle load_artifacts(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("artifacts directory not found: " + dir.string());
  const auto config = load_train_config(dir / "config.json");
  std::shared_ptr<Vocabulary> vocab;
  try {
    vocab = std::make_shared<Vocabulary>(Vocabulary::from_json(read_json(dir / "vocab.json")));
  } catch (const std::invalid_argument& e) {
    throw ValidationError((dir / "vocab.json").string() + ": " + e.what());
  }
  auto models = make_models(config, vocab);
  try {
    const auto adapters_path = dir / "adapters" / "adapters.json";
    tensors_from_json(read_json(adapters_path).at("tensors"), models.generator->named_trainable(),
                      adapters_path);
    const auto encoder_path = dir / "encoder" / "encoder.json";
    tensors_from_json(read_json(encoder_path).at("tensors"), models.encoder->named_parameters(),
                      encoder_path);
    const auto lam = read_json(dir / "lambda.json");
    models.lambda = MixingWeight::from_raw(lam.at("raw").get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(dir.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(dir.string() + ": " + e.what());
  }
  return models;
}

std::vector<EpochLog> load_training_log(const fs::path& dir) {
  std::vector<EpochLog> out;
  std::istringstream in(read_file(dir / "log.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(epoch_log_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError((dir / "log.jsonl").string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lagamc
