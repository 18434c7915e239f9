#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lagamc/autograd.hpp"
#include "lagamc/tokenizer.hpp"

namespace lagamc {

struct ParameterCount {
  std::size_t trainable = 0;
  std::size_t total = 0;

  double trainable_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  }
};

/// Sequence-to-sequence text generator seen by the trainer and the matcher.
class Generator {
 public:
  struct Forward {
    /// 1x1 mean token cross-entropy under teacher forcing.
    ag::Var cross_entropy;
    /// One row per target position (targets then end marker), each a
    /// distribution over vocabulary().
    ag::Var distributions;
  };

  virtual ~Generator() = default;
  virtual Forward forward(std::string_view prompt, std::string_view target) = 0;
  /// Greedy decoding of at most `max_tokens` tokens.
  virtual std::string generate(std::string_view prompt, std::size_t max_tokens) = 0;
  virtual std::vector<ag::Var> trainable_parameters() = 0;
  virtual ParameterCount parameter_count() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
};

/// Sentence encoder producing unit-norm row vectors.
class Encoder {
 public:
  virtual ~Encoder() = default;
  /// 1 x dim(); text without content tokens maps to a fixed sentinel.
  virtual ag::Var embed(std::string_view text) = 0;
  /// Embeds the expected bag of tokens of a T x |vocabulary()| stack of
  /// distributions. One-hot rows reproduce embed() of the decoded string.
  virtual ag::Var embed_soft(const ag::Var& distributions) = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<ag::Var> trainable_parameters() = 0;
  virtual const Vocabulary& vocabulary() const = 0;
};

/// Dense layer y = xW + b with an optional rank-r adapter
/// y += (alpha / r) * (xA)B. W and b receive gradients only when
/// `train_base` is set.
class LoraLinear {
 public:
  LoraLinear() = default;
  LoraLinear(std::size_t in, std::size_t out, std::size_t rank, double alpha, std::uint64_t seed,
             bool train_base);

  ag::Var forward(const ag::Var& x) const;
  std::vector<ag::Var> trainable() const;
  std::vector<ag::Var> all() const;
  bool adapted() const noexcept { return rank_ > 0; }

  ag::Var weight;
  ag::Var bias;
  ag::Var lora_a;
  ag::Var lora_b;

 private:
  std::size_t rank_ = 0;
  double scale_ = 0.0;
};

struct ReferenceGeneratorConfig {
  std::size_t hidden = 128;
  /// Rank of the adapters on the context projection and the recurrent
  /// matrix. 0 trains every weight instead.
  std::size_t lora_rank = 2;
  double lora_alpha = 8.0;
  std::size_t max_input_tokens = 0;
  std::uint64_t seed = 0;
};

/// Bag-of-embeddings prompt encoder feeding a GRU decoder. Base weights are
/// a deterministic function of the config seed.
class ReferenceGenerator : public Generator {
 public:
  ReferenceGenerator(std::shared_ptr<const Vocabulary> vocab, ReferenceGeneratorConfig config);

  Forward forward(std::string_view prompt, std::string_view target) override;
  std::string generate(std::string_view prompt, std::size_t max_tokens) override;
  std::vector<ag::Var> trainable_parameters() override;
  ParameterCount parameter_count() const override;
  const Vocabulary& vocabulary() const override { return *vocab_; }
  const ReferenceGeneratorConfig& config() const noexcept { return config_; }

  /// Named trainable tensors, for persisting adapters.
  std::vector<std::pair<std::string, ag::Var>> named_trainable();

 private:
  std::vector<int> prompt_ids(std::string_view prompt) const;
  ag::Var context(const std::vector<int>& prompt) const;
  ag::Var step(const ag::Var& input_gates, const ag::Var& hidden) const;
  std::vector<std::pair<std::string, const LoraLinear*>> layers() const;

  std::shared_ptr<const Vocabulary> vocab_;
  ReferenceGeneratorConfig config_;
  ag::Var embedding_;
  LoraLinear context_proj_;
  LoraLinear input_gates_;
  LoraLinear context_gates_;
  LoraLinear recurrent_;
  LoraLinear output_;
};

struct ReferenceEncoderConfig {
  std::size_t dim = 64;
  bool trainable = true;
  std::uint64_t seed = 0;
};

/// Normalized (sum of token embeddings) x projection. Control tokens have
/// no embedding, so padding and end markers never move the vector.
class ReferenceEncoder : public Encoder {
 public:
  ReferenceEncoder(std::shared_ptr<const Vocabulary> vocab, ReferenceEncoderConfig config);

  ag::Var embed(std::string_view text) override;
  ag::Var embed_soft(const ag::Var& distributions) override;
  std::size_t dim() const override { return config_.dim; }
  std::vector<ag::Var> trainable_parameters() override;
  const Vocabulary& vocabulary() const override { return *vocab_; }
  const ReferenceEncoderConfig& config() const noexcept { return config_; }

  std::vector<std::pair<std::string, ag::Var>> named_parameters();

 private:
  ag::Var from_counts(const ag::Var& counts) const;

  std::shared_ptr<const Vocabulary> vocab_;
  ReferenceEncoderConfig config_;
  ag::Var table_;
  ag::Var projection_;
  ag::Var content_mask_;
};

nlohmann::json matrix_to_json(const ag::Matrix& m);
ag::Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace lagamc
