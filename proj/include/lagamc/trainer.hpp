#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lagamc/autograd.hpp"
#include "lagamc/catalog.hpp"
#include "lagamc/model.hpp"
#include "lagamc/promptkit.hpp"

namespace lagamc {

enum class SemanticMode { soft_embedding, decoded_text };

std::string_view to_string(SemanticMode mode);
SemanticMode semantic_mode_from_string(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double learning_rate = 2e-4;
  /// Step size for encoder parameters; 0 reuses learning_rate.
  double encoder_learning_rate = 0.0;
  std::size_t lora_rank = 2;
  /// 0 means "derive from the prompts".
  std::size_t max_input_tokens = 0;
  std::size_t max_output_tokens = 0;
  double lambda_init = 0.5;
  SemanticMode semantic_mode = SemanticMode::soft_embedding;
  std::uint64_t seed = 0;

  // Reference model shape.
  std::size_t hidden_size = 128;
  std::size_t encoder_dim = 64;
  double lora_alpha = 8.0;
  bool train_encoder = true;

  /// Throws ValidationError.
  void check() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Flat object; missing keys keep their defaults, unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Mean model-token length of prompts and targets, rounded up to a multiple
/// of 8, substituted for any zero budget.
TrainConfig resolve_budgets(TrainConfig config, const std::vector<PromptRecord>& records);

/// Learnable convex-combination weight: value() = sigmoid(raw).
class MixingWeight {
 public:
  explicit MixingWeight(double initial_value = 0.5);
  static MixingWeight from_raw(double raw);

  double raw() const { return raw_.scalar(); }
  double value() const;
  /// The trainable 1x1 leaf.
  const ag::Var& parameter() const { return raw_; }
  /// sigmoid(raw) as a graph node.
  ag::Var lambda() const;

 private:
  ag::Var raw_;
};

/// 1 - <v_gen, v_target>. Throws ValidationError on shape mismatch or a zero
/// vector.
double semantic_loss(const ag::Matrix& v_gen, const ag::Matrix& v_target);
ag::Var semantic_loss(const ag::Var& v_gen, const ag::Var& v_target);

/// lambda * ce + (1 - lambda) * sem. Throws ValidationError on non-finite
/// inputs.
double hybrid_loss(double ce, double sem, const MixingWeight& lam);
ag::Var hybrid_loss(const ag::Var& ce, const ag::Var& sem, const MixingWeight& lam);

struct GeneratedEmbedding {
  ag::Var vector;
  /// Decoded mode produced no text; `vector` is the empty-text sentinel.
  bool empty_decode = false;
};

/// Soft mode embeds the teacher-forced distributions in `forward`; decoded
/// mode embeds the greedy decode of `prompt` and ignores `forward`.
GeneratedEmbedding generated_embedding(Generator& gen, Encoder& enc, const std::string& prompt,
                                       const Generator::Forward& forward, SemanticMode mode,
                                       std::size_t max_output_tokens);

class Adam {
 public:
  Adam(std::vector<ag::Var> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  /// Adds parameters with their own step size.
  void add_group(std::vector<ag::Var> params, double learning_rate);
  void zero_grad();
  /// Parameters the last backward pass did not reach are left untouched.
  void step();

 private:
  std::vector<ag::Var> params_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  std::vector<double> rates_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double ce = 0.0;
  double semantic = 0.0;
  double hybrid = 0.0;
  double lambda = 0.0;
};

nlohmann::json epoch_log_to_json(const EpochLog& log);
EpochLog epoch_log_from_json(const nlohmann::json& j);

/// Result of train(). The trained weights live in the handles passed in.
struct TrainedArtifacts {
  TrainConfig config;
  MixingWeight lambda;
  std::vector<EpochLog> log;
  ParameterCount generator_parameters;
  std::size_t empty_decodes = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Hybrid-loss optimisation of the generator, encoder and mixing weight with
/// one joint Adam step per batch. Batch order is a function of the seed.
/// Throws ValidationError for records without targets and StageError when a
/// batch loss is not finite.
TrainedArtifacts train(const TrainConfig& config, const std::vector<PromptRecord>& records,
                       Generator& gen, Encoder& enc, const EpochCallback& on_epoch = {});

/// Vocabulary over prompts, targets and (optionally) catalog descriptions, so
/// labels absent from training are still representable.
std::shared_ptr<Vocabulary> build_vocabulary(const std::vector<PromptRecord>& records,
                                             const LabelCatalog* catalog = nullptr);

ReferenceGeneratorConfig generator_config(const TrainConfig& config);
ReferenceEncoderConfig encoder_config(const TrainConfig& config);

/// Reference models plus the learned mixing weight, as stored on disk.
struct ModelBundle {
  std::shared_ptr<Vocabulary> vocab;
  std::unique_ptr<ReferenceGenerator> generator;
  std::unique_ptr<ReferenceEncoder> encoder;
  TrainConfig config;
  MixingWeight lambda;
};

ModelBundle make_models(const TrainConfig& config, std::shared_ptr<Vocabulary> vocab);

/// Writes config.json, vocab.json, adapters/, encoder/, lambda.json and
/// log.jsonl under `dir`.
void save_artifacts(const std::filesystem::path& dir, ModelBundle& models,
                    const TrainedArtifacts& artifacts);
/// Throws ValidationError when the directory is incomplete or inconsistent.
ModelBundle load_artifacts(const std::filesystem::path& dir);
std::vector<EpochLog> load_training_log(const std::filesystem::path& dir);

}  // namespace lagamc
