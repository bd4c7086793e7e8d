#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spamdet/corpus.hpp"
#include "spamdet/metrics.hpp"
#include "spamdet/model.hpp"
#include "spamdet/tokenizer.hpp"

namespace spamdet {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
  static AdamState zeros_like(std::span<const Tensor> tensors);
  bool operator==(const AdamState&) const = default;
};

struct Example {
  Encoding encoding;
  int label = 0;
  std::string id;
};

std::vector<Example> encode_messages(std::span<const LabeledMessage> messages, const Vocab& vocab,
                                     std::size_t max_len);

// Forward on every example, mean cross-entropy, backward, one Adam update.
// Returns the loss measured before the update. Throws TrainingError on a
// non-finite loss, leaving params and adam untouched.
double train_step(const ModelParams& params, AdamState& adam, std::span<const Example> batch,
                  const TrainConfig& cfg);

// Bias-corrected Adam update from the gradients currently held by params.
void adam_update(const ModelParams& params, AdamState& adam, const TrainConfig& cfg);
void adam_update(std::span<const Tensor> tensors, AdamState& adam, const TrainConfig& cfg);

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  ModelParams params;
  AdamState adam;
  std::string vocab_sha256;
  std::optional<Vocab> vocab;
  // Number of completed epochs; also the next epoch's shuffle offset.
  std::size_t epoch = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<double> eval_f1_weighted;
};

nlohmann::ordered_json to_json(const EpochLog& log);

struct TrainHooks {
  // Evaluated after every epoch when non-empty.
  std::span<const LabeledMessage> eval_set;
  std::function<void(const EpochLog&)> on_epoch;
  // Called after every step with the 1-based global step and its loss.
  std::function<void(std::uint64_t, double)> on_step;
};

Checkpoint train(std::span<const LabeledMessage> messages, const Vocab& vocab,
                 const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                 const TrainHooks& hooks = {});

// Continues a checkpoint until it has completed train_config.epochs epochs.
void resume_training(Checkpoint& ckpt, std::span<const LabeledMessage> messages,
                     const Vocab& vocab, const TrainHooks& hooks = {});

// Gold and predicted label for every message. Throws ConfigError when the
// vocab differs from the checkpoint's or the set is empty.
std::vector<LabelPair> evaluate(const Checkpoint& ckpt, std::span<const LabeledMessage> eval_set,
                                const Vocab& vocab);

std::vector<LabelPair> predict_all(const ModelParams& params,
                                   std::span<const LabeledMessage> messages, const Vocab& vocab);

inline constexpr int kCheckpointFormatVersion = 1;

// Writes manifest.json, weights.bin, optimizer.bin and vocab.txt into a
// temporary sibling directory, then renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

// When `expected` is given, a checkpoint built for another model config is a
// ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const ModelConfig* expected = nullptr);

}  // namespace spamdet
