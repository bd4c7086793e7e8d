#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spamdet/corpus.hpp"
#include "spamdet/tensor.hpp"
#include "spamdet/tokenizer.hpp"

namespace spamdet {

struct ModelConfig {
  std::size_t num_layers = 12;
  std::size_t hidden_size = 768;
  std::size_t num_heads = 12;
  std::size_t ffn_size = 3072;
  std::size_t max_len = 512;
  std::size_t vocab_size = 30522;
  std::size_t num_classes = 2;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  std::size_t head_size() const { return hidden_size / num_heads; }

  // BERT-base geometry.
  static ModelConfig base(std::size_t vocab_size);
  // Small geometry that trains on a laptop CPU in minutes.
  static ModelConfig desk(std::size_t vocab_size);

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerParams {
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor output_weight, output_bias;
  Tensor attention_norm_gain, attention_norm_bias;
  Tensor ffn_in_weight, ffn_in_bias;
  Tensor ffn_out_weight, ffn_out_bias;
  Tensor ffn_norm_gain, ffn_norm_bias;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Weights are stored [in x out] so a layer computes x . W + b.
struct ModelParams {
  ModelConfig config;
  Tensor token_embeddings;     // [vocab x hidden]
  Tensor position_embeddings;  // [max_len x hidden]
  std::vector<LayerParams> layers;
  Tensor classifier_weight;  // [hidden x classes]
  Tensor classifier_bias;    // [classes]

  // Handles to every tensor in a fixed canonical order.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;

  ModelParams clone() const;
  void set_requires_grad(bool on) const;
  void zero_grad() const;
  std::size_t count() const;
};

// Allocates zero-filled tensors of the right shapes.
ModelParams make_params(const ModelConfig& config);

// Truncated normal (std 0.02) weights and embeddings, zero biases, unit gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

std::size_t parameter_count(const ModelConfig& config);

// Little-endian float32 bytes of every tensor in canonical order.
std::string serialize_params(const ModelParams& params);
std::string params_digest(const ModelParams& params);
bool bitwise_equal(const ModelParams& a, const ModelParams& b);

struct AttentionResult {
  Tensor output;                // [len x hidden]
  std::vector<Tensor> weights;  // one [len x len] matrix per head
};

AttentionResult attention(const LayerParams& layer, const Tensor& hidden,
                          std::span<const std::uint8_t> mask, std::size_t num_heads);

// Attention sublayer and feed-forward sublayer, each followed by residual add
// and layer normalization.
Tensor encoder_layer(const LayerParams& layer, const Tensor& hidden,
                     std::span<const std::uint8_t> mask, std::size_t num_heads,
                     std::vector<Tensor>* attention_weights = nullptr);

struct ForwardOptions {
  // Drop trailing padding before the encoder. Masked keys get exactly zero
  // weight, so the logits do not depend on this.
  bool trim_padding = true;
};

// Logits of shape [num_classes].
Tensor forward(const ModelParams& params, const Encoding& encoding,
               const ForwardOptions& options = {});

struct Prediction {
  Label label = Label::ham;
  double probability = 0.0;  // softmax probability of `label`
};

// Argmax of the logits; exactly equal logits go to ham.
Prediction predict_from_logits(std::span<const float> logits);

Prediction classify(const ModelParams& params, std::string_view text, const Vocab& vocab);

}  // namespace spamdet
