#include "spamdet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "spamdet/digest.hpp"
#include "spamdet/errors.hpp"
#include "spamdet/ops.hpp"
#include "spamdet/random.hpp"

namespace spamdet {

namespace {

constexpr float kMaskBias = -1e9f;
constexpr double kInitStddev = 0.02;

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(num_layers > 0, "num_layers must be positive");
  require(hidden_size > 0, "hidden_size must be positive");
  require(num_heads > 0, "num_heads must be positive");
  require(hidden_size % num_heads == 0, "hidden_size " + std::to_string(hidden_size) +
                                            " is not divisible by num_heads " +
                                            std::to_string(num_heads));
  require(ffn_size > 0, "ffn_size must be positive");
  require(max_len >= 3, "max_len must be at least 3");
  require(vocab_size > 0, "vocab_size must be positive");
  require(num_classes == 2, "num_classes must be 2");
}

ModelConfig ModelConfig::base(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::desk(std::size_t vocab_size) {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_size = 64;
  c.num_heads = 4;
  c.ffn_size = 256;
  c.max_len = 128;
  c.vocab_size = vocab_size;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers}, {"hidden_size", c.hidden_size},
                     {"num_heads", c.num_heads},   {"ffn_size", c.ffn_size},
                     {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
                     {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  d.num_layers = j.value("num_layers", d.num_layers);
  d.hidden_size = j.value("hidden_size", d.hidden_size);
  d.num_heads = j.value("num_heads", d.num_heads);
  d.ffn_size = j.value("ffn_size", d.ffn_size);
  d.max_len = j.value("max_len", d.max_len);
  d.vocab_size = j.value("vocab_size", d.vocab_size);
  d.num_classes = j.value("num_classes", d.num_classes);
  c = d;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"embeddings.token", token_embeddings});
  out.push_back({"embeddings.position", position_embeddings});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams& l = layers[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    out.push_back({p + "attention.query.weight", l.query_weight});
    out.push_back({p + "attention.query.bias", l.query_bias});
    out.push_back({p + "attention.key.weight", l.key_weight});
    out.push_back({p + "attention.key.bias", l.key_bias});
    out.push_back({p + "attention.value.weight", l.value_weight});
    out.push_back({p + "attention.value.bias", l.value_bias});
    out.push_back({p + "attention.output.weight", l.output_weight});
    out.push_back({p + "attention.output.bias", l.output_bias});
    out.push_back({p + "attention.norm.gain", l.attention_norm_gain});
    out.push_back({p + "attention.norm.bias", l.attention_norm_bias});
    out.push_back({p + "ffn.in.weight", l.ffn_in_weight});
    out.push_back({p + "ffn.in.bias", l.ffn_in_bias});
    out.push_back({p + "ffn.out.weight", l.ffn_out_weight});
    out.push_back({p + "ffn.out.bias", l.ffn_out_bias});
    out.push_back({p + "ffn.norm.gain", l.ffn_norm_gain});
    out.push_back({p + "ffn.norm.bias", l.ffn_norm_bias});
  }
  out.push_back({"classifier.weight", classifier_weight});
  out.push_back({"classifier.bias", classifier_bias});
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.config = config;
  c.token_embeddings = token_embeddings.clone();
  c.position_embeddings = position_embeddings.clone();
  for (const LayerParams& l : layers) {
    c.layers.push_back({l.query_weight.clone(), l.query_bias.clone(), l.key_weight.clone(),
                        l.key_bias.clone(), l.value_weight.clone(), l.value_bias.clone(),
                        l.output_weight.clone(), l.output_bias.clone(),
                        l.attention_norm_gain.clone(), l.attention_norm_bias.clone(),
                        l.ffn_in_weight.clone(), l.ffn_in_bias.clone(), l.ffn_out_weight.clone(),
                        l.ffn_out_bias.clone(), l.ffn_norm_gain.clone(), l.ffn_norm_bias.clone()});
  }
  c.classifier_weight = classifier_weight.clone();
  c.classifier_bias = classifier_bias.clone();
  return c;
}

void ModelParams::set_requires_grad(bool on) const {
  for (Tensor t : tensors()) t.set_requires_grad(on);
}

void ModelParams::zero_grad() const {
  for (Tensor t : tensors()) t.zero_grad();
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors()) n += t.numel();
  return n;
}

ModelParams make_params(const ModelConfig& config) {
  config.validate();
  const std::size_t h = config.hidden_size, f = config.ffn_size;
  ModelParams p;
  p.config = config;
  p.token_embeddings = Tensor({config.vocab_size, h});
  p.position_embeddings = Tensor({config.max_len, h});
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    p.layers.push_back({Tensor({h, h}), Tensor({h}), Tensor({h, h}), Tensor({h}),
                        Tensor({h, h}), Tensor({h}), Tensor({h, h}), Tensor({h}),
                        Tensor({h}), Tensor({h}), Tensor({h, f}), Tensor({f}),
                        Tensor({f, h}), Tensor({h}), Tensor({h}), Tensor({h})});
  }
  p.classifier_weight = Tensor({h, config.num_classes});
  p.classifier_bias = Tensor({config.num_classes});
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_params(config);
  Rng rng(seed);
  for (auto& [name, t] : p.named()) {
    auto data = t.mutable_data();
    if (name.ends_with(".gain")) {
      std::fill(data.begin(), data.end(), 1.0f);
    } else if (t.rank() == 2) {
      for (float& x : data) x = static_cast<float>(rng.truncated_normal(kInitStddev));
    }
  }
  return p;
}

std::size_t parameter_count(const ModelConfig& c) {
  c.validate();
  const std::size_t h = c.hidden_size, f = c.ffn_size;
  const std::size_t per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
  return c.vocab_size * h + c.max_len * h + c.num_layers * per_layer +
         h * c.num_classes + c.num_classes;
}

std::string serialize_params(const ModelParams& params) {
  std::string out;
  out.reserve(params.count() * 4);
  for (const Tensor& t : params.tensors()) {
    for (float x : t.data()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      out.append(bytes, 4);
    }
  }
  return out;
}

std::string params_digest(const ModelParams& params) {
  return sha256_hex(serialize_params(params));
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].shape() != tb[i].shape()) return false;
    const auto da = ta[i].data(), db = tb[i].data();
    if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0) return false;
  }
  return true;
}

AttentionResult attention(const LayerParams& layer, const Tensor& hidden,
                          std::span<const std::uint8_t> mask, std::size_t num_heads) {
  const std::size_t len = hidden.dim(0), h = hidden.dim(1);
  if (mask.size() != len) {
    throw DimensionError("attention: mask length " + std::to_string(mask.size()) +
                         " does not match sequence length " + std::to_string(len));
  }
  const std::size_t d = h / num_heads;

  const Tensor q = ops::add_row_bias(ops::matmul(hidden, layer.query_weight), layer.query_bias);
  const Tensor k = ops::add_row_bias(ops::matmul(hidden, layer.key_weight), layer.key_bias);
  const Tensor v = ops::add_row_bias(ops::matmul(hidden, layer.value_weight), layer.value_bias);

  Tensor bias({len, len});
  {
    auto b = bias.mutable_data();
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j)
        if (!mask[j]) b[i * len + j] = kMaskBias;
  }

  AttentionResult result;
  std::vector<Tensor> heads;
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  for (std::size_t head = 0; head < num_heads; ++head) {
    const Tensor qh = ops::slice_cols(q, head * d, d);
    const Tensor kh = ops::slice_cols(k, head * d, d);
    const Tensor vh = ops::slice_cols(v, head * d, d);
    const Tensor scores = ops::add(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_d), bias);
    const Tensor weights = ops::softmax(scores, 1);
    heads.push_back(ops::matmul(weights, vh));
    result.weights.push_back(weights);
  }
  const Tensor merged = num_heads == 1 ? heads[0] : ops::concat_cols(heads);
  result.output = ops::add_row_bias(ops::matmul(merged, layer.output_weight), layer.output_bias);
  return result;
}

Tensor encoder_layer(const LayerParams& layer, const Tensor& hidden,
                     std::span<const std::uint8_t> mask, std::size_t num_heads,
                     std::vector<Tensor>* attention_weights) {
  AttentionResult att = attention(layer, hidden, mask, num_heads);
  if (attention_weights) *attention_weights = att.weights;
  const Tensor x = ops::layer_norm(ops::add(hidden, att.output), layer.attention_norm_gain,
                                   layer.attention_norm_bias);
  const Tensor inner =
      ops::gelu(ops::add_row_bias(ops::matmul(x, layer.ffn_in_weight), layer.ffn_in_bias));
  const Tensor ffn = ops::add_row_bias(ops::matmul(inner, layer.ffn_out_weight), layer.ffn_out_bias);
  return ops::layer_norm(ops::add(x, ffn), layer.ffn_norm_gain, layer.ffn_norm_bias);
}

Tensor forward(const ModelParams& params, const Encoding& encoding, const ForwardOptions& options) {
  const ModelConfig& cfg = params.config;
  if (encoding.max_len() != cfg.max_len) {
    throw ConfigError("encoding length " + std::to_string(encoding.max_len()) +
                      " does not match model max_len " + std::to_string(cfg.max_len));
  }
  for (std::size_t i = 0; i < encoding.ids.size(); ++i) {
    const auto id = encoding.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                       " is outside the vocabulary of size " + std::to_string(cfg.vocab_size));
    }
  }

  std::size_t len = cfg.max_len;
  if (options.trim_padding) {
    len = encoding.real_len;
    while (len < cfg.max_len && encoding.mask[len]) ++len;
    len = std::max<std::size_t>(len, 1);
  }
  const std::span<const std::int32_t> ids(encoding.ids.data(), len);
  const std::span<const std::uint8_t> mask(encoding.mask.data(), len);

  Tensor hidden = ops::add(ops::gather_rows(params.token_embeddings, ids),
                           ops::slice_rows(params.position_embeddings, 0, len));
  for (const LayerParams& layer : params.layers) {
    hidden = encoder_layer(layer, hidden, mask, cfg.num_heads);
  }
  const Tensor cls = ops::slice_rows(hidden, 0, 1);
  const Tensor logits =
      ops::add_row_bias(ops::matmul(cls, params.classifier_weight), params.classifier_bias);
  return ops::reshape(logits, {cfg.num_classes});
}

Prediction predict_from_logits(std::span<const float> logits) {
  if (logits.size() != 2) throw DimensionError("expected 2 logits");
  const double a = logits[0], b = logits[1];
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  Prediction p;
  if (b > a) {
    p.label = Label::spam;
    p.probability = eb / (ea + eb);
  } else {
    p.label = Label::ham;
    p.probability = ea / (ea + eb);
  }
  return p;
}

Prediction classify(const ModelParams& params, std::string_view text, const Vocab& vocab) {
  const Encoding enc = encode(clean_text(text), vocab, params.config.max_len);
  const Tensor logits = forward(params, enc);
  return predict_from_logits(logits.data());
}

}  // namespace spamdet
