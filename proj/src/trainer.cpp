#include "spamdet/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "spamdet/errors.hpp"
#include "spamdet/ops.hpp"
#include "spamdet/random.hpp"

namespace spamdet {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},   {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},   {"adam_eps", c.adam_eps},
                     {"seed", c.seed},               {"shuffle_each_epoch", c.shuffle_each_epoch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  d.batch_size = j.value("batch_size", d.batch_size);
  d.epochs = j.value("epochs", d.epochs);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  d.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  d.adam_eps = j.value("adam_eps", d.adam_eps);
  d.seed = j.value("seed", d.seed);
  d.shuffle_each_epoch = j.value("shuffle_each_epoch", d.shuffle_each_epoch);
  c = d;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  return zeros_like(params.tensors());
}

AdamState AdamState::zeros_like(std::span<const Tensor> tensors) {
  AdamState s;
  for (const Tensor& t : tensors) {
    s.m.emplace_back(t.numel(), 0.0f);
    s.v.emplace_back(t.numel(), 0.0f);
  }
  return s;
}

std::vector<Example> encode_messages(std::span<const LabeledMessage> messages, const Vocab& vocab,
                                     std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(messages.size());
  for (const auto& m : messages)
    out.push_back({encode(m.text, vocab, max_len), to_index(m.label), m.origin_id});
  return out;
}

void adam_update(const ModelParams& params, AdamState& adam, const TrainConfig& cfg) {
  adam_update(params.tensors(), adam, cfg);
}

void adam_update(std::span<const Tensor> tensors, AdamState& adam, const TrainConfig& cfg) {
  if (adam.m.size() != tensors.size()) throw ContractError("adam state does not match params");
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor p = tensors[i];
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = adam.m[i];
    auto& v = adam.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * gk;
      const double vk = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = cfg.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + cfg.adam_eps);
      w[k] = static_cast<float>(w[k] - step);
    }
  }
}

double train_step(const ModelParams& params, AdamState& adam, std::span<const Example> batch,
                  const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  if (batch.size() > cfg.batch_size) throw ContractError("train_step: batch larger than batch_size");
  params.set_requires_grad(true);
  params.zero_grad();

  double loss_value = 0.0;
  {
    GradTape tape;
    std::vector<Tensor> rows;
    std::vector<int> labels;
    rows.reserve(batch.size());
    for (const Example& ex : batch) {
      rows.push_back(forward(params, ex.encoding));
      labels.push_back(ex.label);
    }
    const Tensor loss = ops::cross_entropy(ops::stack_rows(rows), labels);
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << loss_value << " at step " << adam.step + 1 << "; batch ids:";
      for (const Example& ex : batch) msg << ' ' << ex.id;
      throw TrainingError(msg.str());
    }
    tape.backward(loss);
  }
  adam_update(params, adam, cfg);
  params.zero_grad();
  return loss_value;
}

nlohmann::ordered_json to_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["mean_loss"] = log.mean_loss;
  if (log.eval_f1_weighted) j["eval_f1_weighted"] = *log.eval_f1_weighted;
  return j;
}

std::vector<LabelPair> predict_all(const ModelParams& params,
                                   std::span<const LabeledMessage> messages, const Vocab& vocab) {
  std::vector<LabelPair> pairs;
  pairs.reserve(messages.size());
  for (const auto& m : messages) {
    const Tensor logits = forward(params, encode(m.text, vocab, params.config.max_len));
    pairs.emplace_back(m.label, predict_from_logits(logits.data()).label);
  }
  return pairs;
}

void resume_training(Checkpoint& ckpt, std::span<const LabeledMessage> messages,
                     const Vocab& vocab, const TrainHooks& hooks) {
  const TrainConfig& cfg = ckpt.train_config;
  cfg.validate();
  if (vocab.digest() != ckpt.vocab_sha256)
    throw ConfigError("vocabulary does not match the checkpoint");
  if (ckpt.epoch >= cfg.epochs) return;
  if (messages.empty()) throw ConfigError("training set is empty");

  const std::vector<Example> examples =
      encode_messages(messages, vocab, ckpt.model_config.max_len);
  std::vector<std::size_t> order(examples.size());
  std::vector<Example> batch;

  for (std::size_t epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle_each_epoch) {
      Rng rng(cfg.seed + epoch);
      rng.shuffle(std::span<std::size_t>(order));
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(examples[order[k]]);
      const double loss = train_step(ckpt.params, ckpt.adam, batch, cfg);
      loss_sum += loss * static_cast<double>(batch.size());
      if (hooks.on_step) hooks.on_step(ckpt.adam.step, loss);
    }
    ckpt.epoch = epoch + 1;

    EpochLog log;
    log.epoch = ckpt.epoch;
    log.mean_loss = loss_sum / static_cast<double>(examples.size());
    if (!hooks.eval_set.empty()) {
      const auto pairs = predict_all(ckpt.params, hooks.eval_set, vocab);
      log.eval_f1_weighted = report(pairs).weighted_avg.f1;
    }
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  ckpt.params.set_requires_grad(false);
}

Checkpoint train(std::span<const LabeledMessage> messages, const Vocab& vocab,
                 const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                 const TrainHooks& hooks) {
  model_cfg.validate();
  train_cfg.validate();
  if (model_cfg.vocab_size != vocab.size()) {
    throw ConfigError("model vocab_size " + std::to_string(model_cfg.vocab_size) +
                      " does not match vocabulary of " + std::to_string(vocab.size()) + " tokens");
  }
  if (messages.empty()) throw ConfigError("training set is empty");
  Checkpoint ckpt{model_cfg,
                  train_cfg,
                  init_params(model_cfg, train_cfg.seed),
                  {},
                  vocab.digest(),
                  vocab,
                  0};
  ckpt.adam = AdamState::zeros_like(ckpt.params);
  resume_training(ckpt, messages, vocab, hooks);
  return ckpt;
}

std::vector<LabelPair> evaluate(const Checkpoint& ckpt, std::span<const LabeledMessage> eval_set,
                                const Vocab& vocab) {
  if (vocab.digest() != ckpt.vocab_sha256) {
    throw ConfigError("vocabulary digest " + vocab.digest().substr(0, 12) +
                      " does not match checkpoint digest " + ckpt.vocab_sha256.substr(0, 12));
  }
  if (eval_set.empty()) throw ConfigError("evaluation set is empty");
  return predict_all(ckpt.params, eval_set, vocab);
}

}  // namespace spamdet
