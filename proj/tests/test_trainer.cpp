#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "spamdet/errors.hpp"
#include "spamdet/fileio.hpp"
#include "spamdet/trainer.hpp"
#include "support/model_fixtures.hpp"
#include "support/training_fixtures.hpp"

using namespace spamdet;
using namespace spamdet::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p =
      fs::temp_directory_path() / ("spamdet_trainer_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.seed = 3;
  return tc;
}

ModelConfig small_model(std::size_t vocab_size) {
  ModelConfig c = ModelConfig::desk(vocab_size);
  c.max_len = 32;
  return c;
}

// One scalar parameter whose gradient is set by hand before each update.
struct ScalarProblem {
  Tensor theta{Shape{1}, {1.0f}, true};
  std::vector<Tensor> tensors{theta};
  AdamState adam = AdamState::zeros_like(tensors);

  float step(float grad, const TrainConfig& cfg) {
    theta.mutable_grad()[0] = grad;
    const float before = theta.data()[0];
    adam_update(tensors, adam, cfg);
    return theta.data()[0] - before;
  }
};

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  ScalarProblem p;
  p.step(1.0f, cfg);
  EXPECT_FLOAT_EQ(p.theta.data()[0], 0.9f);
  EXPECT_EQ(p.adam.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  TrainConfig cfg;
  ScalarProblem p;
  EXPECT_EQ(p.step(0.0f, cfg), 0.0f);
  EXPECT_EQ(p.theta.data()[0], 1.0f);
}

TEST(Adam, ConstantGradientStepsNeverExceedLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  for (float g : {1.0f, -3.0f, 1e-3f}) {
    ScalarProblem p;
    for (int t = 0; t < 200; ++t)
      ASSERT_LE(std::fabs(p.step(g, cfg)), cfg.learning_rate * (1 + 1e-6)) << t;
  }
}

TEST(Adam, SparseGradientsCanExceedLearningRateButNotTheMomentBound) {
  // A long run of zero gradients followed by a single nonzero one, as an
  // embedding row sees for a rare token. The bias corrections have saturated,
  // so m_hat = 0.1 g while sqrt(v_hat) ~ sqrt(0.001) |g|: the step is about
  // 3.1 lr. It stays under the Cauchy-Schwarz bound.
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  ScalarProblem p;
  double largest = 0.0;
  for (std::uint64_t t = 1; t <= 3000; ++t) {
    const double delta = std::fabs(p.step(t == 3000 ? 1.0f : 0.0f, cfg));
    largest = std::max(largest, delta);
    if (t % 100 == 0 || t == 3000) {
      EXPECT_LE(delta, cfg.learning_rate * adam_step_bound(t, 0.9, 0.999) * (1 + 1e-4));
    }
  }
  EXPECT_GT(largest, 3.0 * cfg.learning_rate);
}

TEST(Adam, ElementwiseStepBoundDuringTraining) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  TrainConfig tc = quick_config(0);
  tc.learning_rate = 1e-3;
  Checkpoint ckpt = train(messages, vocab, small_model(vocab.size()), tc);
  const auto examples = encode_messages(messages, vocab, ckpt.model_config.max_len);
  for (std::size_t s = 0; s < 12; ++s) {
    const ModelParams before = ckpt.params.clone();
    std::vector<Example> batch(examples.begin() + static_cast<long>((s % 4) * 8),
                               examples.begin() + static_cast<long>((s % 4) * 8 + 8));
    train_step(ckpt.params, ckpt.adam, batch, tc);
    const double bound = tc.learning_rate * adam_step_bound(ckpt.adam.step, tc.adam_beta1,
                                                            tc.adam_beta2);
    const auto a = before.tensors(), b = ckpt.params.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i].numel(); ++k) {
        const double delta = std::fabs(double(b[i].data()[k]) - double(a[i].data()[k]));
        // Allow for float rounding of the stored weight itself.
        ASSERT_LE(delta, bound * (1 + 1e-4) + 4 * std::numeric_limits<float>::epsilon() *
                                                  std::fabs(a[i].data()[k]));
      }
    }
  }
}

TEST(TrainStep, DescentOnFixedBatch) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  TrainConfig tc = quick_config(0);
  tc.learning_rate = 1e-3;
  Checkpoint ckpt = train(messages, vocab, small_model(vocab.size()), tc);
  const auto examples = encode_messages(messages, vocab, ckpt.model_config.max_len);
  const std::vector<Example> batch(examples.begin(), examples.begin() + 8);

  std::vector<double> losses;
  for (int s = 0; s <= 100; ++s) losses.push_back(train_step(ckpt.params, ckpt.adam, batch, tc));
  EXPECT_LT(losses[50], losses[0]);
  EXPECT_LT(losses[100], 0.1 * losses[0]) << "initial " << losses[0];
}

TEST(TrainStep, NonFiniteLossIsReportedAndNothingChanges) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  Checkpoint ckpt = train(messages, vocab, small_model(vocab.size()), quick_config(0));
  ckpt.params.classifier_weight.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto examples = encode_messages(messages, vocab, ckpt.model_config.max_len);
  const std::vector<Example> batch(examples.begin(), examples.begin() + 2);
  const std::string digest = params_digest(ckpt.params);
  try {
    train_step(ckpt.params, ckpt.adam, batch, quick_config(1));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("step 1"), std::string::npos) << what;
    EXPECT_NE(what.find(batch[0].id), std::string::npos) << what;
    EXPECT_NE(what.find(batch[1].id), std::string::npos) << what;
  }
  EXPECT_EQ(params_digest(ckpt.params), digest);
  EXPECT_EQ(ckpt.adam.step, 0u);
}

TEST(TrainStep, RejectsEmptyAndOversizedBatches) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  Checkpoint ckpt = train(messages, vocab, small_model(vocab.size()), quick_config(0));
  const auto examples = encode_messages(messages, vocab, ckpt.model_config.max_len);
  EXPECT_THROW(train_step(ckpt.params, ckpt.adam, {}, quick_config(1)), ContractError);
  EXPECT_THROW(train_step(ckpt.params, ckpt.adam, examples, quick_config(1)), ContractError);
}

TEST(Train, OverfitsThirtyTwoMessagesWithin200Steps) {
  const auto r = run_overfit(200);
  EXPECT_TRUE(r.reached) << "accuracy after " << r.steps << " steps: " << r.final_accuracy;
  const auto messages = sms_subset32();
  const auto pairs = evaluate(r.checkpoint, messages, vocab_for(messages));
  EXPECT_EQ(accuracy(pairs), 1.0);
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto cfg = small_model(vocab.size());
  std::size_t steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](std::uint64_t, double) { ++steps; };
  const Checkpoint ckpt = train(messages, vocab, cfg, quick_config(0), hooks);
  EXPECT_EQ(steps, 0u);
  EXPECT_EQ(ckpt.adam.step, 0u);
  EXPECT_EQ(ckpt.epoch, 0u);
  EXPECT_TRUE(bitwise_equal(ckpt.params, init_params(cfg, quick_config(0).seed)));
}

TEST(Train, StepCountKeepsPartialBatchAndLogsEveryEpoch) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  std::vector<LabeledMessage> five(messages.begin(), messages.begin() + 5);
  TrainConfig tc = quick_config(3);
  tc.batch_size = 2;
  std::vector<std::uint64_t> steps;
  std::vector<EpochLog> logs;
  TrainHooks hooks;
  hooks.on_step = [&](std::uint64_t s, double) { steps.push_back(s); };
  hooks.on_epoch = [&](const EpochLog& log) { logs.push_back(log); };
  hooks.eval_set = std::span<const LabeledMessage>(messages).subspan(5, 6);
  train(five, vocab, small_model(vocab.size()), tc, hooks);
  ASSERT_EQ(steps.size(), 9u);  // 3 epochs x ceil(5 / 2)
  EXPECT_EQ(steps.back(), 9u);
  ASSERT_EQ(logs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(logs[e].epoch, e + 1);
    EXPECT_TRUE(std::isfinite(logs[e].mean_loss));
    ASSERT_TRUE(logs[e].eval_f1_weighted.has_value());
    const auto j = to_json(logs[e]);
    EXPECT_EQ(j.begin().key(), "epoch");
    EXPECT_TRUE(j.contains("mean_loss"));
    EXPECT_TRUE(j.contains("eval_f1_weighted"));
  }
  EXPECT_FALSE(to_json(EpochLog{1, 0.5, std::nullopt}).contains("eval_f1_weighted"));
}

TEST(Train, ConfigErrors) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  EXPECT_THROW(train({}, vocab, small_model(vocab.size()), quick_config(1)), ConfigError);
  EXPECT_THROW(train(messages, vocab, small_model(vocab.size() + 1), quick_config(1)), ConfigError);
  TrainConfig bad = quick_config(1);
  bad.adam_beta2 = 1.0;
  EXPECT_THROW(train(messages, vocab, small_model(vocab.size()), bad), ConfigError);
  bad = quick_config(1);
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Train, SameSeedSameCheckpointBytes) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto cfg = small_model(vocab.size());
  const auto a = train(messages, vocab, cfg, quick_config(2));
  const auto b = train(messages, vocab, cfg, quick_config(2));
  EXPECT_TRUE(bitwise_equal(a.params, b.params));
  const fs::path da = scratch("det_a"), db = scratch("det_b");
  save_checkpoint(a, da);
  save_checkpoint(b, db);
  for (const char* f : {"manifest.json", "weights.bin", "optimizer.bin", "vocab.txt"})
    EXPECT_EQ(read_file(da / f), read_file(db / f)) << f;

  TrainConfig other = quick_config(2);
  other.seed = 4;
  EXPECT_FALSE(bitwise_equal(a.params, train(messages, vocab, cfg, other).params));
}

TEST(Train, ResumeFollowsTheSameTrajectory) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto cfg = small_model(vocab.size());
  const auto straight = train(messages, vocab, cfg, quick_config(3));

  const auto first = train(messages, vocab, cfg, quick_config(1));
  const fs::path dir = scratch("resume");
  save_checkpoint(first, dir);
  Checkpoint resumed = load_checkpoint(dir, &cfg);
  EXPECT_EQ(resumed.epoch, 1u);
  resumed.train_config.epochs = 3;
  resume_training(resumed, messages, vocab);
  EXPECT_EQ(resumed.adam.step, straight.adam.step);
  EXPECT_TRUE(bitwise_equal(resumed.params, straight.params));
  EXPECT_EQ(resumed.adam, straight.adam);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto ckpt = train(messages, vocab, small_model(vocab.size()), quick_config(1));
  const fs::path dir = scratch("roundtrip");
  save_checkpoint(ckpt, dir);
  const Checkpoint loaded = load_checkpoint(dir);
  EXPECT_TRUE(bitwise_equal(loaded.params, ckpt.params));
  EXPECT_EQ(loaded.adam, ckpt.adam);
  EXPECT_EQ(loaded.model_config, ckpt.model_config);
  EXPECT_EQ(loaded.train_config, ckpt.train_config);
  EXPECT_EQ(loaded.vocab_sha256, vocab.digest());
  ASSERT_TRUE(loaded.vocab.has_value());
  EXPECT_EQ(*loaded.vocab, vocab);
  EXPECT_EQ(loaded.epoch, 1u);

  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest["format_version"], kCheckpointFormatVersion);
  EXPECT_EQ(manifest["tensors"][0]["name"], "embeddings.token");
  EXPECT_EQ(fs::file_size(dir / "weights.bin"), 4 * ckpt.params.count());

  // Saving over an existing checkpoint replaces it whole.
  save_checkpoint(ckpt, dir);
  EXPECT_TRUE(bitwise_equal(load_checkpoint(dir).params, ckpt.params));
  for (const auto& entry : fs::directory_iterator(dir.parent_path()))
    EXPECT_EQ(entry.path().filename().string().find(".tmp-"), std::string::npos);
}

TEST(Checkpoint, TruncatedWeightsAreCorruption) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto ckpt = train(messages, vocab, small_model(vocab.size()), quick_config(0));
  const fs::path dir = scratch("truncated");
  save_checkpoint(ckpt, dir);
  const auto full = fs::file_size(dir / "weights.bin");
  fs::resize_file(dir / "weights.bin", full - 10);
  try {
    load_checkpoint(dir);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("expected " + std::to_string(full) + " bytes"), std::string::npos) << what;
    EXPECT_NE(what.find("found " + std::to_string(full - 10)), std::string::npos) << what;
  }
}

TEST(Checkpoint, VersionConfigAndVocabErrors) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto cfg = small_model(vocab.size());
  const auto ckpt = train(messages, vocab, cfg, quick_config(0));
  const fs::path dir = scratch("errors");
  save_checkpoint(ckpt, dir);

  ModelConfig other = cfg;
  other.num_layers = 3;
  EXPECT_THROW(load_checkpoint(dir, &other), ConfigError);
  EXPECT_NO_THROW(load_checkpoint(dir, &cfg));

  auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  manifest["format_version"] = 99;
  write_file_atomic(dir / "manifest.json", manifest.dump());
  EXPECT_THROW(load_checkpoint(dir), VersionError);

  save_checkpoint(ckpt, dir);
  std::ofstream(dir / "vocab.txt", std::ios::app) << "extra\n";
  EXPECT_THROW(load_checkpoint(dir), CorruptionError);
  EXPECT_THROW(load_checkpoint(scratch("missing")), LoadError);
}

TEST(Evaluate, PureAndChecksVocab) {
  const auto messages = sms_subset32();
  const Vocab vocab = vocab_for(messages);
  const auto ckpt = train(messages, vocab, small_model(vocab.size()), quick_config(1));
  const std::string before = params_digest(ckpt.params);
  const auto first = evaluate(ckpt, messages, vocab);
  const auto second = evaluate(ckpt, messages, vocab);
  EXPECT_EQ(first, second);
  EXPECT_EQ(first.size(), messages.size());
  EXPECT_EQ(params_digest(ckpt.params), before);
  for (std::size_t i = 0; i < messages.size(); ++i) EXPECT_EQ(first[i].first, messages[i].label);

  EXPECT_THROW(evaluate(ckpt, {}, vocab), ConfigError);
  const Vocab different = vocab_for(messages, 200);
  EXPECT_THROW(evaluate(ckpt, messages, different), ConfigError);
}
