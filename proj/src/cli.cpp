#include "spamdet/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spamdet/corpus.hpp"
#include "spamdet/errors.hpp"
#include "spamdet/fileio.hpp"
#include "spamdet/metrics.hpp"
#include "spamdet/model.hpp"
#include "spamdet/tokenizer.hpp"
#include "spamdet/trainer.hpp"

namespace spamdet {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kDefaultVocabSize = 8000;

struct PrepareArgs {
  std::string format;
  std::string in, spam_dir, ham_dir, out, source;
};

struct SplitArgs {
  double eval_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct BuildVocabArgs {
  std::string data, out, split = "train";
  std::size_t size = kDefaultVocabSize;
  SplitArgs split_args;
};

struct TrainArgs {
  std::string data, out, vocab, config;
  std::optional<std::string> preset;
  std::optional<std::size_t> vocab_size, max_len, layers, hidden, heads, ffn;
  std::optional<std::size_t> batch_size, epochs;
  std::optional<double> learning_rate, eval_fraction;
  std::optional<std::uint64_t> seed;
  bool no_shuffle = false;
  bool dry_run = false;
  std::size_t log_every = 100;
};

struct EvalArgs {
  std::string checkpoint, data, vocab, predictions, split = "eval";
  std::optional<double> eval_fraction;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

struct ClassifyArgs {
  std::string checkpoint, vocab;
  std::vector<std::string> texts;
  bool from_stdin = false;
};

// Resolved training run: defaults < preset < config file < flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  double eval_fraction = 0.1;
  std::size_t vocab_size = kDefaultVocabSize;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw LoadError(what + " not found: " + path);
}

void require_writable_target(const std::string& path, const std::string& what) {
  const fs::path p = fs::absolute(path);
  const fs::path parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw ConfigError(what + " directory does not exist: " + parent.string());
}

void apply_preset(const std::string& name, ModelConfig& m) {
  if (name == "desk") {
    m = ModelConfig::desk(m.vocab_size);
  } else if (name == "base") {
    m = ModelConfig::base(m.vocab_size);
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected desk or base)");
  }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

RunConfig resolve_run_config(const TrainArgs& a) {
  nlohmann::json file = nlohmann::json::object();
  if (!a.config.empty()) {
    try {
      file = nlohmann::json::parse(read_file(a.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError(a.config + ": expected a JSON object");
    static const std::vector<std::string> known{
        "preset",     "vocab_size", "max_len", "layers",        "hidden",
        "heads",      "ffn",        "batch_size", "epochs",     "learning_rate",
        "adam_beta1", "adam_beta2", "adam_eps", "seed",         "eval_fraction",
        "shuffle_each_epoch"};
    for (const auto& [key, _] : file.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ConfigError(a.config + ": unknown key '" + key + "'");
  }

  RunConfig rc;
  std::string preset;
  take(file, "preset", preset);
  if (a.preset) preset = *a.preset;
  if (!preset.empty()) apply_preset(preset, rc.model);

  take(file, "vocab_size", rc.vocab_size);
  take(file, "max_len", rc.model.max_len);
  take(file, "layers", rc.model.num_layers);
  take(file, "hidden", rc.model.hidden_size);
  take(file, "heads", rc.model.num_heads);
  take(file, "ffn", rc.model.ffn_size);
  take(file, "batch_size", rc.train.batch_size);
  take(file, "epochs", rc.train.epochs);
  take(file, "learning_rate", rc.train.learning_rate);
  take(file, "adam_beta1", rc.train.adam_beta1);
  take(file, "adam_beta2", rc.train.adam_beta2);
  take(file, "adam_eps", rc.train.adam_eps);
  take(file, "seed", rc.train.seed);
  take(file, "shuffle_each_epoch", rc.train.shuffle_each_epoch);
  take(file, "eval_fraction", rc.eval_fraction);

  if (a.vocab_size) rc.vocab_size = *a.vocab_size;
  if (a.max_len) rc.model.max_len = *a.max_len;
  if (a.layers) rc.model.num_layers = *a.layers;
  if (a.hidden) rc.model.hidden_size = *a.hidden;
  if (a.heads) rc.model.num_heads = *a.heads;
  if (a.ffn) rc.model.ffn_size = *a.ffn;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.learning_rate) rc.train.learning_rate = *a.learning_rate;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.eval_fraction) rc.eval_fraction = *a.eval_fraction;
  if (a.no_shuffle) rc.train.shuffle_each_epoch = false;

  rc.train.validate();
  if (!(rc.eval_fraction > 0.0 && rc.eval_fraction < 1.0))
    throw ConfigError("eval_fraction must be in (0, 1)");
  return rc;
}

std::string run_header(const RunConfig& rc) {
  std::ostringstream h;
  h << "batch_size=" << rc.train.batch_size << " epochs=" << rc.train.epochs
    << " eval_fraction=" << rc.eval_fraction << " learning_rate=" << rc.train.learning_rate
    << " seed=" << rc.train.seed << " max_len=" << rc.model.max_len
    << " layers=" << rc.model.num_layers << " hidden=" << rc.model.hidden_size
    << " heads=" << rc.model.num_heads << " ffn=" << rc.model.ffn_size
    << " vocab_size=" << rc.model.vocab_size;
  return h.str();
}

std::vector<std::string> texts_of(std::span<const LabeledMessage> messages) {
  std::vector<std::string> out;
  out.reserve(messages.size());
  for (const auto& m : messages) out.push_back(m.text);
  return out;
}

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  LoadResult result;
  if (a.format == "sms") {
    if (a.in.empty()) throw ConfigError("--format sms needs --in");
    if (!a.spam_dir.empty() || !a.ham_dir.empty())
      throw ConfigError("--spam-dir/--ham-dir do not apply to --format sms");
    require_file(a.in, "input file");
    require_writable_target(a.out, "output");
    result = load_sms_collection(a.in, a.source.empty() ? "sms" : a.source);
  } else {
    const auto format = parse_mail_format(a.format);
    if (!format) throw ConfigError("unknown format '" + a.format + "'");
    if (a.spam_dir.empty() || a.ham_dir.empty())
      throw ConfigError("--format " + a.format + " needs --spam-dir and --ham-dir");
    if (!a.in.empty()) throw ConfigError("--in applies only to --format sms");
    for (const auto& dir : {a.spam_dir, a.ham_dir})
      if (!fs::is_directory(dir)) throw LoadError("directory not found: " + dir);
    require_writable_target(a.out, "output");
    result = load_mail_dirs(a.spam_dir, a.ham_dir, *format, a.source.empty() ? "mail" : a.source);
  }

  std::ostringstream buffer;
  write_jsonl(result.messages, buffer);
  write_file_atomic(a.out, buffer.str());
  out << result.counts.total << " total / " << result.counts.spam << " spam / "
      << result.counts.ham << " ham\n";
  if (result.skipped) err << "skipped " << result.skipped << " malformed entries\n";
  return 0;
}

int cmd_build_vocab(const BuildVocabArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.data, "prepared data");
  require_writable_target(a.out, "output");
  if (a.split != "train" && a.split != "all") throw ConfigError("--split must be train or all");
  auto messages = read_jsonl(a.data);
  std::vector<LabeledMessage> source;
  if (a.split == "all") {
    source = std::move(messages);
  } else {
    source = split_train_eval(std::move(messages), a.split_args.eval_fraction, a.split_args.seed).train;
  }
  const Vocab vocab = build_vocab(texts_of(source), a.size);
  write_file_atomic(a.out, vocab.serialize());
  out << vocab.size() << " tokens\n";
  err << "vocab sha256 " << vocab.digest() << '\n';
  return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.data, "prepared data");
  if (!a.vocab.empty()) require_file(a.vocab, "vocabulary");
  if (!a.config.empty()) require_file(a.config, "config file");
  require_writable_target(a.out, "checkpoint");
  if (fs::exists(a.out) && !fs::is_directory(a.out))
    throw ConfigError("checkpoint path exists and is not a directory: " + a.out);

  RunConfig rc = resolve_run_config(a);
  std::optional<Vocab> given;
  if (!a.vocab.empty()) given = load_vocab(a.vocab);

  auto split = split_train_eval(read_jsonl(a.data), rc.eval_fraction, rc.train.seed);
  const Vocab vocab = given ? *given : build_vocab(texts_of(split.train), rc.vocab_size);
  rc.model.vocab_size = vocab.size();
  rc.model.validate();

  err << "run: " << run_header(rc) << '\n';
  err << "data: " << split.train.size() << " train / " << split.eval.size() << " eval\n";
  if (a.dry_run) return 0;

  TrainHooks hooks;
  hooks.eval_set = split.eval;
  hooks.on_epoch = [&](const EpochLog& log) { out << to_json(log).dump() << std::endl; };
  const std::size_t every = a.log_every;
  hooks.on_step = [&, every](std::uint64_t step, double loss) {
    if (every && step % every == 0) err << "step " << step << " loss " << loss << '\n';
  };
  const Checkpoint ckpt = train(split.train, vocab, rc.model, rc.train, hooks);
  save_checkpoint(ckpt, a.out);
  err << "checkpoint written to " << a.out << '\n';
  return 0;
}

std::vector<LabelPair> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::vector<LabelPair> pairs;
  std::string line;
  std::size_t number = 0;
  auto parse = [&](std::string field) {
    field.erase(0, field.find_first_not_of(" \t\r"));
    field.erase(field.find_last_not_of(" \t\r") + 1);
    if (field == "0") return Label::ham;
    if (field == "1") return Label::spam;
    if (auto label = parse_label(field)) return *label;
    throw InputError(path + ":" + std::to_string(number) + ": bad label '" + field + "'");
  };
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto split = line.find_first_of("\t,");
    if (split == std::string::npos)
      throw InputError(path + ":" + std::to_string(number) + ": expected 'gold<TAB>predicted'");
    pairs.emplace_back(parse(line.substr(0, split)), parse(line.substr(split + 1)));
  }
  return pairs;
}

Checkpoint load_with_vocab(const std::string& dir, const std::string& vocab_path, Vocab*& vocab,
                           std::optional<Vocab>& storage) {
  if (!fs::is_directory(dir)) throw LoadError("checkpoint directory not found: " + dir);
  if (!vocab_path.empty()) require_file(vocab_path, "vocabulary");
  Checkpoint ckpt = load_checkpoint(dir);
  if (!vocab_path.empty()) {
    storage = load_vocab(vocab_path);
  } else if (ckpt.vocab) {
    storage = *ckpt.vocab;
  } else {
    throw ConfigError("checkpoint has no vocab.txt; pass --vocab");
  }
  vocab = &*storage;
  if (vocab->digest() != ckpt.vocab_sha256) {
    throw ConfigError("vocabulary digest " + vocab->digest().substr(0, 12) +
                      " does not match checkpoint digest " + ckpt.vocab_sha256.substr(0, 12));
  }
  return ckpt;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  std::vector<LabelPair> pairs;
  if (!a.predictions.empty()) {
    require_file(a.predictions, "predictions file");
    pairs = read_predictions(a.predictions);
  } else {
    if (a.checkpoint.empty() || a.data.empty())
      throw ConfigError("eval needs --checkpoint and --data, or --predictions");
    if (a.split != "eval" && a.split != "all") throw ConfigError("--split must be eval or all");
    require_file(a.data, "prepared data");
    std::optional<Vocab> storage;
    Vocab* vocab = nullptr;
    const Checkpoint ckpt = load_with_vocab(a.checkpoint, a.vocab, vocab, storage);
    auto messages = read_jsonl(a.data);
    if (a.split == "eval") {
      messages = split_train_eval(std::move(messages), a.eval_fraction.value_or(0.1),
                                  a.seed.value_or(ckpt.train_config.seed))
                     .eval;
    }
    pairs = evaluate(ckpt, messages, *vocab);
  }
  const ClassReport r = report(pairs);
  if (a.json) {
    out << to_json(r).dump(2) << '\n';
  } else {
    out << to_table(r);
  }
  return 0;
}

int cmd_classify(const ClassifyArgs& a, std::istream& in, std::ostream& out, std::ostream&) {
  if (a.texts.empty() == !a.from_stdin) throw ConfigError("classify needs exactly one of --text or --stdin");
  std::optional<Vocab> storage;
  Vocab* vocab = nullptr;
  const Checkpoint ckpt = load_with_vocab(a.checkpoint, a.vocab, vocab, storage);
  auto emit = [&](const std::string& text) {
    const Prediction p = classify(ckpt.params, text, *vocab);
    char prob[32];
    std::snprintf(prob, sizeof prob, "%.4f", p.probability);
    out << to_string(p.label) << '\t' << prob << '\n';
  };
  if (a.from_stdin) {
    std::string line;
    while (std::getline(in, line)) emit(line);
  } else {
    for (const auto& t : a.texts) emit(t);
  }
  out.flush();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Transformer-encoder spam detector: prepare corpora, train, evaluate, classify.",
               "spamdet"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Clean and label a corpus into JSON lines");
  prepare->add_option("--format", prep.format, "sms, raw-email or plain-text")
      ->required()
      ->check(CLI::IsMember({"sms", "raw-email", "plain-text"}));
  prepare->add_option("--in", prep.in, "SMS collection file (label<TAB>text per line)");
  prepare->add_option("--spam-dir", prep.spam_dir, "Directory of spam messages");
  prepare->add_option("--ham-dir", prep.ham_dir, "Directory of ham messages");
  prepare->add_option("--out", prep.out, "Output .jsonl file")->required();
  prepare->add_option("--source", prep.source, "Corpus name stored with each record");

  BuildVocabArgs bv;
  auto* build = app.add_subcommand("build-vocab", "Induce a WordPiece vocabulary");
  build->add_option("--data", bv.data, "Prepared .jsonl file")->required();
  build->add_option("--out", bv.out, "Output vocab.txt")->required();
  build->add_option("--size", bv.size, "Target vocabulary size")->capture_default_str();
  build->add_option("--split", bv.split, "Texts to use: train or all")->capture_default_str();
  build->add_option("--eval-fraction", bv.split_args.eval_fraction)->capture_default_str();
  build->add_option("--seed", bv.split_args.seed)->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a classifier and write a checkpoint");
  tr->add_option("--data", ta.data, "Prepared .jsonl file")->required();
  tr->add_option("--out", ta.out, "Checkpoint directory")->required();
  tr->add_option("--vocab", ta.vocab, "Existing vocab.txt (default: build from the train split)");
  tr->add_option("--config", ta.config, "JSON run config");
  tr->add_option("--preset", ta.preset, "Model geometry preset: desk or base");
  tr->add_option("--vocab-size", ta.vocab_size, "Size of an induced vocabulary");
  tr->add_option("--max-len", ta.max_len);
  tr->add_option("--layers", ta.layers);
  tr->add_option("--hidden", ta.hidden);
  tr->add_option("--heads", ta.heads);
  tr->add_option("--ffn", ta.ffn);
  tr->add_option("--batch-size", ta.batch_size);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--lr", ta.learning_rate, "Adam learning rate");
  tr->add_option("--seed", ta.seed, "Seed for the split, init and shuffling");
  tr->add_option("--eval-fraction", ta.eval_fraction);
  tr->add_flag("--no-shuffle", ta.no_shuffle, "Keep the same batch order every epoch");
  tr->add_flag("--dry-run", ta.dry_run, "Resolve and print the run config, then stop");
  tr->add_option("--log-every", ta.log_every, "Report loss every N steps (0 = never)")
      ->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Report precision, recall and F1");
  auto* ev_ckpt = ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint directory");
  auto* ev_data = ev->add_option("--data", ea.data, "Prepared .jsonl file");
  ev->add_option("--vocab", ea.vocab, "Vocabulary (default: the checkpoint's copy)");
  ev->add_option("--split", ea.split, "eval (re-derived held-out split) or all")
      ->capture_default_str();
  ev->add_option("--eval-fraction", ea.eval_fraction);
  ev->add_option("--seed", ea.seed, "Split seed (default: the checkpoint's seed)");
  auto* ev_pred = ev->add_option("--predictions", ea.predictions,
                                 "Score a gold<TAB>predicted file instead of running a model");
  ev_pred->excludes(ev_ckpt)->excludes(ev_data);
  ev->add_flag("--json", ea.json, "Emit the report as JSON");

  ClassifyArgs ca;
  auto* cl = app.add_subcommand("classify", "Label messages as spam or ham");
  cl->add_option("--checkpoint", ca.checkpoint, "Checkpoint directory")->required();
  cl->add_option("--vocab", ca.vocab, "Vocabulary (default: the checkpoint's copy)");
  auto* text = cl->add_option("--text", ca.texts, "Message text (repeatable)");
  auto* stdin_flag = cl->add_flag("--stdin", ca.from_stdin, "Classify each line of standard input");
  text->excludes(stdin_flag);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prep, out, err);
    if (build->parsed()) return cmd_build_vocab(bv, out, err);
    if (tr->parsed()) return cmd_train(ta, out, err);
    if (ev->parsed()) return cmd_eval(ea, out, err);
    if (cl->parsed()) return cmd_classify(ca, in, out, err);
  } catch (const std::exception& e) {
    out.flush();
    err << "spamdet: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace spamdet
