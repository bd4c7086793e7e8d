#include <bit>
#include <cstring>

#include "spamdet/errors.hpp"
#include "spamdet/fileio.hpp"
#include "spamdet/trainer.hpp"

namespace spamdet {

namespace fs = std::filesystem;

namespace {

void append_floats(std::string& out, std::span<const float> values) {
  for (float x : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char bytes[4];
    std::memcpy(bytes, &bits, 4);
    out.append(bytes, 4);
  }
}

void read_floats(std::string_view blob, std::size_t offset, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
}

using Json = nlohmann::ordered_json;

Json tensor_table(const std::vector<std::pair<std::string, Shape>>& entries) {
  Json table = Json::array();
  std::size_t offset = 0;
  for (const auto& [name, shape] : entries) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    table.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"length", 4 * n}});
    offset += 4 * n;
  }
  return table;
}

// Checks a stored table against the tensors the config implies and the blob
// size, then returns the expected total byte count.
void check_table(const Json& table, const std::vector<std::pair<std::string, Shape>>& expected,
                 std::size_t blob_size, const std::string& blob_name) {
  if (!table.is_array() || table.size() != expected.size()) {
    throw CorruptionError(blob_name + ": tensor table lists " +
                          std::to_string(table.is_array() ? table.size() : 0) +
                          " tensors, expected " + std::to_string(expected.size()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    const Json& e = table[i];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != shape ||
        e.at("offset").get<std::size_t>() != offset || e.at("length").get<std::size_t>() != 4 * n) {
      throw CorruptionError(blob_name + ": tensor table entry " + std::to_string(i) +
                            " does not match " + name + " " + to_string(shape));
    }
    offset += 4 * n;
  }
  if (blob_size != offset) {
    throw CorruptionError(blob_name + ": expected " + std::to_string(offset) +
                          " bytes, found " + std::to_string(blob_size));
  }
}

std::vector<std::pair<std::string, Shape>> layout(const ModelParams& p) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& [name, t] : p.named()) out.emplace_back(name, t.shape());
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const auto entries = layout(ckpt.params);
  std::string weights;
  weights.reserve(ckpt.params.count() * 4);
  for (const Tensor& t : ckpt.params.tensors()) append_floats(weights, t.data());

  std::string optimizer;
  std::vector<std::pair<std::string, Shape>> moment_entries;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    moment_entries.emplace_back(entries[i].first + ".m", entries[i].second);
    append_floats(optimizer, ckpt.adam.m.at(i));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    moment_entries.emplace_back(entries[i].first + ".v", entries[i].second);
    append_floats(optimizer, ckpt.adam.v.at(i));
  }

  Json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["model_config"] = nlohmann::json(ckpt.model_config);
  manifest["train_config"] = nlohmann::json(ckpt.train_config);
  manifest["vocab_sha256"] = ckpt.vocab_sha256;
  manifest["epoch"] = ckpt.epoch;
  manifest["rng"] = {{"seed", ckpt.train_config.seed}, {"next_epoch", ckpt.epoch}};
  manifest["tensors"] = tensor_table(entries);
  manifest["optimizer"] = {{"step", ckpt.adam.step}, {"tensors", tensor_table(moment_entries)}};

  fs::path target = dir;
  if (!target.has_filename()) target = target.parent_path();
  if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
  const fs::path staging = staging_path(target);
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    write_file_atomic(staging / "manifest.json", manifest.dump(2) + "\n");
    write_file_atomic(staging / "weights.bin", weights);
    write_file_atomic(staging / "optimizer.bin", optimizer);
    if (ckpt.vocab) write_file_atomic(staging / "vocab.txt", ckpt.vocab->serialize());

    // rename() cannot replace a non-empty directory, so move any previous
    // checkpoint aside first.
    fs::path previous;
    if (fs::exists(target)) {
      previous = staging_path(target);
      fs::rename(target, previous);
    }
    fs::rename(staging, target);
    if (!previous.empty()) fs::remove_all(previous);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
}

Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig* expected) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path))
    throw LoadError("no checkpoint manifest at " + manifest_path.string());

  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(manifest_path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw VersionError("checkpoint format version " + std::to_string(version) +
                         " is not supported (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
    }
    ckpt.model_config = manifest.at("model_config").get<ModelConfig>();
    ckpt.train_config = manifest.at("train_config").get<TrainConfig>();
    ckpt.vocab_sha256 = manifest.at("vocab_sha256").get<std::string>();
    ckpt.epoch = manifest.at("epoch").get<std::size_t>();
    ckpt.adam.step = manifest.at("optimizer").at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(manifest_path.string() + ": " + e.what());
  }
  ckpt.model_config.validate();
  if (expected && !(*expected == ckpt.model_config)) {
    throw ConfigError("checkpoint was built for model config " +
                      nlohmann::json(ckpt.model_config).dump() + ", expected " +
                      nlohmann::json(*expected).dump());
  }

  ckpt.params = make_params(ckpt.model_config);
  const auto entries = layout(ckpt.params);
  try {
    const std::string weights = read_file(dir / "weights.bin");
    check_table(manifest.at("tensors"), entries, weights.size(), "weights.bin");
    std::size_t offset = 0;
    for (Tensor t : ckpt.params.tensors()) {
      read_floats(weights, offset, t.mutable_data());
      offset += 4 * t.numel();
    }

    std::vector<std::pair<std::string, Shape>> moment_entries;
    for (const auto& [name, shape] : entries) moment_entries.emplace_back(name + ".m", shape);
    for (const auto& [name, shape] : entries) moment_entries.emplace_back(name + ".v", shape);
    const std::string optimizer = read_file(dir / "optimizer.bin");
    check_table(manifest.at("optimizer").at("tensors"), moment_entries, optimizer.size(),
                "optimizer.bin");
    ckpt.adam.m.clear();
    ckpt.adam.v.clear();
    offset = 0;
    for (auto* moments : {&ckpt.adam.m, &ckpt.adam.v}) {
      for (const Tensor& t : ckpt.params.tensors()) {
        moments->emplace_back(t.numel());
        read_floats(optimizer, offset, moments->back());
        offset += 4 * t.numel();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(manifest_path.string() + ": " + e.what());
  }

  if (fs::is_regular_file(dir / "vocab.txt")) {
    Vocab vocab = load_vocab(dir / "vocab.txt");
    if (vocab.digest() != ckpt.vocab_sha256)
      throw CorruptionError("vocab.txt does not match the digest in the manifest");
    ckpt.vocab = std::move(vocab);
  }
  return ckpt;
}

}  // namespace spamdet
