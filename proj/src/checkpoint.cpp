#include "mg2p/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mg2p {
namespace {

constexpr char kMagic[4] = {'M', 'G', '2', 'P'};

template <typename U>
void PutLe(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U GetLe(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw CheckpointError("truncated checkpoint");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void PutString(std::ostream& out, const std::string& s) {
  PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string GetString(std::istream& in) {
  const auto n = GetLe<std::uint32_t>(in);
  if (n > (1u << 24)) throw CheckpointError("implausible string length in checkpoint");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

void PutVocabulary(std::ostream& out, const Vocabulary& vocab) {
  PutLe<std::uint64_t>(out, vocab.size());
  for (const auto& t : vocab.tokens()) PutString(out, t);
}

Vocabulary GetVocabulary(std::istream& in) {
  const auto n = GetLe<std::uint64_t>(in);
  if (n > (1u << 24)) throw CheckpointError("implausible vocabulary size");
  std::vector<std::string> tokens;
  tokens.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) tokens.push_back(GetString(in));
  try {
    return Vocabulary::FromTokens(std::move(tokens));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad vocabulary in checkpoint: ") + e.what());
  }
}

}  // namespace

void WriteCheckpoint(std::ostream& out, const Checkpoint& checkpoint) {
  const auto named = checkpoint.params.Named();
  out.write(kMagic, sizeof(kMagic));
  PutLe<std::uint32_t>(out, kCheckpointVersion);
  PutLe<std::uint64_t>(out, named.size());
  for (const auto& [name, tensor] : named) {
    PutString(out, name);
    PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
    for (auto d : tensor->shape()) PutLe<std::uint64_t>(out, d);
  }
  for (const auto& [name, tensor] : named) {
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      PutLe<std::uint32_t>(out, std::bit_cast<std::uint32_t>((*tensor)[i]));
    }
  }
  PutVocabulary(out, checkpoint.source);
  PutVocabulary(out, checkpoint.target);
  PutLe<std::uint64_t>(out, checkpoint.config.size());
  for (const auto& [key, value] : checkpoint.config) {
    PutString(out, key);
    PutString(out, value);
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint ReadCheckpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const auto version = GetLe<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = GetLe<std::uint64_t>(in);
  if (count > 4096) throw CheckpointError("implausible tensor count");
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = GetString(in);
    const auto rank = GetLe<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(GetLe<std::uint64_t>(in));
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  std::map<std::string, Tensor<float>> tensors;
  for (auto& [name, shape] : manifest) {
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = std::bit_cast<float>(GetLe<std::uint32_t>(in));
    }
    tensors.emplace(name, std::move(t));
  }
  Checkpoint checkpoint;
  checkpoint.source = GetVocabulary(in);
  checkpoint.target = GetVocabulary(in);
  const auto entries = GetLe<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < entries; ++i) {
    std::string key = GetString(in);
    checkpoint.config[key] = GetString(in);
  }

  ModelConfig config;
  try {
    config = checkpoint.model_config();
    checkpoint.params = ModelParams<float>::Zeros(config);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad config block: ") + e.what());
  }
  if (config.src_vocab_size != checkpoint.source.size() ||
      config.tgt_vocab_size != checkpoint.target.size()) {
    throw CheckpointError("vocabulary sizes disagree with the config block");
  }
  auto named = checkpoint.params.Named();
  if (named.size() != tensors.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(named.size()));
  }
  for (auto& [name, tensor] : named) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("missing tensor '" + name + "'");
    if (!it->second.SameShape(*tensor)) {
      throw CheckpointError("tensor '" + name + "' has shape " +
                            ShapeString(it->second.shape()) + ", expected " +
                            ShapeString(tensor->shape()));
    }
    *tensor = std::move(it->second);
  }
  return checkpoint;
}

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  WriteCheckpoint(out, checkpoint);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return ReadCheckpoint(in);
}

}  // namespace mg2p
