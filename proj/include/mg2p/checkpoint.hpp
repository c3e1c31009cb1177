// Self-describing binary checkpoints.
//
// Layout (all integers little-endian):
//   "MG2P"  u32 version
//   u64 tensor count, then per tensor: u32 name length, name bytes,
//       u32 rank, u64 dims[rank]
//   per tensor, in manifest order: raw f32 values
//   source vocabulary, target vocabulary: u64 count, then u32 length + bytes
//       per token
//   config block: u64 count, then (u32 length + bytes) for key and value
#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "mg2p/corpus.hpp"
#include "mg2p/model.hpp"

namespace mg2p {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  Vocabulary source;
  Vocabulary target;
  // Model settings (ModelConfig::ToKeyValues) plus run metadata.
  std::map<std::string, std::string> config;

  ModelConfig model_config() const { return ModelConfig::FromKeyValues(config); }
  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void WriteCheckpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint ReadCheckpoint(std::istream& in);

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::string& path);

}  // namespace mg2p
