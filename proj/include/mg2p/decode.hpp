// Greedy and beam-search decoding over a trained model.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mg2p/corpus.hpp"
#include "mg2p/model.hpp"

namespace mg2p {

// One ranked output. `tokens` holds target ids without BOS and EOS;
// `log_prob` sums the natural-log probabilities of every emitted token,
// including EOS when the hypothesis finished.
struct NBestEntry {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  bool truncated = false;  // hit max_len without emitting EOS
  std::size_t finish_step = 0;
};

// Ordered by descending score; ties by earlier finish, then by token ids.
using NBestList = std::vector<NBestEntry>;

struct BeamOptions {
  std::size_t width = 100;
  std::size_t max_len = 0;  // 0: DefaultMaxLength(|source|)
  // Rank by log_prob / (tokens emitted) instead of log_prob.
  bool length_normalize = false;
};

// Upper bound on decoding steps (EOS included).
inline std::size_t DefaultMaxLength(std::size_t source_length) {
  return 2 * source_length + 10;
}

// Every step expands each unfinished hypothesis over the target vocabulary
// minus PAD, BOS and UNK, and keeps the best `width` of finished and
// expanded hypotheses. Throws std::invalid_argument on an empty source or
// width / max_len of 0.
template <typename T>
NBestList BeamSearch(const ModelParams<T>& params, const ModelConfig& config,
                     std::span<const std::size_t> source,
                     const BeamOptions& options = {});

struct GreedyResult {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  bool truncated = false;
};

// Argmax decoding (lowest id on ties) over the same tokens beam search uses.
template <typename T>
GreedyResult GreedyDecode(const ModelParams<T>& params, const ModelConfig& config,
                          std::span<const std::size_t> source, std::size_t max_len = 0);

// Teacher-forced log-probability of `tokens` (plus EOS when `with_eos`).
template <typename T>
double ScoreSequence(const ModelParams<T>& params, const ModelConfig& config,
                     std::span<const std::size_t> source,
                     std::span<const std::size_t> tokens, bool with_eos = true);

// `word<TAB>rank<TAB>log_prob<TAB>phonemes` lines, rank starting at 1.
void WriteNBest(std::ostream& out, const std::string& word, const NBestList& nbest,
                const Vocabulary& target);

}  // namespace mg2p
