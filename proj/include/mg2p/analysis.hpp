// Embedding neighbours and cross-language-token translation.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mg2p/corpus.hpp"
#include "mg2p/eval.hpp"
#include "mg2p/model.hpp"

namespace mg2p {

struct NeighborList {
  std::string query;
  std::vector<std::pair<std::string, double>> neighbors;  // best first
};

// Cosine similarity; 0 when either vector is all zeros.
double CosineSimilarity(std::span<const float> a, std::span<const float> b);

// Closest target-embedding rows to `symbol`, excluding the symbol itself
// and the reserved tokens. Throws std::invalid_argument for an unknown
// symbol or an all-zero query row.
NeighborList NearestPhonemes(const std::string& symbol, std::size_t k,
                             const ModelParams<float>& params, const Vocabulary& target);

// Same over the language-ID rows of the source embedding.
NeighborList NearestLanguages(const std::string& lang, std::size_t k,
                              const ModelParams<float>& params, const Vocabulary& source);

// Top-1 pronunciation of `word` under each language token in `langs`.
std::vector<std::pair<std::string, TokenSeq>> TranslateAs(
    const std::string& word, std::span<const std::string> langs,
    const ModelParams<float>& params, const ModelConfig& config,
    const Vocabulary& source, const Vocabulary& target, std::size_t width = 10);

void WriteNeighbors(std::ostream& out, std::span<const NeighborList> lists);
void WriteTranslations(std::ostream& out,
                       std::span<const std::pair<std::string, TokenSeq>> rows);

}  // namespace mg2p
