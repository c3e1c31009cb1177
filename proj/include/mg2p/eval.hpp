// Phoneme error rate, word error rate and WER-100, macro-averaged over
// languages with equal weight.
#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mg2p/corpus.hpp"

namespace mg2p {

using TokenSeq = std::vector<std::string>;

// Unit-cost edit distance over whole tokens.
std::size_t Levenshtein(std::span<const std::string> a, std::span<const std::string> b);

// Token-sequence equality after NFC normalization of each token.
bool SameSequence(std::span<const std::string> a, std::span<const std::string> b);

// levenshtein(pred, gold) / |gold|; may exceed 1. Throws on empty gold.
double PhonemeErrorRate(std::span<const std::string> pred, std::span<const std::string> gold);

// Percentage of pairs (top-1 prediction, gold) that differ.
double WordErrorRate(std::span<const std::pair<TokenSeq, TokenSeq>> pairs);

inline constexpr std::size_t kWer100Depth = 100;

struct RankedPrediction {
  std::vector<TokenSeq> hypotheses;  // best first
  TokenSeq gold;
  std::size_t width = kWer100Depth;  // beam width that produced the list
};

// Percentage of lists whose first 100 hypotheses miss the gold sequence.
// Lists produced with a width below 100 add a warning.
double Wer100(std::span<const RankedPrediction> lists,
              std::vector<std::string>* warnings = nullptr);

struct LanguageScores {
  double wer = 0.0;
  double wer100 = 0.0;
  double per = 0.0;
  std::size_t words = 0;
};

enum class PerMode {
  kMeanOfRatios,  // mean of per-word PER
  kRatioOfSums,   // total edits / total gold length
};

struct EvalReport {
  std::map<std::string, LanguageScores> per_language;
  LanguageScores macro;  // unweighted mean over languages; words = total
  std::vector<std::string> warnings;
};

struct Prediction {
  std::vector<TokenSeq> nbest;
  std::size_t width = kWer100Depth;
};

using Decoder = std::function<Prediction(const LexiconEntry&)>;

std::map<std::string, std::vector<LexiconEntry>> GroupByLanguage(
    std::span<const LexiconEntry> entries);

// Scores one language from already-decoded predictions.
LanguageScores ScoreLanguage(std::span<const RankedPrediction> predictions,
                             PerMode mode = PerMode::kMeanOfRatios,
                             std::vector<std::string>* warnings = nullptr);

// Fills `macro` from `per_language`.
void ComputeMacro(EvalReport& report);

// Decodes every test word and scores it. Languages with no words are
// skipped with a warning.
EvalReport Evaluate(const std::map<std::string, std::vector<LexiconEntry>>& by_language,
                    const Decoder& decoder, PerMode mode = PerMode::kMeanOfRatios);

// Tab-separated `lang words WER WER100 PER` with a trailing MACRO row;
// percentages with two decimals.
void WriteReportTsv(std::ostream& out, const EvalReport& report);
// `key = value` lines, e.g. `deu.wer = 12.50`, `macro.per = 3.25`.
void WriteReportKeyValue(std::ostream& out, const EvalReport& report);

}  // namespace mg2p
