// Pronunciation lexicons: parsing, language-ID tokens, per-language splits,
// vocabularies and inventory-based transcription cleaning.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mg2p {

// One spelling/pronunciation pair. `graphemes` never contains the
// language-ID token; that is added when a source sequence is built.
struct LexiconEntry {
  std::string lang;
  std::string spelling;
  std::vector<std::string> graphemes;
  std::vector<std::string> phonemes;

  bool operator==(const LexiconEntry&) const = default;
};

struct RejectedLine {
  std::size_t line_number = 0;  // 1-based
  std::string reason;
  std::string text;
};

struct ParseResult {
  std::vector<LexiconEntry> entries;
  std::vector<RejectedLine> rejects;
};

// True for three lowercase ASCII letters.
bool IsLanguageCode(std::string_view code);

// "<eng>" for "eng".
std::string LanguageToken(std::string_view lang);

// Reads `lang<TAB>spelling<TAB>phonemes` lines. Blank lines and lines
// starting with '#' are skipped; malformed lines are collected in `rejects`.
ParseResult ParseLexicon(std::istream& in);
ParseResult ParseLexiconFile(const std::string& path);

// Writes entries back in lexicon format (phonemes joined by single spaces).
void WriteLexicon(std::ostream& out, std::span<const LexiconEntry> entries);

// NFC-normalizes `word`, splits it into codepoints and optionally prepends
// the language token. Throws std::invalid_argument("empty source") on an
// empty word.
std::vector<std::string> TokenizeGraphemes(std::string_view word,
                                           std::string_view lang,
                                           bool use_lang_token);

// Source-side token sequence for an entry.
std::vector<std::string> SourceTokens(const LexiconEntry& entry,
                                      bool use_lang_token);

struct DatasetSplit {
  std::vector<LexiconEntry> train;
  std::vector<LexiconEntry> validation;
};

// Per language (in order of first appearance): keep the first `cap`
// entries, shuffle them with `seed`, and move ceil(val_fraction * kept) of
// them to validation. A language never ends up with an empty train side.
DatasetSplit SplitTrainVal(std::span<const LexiconEntry> entries,
                           std::size_t cap = 10000, double val_fraction = 0.1,
                           std::uint64_t seed = 1);

// Keeps entries whose language is in `langs`.
std::vector<LexiconEntry> FilterLanguages(std::span<const LexiconEntry> entries,
                                          const std::set<std::string>& langs);

enum class Side { kSource, kTarget };

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kNumReserved = 4;

  static const std::string& PadToken();
  static const std::string& BosToken();
  static const std::string& EosToken();
  static const std::string& UnkToken();

  // Vocabulary holding only the reserved tokens.
  Vocabulary();

  // Builds from a full token list whose first four entries are the reserved
  // tokens. Throws std::invalid_argument on duplicates or a bad prefix.
  static Vocabulary FromTokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& Token(std::size_t id) const;
  bool Contains(std::string_view token) const;
  // Unknown tokens map to kUnk.
  std::size_t Index(std::string_view token) const;

  std::vector<std::size_t> Encode(std::span<const std::string> tokens) const;
  std::vector<std::string> Decode(std::span<const std::size_t> ids) const;

  static bool IsReserved(std::size_t id) { return id < kNumReserved; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Reserved tokens, then every token of `side` with count >= min_count,
// by descending frequency with lexicographic tie-break.
Vocabulary BuildVocab(std::span<const LexiconEntry> entries, Side side,
                      bool use_lang_token, std::size_t min_count = 1);

// One token per line; line number is the index.
void WriteVocabulary(std::ostream& out, const Vocabulary& vocab);
Vocabulary ReadVocabulary(std::istream& in);

// Articulatory features: +1 / 0 / -1 per named feature.
using FeatureVector = std::vector<int8_t>;

struct PhonemeInventory {
  std::string lang;
  std::set<std::string> phonemes;
  std::map<std::string, FeatureVector> features;
};

// Contents of an inventory file: the shared feature table (every phoneme
// with a feature vector, from any language) and per-language inventories.
struct InventorySet {
  std::vector<std::string> feature_names;
  std::map<std::string, FeatureVector> feature_table;
  std::map<std::string, PhonemeInventory> inventories;
};

// Format: first line `features<TAB>name1,name2,...`, then lines
// `lang<TAB>phoneme<TAB>f1,f2,...` with each fi one of + 0 -. The lang `*`
// contributes to the feature table only. Throws std::invalid_argument with
// the line number on malformed input.
InventorySet ParseInventory(std::istream& in);
InventorySet ParseInventoryFile(const std::string& path);

struct CleanResult {
  std::vector<std::string> phonemes;
  std::vector<std::string> warnings;
};

std::size_t FeatureDistance(const FeatureVector& a, const FeatureVector& b);

// Replaces each out-of-inventory phoneme by the inventory phoneme at the
// smallest Hamming distance (ties: lexicographically smallest). Phonemes
// without a feature vector pass through and produce a warning.
CleanResult CleanTranscription(
    std::span<const std::string> phonemes, const PhonemeInventory& inventory,
    const std::map<std::string, FeatureVector>& feature_table);

// Cleans every entry whose language has an inventory; returns warnings.
std::vector<std::string> CleanEntries(std::vector<LexiconEntry>& entries,
                                      const InventorySet& inventories);

}  // namespace mg2p
