#include "mg2p/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "mg2p/unicode.hpp"

namespace mg2p {
namespace {

std::vector<std::string> SplitOn(std::string_view line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      return fields;
    }
    fields.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string> SplitWhitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

void StripCarriageReturn(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

bool IsLanguageCode(std::string_view code) {
  return code.size() == 3 && std::all_of(code.begin(), code.end(), [](char c) {
           return c >= 'a' && c <= 'z';
         });
}

std::string LanguageToken(std::string_view lang) {
  return "<" + std::string(lang) + ">";
}

ParseResult ParseLexicon(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    StripCarriageReturn(line);
    if (line.empty() || line[0] == '#') continue;
    auto reject = [&](std::string reason) {
      result.rejects.push_back({line_number, std::move(reason), line});
    };
    const auto fields = SplitOn(line, '\t');
    if (fields.size() != 3) {
      reject("expected 3 tab-separated fields, got " +
             std::to_string(fields.size()));
      continue;
    }
    if (!IsLanguageCode(fields[0])) {
      reject("bad language code '" + fields[0] + "'");
      continue;
    }
    if (!unicode::IsValidUtf8(fields[1]) || !unicode::IsValidUtf8(fields[2])) {
      reject("malformed UTF-8");
      continue;
    }
    LexiconEntry entry;
    entry.lang = fields[0];
    entry.spelling = unicode::Nfc(fields[1]);
    if (entry.spelling.empty()) {
      reject("empty spelling");
      continue;
    }
    if (unicode::ContainsWhitespace(entry.spelling)) {
      reject("spelling contains whitespace");
      continue;
    }
    entry.phonemes = SplitWhitespace(fields[2]);
    if (entry.phonemes.empty()) {
      reject("empty pronunciation");
      continue;
    }
    entry.graphemes = TokenizeGraphemes(entry.spelling, entry.lang, false);
    result.entries.push_back(std::move(entry));
  }
  return result;
}

ParseResult ParseLexiconFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open lexicon '" + path + "'");
  return ParseLexicon(in);
}

void WriteLexicon(std::ostream& out, std::span<const LexiconEntry> entries) {
  for (const auto& e : entries) {
    out << e.lang << '\t' << e.spelling << '\t';
    for (std::size_t i = 0; i < e.phonemes.size(); ++i) {
      if (i) out << ' ';
      out << e.phonemes[i];
    }
    out << '\n';
  }
}

std::vector<std::string> TokenizeGraphemes(std::string_view word,
                                           std::string_view lang,
                                           bool use_lang_token) {
  const std::string normalized = unicode::Nfc(word);
  if (normalized.empty()) throw std::invalid_argument("empty source");
  std::vector<std::string> tokens;
  if (use_lang_token) tokens.push_back(LanguageToken(lang));
  for (auto& cp : unicode::SplitCodepoints(normalized)) {
    tokens.push_back(std::move(cp));
  }
  return tokens;
}

std::vector<std::string> SourceTokens(const LexiconEntry& entry,
                                      bool use_lang_token) {
  std::vector<std::string> tokens;
  tokens.reserve(entry.graphemes.size() + 1);
  if (use_lang_token) tokens.push_back(LanguageToken(entry.lang));
  tokens.insert(tokens.end(), entry.graphemes.begin(), entry.graphemes.end());
  return tokens;
}

DatasetSplit SplitTrainVal(std::span<const LexiconEntry> entries,
                           std::size_t cap, double val_fraction,
                           std::uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("cap must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("val_fraction must be in [0, 1)");
  }
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> by_lang;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [it, inserted] = by_lang.try_emplace(entries[i].lang);
    if (inserted) order.push_back(entries[i].lang);
    if (it->second.size() < cap) it->second.push_back(i);
  }

  DatasetSplit split;
  std::mt19937_64 rng(seed);
  for (const auto& lang : order) {
    auto& kept = by_lang[lang];
    std::shuffle(kept.begin(), kept.end(), rng);
    const std::size_t n = kept.size();
    // Guard against 0.1 * 30 == 3.0000000000000004 rounding up to 4.
    auto n_val = static_cast<std::size_t>(
        std::ceil(val_fraction * static_cast<double>(n) - 1e-9));
    n_val = std::min(n_val, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      auto& side = i < n_val ? split.validation : split.train;
      side.push_back(entries[kept[i]]);
    }
  }
  return split;
}

std::vector<LexiconEntry> FilterLanguages(std::span<const LexiconEntry> entries,
                                          const std::set<std::string>& langs) {
  std::vector<LexiconEntry> out;
  for (const auto& e : entries) {
    if (langs.count(e.lang)) out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::string& Vocabulary::PadToken() {
  static const std::string token = "<PAD>";
  return token;
}
const std::string& Vocabulary::BosToken() {
  static const std::string token = "<BOS>";
  return token;
}
const std::string& Vocabulary::EosToken() {
  static const std::string token = "<EOS>";
  return token;
}
const std::string& Vocabulary::UnkToken() {
  static const std::string token = "<UNK>";
  return token;
}

Vocabulary::Vocabulary()
    : tokens_{PadToken(), BosToken(), EosToken(), UnkToken()} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::FromTokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumReserved || tokens[kPad] != PadToken() ||
      tokens[kBos] != BosToken() || tokens[kEos] != EosToken() ||
      tokens[kUnk] != UnkToken()) {
    throw std::invalid_argument("vocabulary must start with reserved tokens");
  }
  Vocabulary vocab;
  vocab.tokens_ = std::move(tokens);
  vocab.index_.clear();
  for (std::size_t i = 0; i < vocab.tokens_.size(); ++i) {
    const auto& t = vocab.tokens_[i];
    if (t.empty()) throw std::invalid_argument("empty vocabulary token");
    if (!vocab.index_.emplace(t, i).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
    }
  }
  return vocab;
}

const std::string& Vocabulary::Token(std::size_t id) const {
  if (id >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

bool Vocabulary::Contains(std::string_view token) const {
  return index_.find(token) != index_.end();
}

std::size_t Vocabulary::Index(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::Encode(
    std::span<const std::string> tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(Index(t));
  return ids;
}

std::vector<std::string> Vocabulary::Decode(
    std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(Token(id));
  return out;
}

Vocabulary BuildVocab(std::span<const LexiconEntry> entries, Side side,
                      bool use_lang_token, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : entries) {
    if (side == Side::kSource) {
      for (const auto& t : SourceTokens(e, use_lang_token)) ++counts[t];
    } else {
      for (const auto& t : e.phonemes) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count >= min_count) ranked.emplace_back(token, count);
  }
  // `counts` is already lexicographic, so a stable sort on frequency keeps
  // the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {Vocabulary::PadToken(), Vocabulary::BosToken(),
                                     Vocabulary::EosToken(), Vocabulary::UnkToken()};
  for (auto& [token, count] : ranked) {
    if (std::find(tokens.begin(), tokens.end(), token) == tokens.end()) {
      tokens.push_back(token);
    }
  }
  return Vocabulary::FromTokens(std::move(tokens));
}

void WriteVocabulary(std::ostream& out, const Vocabulary& vocab) {
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocabulary ReadVocabulary(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    StripCarriageReturn(line);
    tokens.push_back(line);
  }
  return Vocabulary::FromTokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Inventories

namespace {

FeatureVector ParseFeatures(const std::string& field, std::size_t line_number) {
  FeatureVector features;
  for (const auto& f : SplitOn(field, ',')) {
    if (f == "+") {
      features.push_back(1);
    } else if (f == "-") {
      features.push_back(-1);
    } else if (f == "0") {
      features.push_back(0);
    } else {
      throw std::invalid_argument("inventory line " + std::to_string(line_number) +
                                  ": bad feature value '" + f + "'");
    }
  }
  return features;
}

}  // namespace

InventorySet ParseInventory(std::istream& in) {
  InventorySet set;
  std::string line;
  std::size_t line_number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_number;
    StripCarriageReturn(line);
    if (line.empty()) continue;
    const auto fields = SplitOn(line, '\t');
    auto fail = [&](const std::string& what) {
      throw std::invalid_argument("inventory line " + std::to_string(line_number) +
                                  ": " + what);
    };
    if (!have_header) {
      if (fields.size() != 2 || fields[0] != "features") {
        fail("expected header 'features<TAB>name,...'");
      }
      set.feature_names = SplitOn(fields[1], ',');
      have_header = true;
      continue;
    }
    if (fields.size() != 3) fail("expected 3 tab-separated fields");
    const auto& lang = fields[0];
    const auto& phoneme = fields[1];
    if (lang != "*" && !IsLanguageCode(lang)) fail("bad language code '" + lang + "'");
    if (phoneme.empty()) fail("empty phoneme");
    FeatureVector features = ParseFeatures(fields[2], line_number);
    if (features.size() != set.feature_names.size()) {
      fail("expected " + std::to_string(set.feature_names.size()) +
           " features, got " + std::to_string(features.size()));
    }
    auto [it, inserted] = set.feature_table.emplace(phoneme, features);
    if (!inserted && it->second != features) {
      fail("conflicting features for '" + phoneme + "'");
    }
    if (lang == "*") continue;
    auto& inventory = set.inventories[lang];
    inventory.lang = lang;
    inventory.phonemes.insert(phoneme);
    inventory.features[phoneme] = std::move(features);
  }
  if (!have_header) throw std::invalid_argument("inventory file has no header");
  return set;
}

InventorySet ParseInventoryFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open inventory '" + path + "'");
  return ParseInventory(in);
}

std::size_t FeatureDistance(const FeatureVector& a, const FeatureVector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("feature vectors differ in length");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

CleanResult CleanTranscription(
    std::span<const std::string> phonemes, const PhonemeInventory& inventory,
    const std::map<std::string, FeatureVector>& feature_table) {
  CleanResult result;
  for (const auto& p : phonemes) {
    if (inventory.phonemes.count(p)) {
      result.phonemes.push_back(p);
      continue;
    }
    auto features = feature_table.find(p);
    if (features == feature_table.end() || inventory.phonemes.empty()) {
      result.warnings.push_back("no feature vector for '" + p + "' (" +
                                inventory.lang + ")");
      result.phonemes.push_back(p);
      continue;
    }
    // std::set iterates lexicographically, so strict < keeps the tie-break.
    const std::string* best = nullptr;
    std::size_t best_distance = 0;
    for (const auto& candidate : inventory.phonemes) {
      const std::size_t d =
          FeatureDistance(features->second, inventory.features.at(candidate));
      if (!best || d < best_distance) {
        best = &candidate;
        best_distance = d;
      }
    }
    result.phonemes.push_back(*best);
  }
  return result;
}

std::vector<std::string> CleanEntries(std::vector<LexiconEntry>& entries,
                                      const InventorySet& inventories) {
  std::vector<std::string> warnings;
  for (auto& e : entries) {
    auto it = inventories.inventories.find(e.lang);
    if (it == inventories.inventories.end()) continue;
    auto cleaned = CleanTranscription(e.phonemes, it->second,
                                      inventories.feature_table);
    e.phonemes = std::move(cleaned.phonemes);
    for (auto& w : cleaned.warnings) warnings.push_back(std::move(w));
  }
  return warnings;
}

}  // namespace mg2p
