#include "mg2p/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "mg2p/decode.hpp"

namespace mg2p {
namespace {

std::span<const float> Row(const Tensor<float>& table, std::size_t r) {
  return table.span().subspan(r * table.cols(), table.cols());
}

NeighborList Nearest(const std::string& query, std::size_t query_id, std::size_t k,
                     const Tensor<float>& table, const Vocabulary& vocab,
                     const std::vector<std::size_t>& candidates) {
  const auto q = Row(table, query_id);
  if (std::all_of(q.begin(), q.end(), [](float v) { return v == 0.0f; })) {
    throw std::invalid_argument("embedding of '" + query + "' is all zeros");
  }
  NeighborList out{query, {}};
  for (std::size_t id : candidates) {
    if (id == query_id) continue;
    out.neighbors.emplace_back(vocab.Token(id), CosineSimilarity(q, Row(table, id)));
  }
  std::sort(out.neighbors.begin(), out.neighbors.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.neighbors.size() > k) out.neighbors.resize(k);
  return out;
}

bool IsLanguageTokenText(const std::string& t) {
  return t.size() == 5 && t.front() == '<' && t.back() == '>' &&
         IsLanguageCode(std::string_view(t).substr(1, 3));
}

}  // namespace

double CosineSimilarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

NeighborList NearestPhonemes(const std::string& symbol, std::size_t k,
                             const ModelParams<float>& params, const Vocabulary& target) {
  if (!target.Contains(symbol) || Vocabulary::IsReserved(target.Index(symbol))) {
    throw std::invalid_argument("unknown phoneme '" + symbol + "'");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t id = Vocabulary::kNumReserved; id < target.size(); ++id) {
    candidates.push_back(id);
  }
  return Nearest(symbol, target.Index(symbol), k, params.tgt_embedding, target, candidates);
}

NeighborList NearestLanguages(const std::string& lang, std::size_t k,
                              const ModelParams<float>& params, const Vocabulary& source) {
  const std::string token = LanguageToken(lang);
  if (!IsLanguageCode(lang) || !source.Contains(token)) {
    throw std::invalid_argument("unknown language token '" + token + "'");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t id = Vocabulary::kNumReserved; id < source.size(); ++id) {
    if (IsLanguageTokenText(source.Token(id))) candidates.push_back(id);
  }
  NeighborList out =
      Nearest(lang, source.Index(token), k, params.src_embedding, source, candidates);
  for (auto& [name, sim] : out.neighbors) name = name.substr(1, 3);
  return out;
}

std::vector<std::pair<std::string, TokenSeq>> TranslateAs(
    const std::string& word, std::span<const std::string> langs,
    const ModelParams<float>& params, const ModelConfig& config, const Vocabulary& source,
    const Vocabulary& target, std::size_t width) {
  std::vector<std::pair<std::string, TokenSeq>> out;
  BeamOptions options;
  options.width = width;
  for (const auto& lang : langs) {
    if (!IsLanguageCode(lang)) throw std::invalid_argument("bad language code '" + lang + "'");
    const auto ids = source.Encode(TokenizeGraphemes(word, lang, true));
    const NBestList nbest = BeamSearch(params, config, ids, options);
    TokenSeq best;
    if (!nbest.empty()) best = target.Decode(nbest.front().tokens);
    out.emplace_back(lang, std::move(best));
  }
  return out;
}

void WriteNeighbors(std::ostream& out, std::span<const NeighborList> lists) {
  char sim[32];
  for (const auto& l : lists) {
    out << l.query << '\t';
    for (std::size_t i = 0; i < l.neighbors.size(); ++i) {
      std::snprintf(sim, sizeof(sim), "%.4f", l.neighbors[i].second);
      if (i) out << ", ";
      out << l.neighbors[i].first << " (" << sim << ")";
    }
    out << '\n';
  }
}

void WriteTranslations(std::ostream& out,
                       std::span<const std::pair<std::string, TokenSeq>> rows) {
  for (const auto& [lang, phonemes] : rows) {
    out << lang << '\t';
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
      if (i) out << ' ';
      out << phonemes[i];
    }
    out << '\n';
  }
}

}  // namespace mg2p
