#include "mg2p/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "mg2p/unicode.hpp"

namespace mg2p {
namespace {

std::vector<std::string> Normalized(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(unicode::Nfc(t));
  return out;
}

std::string Fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::size_t Levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
  const auto na = Normalized(a), nb = Normalized(b);
  std::vector<std::size_t> prev(nb.size() + 1), cur(nb.size() + 1);
  for (std::size_t j = 0; j <= nb.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= na.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= nb.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (na[i - 1] == nb[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[nb.size()];
}

bool SameSequence(std::span<const std::string> a, std::span<const std::string> b) {
  return a.size() == b.size() && Normalized(a) == Normalized(b);
}

double PhonemeErrorRate(std::span<const std::string> pred, std::span<const std::string> gold) {
  if (gold.empty()) throw std::invalid_argument("PER: empty gold sequence");
  return static_cast<double>(Levenshtein(pred, gold)) / static_cast<double>(gold.size());
}

double WordErrorRate(std::span<const std::pair<TokenSeq, TokenSeq>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("WER: no words");
  std::size_t wrong = 0;
  for (const auto& [pred, gold] : pairs) wrong += !SameSequence(pred, gold);
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

double Wer100(std::span<const RankedPrediction> lists, std::vector<std::string>* warnings) {
  if (lists.empty()) throw std::invalid_argument("WER100: no words");
  std::size_t missed = 0;
  bool narrow = false;
  for (const auto& l : lists) {
    narrow |= l.width < kWer100Depth;
    const std::size_t depth = std::min(l.hypotheses.size(), kWer100Depth);
    bool found = false;
    for (std::size_t r = 0; r < depth && !found; ++r) found = SameSequence(l.hypotheses[r], l.gold);
    missed += !found;
  }
  if (narrow && warnings) {
    warnings->push_back("WER100 computed from n-best lists narrower than 100");
  }
  return 100.0 * static_cast<double>(missed) / static_cast<double>(lists.size());
}

std::map<std::string, std::vector<LexiconEntry>> GroupByLanguage(
    std::span<const LexiconEntry> entries) {
  std::map<std::string, std::vector<LexiconEntry>> out;
  for (const auto& e : entries) out[e.lang].push_back(e);
  return out;
}

LanguageScores ScoreLanguage(std::span<const RankedPrediction> predictions, PerMode mode,
                             std::vector<std::string>* warnings) {
  LanguageScores s;
  s.words = predictions.size();
  if (predictions.empty()) throw std::invalid_argument("no words to score");
  std::vector<std::pair<TokenSeq, TokenSeq>> top1;
  double per_sum = 0.0;
  std::size_t edits = 0, gold_tokens = 0;
  for (const auto& p : predictions) {
    const TokenSeq best = p.hypotheses.empty() ? TokenSeq{} : p.hypotheses.front();
    top1.emplace_back(best, p.gold);
    per_sum += PhonemeErrorRate(best, p.gold);
    edits += Levenshtein(best, p.gold);
    gold_tokens += p.gold.size();
  }
  s.wer = WordErrorRate(top1);
  s.wer100 = Wer100(predictions, warnings);
  s.per = mode == PerMode::kMeanOfRatios
              ? 100.0 * per_sum / static_cast<double>(predictions.size())
              : 100.0 * static_cast<double>(edits) / static_cast<double>(gold_tokens);
  return s;
}

void ComputeMacro(EvalReport& report) {
  report.macro = {};
  if (report.per_language.empty()) return;
  for (const auto& [lang, s] : report.per_language) {
    report.macro.wer += s.wer;
    report.macro.wer100 += s.wer100;
    report.macro.per += s.per;
    report.macro.words += s.words;
  }
  const double n = static_cast<double>(report.per_language.size());
  report.macro.wer /= n;
  report.macro.wer100 /= n;
  report.macro.per /= n;
}

EvalReport Evaluate(const std::map<std::string, std::vector<LexiconEntry>>& by_language,
                    const Decoder& decoder, PerMode mode) {
  EvalReport report;
  for (const auto& [lang, entries] : by_language) {
    if (entries.empty()) {
      report.warnings.push_back("language " + lang + " has no test words; skipped");
      continue;
    }
    std::vector<RankedPrediction> predictions;
    predictions.reserve(entries.size());
    for (const auto& e : entries) {
      Prediction p = decoder(e);
      predictions.push_back({std::move(p.nbest), e.phonemes, p.width});
    }
    std::vector<std::string> warnings;
    report.per_language[lang] = ScoreLanguage(predictions, mode, &warnings);
    for (auto& w : warnings) {
      if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end()) {
        report.warnings.push_back(std::move(w));
      }
    }
  }
  ComputeMacro(report);
  return report;
}

void WriteReportTsv(std::ostream& out, const EvalReport& report) {
  out << "lang\twords\tWER\tWER100\tPER\n";
  auto row = [&out](const std::string& name, const LanguageScores& s) {
    out << name << '\t' << s.words << '\t' << Fixed2(s.wer) << '\t' << Fixed2(s.wer100)
        << '\t' << Fixed2(s.per) << '\n';
  };
  for (const auto& [lang, s] : report.per_language) row(lang, s);
  row("MACRO", report.macro);
}

void WriteReportKeyValue(std::ostream& out, const EvalReport& report) {
  auto block = [&out](const std::string& prefix, const LanguageScores& s) {
    out << prefix << ".words = " << s.words << '\n'
        << prefix << ".wer = " << Fixed2(s.wer) << '\n'
        << prefix << ".wer100 = " << Fixed2(s.wer100) << '\n'
        << prefix << ".per = " << Fixed2(s.per) << '\n';
  };
  out << "languages = " << report.per_language.size() << '\n';
  block("macro", report.macro);
  for (const auto& [lang, s] : report.per_language) block(lang, s);
}

}  // namespace mg2p
