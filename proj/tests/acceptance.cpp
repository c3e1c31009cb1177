// Desk-scale acceptance run. Prints one line per criterion and exits
// non-zero if any criterion fails. `acceptance 3 7` runs a subset.
//
// Criterion 8 needs the full corpus: set MG2P_FULL_CORPUS to a directory
// holding train.tsv and test.tsv, and optionally MG2P_ADAPTED_LANGUAGES to a
// comma list of test languages to score.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mg2p/analysis.hpp"
#include "mg2p/checkpoint.hpp"
#include "mg2p/cli.hpp"
#include "mg2p/corpus.hpp"
#include "mg2p/decode.hpp"
#include "mg2p/eval.hpp"
#include "mg2p/model.hpp"
#include "oracle.hpp"

namespace mg2p {
namespace {

using Ids = std::vector<std::size_t>;
using Clock = std::chrono::steady_clock;

struct Outcome {
  enum Status { kPass, kFail, kSkip } status = kFail;
  std::string detail;
};

std::string Format(const char* fmt, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c, d);
  return buf;
}

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. Gradient check.

Outcome GradientCheck() {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig cfg = oracle::TinyConfig(12, 12, 8);
    auto p = ModelParams<double>::Zeros(cfg);
    oracle::Randomize(p, seed);
    std::mt19937_64 rng(seed);
    std::vector<Example> batch;
    for (int b = 0; b < 3; ++b) {
      batch.push_back({oracle::RandomIds(rng, 1 + rng() % 5, 12),
                       oracle::RandomIds(rng, 1 + rng() % 4, 12)});
    }
    auto grads = p.ZerosLike();
    LossAndGradient(p, cfg, batch, grads, static_cast<Dropout<double>*>(nullptr));
    std::vector<double*> xs;
    std::vector<double> analytic;
    auto named_p = p.Named();
    auto named_g = grads.Named();
    for (std::size_t i = 0; i < named_p.size(); ++i) {
      for (std::size_t k = 0; k < named_p[i].second->size(); ++k) {
        xs.push_back(&(*named_p[i].second)[k]);
        analytic.push_back((*named_g[i].second)[k]);
      }
    }
    const auto numeric = oracle::FiniteDifferences(
        xs, [&] { return ForwardLoss(p, cfg, batch); }, 1e-4);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      worst = std::max(worst, oracle::RelativeError(analytic[i], numeric[i]));
    }
    checked += xs.size();
  }
  return {worst <= 1e-4 ? Outcome::kPass : Outcome::kFail,
          Format("max rel err %.2e over %.0f parameters (limit 1e-4)", worst, checked)};
}

// ---------------------------------------------------------------------------
// Synthetic lexicons.

// A toy orthography with digraphs and context: sh -> S, ch -> tS,
// ee -> i:, c -> s before e/i else k, final e silent.
TokenSeq ToyPronounce(const std::string& w) {
  TokenSeq out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const char c = w[i];
    const char next = i + 1 < w.size() ? w[i + 1] : '\0';
    if (c == 's' && next == 'h') {
      out.push_back("S");
      ++i;
    } else if (c == 'c' && next == 'h') {
      out.push_back("tS");
      ++i;
    } else if (c == 'e' && next == 'e') {
      out.push_back("i:");
      ++i;
    } else if (c == 'c') {
      out.push_back(next == 'e' || next == 'i' ? "s" : "k");
    } else if (c == 'e' && i + 1 == w.size() && i > 0) {
      // silent
    } else {
      out.emplace_back(1, c);
    }
  }
  return out;
}

LexiconEntry Entry(const std::string& lang, const std::string& word, TokenSeq phonemes) {
  LexiconEntry e;
  e.lang = lang;
  e.spelling = word;
  e.graphemes = TokenizeGraphemes(word, lang, false);
  e.phonemes = std::move(phonemes);
  return e;
}

std::vector<LexiconEntry> OverfitLexicon() {
  static const std::vector<std::string> kOnsets{"b", "c", "ch", "d", "f", "k", "l",
                                                "m", "n", "p", "r", "sh", "t"};
  static const std::vector<std::string> kNuclei{"a", "e", "ee", "i", "o", "u"};
  std::mt19937_64 rng(2024);
  std::set<std::string> seen;
  std::vector<LexiconEntry> out;
  while (out.size() < 50) {
    std::string w;
    const int syllables = 1 + rng() % 2;
    for (int s = 0; s < syllables; ++s) w += kOnsets[rng() % kOnsets.size()] + kNuclei[rng() % kNuclei.size()];
    if (rng() % 2) w += kOnsets[rng() % kOnsets.size()];
    if (rng() % 4 == 0) w += "e";
    if (seen.insert(w).second) out.push_back(Entry("tst", w, ToyPronounce(w)));
  }
  return out;
}

// Two languages over the same spellings; only the reading of `a` differs.
std::vector<LexiconEntry> BilingualLexicon() {
  static const std::string kConsonants = "bdfgklmnprstvz";
  static const std::string kVowels = "aeiou";
  std::mt19937_64 rng(77);
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < 200) {
    std::string w;
    const std::size_t len = 3 + rng() % 3;
    for (std::size_t i = 0; i < len; ++i) {
      const std::string& pool = i % 2 == 0 ? kConsonants : kVowels;
      w += pool[rng() % pool.size()];
    }
    if (w.find('a') == std::string::npos) continue;
    if (seen.insert(w).second) words.push_back(w);
  }
  std::vector<LexiconEntry> out;
  for (const char* lang : {"aaa", "bbb"}) {
    for (const auto& w : words) {
      TokenSeq ph;
      for (char c : w) ph.emplace_back(1, c == 'a' && lang[0] == 'b' ? 'e' : c);
      out.push_back(Entry(lang, w, ph));
    }
  }
  return out;
}

struct Trained {
  ModelConfig config;
  ModelParams<float> params;
  Vocabulary source, target;
  bool lang_token = true;
};

std::vector<Example> ToExamples(std::span<const LexiconEntry> entries, const Trained& t) {
  std::vector<Example> out;
  for (const auto& e : entries) {
    out.push_back({t.source.Encode(SourceTokens(e, t.lang_token)), t.target.Encode(e.phonemes)});
  }
  return out;
}

Trained Setup(std::span<const LexiconEntry> train, bool lang_token, ModelConfig config) {
  Trained t;
  t.lang_token = lang_token;
  t.source = BuildVocab(train, Side::kSource, lang_token);
  t.target = BuildVocab(train, Side::kTarget, lang_token);
  config.src_vocab_size = t.source.size();
  config.tgt_vocab_size = t.target.size();
  t.config = config;
  return t;
}

// Percentage of entries whose top beam hypothesis misses the gold.
double TopOneWer(const Trained& t, std::span<const LexiconEntry> entries, std::size_t width) {
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  BeamOptions opt;
  opt.width = width;
  for (const auto& e : entries) {
    const Ids src = t.source.Encode(SourceTokens(e, t.lang_token));
    pairs.emplace_back(t.target.Decode(BeamSearch(t.params, t.config, src, opt)[0].tokens),
                       e.phonemes);
  }
  return WordErrorRate(pairs);
}

// ---------------------------------------------------------------------------
// 2. Overfit.

Outcome Overfit() {
  const auto start = Clock::now();
  const auto lexicon = OverfitLexicon();
  ModelConfig cfg;
  cfg.hidden_size = 32;
  cfg.src_embed = 32;
  cfg.tgt_embed = 32;
  cfg.dropout = 0.0;
  Trained t = Setup(lexicon, true, cfg);
  const auto examples = ToExamples(lexicon, t);
  Schedule s;
  s.batch_size = 5;
  s.seed = 5;
  // Check every 20 epochs and stop once both targets hold.
  double loss = INFINITY, wer = 100.0;
  std::size_t epoch = 0;
  ModelParams<float> params = ModelParams<float>::Initialize(t.config, s.seed);
  while (epoch < 200) {
    s.epochs = epoch + 20;
    params = Train(examples, {}, t.config, s, &params, epoch).params;
    epoch = s.epochs;
    t.params = params;
    loss = ForwardLoss(params, t.config, examples);
    wer = TopOneWer(t, lexicon, 10);
    if (loss <= 0.1 && wer <= 5.0) break;
  }
  const double secs = Seconds(start);
  const bool ok = loss <= 0.1 && wer <= 5.0 && secs < 300;
  return {ok ? Outcome::kPass : Outcome::kFail,
          Format("train WER %.2f%% loss %.4f after %.0f epochs, %.0fs", wer, loss, epoch, secs)};
}

// ---------------------------------------------------------------------------
// 3 and 7. Language-ID disambiguation.

struct Bilingual {
  Trained langid, nolangid;
  std::vector<LexiconEntry> train, test;
  double seconds = 0;
};

ModelConfig BilingualConfig() {
  ModelConfig cfg;
  cfg.hidden_size = 128;
  cfg.src_embed = 32;
  cfg.tgt_embed = 32;
  cfg.dropout = 0.3;
  return cfg;
}

Schedule BilingualSchedule() {
  Schedule s;
  s.epochs = 40;
  s.batch_size = 4;
  s.seed = 11;
  return s;
}

const Bilingual& BilingualModels() {
  static const Bilingual models = [] {
    const auto start = Clock::now();
    Bilingual b;
    const auto split = SplitTrainVal(BilingualLexicon(), 10000, 0.1, 3);
    b.train = split.train;
    b.test = split.validation;
    for (bool lang_token : {true, false}) {
      Trained t = Setup(b.train, lang_token, BilingualConfig());
      t.params = Train(ToExamples(b.train, t), {}, t.config, BilingualSchedule()).params;
      (lang_token ? b.langid : b.nolangid) = std::move(t);
    }
    b.seconds = Seconds(start);
    return b;
  }();
  return models;
}

Outcome LangIdDisambiguation() {
  const Bilingual& b = BilingualModels();
  const auto by_lang = GroupByLanguage(b.test);
  std::string detail;
  bool langid_ok = true, nolangid_fails = false;
  for (const auto& [lang, entries] : by_lang) {
    const double with = TopOneWer(b.langid, entries, 10);
    const double without = TopOneWer(b.nolangid, entries, 10);
    langid_ok = langid_ok && with <= 5.0;
    nolangid_fails = nolangid_fails || without >= 40.0;
    detail += lang + Format(": LangID %.2f%% NoLangID %.2f%% (n=%.0f); ", with, without,
                            entries.size());
  }
  const bool ok = langid_ok && nolangid_fails && b.seconds < 600;
  return {ok ? Outcome::kPass : Outcome::kFail,
          detail + Format("training %.0fs", b.seconds)};
}

Outcome CrossToken() {
  const Bilingual& b = BilingualModels();
  // Every spelling exists in both languages; take each held-out one with
  // both of its golds.
  std::map<std::string, std::map<std::string, TokenSeq>> all, golds;
  for (const auto& e : BilingualLexicon()) all[e.spelling][e.lang] = e.phonemes;
  for (const auto& e : b.test) golds[e.spelling] = all.at(e.spelling);
  std::size_t tried = 0, matched = 0;
  std::string example;
  const std::vector<std::string> langs{"aaa", "bbb"};
  for (const auto& [word, by_lang] : golds) {
    if (by_lang.size() != 2) continue;
    ++tried;
    const auto rows = TranslateAs(word, langs, b.langid.params, b.langid.config,
                                  b.langid.source, b.langid.target, 10);
    const bool ok = rows[0].second == by_lang.at("aaa") && rows[1].second == by_lang.at("bbb");
    matched += ok;
    if (example.empty()) {
      auto join = [](const TokenSeq& s) {
        std::string out;
        for (const auto& p : s) out += p;
        return out;
      };
      example = word + " -> <aaa> /" + join(rows[0].second) + "/, <bbb> /" +
                join(rows[1].second) + "/";
    }
  }
  if (tried == 0) return {Outcome::kFail, "no held-out spelling shared by both languages"};
  return {matched == tried ? Outcome::kPass : Outcome::kFail,
          Format("%.0f/%.0f shared spellings give both golds; ", matched, tried) + example};
}

// ---------------------------------------------------------------------------
// 4. Metric oracles.

Outcome Metrics() {
  std::mt19937_64 rng(4);
  const std::vector<std::string> alphabet{"a", "b", "c", "\xc9\x99", "t\xca\x83"};
  std::size_t mismatches = 0;
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  std::size_t wrong_words = 0;
  for (int i = 0; i < 1000; ++i) {
    TokenSeq a(rng() % 7), b(1 + rng() % 6);
    for (auto& t : a) t = alphabet[rng() % alphabet.size()];
    for (auto& t : b) t = alphabet[rng() % alphabet.size()];
    const std::size_t d = oracle::EditDistance(a, b);
    mismatches += Levenshtein(a, b) != d;
    mismatches += PhonemeErrorRate(a, b) != static_cast<double>(d) / b.size();
    pairs.emplace_back(a, b);
    wrong_words += d != 0;
  }
  mismatches += WordErrorRate(pairs) != 100.0 * wrong_words / pairs.size();

  // WER100: gold at rank 100 counts as found, at rank 101 it does not.
  const TokenSeq gold{"g"};
  auto list_with_gold_at = [&](std::size_t rank) {
    RankedPrediction r;
    r.gold = gold;
    for (std::size_t i = 1; i <= rank; ++i) {
      r.hypotheses.push_back(i == rank ? gold : TokenSeq{"x" + std::to_string(i)});
    }
    r.width = rank;
    return r;
  };
  const std::vector<RankedPrediction> at100{list_with_gold_at(100)};
  const std::vector<RankedPrediction> at101{list_with_gold_at(101)};
  const bool boundary = Wer100(at100) == 0.0 && Wer100(at101) == 100.0;

  // Macro: equal weight per language regardless of size.
  EvalReport report;
  report.per_language["aaa"] = {10.0, 5.0, 2.0, 1000};
  report.per_language["bbb"] = {50.0, 20.0, 7.0, 10};
  report.per_language["ccc"] = {0.0, 0.0, 0.5, 1};
  ComputeMacro(report);
  const bool macro = std::abs(report.macro.wer - 60.0 / 3) < 1e-9 &&
                     std::abs(report.macro.wer100 - 25.0 / 3) < 1e-9 &&
                     std::abs(report.macro.per - 9.5 / 3) < 1e-9;
  const bool ok = mismatches == 0 && boundary && macro;
  return {ok ? Outcome::kPass : Outcome::kFail,
          Format("%.0f mismatches against the recursive oracle on 1000 pairs", mismatches) +
              "; WER100 rank 100/101 " + (boundary ? "ok" : "WRONG") + "; macro means " +
              (macro ? "ok" : "WRONG")};
}

// ---------------------------------------------------------------------------
// 5. Beam search oracles.

struct Enumerated {
  Ids tokens;
  double log_prob;
};

std::vector<Enumerated> Enumerate(const ModelParams<double>& p, const ModelConfig& cfg,
                                  const Ids& src, std::size_t max_len) {
  std::vector<Enumerated> out;
  std::function<void(Ids)> grow = [&](Ids prefix) {
    if (prefix.size() == max_len) {
      out.push_back({prefix, oracle::SequenceLogProb(p, cfg, src, prefix, false)});
      return;
    }
    out.push_back({prefix, oracle::SequenceLogProb(p, cfg, src, prefix, true)});
    for (std::size_t v = Vocabulary::kNumReserved; v < cfg.tgt_vocab_size; ++v) {
      Ids next = prefix;
      next.push_back(v);
      grow(next);
    }
  };
  grow({});
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.log_prob > b.log_prob; });
  return out;
}

// True when the n-best list is the enumeration: scores rank by rank, and
// members of each run of tied scores as sets.
bool MatchesEnumeration(const ModelParams<double>& p, const ModelConfig& cfg, const Ids& src) {
  const auto all = Enumerate(p, cfg, src, 3);
  BeamOptions opt;
  opt.width = all.size();
  opt.max_len = 3;
  const auto nbest = BeamSearch(p, cfg, src, opt);
  if (nbest.size() != all.size()) return false;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i + 1;
    while (j < all.size() && all[i].log_prob - all[j].log_prob < 1e-9) ++j;
    std::set<Ids> expect, got;
    for (std::size_t k = i; k < j; ++k) {
      if (std::abs(nbest[k].log_prob - all[k].log_prob) > 1e-9) return false;
      expect.insert(all[k].tokens);
      got.insert(nbest[k].tokens);
    }
    if (got != expect) return false;
    i = j;
  }
  return true;
}

Outcome BeamOracles() {
  std::size_t greedy_mismatch = 0, rescoring_mismatch = 0, monotone_violations = 0;
  double worst_rescore = 0.0;
  // The model family: 100 random toy models, fixed before looking at results.
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed);
    ModelConfig cfg = oracle::TinyConfig(9, 5 + seed % 5, 6);
    auto pd = ModelParams<double>::Zeros(cfg);
    oracle::Randomize(pd, seed, 1.5);
    const auto p = pd.Cast<float>();
    const Ids src = oracle::RandomIds(rng, 1 + rng() % 4, 9);
    BeamOptions one;
    one.width = 1;
    const auto beam = BeamSearch(p, cfg, src, one);
    const auto greedy = GreedyDecode(p, cfg, src);
    greedy_mismatch += beam[0].tokens != greedy.tokens ||
                       std::abs(beam[0].log_prob - greedy.log_prob) > 1e-6;
    double previous = -INFINITY;
    for (std::size_t w : {1, 2, 5, 10}) {
      BeamOptions opt;
      opt.width = w;
      const auto list = BeamSearch(p, cfg, src, opt);
      if (list[0].log_prob < previous - 1e-9) ++monotone_violations;
      previous = list[0].log_prob;
      for (const auto& h : list) {
        const double rescored = oracle::SequenceLogProb(pd, cfg, src, h.tokens, !h.truncated);
        const double err = std::abs(rescored - h.log_prob);
        worst_rescore = std::max(worst_rescore, err);
        rescoring_mismatch += err > 1e-5;
      }
    }
  }

  // Hand-set context-free model over {EOS, p, q, r}, then random ones.
  std::size_t enumeration_failures = 0;
  {
    ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
    auto p = ModelParams<double>::Zeros(cfg);
    const double probs[] = {0, 0, 0.1, 0, 0.5, 0.3, 0.1};
    for (std::size_t v = 0; v < 7; ++v) p.generator_bias[v] = probs[v] > 0 ? std::log(probs[v]) : -50;
    // A context dependence: q's embedding pushes EOS up on the next step.
    p.tgt_embedding(5, 0) = 2.0;
    p.generator_weights(2, 0) = 1.5;
    enumeration_failures += !MatchesEnumeration(p, cfg, {4, 5});
  }
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(8, 8, 6);
    auto p = ModelParams<double>::Zeros(cfg);
    oracle::Randomize(p, seed, 1.0);
    std::mt19937_64 rng(seed);
    enumeration_failures += !MatchesEnumeration(p, cfg, oracle::RandomIds(rng, 2 + seed % 3, 8));
  }

  const bool ok = greedy_mismatch == 0 && enumeration_failures == 0 &&
                  monotone_violations == 0 && rescoring_mismatch == 0;
  return {ok ? Outcome::kPass : Outcome::kFail,
          Format("greedy mismatches %.0f/100; enumeration failures %.0f/11; "
                 "top-1 width decreases %.0f/100 models; max rescoring err %.1e",
                 greedy_mismatch, enumeration_failures, monotone_violations, worst_rescore)};
}

// ---------------------------------------------------------------------------
// 6. Determinism and serialization.

Outcome Determinism() {
  const auto lexicon = BilingualLexicon();
  const std::vector<LexiconEntry> subset(lexicon.begin(), lexicon.begin() + 60);
  ModelConfig cfg;
  cfg.hidden_size = 16;
  cfg.src_embed = 8;
  cfg.tgt_embed = 8;
  Schedule s;
  s.epochs = 3;
  s.batch_size = 8;
  s.seed = 21;
  auto checkpoint_bytes = [&] {
    Trained t = Setup(subset, true, cfg);
    Checkpoint c;
    c.params = Train(ToExamples(subset, t), {}, t.config, s).params;
    c.source = t.source;
    c.target = t.target;
    c.config = t.config.ToKeyValues();
    std::ostringstream out;
    WriteCheckpoint(out, c);
    return std::make_pair(out.str(), c);
  };
  const auto [first, ckpt] = checkpoint_bytes();
  const auto [second, unused] = checkpoint_bytes();
  const bool same_bytes = first == second;

  auto nbest_text = [&](const Checkpoint& c) {
    std::ostringstream out;
    BeamOptions opt;
    opt.width = 10;
    for (const auto& e : subset) {
      const Ids src = c.source.Encode(SourceTokens(e, true));
      WriteNBest(out, e.spelling, BeamSearch(c.params, c.model_config(), src, opt), c.target);
    }
    return out.str();
  };
  const auto path = std::filesystem::temp_directory_path() / "mg2p_acceptance.ckpt";
  SaveCheckpoint(path.string(), ckpt);
  const Checkpoint loaded = LoadCheckpoint(path.string());
  std::filesystem::remove(path);
  const std::string before = nbest_text(ckpt), after = nbest_text(loaded);
  const bool same_nbest = before == after;
  return {same_bytes && same_nbest ? Outcome::kPass : Outcome::kFail,
          std::string("retrained checkpoint bytes ") + (same_bytes ? "identical" : "DIFFER") +
              " (" + std::to_string(first.size()) + " bytes); n-best after round trip " +
              (same_nbest ? "identical" : "DIFFERS") + " (" +
              std::to_string(before.size()) + " bytes)"};
}

// ---------------------------------------------------------------------------
// 8. Full corpus.

Outcome FullCorpus() {
  const char* root = std::getenv("MG2P_FULL_CORPUS");
  if (root == nullptr || *root == '\0') {
    return {Outcome::kSkip, "set MG2P_FULL_CORPUS to run the full-scale comparison"};
  }
  namespace fs = std::filesystem;
  const fs::path dir(root);
  std::ostringstream log;
  double macro[2] = {0, 0};
  for (int i = 0; i < 2; ++i) {
    RunConfig config;  // defaults are the full-scale settings
    config.train_lexicon = (dir / "train.tsv").string();
    config.test_lexicon = (dir / "test.tsv").string();
    config.lang_token = i == 0;
    const fs::path work = dir / (i == 0 ? "langid" : "nolangid");
    config.data_dir = (work / "data").string();
    config.checkpoint_dir = (work / "checkpoints").string();
    CmdPrepare(config, log);
    CmdTrain(config, false, log);
    EvaluateOptions e;
    e.checkpoint = (work / "checkpoints" / "best.ckpt").string();
    e.test_lexicon = config.test_lexicon;
    e.output_dir = (work / "eval").string();
    const EvalReport r = CmdEvaluate(e, log);
    const char* adapted = std::getenv("MG2P_ADAPTED_LANGUAGES");
    if (adapted != nullptr && *adapted != '\0') {
      EvalReport subset;
      std::stringstream list(adapted);
      std::string lang;
      while (std::getline(list, lang, ',')) {
        const auto it = r.per_language.find(lang);
        if (it != r.per_language.end()) subset.per_language[lang] = it->second;
      }
      ComputeMacro(subset);
      macro[i] = subset.macro.wer;
    } else {
      macro[i] = r.macro.wer;
    }
  }
  return {macro[0] < macro[1] ? Outcome::kPass : Outcome::kFail,
          Format("macro WER LangID %.2f vs NoLangID %.2f", macro[0], macro[1])};
}

}  // namespace
}  // namespace mg2p

int main(int argc, char** argv) {
  using namespace mg2p;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, GradientCheck}, {2, Overfit},     {3, LangIdDisambiguation}, {4, Metrics},
      {5, BeamOracles},   {6, Determinism}, {7, CrossToken},           {8, FullCorpus}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool failed = false;
  for (const auto& [number, run] : criteria) {
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Outcome::kFail, std::string("exception: ") + e.what()};
    }
    const char* status = o.status == Outcome::kPass   ? "PASS"
                         : o.status == Outcome::kSkip ? "SKIP"
                                                      : "FAIL";
    failed = failed || o.status == Outcome::kFail;
    std::printf("criterion %d: %s  %s  [%.1fs]\n", number, status, o.detail.c_str(),
                Seconds(start));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
