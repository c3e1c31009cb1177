#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "mg2p/decode.hpp"
#include "oracle.hpp"

namespace mg2p {
namespace {

using Ids = std::vector<std::size_t>;

ModelParams<double> RandomModel(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  auto p = ModelParams<double>::Zeros(cfg);
  oracle::Randomize(p, seed, scale);
  return p;
}

TEST(BeamSearch, WidthOneEqualsGreedyOnRandomModels) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed);
    ModelConfig cfg = oracle::TinyConfig(9, 5 + seed % 5, 6);
    const auto p = RandomModel(cfg, seed, 1.5).Cast<float>();
    const Ids src = oracle::RandomIds(rng, 1 + rng() % 4, 9);
    BeamOptions one;
    one.width = 1;
    const auto beam = BeamSearch(p, cfg, src, one);
    const auto greedy = GreedyDecode(p, cfg, src);
    ASSERT_EQ(beam.size(), 1u);
    EXPECT_EQ(beam[0].tokens, greedy.tokens) << "seed " << seed;
    EXPECT_NEAR(beam[0].log_prob, greedy.log_prob, 1e-6);
    EXPECT_EQ(beam[0].truncated, greedy.truncated);
  }
}

struct Enumerated {
  Ids tokens;
  double log_prob;
  bool truncated;
};

// Every sequence reachable within `max_len` steps over the expandable
// tokens, scored by the scalar oracle.
std::vector<Enumerated> Enumerate(const ModelParams<double>& p, const ModelConfig& cfg,
                                  const Ids& src, std::size_t max_len) {
  std::vector<Enumerated> out;
  std::vector<std::size_t> symbols;
  for (std::size_t v = Vocabulary::kNumReserved; v < cfg.tgt_vocab_size; ++v) symbols.push_back(v);
  std::function<void(Ids)> grow = [&](Ids prefix) {
    if (prefix.size() < max_len) {
      out.push_back({prefix, oracle::SequenceLogProb(p, cfg, src, prefix, true), false});
      for (auto s : symbols) {
        Ids next = prefix;
        next.push_back(s);
        grow(next);
      }
    } else {
      out.push_back({prefix, oracle::SequenceLogProb(p, cfg, src, prefix, false), true});
    }
  };
  grow({});
  return out;
}

void ExpectMatchesEnumeration(const ModelParams<double>& p, const ModelConfig& cfg,
                              const Ids& src) {
  const std::size_t max_len = 3;
  auto all = Enumerate(p, cfg, src, max_len);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.log_prob > b.log_prob; });
  BeamOptions opt;
  opt.width = all.size();
  opt.max_len = max_len;
  const auto nbest = BeamSearch(p, cfg, src, opt);
  ASSERT_EQ(nbest.size(), all.size());
  // Rank by rank the scores agree; within a run of tied scores the members
  // agree as a set (their order is the tie-break's business).
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i + 1;
    while (j < all.size() && all[i].log_prob - all[j].log_prob < 1e-9) ++j;
    std::set<std::pair<Ids, bool>> expect, got;
    for (std::size_t k = i; k < j; ++k) {
      EXPECT_NEAR(nbest[k].log_prob, all[k].log_prob, 1e-9) << "rank " << k;
      expect.insert({all[k].tokens, all[k].truncated});
      got.insert({nbest[k].tokens, nbest[k].truncated});
    }
    EXPECT_EQ(got, expect) << "ranks " << i << ".." << j - 1;
    i = j;
  }
}

TEST(BeamSearch, MatchesExhaustiveEnumerationHandSet) {
  // Context-free model: only the generator bias matters, so each step draws
  // from the same known distribution over {EOS, p, q, r}.
  ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  const double logits[] = {-50, -50, std::log(0.1), -50, std::log(0.5), std::log(0.3),
                           std::log(0.1)};
  for (std::size_t v = 0; v < 7; ++v) p.generator_bias[v] = logits[v];
  const Ids src{4, 5};
  ExpectMatchesEnumeration(p, cfg, src);
  BeamOptions opt;
  opt.width = 3;
  opt.max_len = 3;
  const auto nbest = BeamSearch(p, cfg, src, opt);
  // p p p (truncated) is the single most likely outcome: 0.5^3.
  EXPECT_EQ(nbest[0].tokens, (Ids{4, 4, 4}));
  EXPECT_TRUE(nbest[0].truncated);
  EXPECT_NEAR(nbest[0].log_prob, 3 * std::log(0.5), 1e-6);
}

TEST(BeamSearch, MatchesExhaustiveEnumerationRandom) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(8, 7, 6);
    const auto p = RandomModel(cfg, seed, 1.0);
    std::mt19937_64 rng(seed);
    ExpectMatchesEnumeration(p, cfg, oracle::RandomIds(rng, 2 + seed % 3, 8));
  }
}

// Top-1 score is not monotone in width in general: a wider beam can prune
// the prefix a narrower beam followed. Every decrease observed here must be
// exactly that, a valid better-scoring sequence the wider beam no longer
// holds, never a scoring error.
TEST(BeamSearch, WidthDecreasesComeFromPruning) {
  std::size_t decreases = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(9, 10, 8);
    const auto pd = RandomModel(cfg, seed, 1.5);
    const auto p = pd.Cast<float>();
    std::mt19937_64 rng(seed);
    const Ids src = oracle::RandomIds(rng, 2 + rng() % 4, 9);
    NBestList best_so_far;
    for (std::size_t w : {1, 2, 5, 10}) {
      BeamOptions opt;
      opt.width = w;
      const auto list = BeamSearch(p, cfg, src, opt);
      if (!best_so_far.empty() && list[0].log_prob < best_so_far[0].log_prob - 1e-9) {
        ++decreases;
        const auto& missed = best_so_far[0];
        EXPECT_NEAR(missed.log_prob,
                    oracle::SequenceLogProb(pd, cfg, src, missed.tokens, !missed.truncated), 1e-5);
        for (const auto& h : list) EXPECT_NE(h.tokens, missed.tokens) << "seed " << seed;
      }
      if (best_so_far.empty() || list[0].log_prob > best_so_far[0].log_prob) best_so_far = list;
    }
  }
  RecordProperty("width_decreases", static_cast<int>(decreases));
}

TEST(BeamSearch, ExhaustiveOptimumBoundsEveryWidth) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(8, 7, 6);
    const auto p = RandomModel(cfg, seed, 1.5);
    std::mt19937_64 rng(seed);
    const Ids src = oracle::RandomIds(rng, 2, 8);
    double optimum = -INFINITY;
    for (const auto& e : Enumerate(p, cfg, src, 3)) optimum = std::max(optimum, e.log_prob);
    for (std::size_t w : {1, 2, 5, 10, 40}) {
      BeamOptions opt;
      opt.width = w;
      opt.max_len = 3;
      const double top = BeamSearch(p, cfg, src, opt)[0].log_prob;
      EXPECT_LE(top, optimum + 1e-9);
      if (w == 40) EXPECT_NEAR(top, optimum, 1e-9);
    }
  }
}

TEST(BeamSearch, ScoresMatchTeacherForcedRescoring) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(9, 8, 6);
    const auto pd = RandomModel(cfg, seed, 1.0);
    const auto p = pd.Cast<float>();
    std::mt19937_64 rng(seed);
    const Ids src = oracle::RandomIds(rng, 1 + rng() % 4, 9);
    BeamOptions opt;
    opt.width = 8;
    for (const auto& h : BeamSearch(p, cfg, src, opt)) {
      EXPECT_NEAR(h.log_prob, ScoreSequence(p, cfg, src, h.tokens, !h.truncated), 1e-5);
      EXPECT_NEAR(h.log_prob, oracle::SequenceLogProb(pd, cfg, src, h.tokens, !h.truncated),
                  1e-5);
    }
  }
}

TEST(BeamSearch, ListInvariants) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(9, 8, 6);
    const auto p = RandomModel(cfg, seed, 2.0).Cast<float>();
    std::mt19937_64 rng(seed);
    const Ids src = oracle::RandomIds(rng, 1 + rng() % 3, 9);
    BeamOptions opt;
    opt.width = 12;
    const auto nbest = BeamSearch(p, cfg, src, opt);
    EXPECT_LE(nbest.size(), opt.width);
    std::set<Ids> seen;
    const std::size_t max_len = DefaultMaxLength(src.size());
    for (std::size_t i = 0; i < nbest.size(); ++i) {
      const auto& h = nbest[i];
      EXPECT_TRUE(seen.insert(h.tokens).second) << "duplicate hypothesis";
      EXPECT_LE(h.log_prob, 0.0);
      for (auto t : h.tokens) EXPECT_GE(t, Vocabulary::kNumReserved);
      if (h.truncated) {
        EXPECT_EQ(h.tokens.size(), max_len);
      } else {
        EXPECT_LT(h.tokens.size(), max_len);
      }
      if (i) EXPECT_GE(nbest[i - 1].log_prob, h.log_prob);
    }
  }
}

// Wider beams never do worse rank by rank.
TEST(BeamSearch, WiderBeamDominatesElementwise) {
  std::size_t violations = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    ModelConfig cfg = oracle::TinyConfig(9, 8, 6);
    const auto p = RandomModel(cfg, seed, 1.5).Cast<float>();
    std::mt19937_64 rng(seed);
    const Ids src = oracle::RandomIds(rng, 2 + rng() % 3, 9);
    BeamOptions narrow, wide;
    narrow.width = 3;
    wide.width = 9;
    const auto a = BeamSearch(p, cfg, src, narrow);
    const auto b = BeamSearch(p, cfg, src, wide);
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
      if (b[i].log_prob < a[i].log_prob - 1e-9) ++violations;
    }
  }
  EXPECT_EQ(violations, 0u);
}

TEST(BeamSearch, TiesBreakByFinishThenTokens) {
  // Uniform output: every continuation ties, so the order is decided by the
  // tie-break alone.
  ModelConfig cfg = oracle::TinyConfig(6, 6, 4);
  const auto p = ModelParams<double>::Zeros(cfg);
  BeamOptions opt;
  opt.width = 3;
  opt.max_len = 2;
  const Ids src{4};
  const auto a = BeamSearch(p, cfg, src, opt);
  const auto b = BeamSearch(p, cfg, src, opt);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
  // Log-probs over {EOS, 4, 5}: -ln 6 each step ([] finishes first).
  EXPECT_EQ(a[0].tokens, Ids{});
  EXPECT_EQ(a[1].tokens, Ids{4});
  EXPECT_EQ(a[2].tokens, Ids{5});
}

TEST(BeamSearch, Errors) {
  ModelConfig cfg = oracle::TinyConfig(6, 6, 4);
  const auto p = ModelParams<float>::Zeros(cfg);
  EXPECT_THROW(BeamSearch(p, cfg, Ids{}), std::invalid_argument);
  BeamOptions zero;
  zero.width = 0;
  EXPECT_THROW(BeamSearch(p, cfg, Ids{4}, zero), std::invalid_argument);
  EXPECT_THROW(GreedyDecode(p, cfg, Ids{}), std::invalid_argument);
}

TEST(BeamSearch, NeverExpandsReservedTokens) {
  ModelConfig cfg = oracle::TinyConfig(6, 6, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  p.generator_bias[Vocabulary::kUnk] = 30.0;
  p.generator_bias[Vocabulary::kPad] = 30.0;
  p.generator_bias[Vocabulary::kBos] = 30.0;
  p.generator_bias[4] = 1.0;
  BeamOptions opt;
  opt.width = 4;
  for (const auto& h : BeamSearch(p, cfg, Ids{4}, opt)) {
    for (auto t : h.tokens) EXPECT_GE(t, Vocabulary::kNumReserved);
  }
}

TEST(GreedyDecode, ForcedEosFirst) {
  ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  p.generator_bias[Vocabulary::kEos] = 2.0;
  const auto r = GreedyDecode(p, cfg, Ids{4, 5});
  EXPECT_TRUE(r.tokens.empty());
  const double z = std::exp(2.0) + 6.0;
  EXPECT_NEAR(r.log_prob, 2.0 - std::log(z), 1e-12);
}

TEST(GreedyDecode, DeterministicModelHasZeroLogProb) {
  ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  p.generator_bias.Fill(-800.0);
  p.generator_bias[Vocabulary::kEos] = 0.0;
  const auto r = GreedyDecode(p, cfg, Ids{4});
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_EQ(r.log_prob, 0.0);
}

TEST(GreedyDecode, TruncatesAtMaxLength) {
  ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  p.generator_bias[5] = 5.0;
  const auto r = GreedyDecode(p, cfg, Ids{4, 4});
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.tokens.size(), DefaultMaxLength(2));
}

TEST(BeamSearch, LengthNormalizationReranks) {
  ModelConfig cfg = oracle::TinyConfig(6, 7, 4);
  auto p = ModelParams<double>::Zeros(cfg);
  // EOS fairly likely, 4 slightly more likely.
  p.generator_bias[Vocabulary::kEos] = 1.0;
  p.generator_bias[4] = 1.2;
  BeamOptions plain, norm;
  plain.width = norm.width = 5;
  plain.max_len = norm.max_len = 4;
  norm.length_normalize = true;
  const auto a = BeamSearch(p, cfg, Ids{4}, plain);
  const auto b = BeamSearch(p, cfg, Ids{4}, norm);
  EXPECT_EQ(a[0].tokens, Ids{});
  EXPECT_NE(b[0].tokens, Ids{});
}

TEST(WriteNBest, Format) {
  const auto tgt = Vocabulary::FromTokens({"<PAD>", "<BOS>", "<EOS>", "<UNK>", "r", "i:", "l"});
  NBestList list{{{4, 5, 6}, -0.25, false, 4}, {{4, 6}, -1.5, false, 3}};
  std::ostringstream out;
  WriteNBest(out, "real", list, tgt);
  EXPECT_EQ(out.str(), "real\t1\t-0.250000\tr i: l\nreal\t2\t-1.500000\tr l\n");
}

}  // namespace
}  // namespace mg2p
