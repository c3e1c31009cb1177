#include "mg2p/decode.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace mg2p {
namespace {

bool Expandable(std::size_t id) {
  return id != Vocabulary::kPad && id != Vocabulary::kBos && id != Vocabulary::kUnk;
}

struct Hypothesis {
  std::vector<std::size_t> tokens;  // without BOS; EOS excluded
  double log_prob = 0.0;
  bool finished = false;
  bool truncated = false;
  std::size_t finish_step = 0;
  std::size_t row = 0;  // row of the decoder state while live
};

// A pool member: either an already-finished hypothesis or a one-token
// extension of a live one.
struct Candidate {
  double log_prob = 0.0;
  const Hypothesis* parent = nullptr;
  std::size_t token = 0;  // extension token, unused for finished entries
  bool is_extension = false;

  bool finishes() const { return !is_extension || token == Vocabulary::kEos; }
  std::size_t length() const {
    return parent->tokens.size() + (is_extension ? 1 : 0) + (parent->finished && !parent->truncated ? 1 : 0);
  }
};

class CandidateOrder {
 public:
  CandidateOrder(std::size_t step, bool length_normalize)
      : step_(step), length_normalize_(length_normalize) {}

  double Key(const Candidate& c) const {
    if (!length_normalize_) return c.log_prob;
    return c.log_prob / static_cast<double>(std::max<std::size_t>(1, c.length()));
  }

  // Earlier completion first; unfinished extensions rank after any finish.
  std::size_t FinishKey(const Candidate& c) const {
    if (!c.is_extension) return c.parent->finish_step;
    return c.token == Vocabulary::kEos ? step_ : std::numeric_limits<std::size_t>::max();
  }

  static std::vector<std::size_t> Sequence(const Candidate& c) {
    std::vector<std::size_t> seq = c.parent->tokens;
    if (c.is_extension) {
      seq.push_back(c.token);
    } else if (!c.parent->truncated) {
      seq.push_back(Vocabulary::kEos);
    }
    return seq;
  }

  bool operator()(const Candidate& a, const Candidate& b) const {
    const double ka = Key(a), kb = Key(b);
    if (ka != kb) return ka > kb;
    const std::size_t fa = FinishKey(a), fb = FinishKey(b);
    if (fa != fb) return fa < fb;
    return Sequence(a) < Sequence(b);
  }

 private:
  std::size_t step_;
  bool length_normalize_;
};

}  // namespace

template <typename T>
NBestList BeamSearch(const ModelParams<T>& params, const ModelConfig& config,
                     std::span<const std::size_t> source, const BeamOptions& options) {
  if (source.empty()) throw std::invalid_argument("empty source");
  if (options.width == 0) throw std::invalid_argument("beam width must be >= 1");
  const std::size_t max_len =
      options.max_len ? options.max_len : DefaultMaxLength(source.size());
  const std::size_t vocab = config.tgt_vocab_size;

  InferenceSession<T> session(params, config, source);
  StateValues<T> state = session.InitialState();
  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;

  for (std::size_t step = 1; step <= max_len && !live.empty(); ++step) {
    std::vector<std::size_t> prev;
    prev.reserve(live.size());
    for (const auto& h : live) prev.push_back(h.tokens.empty() ? Vocabulary::kBos : h.tokens.back());
    StateValues<T> next;
    const Tensor<T> log_probs = session.Step(prev, state, &next);

    std::vector<Candidate> pool;
    pool.reserve(finished.size() + live.size() * vocab);
    for (const auto& f : finished) pool.push_back({f.log_prob, &f, 0, false});
    for (std::size_t b = 0; b < live.size(); ++b) {
      for (std::size_t v = 0; v < vocab; ++v) {
        if (!Expandable(v)) continue;
        pool.push_back({live[b].log_prob + static_cast<double>(log_probs(b, v)), &live[b], v, true});
      }
    }
    CandidateOrder order(step, options.length_normalize);
    const std::size_t keep = std::min(options.width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      order);

    std::vector<Hypothesis> next_live, next_finished;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = pool[i];
      if (!c.is_extension) {
        next_finished.push_back(*c.parent);
        continue;
      }
      Hypothesis h;
      h.tokens = c.parent->tokens;
      h.log_prob = c.log_prob;
      if (c.token == Vocabulary::kEos) {
        h.finished = true;
        h.finish_step = step;
        next_finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        if (step == max_len) {
          h.finished = true;
          h.truncated = true;
          h.finish_step = step;
          next_finished.push_back(std::move(h));
        } else {
          h.row = next_live.size();
          rows.push_back(c.parent->row);
          next_live.push_back(std::move(h));
        }
      }
    }
    if (!next_live.empty()) state = next.Gather(rows);
    live = std::move(next_live);
    finished = std::move(next_finished);
  }

  // Final ranking uses the same order with every entry already finished.
  std::vector<Candidate> ranked;
  for (const auto& f : finished) ranked.push_back({f.log_prob, &f, 0, false});
  CandidateOrder order(max_len + 1, options.length_normalize);
  std::sort(ranked.begin(), ranked.end(), order);
  NBestList out;
  out.reserve(ranked.size());
  for (const auto& c : ranked) {
    out.push_back({c.parent->tokens, c.parent->log_prob, c.parent->truncated,
                   c.parent->finish_step});
  }
  return out;
}

template <typename T>
GreedyResult GreedyDecode(const ModelParams<T>& params, const ModelConfig& config,
                          std::span<const std::size_t> source, std::size_t max_len) {
  if (source.empty()) throw std::invalid_argument("empty source");
  if (max_len == 0) max_len = DefaultMaxLength(source.size());
  InferenceSession<T> session(params, config, source);
  StateValues<T> state = session.InitialState();
  GreedyResult result;
  std::size_t prev = Vocabulary::kBos;
  for (std::size_t step = 1; step <= max_len; ++step) {
    StateValues<T> next;
    const Tensor<T> log_probs = session.Step(std::span<const std::size_t>(&prev, 1), state, &next);
    std::size_t best = Vocabulary::kEos;
    for (std::size_t v = 0; v < config.tgt_vocab_size; ++v) {
      if (!Expandable(v)) continue;
      if (log_probs(0, v) > log_probs(0, best) || (log_probs(0, v) == log_probs(0, best) && v < best)) {
        best = v;
      }
    }
    result.log_prob += static_cast<double>(log_probs(0, best));
    if (best == Vocabulary::kEos) return result;
    result.tokens.push_back(best);
    prev = best;
    state = std::move(next);
  }
  result.truncated = true;
  return result;
}

template <typename T>
double ScoreSequence(const ModelParams<T>& params, const ModelConfig& config,
                     std::span<const std::size_t> source,
                     std::span<const std::size_t> tokens, bool with_eos) {
  InferenceSession<T> session(params, config, source);
  StateValues<T> state = session.InitialState();
  std::vector<std::size_t> targets(tokens.begin(), tokens.end());
  if (with_eos) targets.push_back(Vocabulary::kEos);
  double total = 0.0;
  std::size_t prev = Vocabulary::kBos;
  for (std::size_t target : targets) {
    StateValues<T> next;
    const Tensor<T> log_probs = session.Step(std::span<const std::size_t>(&prev, 1), state, &next);
    total += static_cast<double>(log_probs(0, target));
    prev = target;
    state = std::move(next);
  }
  return total;
}

void WriteNBest(std::ostream& out, const std::string& word, const NBestList& nbest,
                const Vocabulary& target) {
  char score[64];
  for (std::size_t rank = 0; rank < nbest.size(); ++rank) {
    std::snprintf(score, sizeof(score), "%.6f", nbest[rank].log_prob);
    out << word << '\t' << rank + 1 << '\t' << score << '\t';
    for (std::size_t i = 0; i < nbest[rank].tokens.size(); ++i) {
      if (i) out << ' ';
      out << target.Token(nbest[rank].tokens[i]);
    }
    out << '\n';
  }
}

template NBestList BeamSearch<float>(const ModelParams<float>&, const ModelConfig&,
                                     std::span<const std::size_t>, const BeamOptions&);
template NBestList BeamSearch<double>(const ModelParams<double>&, const ModelConfig&,
                                      std::span<const std::size_t>, const BeamOptions&);
template GreedyResult GreedyDecode<float>(const ModelParams<float>&, const ModelConfig&,
                                          std::span<const std::size_t>, std::size_t);
template GreedyResult GreedyDecode<double>(const ModelParams<double>&, const ModelConfig&,
                                           std::span<const std::size_t>, std::size_t);
template double ScoreSequence<float>(const ModelParams<float>&, const ModelConfig&,
                                     std::span<const std::size_t>,
                                     std::span<const std::size_t>, bool);
template double ScoreSequence<double>(const ModelParams<double>&, const ModelConfig&,
                                      std::span<const std::size_t>,
                                      std::span<const std::size_t>, bool);

}  // namespace mg2p
