#include "mg2p/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mg2p/corpus.hpp"

namespace mg2p {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::Validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  require(hidden_size >= 2, "hidden_size must be >= 2");
  require(hidden_size % 2 == 0, "hidden_size must be even");
  require(src_embed >= 1, "src_embed must be >= 1");
  require(tgt_embed >= 1, "tgt_embed must be >= 1");
  require(enc_layers >= 1, "enc_layers must be >= 1");
  require(dec_layers >= 1, "dec_layers must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(src_vocab_size > Vocabulary::kNumReserved, "src_vocab_size too small");
  require(tgt_vocab_size > Vocabulary::kNumReserved, "tgt_vocab_size too small");
}

std::map<std::string, std::string> ModelConfig::ToKeyValues() const {
  std::ostringstream dropout_text;
  dropout_text.precision(17);
  dropout_text << dropout;
  return {{"hidden_size", std::to_string(hidden_size)},
          {"src_embed", std::to_string(src_embed)},
          {"tgt_embed", std::to_string(tgt_embed)},
          {"enc_layers", std::to_string(enc_layers)},
          {"dec_layers", std::to_string(dec_layers)},
          {"dropout", dropout_text.str()},
          {"input_feed", input_feed ? "true" : "false"},
          {"src_vocab_size", std::to_string(src_vocab_size)},
          {"tgt_vocab_size", std::to_string(tgt_vocab_size)},
          {"gate_order", "input,forget,cell,output"}};
}

ModelConfig ModelConfig::FromKeyValues(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto size = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = std::stoull(it->second);
  };
  size("hidden_size", c.hidden_size);
  size("src_embed", c.src_embed);
  size("tgt_embed", c.tgt_embed);
  size("enc_layers", c.enc_layers);
  size("dec_layers", c.dec_layers);
  size("src_vocab_size", c.src_vocab_size);
  size("tgt_vocab_size", c.tgt_vocab_size);
  if (auto it = kv.find("dropout"); it != kv.end()) c.dropout = std::stod(it->second);
  if (auto it = kv.find("input_feed"); it != kv.end()) {
    c.input_feed = it->second == "true" || it->second == "1" || it->second == "on";
  }
  if (auto it = kv.find("gate_order");
      it != kv.end() && it->second != "input,forget,cell,output") {
    throw std::invalid_argument("unsupported gate order '" + it->second + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

namespace {

template <typename T>
CellParams<T> ZeroCell(std::size_t in, std::size_t hidden) {
  return {Tensor<T>::Matrix(4 * hidden, in), Tensor<T>::Matrix(4 * hidden, hidden),
          Tensor<T>::Vector(4 * hidden)};
}

bool EndsWith(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::Zeros(const ModelConfig& config) {
  config.Validate();
  const std::size_t h = config.hidden_size, d = config.direction_size();
  ModelParams p;
  p.src_embedding = Tensor<T>::Matrix(config.src_vocab_size, config.src_embed);
  p.tgt_embedding = Tensor<T>::Matrix(config.tgt_vocab_size, config.tgt_embed);
  for (std::size_t l = 0; l < config.enc_layers; ++l) {
    const std::size_t in = l == 0 ? config.src_embed : h;
    p.encoder.push_back({ZeroCell<T>(in, d), ZeroCell<T>(in, d)});
  }
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const std::size_t in = l == 0 ? config.decoder_input_size() : h;
    p.decoder.push_back(ZeroCell<T>(in, h));
  }
  p.attention = {Tensor<T>::Matrix(h, h), Tensor<T>::Matrix(h, 2 * h),
                 Tensor<T>::Vector(h)};
  p.generator_weights = Tensor<T>::Matrix(config.tgt_vocab_size, h);
  p.generator_bias = Tensor<T>::Vector(config.tgt_vocab_size);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::Initialize(const ModelConfig& config,
                                          std::uint64_t seed) {
  ModelParams p = Zeros(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-0.1, 0.1);
  for (auto& [name, tensor] : p.Named()) {
    if (EndsWith(name, "bias")) continue;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      (*tensor)[i] = static_cast<T>(uniform(rng));
    }
  }
  auto forget_one = [](CellParams<T>& cell) {
    const std::size_t h = cell.bias.size() / 4;
    for (std::size_t i = h; i < 2 * h; ++i) cell.bias[i] = T(1);
  };
  for (auto& layer : p.encoder) {
    forget_one(layer[kForward]);
    forget_one(layer[kBackward]);
  }
  for (auto& cell : p.decoder) forget_one(cell);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelParams<T>::Named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto cell = [&out](const std::string& prefix, CellParams<T>& c) {
    out.emplace_back(prefix + ".input_weights", &c.input_weights);
    out.emplace_back(prefix + ".recurrent_weights", &c.recurrent_weights);
    out.emplace_back(prefix + ".bias", &c.bias);
  };
  out.emplace_back("src_embedding", &src_embedding);
  out.emplace_back("tgt_embedding", &tgt_embedding);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    cell("encoder." + std::to_string(l) + ".forward", encoder[l][kForward]);
    cell("encoder." + std::to_string(l) + ".backward", encoder[l][kBackward]);
  }
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    cell("decoder." + std::to_string(l), decoder[l]);
  }
  out.emplace_back("attention.score_weights", &attention.score_weights);
  out.emplace_back("attention.output_weights", &attention.output_weights);
  out.emplace_back("attention.output_bias", &attention.output_bias);
  out.emplace_back("generator.weights", &generator_weights);
  out.emplace_back("generator.bias", &generator_bias);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelParams<T>::Named() const {
  auto named = const_cast<ModelParams*>(this)->Named();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  out.reserve(named.size());
  for (auto& [name, tensor] : named) out.emplace_back(std::move(name), tensor);
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::ZerosLike() const {
  ModelParams out = *this;
  for (auto& [name, tensor] : out.Named()) tensor->Fill(T(0));
  return out;
}

template <typename T>
std::size_t ModelParams<T>::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& [name, tensor] : Named()) n += tensor->size();
  return n;
}

// ---------------------------------------------------------------------------
// Graph-level network

namespace {

template <typename T>
BoundCell BindCell(Graph<T>& g, const CellParams<T>& cell, CellParams<T>* grads) {
  return {g.Parameter(cell.input_weights, grads ? &grads->input_weights : nullptr),
          g.Parameter(cell.recurrent_weights,
                      grads ? &grads->recurrent_weights : nullptr),
          g.Parameter(cell.bias, grads ? &grads->bias : nullptr),
          cell.bias.size() / 4};
}

template <typename T>
Var Zeros(Graph<T>& g, std::size_t rows, std::size_t cols) {
  return g.Constant(Tensor<T>::Matrix(rows, cols));
}

}  // namespace

template <typename T>
BoundParams Bind(Graph<T>& g, const ModelParams<T>& p, ModelParams<T>* grads) {
  BoundParams b;
  b.src_embedding = g.Parameter(p.src_embedding, grads ? &grads->src_embedding : nullptr);
  b.tgt_embedding = g.Parameter(p.tgt_embedding, grads ? &grads->tgt_embedding : nullptr);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    b.encoder.push_back(
        {BindCell(g, p.encoder[l][kForward], grads ? &grads->encoder[l][kForward] : nullptr),
         BindCell(g, p.encoder[l][kBackward],
                  grads ? &grads->encoder[l][kBackward] : nullptr)});
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    b.decoder.push_back(BindCell(g, p.decoder[l], grads ? &grads->decoder[l] : nullptr));
  }
  b.score_weights = g.Parameter(p.attention.score_weights,
                                grads ? &grads->attention.score_weights : nullptr);
  b.output_weights = g.Parameter(p.attention.output_weights,
                                 grads ? &grads->attention.output_weights : nullptr);
  b.output_bias = g.Parameter(p.attention.output_bias,
                              grads ? &grads->attention.output_bias : nullptr);
  b.generator_weights =
      g.Parameter(p.generator_weights, grads ? &grads->generator_weights : nullptr);
  b.generator_bias =
      g.Parameter(p.generator_bias, grads ? &grads->generator_bias : nullptr);
  return b;
}

template <typename T>
CellState CellStep(Graph<T>& g, const BoundCell& cell, Var x, CellState prev) {
  const std::size_t h = cell.hidden;
  Var gates = g.AddBias(g.Add(g.MatMulTransposed(x, cell.input_weights),
                              g.MatMulTransposed(prev.h, cell.recurrent_weights)),
                        cell.bias);
  Var in = g.Sigmoid(g.SliceCols(gates, 0, h));
  Var forget = g.Sigmoid(g.SliceCols(gates, h, h));
  Var candidate = g.Tanh(g.SliceCols(gates, 2 * h, h));
  Var out = g.Sigmoid(g.SliceCols(gates, 3 * h, h));
  Var c = g.Add(g.Mul(forget, prev.c), g.Mul(in, candidate));
  return {g.Mul(out, g.Tanh(c)), c};
}

template <typename T>
Var Dropout<T>::Apply(Graph<T>& g, Var x) {
  if (!active()) return x;
  const auto& shape = g.value(x).shape();
  Tensor<T> mask(shape);
  std::bernoulli_distribution keep(1.0 - rate_);
  const T scale = static_cast<T>(1.0 / (1.0 - rate_));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(*rng_) ? scale : T(0);
  return g.Mul(x, g.Constant(std::move(mask)));
}

template <typename T>
EncoderOutput EncodeBatch(Graph<T>& g, const BoundParams& bound,
                          const ModelConfig& config,
                          std::span<const std::vector<std::size_t>> sources,
                          Dropout<T>* dropout) {
  const std::size_t batch = sources.size();
  if (batch == 0) throw std::invalid_argument("encode: empty batch");
  std::size_t width = 0;
  for (const auto& s : sources) {
    if (s.empty()) throw std::invalid_argument("encode: empty source");
    width = std::max(width, s.size());
  }
  const std::size_t d = config.direction_size();

  std::vector<Var> inputs(width);
  std::vector<std::size_t> ids(batch);
  for (std::size_t t = 0; t < width; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      ids[b] = t < sources[b].size() ? sources[b][t] : Vocabulary::kPad;
    }
    inputs[t] = g.Embedding(bound.src_embedding, ids);
  }
  std::vector<std::vector<bool>> live(width, std::vector<bool>(batch));
  std::vector<bool> all_live(width, true);
  for (std::size_t t = 0; t < width; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      live[t][b] = t < sources[b].size();
      if (!live[t][b]) all_live[t] = false;
    }
  }

  EncoderOutput out;
  std::vector<Var> outputs(width);
  for (std::size_t l = 0; l < bound.encoder.size(); ++l) {
    std::array<std::vector<Var>, 2> dir_out{std::vector<Var>(width),
                                            std::vector<Var>(width)};
    std::array<CellState, 2> final{};
    for (std::size_t dir : {kForward, kBackward}) {
      CellState state{Zeros(g, batch, d), Zeros(g, batch, d)};
      for (std::size_t i = 0; i < width; ++i) {
        const std::size_t t = dir == kForward ? i : width - 1 - i;
        CellState next = CellStep(g, bound.encoder[l][dir], inputs[t], state);
        if (!all_live[t]) {
          // Padded rows keep their state, so each row's sequence is read
          // exactly as if it were alone.
          next = {g.BlendRows(next.h, state.h, live[t]),
                  g.BlendRows(next.c, state.c, live[t])};
        }
        state = next;
        dir_out[dir][t] = state.h;
      }
      final[dir] = state;
    }
    const std::array<Var, 2> fh{final[kForward].h, final[kBackward].h};
    const std::array<Var, 2> fc{final[kForward].c, final[kBackward].c};
    out.final_states.push_back({g.ConcatCols(fh), g.ConcatCols(fc)});
    for (std::size_t t = 0; t < width; ++t) {
      const std::array<Var, 2> pair{dir_out[kForward][t], dir_out[kBackward][t]};
      outputs[t] = g.ConcatCols(pair);
    }
    if (l + 1 < bound.encoder.size()) {
      for (std::size_t t = 0; t < width; ++t) {
        inputs[t] = dropout ? dropout->Apply(g, outputs[t]) : outputs[t];
      }
    }
  }
  out.annotations = g.ConcatRows(outputs);
  out.layout.stride = batch;
  out.layout.width = width;
  for (std::size_t b = 0; b < batch; ++b) {
    out.layout.offset.push_back(b);
    out.layout.length.push_back(sources[b].size());
  }
  return out;
}

template <typename T>
AttentionMemory MakeMemory(Graph<T>& g, const BoundParams& bound, Var annotations,
                           AttentionLayout layout) {
  return {annotations, g.MatMulTransposed(annotations, bound.score_weights),
          std::move(layout)};
}

template <typename T>
DecoderState InitialDecoderState(Graph<T>& g, const ModelConfig& config,
                                 const EncoderOutput& encoded, std::size_t batch) {
  DecoderState state;
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    if (l < encoded.final_states.size()) {
      state.layers.push_back(encoded.final_states[l]);
    } else {
      state.layers.push_back({Zeros(g, batch, config.hidden_size),
                              Zeros(g, batch, config.hidden_size)});
    }
  }
  state.feed = Zeros(g, batch, config.hidden_size);
  return state;
}

template <typename T>
StepOutput DecoderStep(Graph<T>& g, const BoundParams& bound, const ModelConfig& config,
                       std::span<const std::size_t> prev_ids,
                       const DecoderState& state, const AttentionMemory& memory,
                       Dropout<T>* dropout) {
  Var x = g.Embedding(bound.tgt_embedding, prev_ids);
  if (config.input_feed) {
    const std::array<Var, 2> parts{x, state.feed};
    x = g.ConcatCols(parts);
  }
  StepOutput out;
  for (std::size_t l = 0; l < bound.decoder.size(); ++l) {
    CellState s = CellStep(g, bound.decoder[l], x, state.layers[l]);
    out.state.layers.push_back(s);
    x = s.h;
    if (dropout && l + 1 < bound.decoder.size()) x = dropout->Apply(g, x);
  }
  Var top = out.state.layers.back().h;
  Var scores = g.AttentionScores(top, memory.keys, memory.layout);
  out.attention_weights = g.MaskedSoftmax(scores, memory.layout.length);
  Var context = g.AttentionContext(out.attention_weights, memory.values, memory.layout);
  const std::array<Var, 2> joined{context, top};
  out.attentional = g.Tanh(g.AddBias(
      g.MatMulTransposed(g.ConcatCols(joined), bound.output_weights), bound.output_bias));
  out.logits = g.AddBias(g.MatMulTransposed(out.attentional, bound.generator_weights),
                         bound.generator_bias);
  out.state.feed = out.attentional;
  return out;
}

template <typename T>
Var BatchLoss(Graph<T>& g, const BoundParams& bound, const ModelConfig& config,
              std::span<const Example> batch, Dropout<T>* dropout) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::vector<std::size_t>> sources;
  sources.reserve(n);
  std::size_t steps = 0;
  for (const auto& ex : batch) {
    sources.push_back(ex.source);
    steps = std::max(steps, ex.target.size() + 1);
  }
  EncoderOutput encoded = EncodeBatch(g, bound, config, sources, dropout);
  AttentionMemory memory = MakeMemory(g, bound, encoded.annotations, encoded.layout);
  DecoderState state = InitialDecoderState(g, config, encoded, n);

  std::vector<Var> logits;
  std::vector<std::size_t> targets, groups, prev(n);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < n; ++b) {
      const auto& tgt = batch[b].target;
      prev[b] = t == 0 ? Vocabulary::kBos
                       : (t - 1 < tgt.size() ? tgt[t - 1] : Vocabulary::kPad);
      targets.push_back(t < tgt.size() ? tgt[t]
                                       : (t == tgt.size() ? Vocabulary::kEos
                                                          : Vocabulary::kPad));
      groups.push_back(b);
    }
    StepOutput step = DecoderStep(g, bound, config, prev, state, memory, dropout);
    logits.push_back(step.logits);
    state = std::move(step.state);
  }
  return g.CrossEntropy(g.ConcatRows(logits), targets, Vocabulary::kPad, groups);
}

// ---------------------------------------------------------------------------
// Value-level API

template <typename T>
std::pair<Tensor<T>, Tensor<T>> LstmStep(const CellParams<T>& cell, const Tensor<T>& x,
                                         const Tensor<T>& h, const Tensor<T>& c) {
  Graph<T> g;
  BoundCell bound = BindCell(g, cell, static_cast<CellParams<T>*>(nullptr));
  CellState next = CellStep(g, bound, g.Constant(x), {g.Constant(h), g.Constant(c)});
  return {g.value(next.h), g.value(next.c)};
}

template <typename T>
EncodedSource<T> Encode(const ModelParams<T>& params, const ModelConfig& config,
                        std::span<const std::size_t> source) {
  Graph<T> g;
  BoundParams bound = Bind(g, params);
  const std::vector<std::vector<std::size_t>> sources{
      std::vector<std::size_t>(source.begin(), source.end())};
  EncoderOutput out = EncodeBatch<T>(g, bound, config, sources, nullptr);
  EncodedSource<T> result;
  result.annotations = g.value(out.annotations);
  for (const auto& s : out.final_states) {
    result.final_h.push_back(g.value(s.h));
    result.final_c.push_back(g.value(s.c));
  }
  return result;
}

template <typename T>
AttentionResult<T> Attend(const Tensor<T>& decoder_top_h, const Tensor<T>& annotations,
                          const AttentionParams<T>& params) {
  const std::size_t length = annotations.rows();
  if (length == 0) throw std::invalid_argument("attend: empty source");
  Graph<T> g;
  Var query = g.Constant(Tensor<T>({1, decoder_top_h.size()},
                                   std::vector<T>(decoder_top_h.span().begin(),
                                                  decoder_top_h.span().end())));
  Var values = g.Constant(annotations);
  Var keys = g.MatMulTransposed(values, g.Parameter(params.score_weights, nullptr));
  AttentionLayout layout{{0}, {length}, 1, length};
  Var weights = g.MaskedSoftmax(g.AttentionScores(query, keys, layout), layout.length);
  Var context = g.AttentionContext(weights, values, layout);
  const std::array<Var, 2> joined{context, query};
  Var attentional = g.Tanh(g.AddBias(
      g.MatMulTransposed(g.ConcatCols(joined), g.Parameter(params.output_weights, nullptr)),
      g.Parameter(params.output_bias, nullptr)));
  auto flat = [&](Var v) {
    const auto& t = g.value(v);
    return Tensor<T>({t.size()}, std::vector<T>(t.span().begin(), t.span().end()));
  };
  return {flat(context), flat(weights), flat(attentional)};
}

template <typename T>
StateValues<T> StateValues<T>::Gather(std::span<const std::size_t> rows) const {
  auto gather = [&](const Tensor<T>& src) {
    const std::size_t cols = src.cols();
    Tensor<T> out = Tensor<T>::Matrix(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(src.data() + rows[r] * cols, cols, out.data() + r * cols);
    }
    return out;
  };
  StateValues out;
  for (const auto& t : h) out.h.push_back(gather(t));
  for (const auto& t : c) out.c.push_back(gather(t));
  out.feed = gather(feed);
  return out;
}

template <typename T>
InferenceSession<T>::InferenceSession(const ModelParams<T>& params,
                                      const ModelConfig& config,
                                      std::span<const std::size_t> source)
    : params_(&params), config_(config) {
  if (source.empty()) throw std::invalid_argument("empty source");
  Graph<T> g;
  BoundParams bound = Bind(g, params);
  const std::vector<std::vector<std::size_t>> sources{
      std::vector<std::size_t>(source.begin(), source.end())};
  EncoderOutput encoded = EncodeBatch<T>(g, bound, config, sources, nullptr);
  AttentionMemory memory = MakeMemory(g, bound, encoded.annotations, encoded.layout);
  DecoderState state = InitialDecoderState(g, config, encoded, 1);
  annotations_ = g.value(memory.values);
  keys_ = g.value(memory.keys);
  for (const auto& layer : state.layers) {
    initial_.h.push_back(g.value(layer.h));
    initial_.c.push_back(g.value(layer.c));
  }
  initial_.feed = g.value(state.feed);
}

template <typename T>
Tensor<T> InferenceSession<T>::Step(std::span<const std::size_t> prev_ids,
                                    const StateValues<T>& state, StateValues<T>* next,
                                    Tensor<T>* attention) const {
  const std::size_t batch = prev_ids.size();
  if (state.batch() != batch) {
    throw ShapeError("decode step: " + std::to_string(batch) + " tokens for a state of " +
                     std::to_string(state.batch()) + " rows");
  }
  Graph<T> g;
  BoundParams bound = Bind(g, *params_);
  AttentionMemory memory;
  memory.values = g.Parameter(annotations_, nullptr);
  memory.keys = g.Parameter(keys_, nullptr);
  const std::size_t length = annotations_.rows();
  memory.layout.offset.assign(batch, 0);
  memory.layout.length.assign(batch, length);
  memory.layout.stride = 1;
  memory.layout.width = length;
  DecoderState dec;
  for (std::size_t l = 0; l < state.h.size(); ++l) {
    dec.layers.push_back({g.Parameter(state.h[l], nullptr), g.Parameter(state.c[l], nullptr)});
  }
  dec.feed = g.Parameter(state.feed, nullptr);
  StepOutput out = DecoderStep<T>(g, bound, config_, prev_ids, dec, memory, nullptr);
  Var log_probs = g.LogSoftmax(out.logits);
  if (next) {
    next->h.clear();
    next->c.clear();
    for (const auto& layer : out.state.layers) {
      next->h.push_back(g.value(layer.h));
      next->c.push_back(g.value(layer.c));
    }
    next->feed = g.value(out.state.feed);
  }
  if (attention) *attention = g.value(out.attention_weights);
  return g.value(log_probs);
}

template <typename T>
T ForwardLoss(const ModelParams<T>& params, const ModelConfig& config,
              std::span<const Example> batch, bool training, std::uint64_t seed) {
  Graph<T> g;
  BoundParams bound = Bind(g, params);
  std::mt19937_64 rng(seed);
  Dropout<T> dropout(config.dropout, rng);
  return g.value(BatchLoss(g, bound, config, batch, training ? &dropout : nullptr))[0];
}

template <typename T>
T LossAndGradient(const ModelParams<T>& params, const ModelConfig& config,
                  std::span<const Example> batch, ModelParams<T>& grads,
                  Dropout<T>* dropout) {
  Graph<T> g;
  BoundParams bound = Bind(g, params, &grads);
  Var loss = BatchLoss(g, bound, config, batch, dropout);
  g.Backward(loss);
  return g.value(loss)[0];
}

// ---------------------------------------------------------------------------
// Training

double LearningRateAt(const Schedule& schedule, std::size_t epoch) {
  if (schedule.decay_start == 0 || epoch < schedule.decay_start) return schedule.lr;
  return schedule.lr *
         std::pow(schedule.lr_decay, static_cast<double>(epoch - schedule.decay_start + 1));
}

std::vector<std::vector<std::size_t>> MakeBatches(std::span<const Example> examples,
                                                  std::size_t batch_size,
                                                  std::size_t bucket_factor,
                                                  std::mt19937_64& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t window = batch_size * std::max<std::size_t>(bucket_factor, 1);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += window) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last =
        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + window));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return examples[a].source.size() < examples[b].source.size();
    });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(
                                         std::min<std::size_t>(batch_size, last - it))) {
      batches.emplace_back(it, it + static_cast<std::ptrdiff_t>(
                                        std::min<std::size_t>(batch_size, last - it)));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace {

std::vector<Example> Select(std::span<const Example> examples,
                            const std::vector<std::size_t>& indices) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(examples[i]);
  return out;
}

double MeanLoss(const ModelParams<float>& params, const ModelConfig& config,
                std::span<const Example> examples, std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - start);
    total += static_cast<double>(ForwardLoss(params, config, examples.subspan(start, n))) *
             static_cast<double>(n);
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace

TrainResult Train(std::span<const Example> train, std::span<const Example> valid,
                  const ModelConfig& config, const Schedule& schedule,
                  const ModelParams<float>* initial, std::size_t start_epoch,
                  const EpochCallback& on_epoch) {
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  config.Validate();
  TrainResult result;
  result.params = initial ? *initial : ModelParams<float>::Initialize(config, schedule.seed);
  result.best_params = result.params;
  result.best_epoch = start_epoch;
  std::optional<double> best_valid;
  ModelParams<float> grads = result.params.ZerosLike();

  for (std::size_t epoch = start_epoch + 1; epoch <= schedule.epochs; ++epoch) {
    // Seeding per epoch keeps resumed runs on the same sample order.
    std::seed_seq seq{static_cast<std::uint32_t>(schedule.seed),
                      static_cast<std::uint32_t>(schedule.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    Dropout<float> dropout(config.dropout, rng);
    const double lr = LearningRateAt(schedule, epoch);
    const auto batches = MakeBatches(train, schedule.batch_size, schedule.bucket_factor, rng);

    double total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = Select(train, batches[bi]);
      for (auto& [name, tensor] : grads.Named()) tensor->Fill(0.0f);
      float loss = 0.0f;
      try {
        loss = LossAndGradient(result.params, config, batch, grads,
                               dropout.active() ? &dropout : nullptr);
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + ": " + e.what());
      }
      auto named_params = result.params.Named();
      auto named_grads = grads.Named();
      std::vector<Tensor<float>*> p;
      std::vector<const Tensor<float>*> gr;
      for (std::size_t i = 0; i < named_params.size(); ++i) {
        p.push_back(named_params[i].second);
        gr.push_back(named_grads[i].second);
      }
      const SgdReport report = SgdStep<float>(p, gr, lr, schedule.clip);
      if (!report.applied) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + ": non-finite gradient");
      }
      total += static_cast<double>(loss) * static_cast<double>(batch.size());
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = total / static_cast<double>(train.size());
    if (!valid.empty()) {
      entry.valid_loss = MeanLoss(result.params, config, valid, schedule.batch_size);
    }
    if (!entry.valid_loss || !best_valid || *entry.valid_loss < *best_valid) {
      if (entry.valid_loss) best_valid = entry.valid_loss;
      result.best_params = result.params;
      result.best_epoch = epoch;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry, result.params);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Instantiations

#define MG2P_INSTANTIATE_MODEL(T)                                                   \
  template struct ModelParams<T>;                                                   \
  template class Dropout<T>;                                                        \
  template struct StateValues<T>;                                                   \
  template class InferenceSession<T>;                                               \
  template BoundParams Bind<T>(Graph<T>&, const ModelParams<T>&, ModelParams<T>*);  \
  template CellState CellStep<T>(Graph<T>&, const BoundCell&, Var, CellState);      \
  template EncoderOutput EncodeBatch<T>(Graph<T>&, const BoundParams&,              \
                                        const ModelConfig&,                         \
                                        std::span<const std::vector<std::size_t>>,  \
                                        Dropout<T>*);                               \
  template AttentionMemory MakeMemory<T>(Graph<T>&, const BoundParams&, Var,        \
                                         AttentionLayout);                          \
  template DecoderState InitialDecoderState<T>(Graph<T>&, const ModelConfig&,       \
                                               const EncoderOutput&, std::size_t);  \
  template StepOutput DecoderStep<T>(Graph<T>&, const BoundParams&,                 \
                                     const ModelConfig&,                            \
                                     std::span<const std::size_t>,                  \
                                     const DecoderState&, const AttentionMemory&,   \
                                     Dropout<T>*);                                  \
  template Var BatchLoss<T>(Graph<T>&, const BoundParams&, const ModelConfig&,      \
                            std::span<const Example>, Dropout<T>*);                 \
  template std::pair<Tensor<T>, Tensor<T>> LstmStep<T>(                             \
      const CellParams<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template EncodedSource<T> Encode<T>(const ModelParams<T>&, const ModelConfig&,    \
                                      std::span<const std::size_t>);                \
  template AttentionResult<T> Attend<T>(const Tensor<T>&, const Tensor<T>&,         \
                                        const AttentionParams<T>&);                 \
  template T ForwardLoss<T>(const ModelParams<T>&, const ModelConfig&,              \
                            std::span<const Example>, bool, std::uint64_t);         \
  template T LossAndGradient<T>(const ModelParams<T>&, const ModelConfig&,          \
                                std::span<const Example>, ModelParams<T>&,          \
                                Dropout<T>*);

MG2P_INSTANTIATE_MODEL(float)
MG2P_INSTANTIATE_MODEL(double)

#undef MG2P_INSTANTIATE_MODEL

}  // namespace mg2p
