// Attentional encoder-decoder for grapheme-to-phoneme transduction.
//
// Encoder: stacked bidirectional LSTM layers; each direction has
// hidden_size / 2 units and the two outputs are concatenated per position.
// Decoder: stacked LSTM layers of hidden_size units initialized from the
// encoder's final states, with input feeding of the previous attentional
// state. Attention uses the bilinear "general" score
//   score(h_t, a_s) = h_t^T W_a a_s
// followed by h~_t = tanh(W_c [c_t; h_t] + b_c), and the output
// distribution is log softmax(W_g h~_t + b_g).
//
// LSTM gates are packed in the order (input, forget, cell, output).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mg2p/tensor.hpp"

namespace mg2p {

struct ModelConfig {
  std::size_t hidden_size = 150;
  std::size_t src_embed = 150;
  std::size_t tgt_embed = 150;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  double dropout = 0.3;
  bool input_feed = true;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;

  // Throws std::invalid_argument naming the offending field.
  void Validate() const;
  std::size_t direction_size() const { return hidden_size / 2; }
  std::size_t decoder_input_size() const {
    return tgt_embed + (input_feed ? hidden_size : 0);
  }

  std::map<std::string, std::string> ToKeyValues() const;
  // Missing keys keep their defaults; unknown keys are ignored.
  static ModelConfig FromKeyValues(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct CellParams {
  Tensor<T> input_weights;      // [4h x in]
  Tensor<T> recurrent_weights;  // [4h x h]
  Tensor<T> bias;               // [4h]
  bool operator==(const CellParams&) const = default;
};

template <typename T>
struct AttentionParams {
  Tensor<T> score_weights;   // [h x h]
  Tensor<T> output_weights;  // [h x 2h], applied to [context; decoder_top_h]
  Tensor<T> output_bias;     // [h]
  bool operator==(const AttentionParams&) const = default;
};

inline constexpr std::size_t kForward = 0;
inline constexpr std::size_t kBackward = 1;

template <typename T>
struct ModelParams {
  Tensor<T> src_embedding;  // [Vs x src_embed]
  Tensor<T> tgt_embedding;  // [Vt x tgt_embed]
  std::vector<std::array<CellParams<T>, 2>> encoder;  // [layer][direction]
  std::vector<CellParams<T>> decoder;
  AttentionParams<T> attention;
  Tensor<T> generator_weights;  // [Vt x h]
  Tensor<T> generator_bias;     // [Vt]

  static ModelParams Zeros(const ModelConfig& config);
  // uniform(-0.1, 0.1) weights, zero biases, forget-gate biases 1.0.
  static ModelParams Initialize(const ModelConfig& config, std::uint64_t seed);

  // Every tensor with a unique dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>*>> Named();
  std::vector<std::pair<std::string, const Tensor<T>*>> Named() const;

  ModelParams ZerosLike() const;
  std::size_t ParameterCount() const;

  template <typename U>
  ModelParams<U> Cast() const {
    ModelParams<U> out;
    auto cast_cell = [](const CellParams<T>& c) {
      return CellParams<U>{c.input_weights.template Cast<U>(),
                           c.recurrent_weights.template Cast<U>(),
                           c.bias.template Cast<U>()};
    };
    out.src_embedding = src_embedding.template Cast<U>();
    out.tgt_embedding = tgt_embedding.template Cast<U>();
    for (const auto& layer : encoder) {
      out.encoder.push_back({cast_cell(layer[0]), cast_cell(layer[1])});
    }
    for (const auto& cell : decoder) out.decoder.push_back(cast_cell(cell));
    out.attention = {attention.score_weights.template Cast<U>(),
                     attention.output_weights.template Cast<U>(),
                     attention.output_bias.template Cast<U>()};
    out.generator_weights = generator_weights.template Cast<U>();
    out.generator_bias = generator_bias.template Cast<U>();
    return out;
  }

  bool operator==(const ModelParams&) const = default;
};

// A training pair of index sequences. `target` excludes BOS and EOS.
struct Example {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

// ---------------------------------------------------------------------------
// Graph-level building blocks (batched, row b = sample b).

struct BoundCell {
  Var input_weights, recurrent_weights, bias;
  std::size_t hidden = 0;
};

struct BoundParams {
  Var src_embedding, tgt_embedding;
  std::vector<std::array<BoundCell, 2>> encoder;
  std::vector<BoundCell> decoder;
  Var score_weights, output_weights, output_bias;
  Var generator_weights, generator_bias;
};

// Places every parameter on `graph`. With `grads`, Backward() accumulates
// into the matching tensors of `grads`.
template <typename T>
BoundParams Bind(Graph<T>& graph, const ModelParams<T>& params,
                 ModelParams<T>* grads = nullptr);

struct CellState {
  Var h, c;
};

template <typename T>
CellState CellStep(Graph<T>& graph, const BoundCell& cell, Var x, CellState prev);

// Inverted dropout masks drawn from a caller-owned generator.
template <typename T>
class Dropout {
 public:
  Dropout(double rate, std::mt19937_64& rng) : rate_(rate), rng_(&rng) {}
  Var Apply(Graph<T>& graph, Var x);
  bool active() const { return rate_ > 0.0; }

 private:
  double rate_;
  std::mt19937_64* rng_;
};

struct EncoderOutput {
  Var annotations;  // [(S * B) x h], row t * B + b
  AttentionLayout layout;
  std::vector<CellState> final_states;  // per layer, [B x h]
};

// `dropout` is null outside training.
template <typename T>
EncoderOutput EncodeBatch(Graph<T>& graph, const BoundParams& bound,
                          const ModelConfig& config,
                          std::span<const std::vector<std::size_t>> sources,
                          Dropout<T>* dropout);

struct AttentionMemory {
  Var values;  // annotations
  Var keys;    // annotations * W_a^T, so score = h_t . key_s
  AttentionLayout layout;
};

template <typename T>
AttentionMemory MakeMemory(Graph<T>& graph, const BoundParams& bound,
                           Var annotations, AttentionLayout layout);

struct DecoderState {
  std::vector<CellState> layers;
  Var feed;  // previous attentional state, [B x h]
};

template <typename T>
DecoderState InitialDecoderState(Graph<T>& graph, const ModelConfig& config,
                                 const EncoderOutput& encoded, std::size_t batch);

struct StepOutput {
  Var logits;             // [B x Vt]
  Var attentional;        // h~, [B x h]
  Var attention_weights;  // [B x width]
  DecoderState state;
};

template <typename T>
StepOutput DecoderStep(Graph<T>& graph, const BoundParams& bound,
                       const ModelConfig& config,
                       std::span<const std::size_t> prev_ids,
                       const DecoderState& state, const AttentionMemory& memory,
                       Dropout<T>* dropout);

// Teacher-forced loss of a padded batch: per sample, the mean token
// cross-entropy over BOS-shifted targets ending in EOS; then the mean over
// samples.
template <typename T>
Var BatchLoss(Graph<T>& graph, const BoundParams& bound, const ModelConfig& config,
              std::span<const Example> batch, Dropout<T>* dropout);

// ---------------------------------------------------------------------------
// Value-level API.

template <typename T>
struct EncodedSource {
  Tensor<T> annotations;          // [S x h]
  std::vector<Tensor<T>> final_h;  // per layer, [1 x h]
  std::vector<Tensor<T>> final_c;
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> LstmStep(const CellParams<T>& cell,
                                         const Tensor<T>& x, const Tensor<T>& h,
                                         const Tensor<T>& c);

template <typename T>
EncodedSource<T> Encode(const ModelParams<T>& params, const ModelConfig& config,
                        std::span<const std::size_t> source);

template <typename T>
struct AttentionResult {
  Tensor<T> context;      // [h]
  Tensor<T> weights;      // [S]
  Tensor<T> attentional;  // tanh(W_c [context; h] + b_c), [h]
};

template <typename T>
AttentionResult<T> Attend(const Tensor<T>& decoder_top_h,
                          const Tensor<T>& annotations,
                          const AttentionParams<T>& params);

// Decoder recurrent state for a batch of hypotheses, each tensor [B x h].
template <typename T>
struct StateValues {
  std::vector<Tensor<T>> h, c;
  Tensor<T> feed;

  std::size_t batch() const { return feed.rows(); }
  // Rows `rows` of this state, in that order.
  StateValues Gather(std::span<const std::size_t> rows) const;
};

// Encodes one source once and then runs decoder steps over any number of
// hypotheses that share it. Read-only over `params`, which must outlive it.
template <typename T>
class InferenceSession {
 public:
  InferenceSession(const ModelParams<T>& params, const ModelConfig& config,
                   std::span<const std::size_t> source);

  const ModelConfig& config() const { return config_; }
  const Tensor<T>& annotations() const { return annotations_; }
  std::size_t source_length() const { return annotations_.rows(); }

  StateValues<T> InitialState() const { return initial_; }

  // Log-probabilities [B x Vt] of the next token for every row of `state`.
  Tensor<T> Step(std::span<const std::size_t> prev_ids, const StateValues<T>& state,
                 StateValues<T>* next, Tensor<T>* attention = nullptr) const;

 private:
  const ModelParams<T>* params_;
  ModelConfig config_;
  Tensor<T> annotations_;
  Tensor<T> keys_;
  StateValues<T> initial_;
};

// Loss of `batch`; deterministic when `training` is false.
template <typename T>
T ForwardLoss(const ModelParams<T>& params, const ModelConfig& config,
              std::span<const Example> batch, bool training = false,
              std::uint64_t seed = 0);

// Loss plus gradients accumulated into `grads` (which must match params).
template <typename T>
T LossAndGradient(const ModelParams<T>& params, const ModelConfig& config,
                  std::span<const Example> batch, ModelParams<T>& grads,
                  Dropout<T>* dropout);

// ---------------------------------------------------------------------------
// Training.

struct Schedule {
  std::size_t epochs = 13;
  std::size_t batch_size = 64;
  double lr = 1.0;
  double clip = 5.0;
  // When decay_start > 0, lr is multiplied by lr_decay at every epoch from
  // decay_start on.
  double lr_decay = 0.5;
  std::size_t decay_start = 0;
  std::uint64_t seed = 1;
  std::size_t bucket_factor = 20;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> valid_loss;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double LearningRateAt(const Schedule& schedule, std::size_t epoch);

// Shuffled, length-bucketed batches of example indices: shuffle, sort by
// source length within windows of batch_size * bucket_factor, cut into
// batches, shuffle the batch order.
std::vector<std::vector<std::size_t>> MakeBatches(
    std::span<const Example> examples, std::size_t batch_size,
    std::size_t bucket_factor, std::mt19937_64& rng);

struct TrainResult {
  ModelParams<float> params;       // after the last epoch
  ModelParams<float> best_params;  // lowest validation loss (or last)
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

using EpochCallback =
    std::function<void(const EpochLog&, const ModelParams<float>& params)>;

// Runs epochs start_epoch + 1 .. schedule.epochs. Without `initial`,
// parameters are initialized from schedule.seed. Throws TrainingError on a
// non-finite loss or gradient.
TrainResult Train(std::span<const Example> train, std::span<const Example> valid,
                  const ModelConfig& config, const Schedule& schedule,
                  const ModelParams<float>* initial = nullptr,
                  std::size_t start_epoch = 0, const EpochCallback& on_epoch = {});

}  // namespace mg2p
