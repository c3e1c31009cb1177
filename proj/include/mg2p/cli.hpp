// Command implementations behind the `mg2p` executable.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mg2p/eval.hpp"
#include "mg2p/model.hpp"

namespace mg2p {

// Bad input from the user: missing files, malformed config, unknown keys.
// Maps to exit code 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string train_lexicon;
  std::string test_lexicon;
  std::string inventory;       // optional; enables transcription cleaning
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";

  ModelConfig model;
  Schedule schedule;

  bool lang_token = true;
  // Unset: every language. Set but empty is an error at prepare time.
  std::optional<std::vector<std::string>> languages;
  std::size_t beam_width = 100;
  bool length_normalize = false;
  PerMode per_mode = PerMode::kMeanOfRatios;
  double val_fraction = 0.1;
  std::size_t cap = 10000;

  // Sets one field from its textual form. Throws UserError for unknown keys
  // or unparsable values.
  void Set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> ToKeyValues() const;
};

// Flat `key = value` lines; '#' starts a comment.
RunConfig ParseRunConfig(std::istream& in);
RunConfig LoadRunConfig(const std::string& path);
void WriteRunConfig(std::ostream& out, const RunConfig& config);

// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string HashFile(const std::string& path);

// Writes `manifest.txt` in `dir`: tool version, the config snapshot and
// hashes of `inputs` (label -> path).
void WriteManifest(const std::string& dir, const RunConfig& config,
                   const std::map<std::string, std::string>& inputs);

inline constexpr const char* kToolVersion = "0.1.0";

// Reads the training lexicon, filters, cleans, splits and writes
// train.tsv, valid.tsv, src.vocab, tgt.vocab, stats.tsv and manifest.txt
// into config.data_dir.
void CmdPrepare(const RunConfig& config, std::ostream& log);

// Trains on the prepared data. Writes final.ckpt (after every epoch),
// best.ckpt, train_log.tsv and manifest.txt into config.checkpoint_dir.
// With `resume`, continues from final.ckpt.
void CmdTrain(const RunConfig& config, bool resume, std::ostream& log);

struct TranslateOptions {
  std::string checkpoint;
  std::string word;        // single word, or
  std::string words_file;  // lines of `word` or `lang<TAB>word`
  std::string lang;        // default language for lines without one
  std::size_t width = 10;
  bool length_normalize = false;
};

// Writes the n-best format of the decode module to `out`.
void CmdTranslate(const TranslateOptions& options, std::ostream& out, std::ostream& log);

struct EvaluateOptions {
  std::string checkpoint;
  std::string test_lexicon;
  std::string output_dir;  // report.tsv, report.txt, nbest.tsv
  std::size_t width = 100;
  bool unseen_only = false;
  bool length_normalize = false;
  PerMode per_mode = PerMode::kMeanOfRatios;
};

EvalReport CmdEvaluate(const EvaluateOptions& options, std::ostream& log);

struct AnalyzeOptions {
  std::string checkpoint;
  std::string mode;                  // phonemes | languages | crosstoken
  std::vector<std::string> queries;  // symbols, language codes, or codes
  std::string word;                  // crosstoken only
  std::size_t k = 3;
  std::size_t width = 10;
};

void CmdAnalyze(const AnalyzeOptions& options, std::ostream& out);

}  // namespace mg2p
