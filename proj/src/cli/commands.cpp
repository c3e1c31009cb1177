#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "mg2p/analysis.hpp"
#include "mg2p/checkpoint.hpp"
#include "mg2p/cli.hpp"
#include "mg2p/corpus.hpp"
#include "mg2p/decode.hpp"
#include "mg2p/unicode.hpp"

namespace mg2p {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxWarningsShown = 10;

void RequireFile(const std::string& path, const char* what) {
  if (path.empty()) throw UserError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(path)) {
    throw UserError(std::string("cannot read ") + what + " '" + path + "'");
  }
}

std::ofstream OpenOut(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  return out;
}

void ShowWarnings(std::ostream& log, const std::vector<std::string>& warnings) {
  for (std::size_t i = 0; i < warnings.size() && i < kMaxWarningsShown; ++i) {
    log << "warning: " << warnings[i] << '\n';
  }
  if (warnings.size() > kMaxWarningsShown) {
    log << "warning: ... " << warnings.size() - kMaxWarningsShown << " more\n";
  }
}

std::vector<LexiconEntry> ReadLexicon(const std::string& path, std::ostream& log) {
  ParseResult parsed = ParseLexiconFile(path);
  for (std::size_t i = 0; i < parsed.rejects.size() && i < kMaxWarningsShown; ++i) {
    const auto& r = parsed.rejects[i];
    log << "warning: " << path << ':' << r.line_number << ": " << r.reason << '\n';
  }
  if (parsed.rejects.size() > kMaxWarningsShown) {
    log << "warning: " << parsed.rejects.size() << " rejected lines in " << path << '\n';
  }
  return std::move(parsed.entries);
}

Vocabulary ReadVocabularyFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read '" + path.string() + "' (run prepare first)");
  return ReadVocabulary(in);
}

std::set<std::string> Scripts(std::span<const LexiconEntry> entries) {
  std::set<std::string> scripts;
  for (const auto& e : entries) {
    for (const auto& g : e.graphemes) {
      std::string s = unicode::ScriptOf(g);
      if (!s.empty()) scripts.insert(std::move(s));
    }
  }
  return scripts;
}

std::set<std::string> Languages(std::span<const LexiconEntry> entries) {
  std::set<std::string> langs;
  for (const auto& e : entries) langs.insert(e.lang);
  return langs;
}

std::string Join(const std::set<std::string>& items, char sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

std::set<std::string> SplitSet(const std::string& s) {
  std::set<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.insert(item);
  }
  return out;
}

std::string Fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

Checkpoint OpenCheckpoint(const std::string& path) {
  RequireFile(path, "checkpoint");
  try {
    return LoadCheckpoint(path);
  } catch (const CheckpointError& e) {
    throw UserError("checkpoint '" + path + "': " + e.what());
  }
}

bool CheckpointLangToken(const Checkpoint& ckpt) {
  const auto it = ckpt.config.find("lang_token");
  return it == ckpt.config.end() || it->second == "on";
}

// Encodes a word for a checkpoint; unknown language tokens fall back to
// UNK with a one-time warning per language.
class SourceEncoder {
 public:
  SourceEncoder(const Checkpoint& ckpt, std::ostream& log)
      : ckpt_(ckpt), log_(log), lang_token_(CheckpointLangToken(ckpt)) {}

  std::vector<std::size_t> operator()(const std::string& word, const std::string& lang) {
    if (lang_token_) {
      if (!IsLanguageCode(lang)) {
        throw UserError("model uses language tokens; bad or missing language code '" +
                        lang + "'");
      }
      if (!ckpt_.source.Contains(LanguageToken(lang)) && warned_.insert(lang).second) {
        log_ << "warning: language token " << LanguageToken(lang)
             << " was not seen in training; encoded as " << Vocabulary::UnkToken() << '\n';
      }
    }
    return ckpt_.source.Encode(TokenizeGraphemes(word, lang, lang_token_));
  }

 private:
  const Checkpoint& ckpt_;
  std::ostream& log_;
  bool lang_token_;
  std::set<std::string> warned_;
};

}  // namespace

void CmdPrepare(const RunConfig& config, std::ostream& log) {
  RequireFile(config.train_lexicon, "training lexicon");
  std::vector<LexiconEntry> entries = ReadLexicon(config.train_lexicon, log);
  if (config.languages) {
    if (config.languages->empty()) throw UserError("language filter is empty");
    entries = FilterLanguages(
        entries, std::set<std::string>(config.languages->begin(), config.languages->end()));
  }
  if (entries.empty()) throw UserError("corpus is empty after filtering");

  std::map<std::string, std::string> inputs{{"train_lexicon", config.train_lexicon}};
  if (!config.inventory.empty()) {
    RequireFile(config.inventory, "inventory");
    InventorySet inventories;
    try {
      inventories = ParseInventoryFile(config.inventory);
    } catch (const std::invalid_argument& e) {
      throw UserError(e.what());
    }
    ShowWarnings(log, CleanEntries(entries, inventories));
    inputs["inventory"] = config.inventory;
  }
  if (config.val_fraction < 0.0 || config.val_fraction >= 1.0) {
    throw UserError("val_fraction must be in [0, 1)");
  }

  const DatasetSplit split =
      SplitTrainVal(entries, config.cap, config.val_fraction, config.schedule.seed);
  const Vocabulary src = BuildVocab(split.train, Side::kSource, config.lang_token);
  const Vocabulary tgt = BuildVocab(split.train, Side::kTarget, config.lang_token);

  const fs::path dir(config.data_dir);
  fs::create_directories(dir);
  {
    auto out = OpenOut(dir / "train.tsv");
    WriteLexicon(out, split.train);
  }
  {
    auto out = OpenOut(dir / "valid.tsv");
    WriteLexicon(out, split.validation);
  }
  {
    auto out = OpenOut(dir / "src.vocab");
    WriteVocabulary(out, src);
  }
  {
    auto out = OpenOut(dir / "tgt.vocab");
    WriteVocabulary(out, tgt);
  }

  auto stats = OpenOut(dir / "stats.tsv");
  stats << "split\tlanguages\twords\tscripts\n";
  auto row = [&](const char* name, std::span<const LexiconEntry> part) {
    stats << name << '\t' << Languages(part).size() << '\t' << part.size() << '\t'
          << Scripts(part).size() << '\n';
  };
  row("train", split.train);
  row("valid", split.validation);
  if (!config.test_lexicon.empty()) {
    RequireFile(config.test_lexicon, "test lexicon");
    const auto test = ReadLexicon(config.test_lexicon, log);
    row("test", test);
    inputs["test_lexicon"] = config.test_lexicon;
  }
  stats.close();

  auto per_lang = OpenOut(dir / "languages.tsv");
  per_lang << "lang\ttrain\tvalid\tscripts\n";
  const auto train_by = GroupByLanguage(split.train);
  const auto valid_by = GroupByLanguage(split.validation);
  for (const auto& [lang, words] : train_by) {
    const auto v = valid_by.find(lang);
    per_lang << lang << '\t' << words.size() << '\t'
             << (v == valid_by.end() ? 0 : v->second.size()) << '\t'
             << Join(Scripts(words), ',') << '\n';
  }
  per_lang.close();

  WriteManifest(dir.string(), config, inputs);
  log << "prepared " << split.train.size() << " training and " << split.validation.size()
      << " validation words in " << train_by.size() << " languages; vocabularies "
      << src.size() << " source, " << tgt.size() << " target\n";
}

void CmdTrain(const RunConfig& config, bool resume, std::ostream& log) {
  const fs::path data(config.data_dir);
  const Vocabulary src = ReadVocabularyFile(data / "src.vocab");
  const Vocabulary tgt = ReadVocabularyFile(data / "tgt.vocab");
  RequireFile((data / "train.tsv").string(), "training split");
  const auto train_entries = ReadLexicon((data / "train.tsv").string(), log);
  const auto valid_entries = fs::exists(data / "valid.tsv")
                                 ? ReadLexicon((data / "valid.tsv").string(), log)
                                 : std::vector<LexiconEntry>{};
  if (train_entries.empty()) throw UserError("training split is empty");

  auto to_examples = [&](const std::vector<LexiconEntry>& entries) {
    std::vector<Example> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
      if (config.lang_token && !src.Contains(LanguageToken(e.lang))) {
        throw UserError("source vocabulary lacks " + LanguageToken(e.lang) +
                        "; was the data prepared with lang_token = off?");
      }
      out.push_back({src.Encode(SourceTokens(e, config.lang_token)), tgt.Encode(e.phonemes)});
    }
    return out;
  };
  const std::vector<Example> train = to_examples(train_entries);
  const std::vector<Example> valid = to_examples(valid_entries);

  ModelConfig model = config.model;
  model.src_vocab_size = src.size();
  model.tgt_vocab_size = tgt.size();
  try {
    model.Validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }

  const fs::path dir(config.checkpoint_dir);
  fs::create_directories(dir);
  const fs::path final_path = dir / "final.ckpt";
  const fs::path best_path = dir / "best.ckpt";

  Checkpoint base;
  base.source = src;
  base.target = tgt;
  base.config = model.ToKeyValues();
  base.config["lang_token"] = config.lang_token ? "on" : "off";
  base.config["languages"] = Join(Languages(train_entries), ',');
  base.config["seed"] = std::to_string(config.schedule.seed);

  std::size_t start_epoch = 0;
  std::optional<double> best_valid;
  std::optional<ModelParams<float>> initial;
  if (resume) {
    Checkpoint prev = OpenCheckpoint(final_path.string());
    if (!(prev.source == src) || !(prev.target == tgt) || !(prev.model_config() == model)) {
      throw UserError("cannot resume: checkpoint does not match the data or model config");
    }
    start_epoch = std::stoull(prev.config.at("epoch"));
    if (auto it = prev.config.find("best_valid_loss"); it != prev.config.end()) {
      best_valid = std::stod(it->second);
      base.config["best_valid_loss"] = it->second;
      base.config["best_epoch"] = prev.config.at("best_epoch");
    }
    initial = std::move(prev.params);
    log << "resuming after epoch " << start_epoch << '\n';
  }

  auto log_file = OpenOut(dir / "train_log.tsv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) log_file << "epoch\tlr\ttrain_loss\tvalid_loss\n";

  auto on_epoch = [&](const EpochLog& entry, const ModelParams<float>& params) {
    const std::string valid_text = entry.valid_loss ? Fixed(*entry.valid_loss) : "NA";
    log_file << entry.epoch << '\t' << Fixed(entry.lr) << '\t' << Fixed(entry.train_loss)
             << '\t' << valid_text << '\n';
    log_file.flush();
    log << "epoch " << entry.epoch << "  lr " << Fixed(entry.lr, 4) << "  train "
        << Fixed(entry.train_loss, 4) << "  valid " << valid_text << '\n';

    Checkpoint ckpt = base;
    ckpt.params = params;
    ckpt.config["epoch"] = std::to_string(entry.epoch);
    const bool improved =
        !entry.valid_loss || !best_valid || *entry.valid_loss < *best_valid;
    if (improved) {
      if (entry.valid_loss) best_valid = entry.valid_loss;
      base.config["best_epoch"] = std::to_string(entry.epoch);
      if (best_valid) base.config["best_valid_loss"] = Fixed(*best_valid, 9);
      ckpt.config["best_epoch"] = base.config["best_epoch"];
      if (best_valid) ckpt.config["best_valid_loss"] = base.config["best_valid_loss"];
      SaveCheckpoint(best_path.string(), ckpt);
    }
    SaveCheckpoint(final_path.string(), ckpt);
  };

  if (start_epoch >= config.schedule.epochs) {
    log << "nothing to do: already trained for " << start_epoch << " epochs\n";
  } else {
    Train(train, valid, model, config.schedule, initial ? &*initial : nullptr, start_epoch,
          on_epoch);
  }
  WriteManifest(dir.string(), config,
                {{"train_split", (data / "train.tsv").string()},
                 {"src_vocab", (data / "src.vocab").string()},
                 {"tgt_vocab", (data / "tgt.vocab").string()}});
}

void CmdTranslate(const TranslateOptions& options, std::ostream& out, std::ostream& log) {
  const Checkpoint ckpt = OpenCheckpoint(options.checkpoint);
  const ModelConfig model = ckpt.model_config();

  std::vector<std::pair<std::string, std::string>> inputs;  // (lang, word)
  if (!options.word.empty()) inputs.emplace_back(options.lang, options.word);
  if (!options.words_file.empty()) {
    RequireFile(options.words_file, "word list");
    std::ifstream in(options.words_file);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        inputs.emplace_back(options.lang, line);
      } else if (line.find('\t', tab + 1) == std::string::npos && tab > 0 &&
                 tab + 1 < line.size()) {
        inputs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
      } else {
        throw UserError(options.words_file + ":" + std::to_string(number) +
                        ": expected `word` or `lang<TAB>word`");
      }
    }
  }
  if (inputs.empty()) throw UserError("nothing to translate");

  BeamOptions beam;
  beam.width = options.width;
  beam.length_normalize = options.length_normalize;
  if (beam.width == 0) throw UserError("beam width must be positive");
  SourceEncoder encode(ckpt, log);
  for (const auto& [lang, word] : inputs) {
    if (!unicode::IsValidUtf8(word)) throw UserError("input is not valid UTF-8");
    const auto ids = encode(word, lang);
    WriteNBest(out, word, BeamSearch(ckpt.params, model, ids, beam), ckpt.target);
  }
}

EvalReport CmdEvaluate(const EvaluateOptions& options, std::ostream& log) {
  const Checkpoint ckpt = OpenCheckpoint(options.checkpoint);
  const ModelConfig model = ckpt.model_config();
  RequireFile(options.test_lexicon, "test lexicon");
  std::vector<LexiconEntry> test = ReadLexicon(options.test_lexicon, log);

  if (options.unseen_only) {
    std::set<std::string> trained;
    if (auto it = ckpt.config.find("languages"); it != ckpt.config.end()) {
      trained = SplitSet(it->second);
    } else {
      for (const auto& t : ckpt.source.tokens()) {
        if (t.size() == 5 && t.front() == '<' && t.back() == '>' &&
            IsLanguageCode(std::string_view(t).substr(1, 3))) {
          trained.insert(t.substr(1, 3));
        }
      }
    }
    std::erase_if(test, [&](const LexiconEntry& e) { return trained.count(e.lang) > 0; });
    log << "unseen-only: " << Languages(test).size() << " languages, " << test.size()
        << " words\n";
  }
  if (test.empty()) throw UserError("no test words to evaluate");

  BeamOptions beam;
  beam.width = options.width;
  beam.length_normalize = options.length_normalize;
  if (beam.width == 0) throw UserError("beam width must be positive");

  std::optional<std::ofstream> nbest_out;
  if (!options.output_dir.empty()) {
    fs::create_directories(options.output_dir);
    nbest_out = OpenOut(fs::path(options.output_dir) / "nbest.tsv");
  }
  SourceEncoder encode(ckpt, log);
  const Decoder decoder = [&](const LexiconEntry& e) {
    const NBestList nbest = BeamSearch(ckpt.params, model, encode(e.spelling, e.lang), beam);
    if (nbest_out) WriteNBest(*nbest_out, e.spelling, nbest, ckpt.target);
    Prediction p;
    p.width = beam.width;
    for (const auto& h : nbest) p.nbest.push_back(ckpt.target.Decode(h.tokens));
    return p;
  };
  EvalReport report = Evaluate(GroupByLanguage(test), decoder, options.per_mode);

  ShowWarnings(log, report.warnings);
  WriteReportTsv(log, report);
  if (!options.output_dir.empty()) {
    auto tsv = OpenOut(fs::path(options.output_dir) / "report.tsv");
    WriteReportTsv(tsv, report);
    auto kv = OpenOut(fs::path(options.output_dir) / "report.txt");
    WriteReportKeyValue(kv, report);
  }
  return report;
}

void CmdAnalyze(const AnalyzeOptions& options, std::ostream& out) {
  const Checkpoint ckpt = OpenCheckpoint(options.checkpoint);
  if (options.queries.empty()) throw UserError("analyze: no queries given");
  try {
    if (options.mode == "phonemes" || options.mode == "languages") {
      std::vector<NeighborList> lists;
      for (const auto& q : options.queries) {
        lists.push_back(options.mode == "phonemes"
                            ? NearestPhonemes(q, options.k, ckpt.params, ckpt.target)
                            : NearestLanguages(q, options.k, ckpt.params, ckpt.source));
      }
      WriteNeighbors(out, lists);
    } else if (options.mode == "crosstoken") {
      if (!CheckpointLangToken(ckpt)) {
        throw UserError("crosstoken needs a model trained with language tokens");
      }
      if (options.word.empty()) throw UserError("crosstoken needs a word");
      const auto rows = TranslateAs(options.word, options.queries, ckpt.params,
                                    ckpt.model_config(), ckpt.source, ckpt.target,
                                    options.width);
      WriteTranslations(out, rows);
    } else {
      throw UserError("analyze: unknown mode '" + options.mode + "'");
    }
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

}  // namespace mg2p
