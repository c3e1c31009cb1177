// mg2p: multilingual grapheme-to-phoneme conversion.
//
//   mg2p prepare  --config run.cfg
//   mg2p train    --config run.cfg [--resume]
//   mg2p translate --checkpoint ckpt/best.ckpt --lang eng --word real
//   mg2p evaluate --checkpoint ckpt/best.ckpt --test test.tsv --output-dir out
//   mg2p analyze  --checkpoint ckpt/best.ckpt phonemes b d g
//
// Exit status: 0 on success, 1 on bad input, 2 on internal failure.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mg2p/checkpoint.hpp"
#include "mg2p/cli.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string train, test, inventory, data_dir, checkpoint_dir, languages, lang_token;
};

void AddCommon(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "Run config (key = value lines)");
  cmd->add_option("-s,--set", f.overrides, "Override a config field, key=value");
  cmd->add_option("--train", f.train, "Training lexicon");
  cmd->add_option("--test", f.test, "Test lexicon");
  cmd->add_option("--inventory", f.inventory, "Phoneme inventory file");
  cmd->add_option("--data-dir", f.data_dir, "Prepared data directory");
  cmd->add_option("--checkpoint-dir", f.checkpoint_dir, "Checkpoint directory");
  cmd->add_option("--languages", f.languages, "Comma-separated ISO 639-3 codes");
  cmd->add_option("--lang-token", f.lang_token, "on | off");
}

mg2p::RunConfig BuildConfig(const CommonFlags& f) {
  mg2p::RunConfig config =
      f.config_path.empty() ? mg2p::RunConfig{} : mg2p::LoadRunConfig(f.config_path);
  auto set_if = [&](const char* key, const std::string& v) {
    if (!v.empty()) config.Set(key, v);
  };
  set_if("train_lexicon", f.train);
  set_if("test_lexicon", f.test);
  set_if("inventory", f.inventory);
  set_if("data_dir", f.data_dir);
  set_if("checkpoint_dir", f.checkpoint_dir);
  set_if("languages", f.languages);
  set_if("lang_token", f.lang_token);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw mg2p::UserError("--set expects key=value");
    config.Set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual grapheme-to-phoneme conversion"};
  app.require_subcommand(1);

  CommonFlags prepare_flags;
  auto* prepare = app.add_subcommand("prepare", "Filter, clean and split a lexicon");
  AddCommon(prepare, prepare_flags);

  CommonFlags train_flags;
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train a model on prepared data");
  AddCommon(train, train_flags);
  train->add_flag("--resume", resume, "Continue from final.ckpt");

  mg2p::TranslateOptions tr;
  std::string tr_output;
  auto* translate = app.add_subcommand("translate", "Write n-best pronunciations");
  translate->add_option("--checkpoint", tr.checkpoint)->required();
  translate->add_option("--word", tr.word, "Single word");
  translate->add_option("--words", tr.words_file, "File of `word` or `lang<TAB>word` lines");
  translate->add_option("--lang", tr.lang, "Language code for words without one");
  translate->add_option("--width", tr.width, "Beam width")->capture_default_str();
  translate->add_flag("--length-normalize", tr.length_normalize);
  translate->add_option("-o,--output", tr_output, "Output file (default stdout)");

  mg2p::EvaluateOptions ev;
  std::string per_mode = "mean_of_ratios";
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a test lexicon");
  evaluate->add_option("--checkpoint", ev.checkpoint)->required();
  evaluate->add_option("--test", ev.test_lexicon)->required();
  evaluate->add_option("--output-dir", ev.output_dir, "Where to write reports");
  evaluate->add_option("--width", ev.width, "Beam width")->capture_default_str();
  evaluate->add_flag("--unseen-only", ev.unseen_only,
                     "Only languages absent from the training data");
  evaluate->add_flag("--length-normalize", ev.length_normalize);
  evaluate->add_option("--per-mode", per_mode, "mean_of_ratios | ratio_of_sums")
      ->check(CLI::IsMember({"mean_of_ratios", "ratio_of_sums"}));

  mg2p::AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Embedding neighbours and cross-token output");
  analyze->add_option("--checkpoint", an.checkpoint)->required();
  analyze->add_option("mode", an.mode, "phonemes | languages | crosstoken")
      ->required()
      ->check(CLI::IsMember({"phonemes", "languages", "crosstoken"}));
  analyze->add_option("queries", an.queries, "Phonemes, or language codes")->required();
  analyze->add_option("--word", an.word, "Word for crosstoken mode");
  analyze->add_option("-k", an.k, "Neighbours per query")->capture_default_str();
  analyze->add_option("--width", an.width, "Beam width for crosstoken")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; every other parse failure is a user error.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      mg2p::CmdPrepare(BuildConfig(prepare_flags), std::cerr);
    } else if (*train) {
      mg2p::CmdTrain(BuildConfig(train_flags), resume, std::cerr);
    } else if (*translate) {
      if (tr_output.empty()) {
        mg2p::CmdTranslate(tr, std::cout, std::cerr);
      } else {
        std::ofstream out(tr_output);
        if (!out) throw mg2p::UserError("cannot write '" + tr_output + "'");
        mg2p::CmdTranslate(tr, out, std::cerr);
      }
    } else if (*evaluate) {
      ev.per_mode = per_mode == "ratio_of_sums" ? mg2p::PerMode::kRatioOfSums
                                                : mg2p::PerMode::kMeanOfRatios;
      mg2p::CmdEvaluate(ev, std::cerr);
    } else if (*analyze) {
      mg2p::CmdAnalyze(an, std::cout);
    }
  } catch (const mg2p::UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const mg2p::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const mg2p::ShapeError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
