#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mg2p/cli.hpp"
#include "mg2p/corpus.hpp"

namespace mg2p {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t ParseCount(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UserError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double ParseReal(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UserError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool ParseFlag(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw UserError("config: '" + key + "' expects on/off, got '" + v + "'");
}

std::string Real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> SplitList(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void RunConfig::Set(const std::string& key, const std::string& raw) {
  const std::string v = Trim(raw);
  if (key == "train_lexicon") train_lexicon = v;
  else if (key == "test_lexicon") test_lexicon = v;
  else if (key == "inventory") inventory = v;
  else if (key == "data_dir") data_dir = v;
  else if (key == "checkpoint_dir") checkpoint_dir = v;
  else if (key == "hidden_size") model.hidden_size = ParseCount(key, v);
  else if (key == "src_embed") model.src_embed = ParseCount(key, v);
  else if (key == "tgt_embed") model.tgt_embed = ParseCount(key, v);
  else if (key == "enc_layers") model.enc_layers = ParseCount(key, v);
  else if (key == "dec_layers") model.dec_layers = ParseCount(key, v);
  else if (key == "dropout") model.dropout = ParseReal(key, v);
  else if (key == "input_feed") model.input_feed = ParseFlag(key, v);
  else if (key == "epochs") schedule.epochs = ParseCount(key, v);
  else if (key == "batch_size") schedule.batch_size = ParseCount(key, v);
  else if (key == "lr") schedule.lr = ParseReal(key, v);
  else if (key == "clip") schedule.clip = ParseReal(key, v);
  else if (key == "lr_decay") schedule.lr_decay = ParseReal(key, v);
  else if (key == "decay_start") schedule.decay_start = ParseCount(key, v);
  else if (key == "seed") schedule.seed = ParseCount(key, v);
  else if (key == "bucket_factor") schedule.bucket_factor = ParseCount(key, v);
  else if (key == "lang_token") lang_token = ParseFlag(key, v);
  else if (key == "languages") {
    languages = SplitList(v);
    for (const auto& l : *languages) {
      if (!IsLanguageCode(l)) throw UserError("config: bad language code '" + l + "'");
    }
  } else if (key == "beam_width") beam_width = ParseCount(key, v);
  else if (key == "length_normalize") length_normalize = ParseFlag(key, v);
  else if (key == "per_mode") {
    if (v == "mean_of_ratios") per_mode = PerMode::kMeanOfRatios;
    else if (v == "ratio_of_sums") per_mode = PerMode::kRatioOfSums;
    else throw UserError("config: per_mode must be mean_of_ratios or ratio_of_sums");
  } else if (key == "val_fraction") val_fraction = ParseReal(key, v);
  else if (key == "cap") cap = ParseCount(key, v);
  else throw UserError("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::ToKeyValues() const {
  std::map<std::string, std::string> kv;
  kv["train_lexicon"] = train_lexicon;
  kv["test_lexicon"] = test_lexicon;
  kv["inventory"] = inventory;
  kv["data_dir"] = data_dir;
  kv["checkpoint_dir"] = checkpoint_dir;
  kv["hidden_size"] = std::to_string(model.hidden_size);
  kv["src_embed"] = std::to_string(model.src_embed);
  kv["tgt_embed"] = std::to_string(model.tgt_embed);
  kv["enc_layers"] = std::to_string(model.enc_layers);
  kv["dec_layers"] = std::to_string(model.dec_layers);
  kv["dropout"] = Real(model.dropout);
  kv["input_feed"] = model.input_feed ? "on" : "off";
  kv["epochs"] = std::to_string(schedule.epochs);
  kv["batch_size"] = std::to_string(schedule.batch_size);
  kv["lr"] = Real(schedule.lr);
  kv["clip"] = Real(schedule.clip);
  kv["lr_decay"] = Real(schedule.lr_decay);
  kv["decay_start"] = std::to_string(schedule.decay_start);
  kv["seed"] = std::to_string(schedule.seed);
  kv["bucket_factor"] = std::to_string(schedule.bucket_factor);
  kv["lang_token"] = lang_token ? "on" : "off";
  if (languages) {
    std::string joined;
    for (const auto& l : *languages) joined += (joined.empty() ? "" : ",") + l;
    kv["languages"] = joined;
  }
  kv["beam_width"] = std::to_string(beam_width);
  kv["length_normalize"] = length_normalize ? "on" : "off";
  kv["per_mode"] = per_mode == PerMode::kMeanOfRatios ? "mean_of_ratios" : "ratio_of_sums";
  kv["val_fraction"] = Real(val_fraction);
  kv["cap"] = std::to_string(cap);
  return kv;
}

RunConfig ParseRunConfig(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UserError("config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = Trim(line.substr(0, eq));
    // Manifest-only keys, so a manifest can be fed back as a config.
    if (key == "version" || key.rfind("hash.", 0) == 0) continue;
    config.Set(key, line.substr(eq + 1));
  }
  return config;
}

RunConfig LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config '" + path + "'");
  return ParseRunConfig(in);
}

void WriteRunConfig(std::ostream& out, const RunConfig& config) {
  for (const auto& [k, v] : config.ToKeyValues()) out << k << " = " << v << '\n';
}

std::string HashFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void WriteManifest(const std::string& dir, const RunConfig& config,
                   const std::map<std::string, std::string>& inputs) {
  std::ofstream out(std::filesystem::path(dir) / "manifest.txt");
  if (!out) throw UserError("cannot write manifest in '" + dir + "'");
  out << "version = " << kToolVersion << '\n';
  WriteRunConfig(out, config);
  for (const auto& [label, path] : inputs) {
    out << "hash." << label << " = " << HashFile(path) << '\n';
  }
}

}  // namespace mg2p
