#include "dimbert/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dimbert/error.hpp"

namespace dimbert {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::from_text(const std::string& text) {
  ConfigFile file;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::config,
            "line " + std::to_string(line_no) + " is not `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty(), ErrorCode::config,
            "line " + std::to_string(line_no) + " has an empty key");
    require(file.entries_.emplace(key, value).second, ErrorCode::config,
            "duplicate key: " + key);
  }
  return file;
}

ConfigFile ConfigFile::from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

bool ConfigFile::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::string ConfigFile::raw(const std::string& key) const {
  read_.insert(key);
  return entries_.at(key);
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

std::int64_t ConfigFile::get_int(const std::string& key,
                                 std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string value = raw(key);
  try {
    std::size_t used = 0;
    const std::int64_t parsed = std::stoll(value, &used);
    require(used == value.size(), ErrorCode::config,
            "key " + key + " is not an integer: " + value);
    return parsed;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::config, "key " + key + " is not an integer: " + value);
  }
}

std::uint64_t ConfigFile::get_seed(const std::string& key,
                                   std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string value = raw(key);
  try {
    std::size_t used = 0;
    const std::uint64_t parsed = std::stoull(value, &used);
    require(used == value.size(), ErrorCode::config,
            "key " + key + " is not a seed: " + value);
    return parsed;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::config, "key " + key + " is not a seed: " + value);
  }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string value = raw(key);
  try {
    std::size_t used = 0;
    const double parsed = std::stod(value, &used);
    require(used == value.size(), ErrorCode::config,
            "key " + key + " is not a number: " + value);
    return parsed;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::config, "key " + key + " is not a number: " + value);
  }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string value = raw(key);
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  fail(ErrorCode::config, "key " + key + " is not a boolean: " + value);
}

std::vector<int> ConfigFile::get_int_list(const std::string& key,
                                          const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  const std::string value = raw(key);
  std::istringstream in(value);
  std::vector<int> out;
  std::string item;
  while (in >> item) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      require(used == item.size(), ErrorCode::config,
              "key " + key + " holds a non-integer entry: " + item);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorCode::config, "key " + key + " holds a non-integer entry: " + item);
    }
  }
  require(!out.empty(), ErrorCode::config, "key " + key + " holds no entries");
  return out;
}

void ConfigFile::require_fully_read() const {
  for (const auto& [key, value] : entries_) {
    require(read_.count(key) != 0, ErrorCode::config, "unknown key: " + key);
  }
}

std::string ConfigFile::canonical_text() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

namespace {

int get_count(const ConfigFile& file, const std::string& key, int fallback) {
  const std::int64_t v = file.get_int(key, fallback);
  require(v >= INT32_MIN && v <= INT32_MAX, ErrorCode::config,
          "key " + key + " is out of range");
  return static_cast<int>(v);
}

AdamConfig adam_from(const ConfigFile& file, const std::string& prefix,
                     const AdamConfig& base) {
  AdamConfig adam = base;
  adam.lr = file.get_double(prefix + ".lr", base.lr);
  adam.beta1 = file.get_double("adam.beta1", base.beta1);
  adam.beta2 = file.get_double("adam.beta2", base.beta2);
  adam.eps = file.get_double("adam.eps", base.eps);
  adam.warmup_steps = get_count(file, prefix + ".warmup_steps", base.warmup_steps);
  adam.validate();
  return adam;
}

}  // namespace

WorldConfig world_config_from(const ConfigFile& file) {
  WorldConfig c;
  c.canvas_w = get_count(file, "world.canvas_w", c.canvas_w);
  c.canvas_h = get_count(file, "world.canvas_h", c.canvas_h);
  c.min_objects = get_count(file, "world.min_objects", c.min_objects);
  c.max_objects = get_count(file, "world.max_objects", c.max_objects);
  c.num_classes = get_count(file, "world.classes", c.num_classes);
  c.num_colors = get_count(file, "world.colors", c.num_colors);
  c.num_sizes = get_count(file, "world.sizes", c.num_sizes);
  c.unique_objects = file.get_bool("world.unique_objects", c.unique_objects);
  c.noise_sigma = file.get_double("world.noise_sigma", c.noise_sigma);
  c.concept_noise = file.get_double("world.concept_noise", c.concept_noise);
  c.concept_count = get_count(file, "world.concepts", c.concept_count);
  c.concept_dim = get_count(file, "world.concept_dim", c.concept_dim);
  c.caption_mode = caption_mode_from_name(
      file.get_string("world.caption_mode", caption_mode_name(c.caption_mode)));
  c.max_caption_len = get_count(file, "world.max_caption_len", c.max_caption_len);
  c.scenes = get_count(file, "world.scenes", c.scenes);
  c.referring_per_scene =
      get_count(file, "world.referring_per_scene", c.referring_per_scene);
  c.validate();
  return c;
}

ModelConfig model_config_from(const ConfigFile& file, const Corpus& corpus) {
  ModelConfig c;
  c.mode = attention_mode_from_name(
      file.get_string("model.mode", attention_mode_name(c.mode)));
  c.layers = get_count(file, "model.layers", c.layers);
  c.heads = get_count(file, "model.heads", c.heads);
  c.d_model = get_count(file, "model.d_model", c.d_model);
  c.ffn_width = get_count(file, "model.ffn_width", c.ffn_width);
  c.max_seq_len = get_count(file, "model.max_seq_len", c.max_seq_len);
  c.dropout = file.get_double("model.dropout", c.dropout);
  c.tie_output = file.get_bool("model.tie_output", c.tie_output);
  c.use_concepts = file.get_bool("model.use_concepts", c.use_concepts);
  c.init_sigma = file.get_double("model.init_sigma", c.init_sigma);
  c.seed = file.get_seed("model.seed", c.seed);
  c.vocab_size = corpus.vocab.size();
  c.d_r = corpus.config.appearance_dim();
  c.d_c = corpus.config.concept_dim;
  c.validate();
  return c;
}

MaskingPolicy masking_policy_from(const ConfigFile& file) {
  MaskingPolicy p;
  p.select = file.get_double("mask.select", p.select);
  p.mask = file.get_double("mask.mask", p.mask);
  p.random = file.get_double("mask.random", p.random);
  p.keep = file.get_double("mask.keep", p.keep);
  p.validate();
  return p;
}

TaskMix task_mix_from(const ConfigFile& file) {
  TaskMix mix;
  mix.blm = file.get_double("mix.blm", mix.blm);
  mix.s2slm = file.get_double("mix.s2slm", mix.s2slm);
  mix.validate();
  return mix;
}

PretrainConfig pretrain_config_from(const ConfigFile& file) {
  PretrainConfig c;
  c.epochs = get_count(file, "pretrain.epochs", c.epochs);
  c.steps_per_epoch = get_count(file, "pretrain.steps_per_epoch", c.steps_per_epoch);
  c.batch_size = get_count(file, "pretrain.batch_size", c.batch_size);
  c.adam = adam_from(file, "pretrain", c.adam);
  c.mix = task_mix_from(file);
  c.policy = masking_policy_from(file);
  c.mask_concepts = file.get_bool("pretrain.mask_concepts", c.mask_concepts);
  c.seed = file.get_seed("pretrain.seed", c.seed);
  c.log_path = file.get_string("pretrain.log", c.log_path);
  c.checkpoint_dir = file.get_string("pretrain.checkpoints", c.checkpoint_dir);
  c.validate();
  return c;
}

PretrainConfig adapt_config_from(const ConfigFile& file) {
  PretrainConfig c = pretrain_config_from(file);
  c.epochs = get_count(file, "adapt.epochs", 2);
  c.steps_per_epoch = get_count(file, "adapt.steps_per_epoch", c.steps_per_epoch);
  c.batch_size = get_count(file, "adapt.batch_size", c.batch_size);
  c.adam.lr = file.get_double("adapt.lr", c.adam.lr);
  c.seed = file.get_seed("adapt.seed", c.seed + 1);
  // Inherited artifact paths get a stage suffix: epoch numbering restarts
  // per phase, so sharing a directory would overwrite stage-one files.
  auto staged = [](const std::string& path) {
    return path.empty() ? path : path + "-adapt";
  };
  c.log_path = file.get_string("adapt.log", staged(c.log_path));
  c.checkpoint_dir = file.get_string("adapt.checkpoints", staged(c.checkpoint_dir));
  c.validate();
  return c;
}

FinetuneCaptionConfig caption_config_from(const ConfigFile& file) {
  FinetuneCaptionConfig c;
  c.epochs = get_count(file, "caption.epochs", c.epochs);
  c.batch_size = get_count(file, "caption.batch_size", c.batch_size);
  c.adam = adam_from(file, "caption", c.adam);
  c.full_coverage = file.get_bool("caption.full_coverage", c.full_coverage);
  c.policy = masking_policy_from(file);
  c.seed = file.get_seed("caption.seed", c.seed);
  c.log_path = file.get_string("caption.log", c.log_path);
  c.validate();
  return c;
}

FinetuneReferringConfig referring_config_from(const ConfigFile& file) {
  FinetuneReferringConfig c;
  c.epochs = get_count(file, "referring.epochs", c.epochs);
  c.batch_size = get_count(file, "referring.batch_size", c.batch_size);
  c.adam = adam_from(file, "referring", c.adam);
  c.seed = file.get_seed("referring.seed", c.seed);
  c.log_path = file.get_string("referring.log", c.log_path);
  c.validate();
  return c;
}

GenerationConfig generation_config_from(const ConfigFile& file) {
  GenerationConfig c;
  c.beam_size = get_count(file, "generate.beam", c.beam_size);
  c.max_length = get_count(file, "generate.max_length", c.max_length);
  c.alpha = file.get_double("generate.alpha", c.alpha);
  c.validate();
  return c;
}

AblationConfig ablation_config_from(const ConfigFile& file, const Corpus& corpus) {
  AblationConfig c;
  c.model = model_config_from(file, corpus);
  c.pretrain = pretrain_config_from(file);
  c.caption = caption_config_from(file);
  c.gen = generation_config_from(file);
  const std::vector<int> seeds =
      file.get_int_list("ablate.seeds", std::vector<int>{1, 2, 3});
  c.seeds.clear();
  for (int s : seeds) {
    require(s >= 0, ErrorCode::config, "ablate.seeds entries must be non-negative");
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  return c;
}

std::vector<int> sweep_budgets_from(const ConfigFile& file) {
  return file.get_int_list("sweep.budgets", std::vector<int>{0, 2, 5, 8});
}

std::uint64_t corpus_seed_from(const ConfigFile& file) {
  return file.get_seed("corpus.seed", 1);
}

void check_config_keys(const ConfigFile& file) {
  static const char* const kKnown[] = {
      "adam.beta1", "adam.beta2", "adam.eps",
      "world.canvas_w", "world.canvas_h", "world.min_objects",
      "world.max_objects", "world.classes", "world.colors", "world.sizes",
      "world.unique_objects", "world.noise_sigma", "world.concept_noise",
      "world.concepts", "world.concept_dim", "world.caption_mode",
      "world.max_caption_len", "world.scenes", "world.referring_per_scene",
      "model.mode", "model.layers", "model.heads", "model.d_model",
      "model.ffn_width", "model.max_seq_len", "model.dropout",
      "model.tie_output", "model.use_concepts", "model.init_sigma",
      "model.seed",
      "mask.select", "mask.mask", "mask.random", "mask.keep",
      "mix.blm", "mix.s2slm",
      "pretrain.epochs", "pretrain.steps_per_epoch", "pretrain.batch_size",
      "pretrain.lr", "pretrain.warmup_steps", "pretrain.mask_concepts",
      "pretrain.seed", "pretrain.log", "pretrain.checkpoints",
      "adapt.epochs", "adapt.steps_per_epoch", "adapt.batch_size", "adapt.lr",
      "adapt.seed", "adapt.log", "adapt.checkpoints",
      "caption.epochs", "caption.batch_size", "caption.lr",
      "caption.warmup_steps", "caption.full_coverage", "caption.seed",
      "caption.log",
      "referring.epochs", "referring.batch_size", "referring.lr",
      "referring.warmup_steps", "referring.seed", "referring.log",
      "generate.beam", "generate.max_length", "generate.alpha",
      "ablate.seeds", "sweep.budgets", "corpus.seed",
  };
  for (const char* key : kKnown) {
    if (file.has(key)) file.get_string(key, "");
  }
  file.require_fully_read();
}

}  // namespace dimbert
