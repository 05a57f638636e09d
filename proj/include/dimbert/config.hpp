#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dimbert/decoding.hpp"
#include "dimbert/eval.hpp"
#include "dimbert/objectives.hpp"
#include "dimbert/trainer.hpp"
#include "dimbert/transformer.hpp"
#include "dimbert/world.hpp"

namespace dimbert {

// Flat key-value text document: one `key = value` per line, `#` starts a
// comment, blank lines ignored, duplicate keys rejected. Getters mark keys
// as read so require_fully_read() can flag misspelled or unused keys, the
// usual way a typo would otherwise silently fall back to a default.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile from_text(const std::string& text);
  static ConfigFile from_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Whitespace-separated integer list, e.g. seed sets and sweep budgets.
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;

  void require_fully_read() const;
  std::string canonical_text() const;  // sorted `key = value` lines

 private:
  std::string raw(const std::string& key) const;

  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> read_;
};

// Builders from the shared key namespace. Each reads only its own prefix,
// so one file can drive a whole pipeline run.
WorldConfig world_config_from(const ConfigFile& file);
// Width fields (vocab, RoI feature, class-probability) come from the corpus.
ModelConfig model_config_from(const ConfigFile& file, const Corpus& corpus);
MaskingPolicy masking_policy_from(const ConfigFile& file);
TaskMix task_mix_from(const ConfigFile& file);
PretrainConfig pretrain_config_from(const ConfigFile& file);
// Second-stage pre-training on downstream-domain data: inherits the pretrain
// settings, then `adapt.*` keys override. Seed shifts by one by default so
// the stage draws fresh batches.
PretrainConfig adapt_config_from(const ConfigFile& file);
FinetuneCaptionConfig caption_config_from(const ConfigFile& file);
FinetuneReferringConfig referring_config_from(const ConfigFile& file);
GenerationConfig generation_config_from(const ConfigFile& file);
AblationConfig ablation_config_from(const ConfigFile& file, const Corpus& corpus);
std::vector<int> sweep_budgets_from(const ConfigFile& file);
std::uint64_t corpus_seed_from(const ConfigFile& file);

// Rejects keys no builder understands. Values are not type-checked here;
// the builder that owns a key does that when it runs.
void check_config_keys(const ConfigFile& file);

}  // namespace dimbert
