#include "dimbert.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "dimbert/checkpoint.hpp"
#include "dimbert/config.hpp"
#include "dimbert/decoding.hpp"
#include "dimbert/error.hpp"
#include "dimbert/eval.hpp"
#include "dimbert/model.hpp"
#include "dimbert/trainer.hpp"
#include "dimbert/world.hpp"

struct dim_config {
  dimbert::ConfigFile file;
};

struct dim_corpus {
  dimbert::Corpus corpus;
};

struct dim_model {
  dimbert::Model model;
};

namespace {

thread_local std::string g_last_error;

dim_status status_of(dimbert::ErrorCode code) {
  using dimbert::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_argument: return DIM_ERR_INVALID_ARG;
    case ErrorCode::config: return DIM_ERR_CONFIG;
    case ErrorCode::shape: return DIM_ERR_SHAPE;
    case ErrorCode::contract: return DIM_ERR_CONTRACT;
    case ErrorCode::vocab: return DIM_ERR_VOCAB;
    case ErrorCode::length: return DIM_ERR_LENGTH;
    case ErrorCode::index: return DIM_ERR_INDEX;
    case ErrorCode::numeric: return DIM_ERR_NUMERIC;
    case ErrorCode::io: return DIM_ERR_IO;
    case ErrorCode::fingerprint: return DIM_ERR_FINGERPRINT;
  }
  return DIM_ERR_INTERNAL;
}

template <typename F>
dim_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DIM_OK;
  } catch (const dimbert::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DIM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unidentified failure";
    return DIM_ERR_INTERNAL;
  }
}

dim_status arg_error(const char* message) {
  g_last_error = message;
  return DIM_ERR_INVALID_ARG;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<int> all_records(const dimbert::Corpus& corpus) {
  std::vector<int> ids(corpus.records.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ids;
}

}  // namespace

extern "C" {

const char* dim_last_error(void) { return g_last_error.c_str(); }

dim_status dim_config_open(const char* path, dim_config** out) {
  if (path == nullptr || out == nullptr) return arg_error("null argument");
  *out = nullptr;
  return guarded([&] {
    dimbert::ConfigFile file = dimbert::ConfigFile::from_file(path);
    dimbert::check_config_keys(file);
    *out = new dim_config{std::move(file)};
  });
}

dim_status dim_config_parse(const char* text, dim_config** out) {
  if (text == nullptr || out == nullptr) return arg_error("null argument");
  *out = nullptr;
  return guarded([&] {
    dimbert::ConfigFile file = dimbert::ConfigFile::from_text(text);
    dimbert::check_config_keys(file);
    *out = new dim_config{std::move(file)};
  });
}

dim_status dim_config_get(const dim_config* config, const char* key,
                          const char* fallback, char** out) {
  if (config == nullptr || key == nullptr || out == nullptr) {
    return arg_error("null argument");
  }
  *out = nullptr;
  return guarded([&] {
    const std::string value = config->file.get_string(
        key, fallback == nullptr ? std::string() : std::string(fallback));
    *out = copy_string(value);
  });
}

void dim_config_free(dim_config* config) { delete config; }

dim_status dim_corpus_generate(const dim_config* config, uint64_t seed,
                               dim_corpus** out) {
  if (config == nullptr || out == nullptr) return arg_error("null argument");
  *out = nullptr;
  return guarded([&] {
    const dimbert::WorldConfig world = dimbert::world_config_from(config->file);
    *out = new dim_corpus{dimbert::generate_corpus(seed, world)};
  });
}

dim_status dim_corpus_load(const char* path, dim_corpus** out) {
  if (path == nullptr || out == nullptr) return arg_error("null argument");
  *out = nullptr;
  return guarded([&] { *out = new dim_corpus{dimbert::load_corpus(path)}; });
}

dim_status dim_corpus_save(const dim_corpus* corpus, const char* path) {
  if (corpus == nullptr || path == nullptr) return arg_error("null argument");
  return guarded([&] { dimbert::save_corpus(corpus->corpus, path); });
}

dim_status dim_corpus_record_count(const dim_corpus* corpus, int64_t* out) {
  if (corpus == nullptr || out == nullptr) return arg_error("null argument");
  *out = static_cast<int64_t>(corpus->corpus.records.size());
  g_last_error.clear();
  return DIM_OK;
}

void dim_corpus_free(dim_corpus* corpus) { delete corpus; }

dim_status dim_model_create(const dim_config* config, const dim_corpus* corpus,
                            dim_model** out) {
  if (config == nullptr || corpus == nullptr || out == nullptr) {
    return arg_error("null argument");
  }
  *out = nullptr;
  return guarded([&] {
    const dimbert::ModelConfig mc =
        dimbert::model_config_from(config->file, corpus->corpus);
    *out = new dim_model{dimbert::Model::init(mc, corpus->corpus.vocab)};
  });
}

dim_status dim_model_load(const char* path, dim_model** out) {
  if (path == nullptr || out == nullptr) return arg_error("null argument");
  *out = nullptr;
  return guarded([&] { *out = new dim_model{dimbert::load_model(path)}; });
}

dim_status dim_model_save(const dim_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return arg_error("null argument");
  return guarded([&] { dimbert::save_model(model->model, path); });
}

dim_status dim_model_parameter_count(const dim_model* model, int64_t* out) {
  if (model == nullptr || out == nullptr) return arg_error("null argument");
  return guarded([&] { *out = model->model.parameter_count(); });
}

dim_status dim_model_fingerprint(const dim_model* model, uint64_t* out) {
  if (model == nullptr || out == nullptr) return arg_error("null argument");
  return guarded([&] { *out = model->model.fingerprint(); });
}

void dim_model_free(dim_model* model) { delete model; }

dim_status dim_average_checkpoints(const char* const* paths, size_t count,
                                   const char* out_path) {
  if (paths == nullptr || out_path == nullptr) return arg_error("null argument");
  for (size_t i = 0; i < count; ++i) {
    if (paths[i] == nullptr) return arg_error("null checkpoint path");
  }
  return guarded([&] {
    std::vector<std::string> list(paths, paths + count);
    dimbert::write_checkpoint(out_path, dimbert::average_checkpoints(list));
  });
}

dim_status dim_average_checkpoint_dir(const char* dir, int k,
                                      const char* out_path) {
  if (dir == nullptr || out_path == nullptr) return arg_error("null argument");
  return guarded([&] {
    dimbert::require(k >= 1, dimbert::ErrorCode::invalid_argument,
                     "k must be at least 1");
    std::vector<std::string> paths;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
      if (entry.path().extension() == ".ckpt") {
        paths.push_back(entry.path().string());
      }
    }
    dimbert::require(!ec, dimbert::ErrorCode::io,
                     "cannot list checkpoint directory: " + std::string(dir));
    dimbert::require(!paths.empty(), dimbert::ErrorCode::io,
                     "no checkpoints in: " + std::string(dir));
    std::sort(paths.begin(), paths.end());
    const std::size_t keep =
        std::min<std::size_t>(paths.size(), static_cast<std::size_t>(k));
    paths.erase(paths.begin(), paths.end() - static_cast<long>(keep));
    dimbert::write_checkpoint(out_path, dimbert::average_checkpoints(paths));
  });
}

dim_status dim_pretrain(dim_model* model, const dim_corpus* corpus,
                        const dim_config* config, int adapt_phase) {
  if (model == nullptr || corpus == nullptr || config == nullptr) {
    return arg_error("null argument");
  }
  return guarded([&] {
    const dimbert::PretrainConfig pc =
        adapt_phase != 0 ? dimbert::adapt_config_from(config->file)
                         : dimbert::pretrain_config_from(config->file);
    dimbert::pretrain(model->model, corpus->corpus, pc);
  });
}

dim_status dim_finetune_caption(dim_model* model, const dim_corpus* corpus,
                                const dim_config* config) {
  if (model == nullptr || corpus == nullptr || config == nullptr) {
    return arg_error("null argument");
  }
  return guarded([&] {
    dimbert::finetune_caption(model->model, corpus->corpus,
                              dimbert::caption_config_from(config->file));
  });
}

dim_status dim_finetune_referring(dim_model* model, const dim_corpus* corpus,
                                  const dim_config* config) {
  if (model == nullptr || corpus == nullptr || config == nullptr) {
    return arg_error("null argument");
  }
  return guarded([&] {
    dimbert::finetune_referring(model->model, corpus->corpus,
                                dimbert::referring_config_from(config->file));
  });
}

dim_status dim_generate_caption(const dim_model* model, const dim_corpus* corpus,
                                int record_index, const dim_config* config,
                                char** out_text) {
  if (model == nullptr || corpus == nullptr || config == nullptr ||
      out_text == nullptr) {
    return arg_error("null argument");
  }
  *out_text = nullptr;
  return guarded([&] {
    const dimbert::Corpus& c = corpus->corpus;
    dimbert::require(record_index >= 0 &&
                         record_index < static_cast<int>(c.records.size()),
                     dimbert::ErrorCode::index, "record index out of range");
    const dimbert::Record& rec = c.records[static_cast<std::size_t>(record_index)];
    const dimbert::Hypothesis best = dimbert::beam_search(
        model->model, rec.rois, rec.concepts,
        dimbert::generation_config_from(config->file));
    std::string text;
    for (std::size_t i = 0; i < best.tokens.size(); ++i) {
      if (i > 0) text += ' ';
      text += model->model.vocab.token(best.tokens[i]);
    }
    *out_text = copy_string(text);
  });
}

dim_status dim_evaluate(const dim_model* model, const dim_corpus* corpus,
                        const dim_config* config, char** out_json) {
  if (model == nullptr || corpus == nullptr || config == nullptr ||
      out_json == nullptr) {
    return arg_error("null argument");
  }
  *out_json = nullptr;
  return guarded([&] {
    const dimbert::EvalOutput out = dimbert::evaluate_model(
        model->model, corpus->corpus,
        dimbert::generation_config_from(config->file), all_records(corpus->corpus));
    *out_json = copy_string(out.report.to_json());
  });
}

dim_status dim_ablate(const dim_corpus* corpus, const dim_config* config,
                      char** out_json) {
  if (corpus == nullptr || config == nullptr || out_json == nullptr) {
    return arg_error("null argument");
  }
  *out_json = nullptr;
  return guarded([&] {
    const dimbert::AblationResult result = dimbert::run_ablation(
        corpus->corpus, dimbert::ablation_config_from(config->file, corpus->corpus));
    *out_json = copy_string(result.to_json());
  });
}

dim_status dim_sweep_concepts(const dim_corpus* corpus, const dim_config* config,
                              char** out_json) {
  if (corpus == nullptr || config == nullptr || out_json == nullptr) {
    return arg_error("null argument");
  }
  *out_json = nullptr;
  return guarded([&] {
    const dimbert::SweepResult result = dimbert::sweep_concepts(
        corpus->corpus, dimbert::sweep_budgets_from(config->file));
    *out_json = copy_string(result.to_json());
  });
}

dim_status dim_dump_attention(const dim_model* model, const dim_corpus* corpus,
                              int record_index, const char* mask_kind,
                              char** out_json) {
  if (model == nullptr || corpus == nullptr || mask_kind == nullptr ||
      out_json == nullptr) {
    return arg_error("null argument");
  }
  *out_json = nullptr;
  return guarded([&] {
    const std::string kind = mask_kind;
    dimbert::TaskKind task = dimbert::TaskKind::Blm;
    if (kind == "s2slm") {
      task = dimbert::TaskKind::S2slm;
    } else {
      dimbert::require(kind == "blm", dimbert::ErrorCode::invalid_argument,
                       "mask kind must be blm or s2slm, got: " + kind);
    }
    const dimbert::AttentionDump dump =
        dimbert::dump_attention(model->model, corpus->corpus, record_index, task);
    *out_json = copy_string(dump.to_json());
  });
}

void dim_string_free(char* s) { std::free(s); }

}  // extern "C"
