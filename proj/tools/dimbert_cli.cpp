// Command-line surface over the shared-library C interface. Every failure
// exits nonzero after printing a single machine-parsable line to stderr:
//   error: <category>: <detail>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dimbert.h"

namespace {

struct ConfigDeleter {
  void operator()(dim_config* p) const { dim_config_free(p); }
};
struct CorpusDeleter {
  void operator()(dim_corpus* p) const { dim_corpus_free(p); }
};
struct ModelDeleter {
  void operator()(dim_model* p) const { dim_model_free(p); }
};

using ConfigPtr = std::unique_ptr<dim_config, ConfigDeleter>;
using CorpusPtr = std::unique_ptr<dim_corpus, CorpusDeleter>;
using ModelPtr = std::unique_ptr<dim_model, ModelDeleter>;

// Exits the process on any non-OK status; the CLI has no recovery path.
void check(dim_status status) {
  if (status == DIM_OK) return;
  std::cerr << "error: " << dim_last_error() << "\n";
  std::exit(static_cast<int>(status));
}

[[noreturn]] void die(const std::string& message) {
  std::cerr << "error: " << message << "\n";
  std::exit(1);
}

ConfigPtr open_config(const std::string& path) {
  dim_config* raw = nullptr;
  check(dim_config_open(path.c_str(), &raw));
  return ConfigPtr(raw);
}

CorpusPtr load_corpus(const std::string& path) {
  dim_corpus* raw = nullptr;
  check(dim_corpus_load(path.c_str(), &raw));
  return CorpusPtr(raw);
}

ModelPtr load_model(const std::string& path) {
  dim_model* raw = nullptr;
  check(dim_model_load(path.c_str(), &raw));
  return ModelPtr(raw);
}

// Owned C string from the library, printed or written then freed.
std::string take_string(char* s) {
  std::string out = s == nullptr ? std::string() : std::string(s);
  dim_string_free(s);
  return out;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out.good()) die("io: cannot open output file: " + out_path);
  out << text << "\n";
  if (!out.good()) die("io: write failed: " + out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale disentangled multimodal transformer"};
  app.require_subcommand(1);

  // generate-corpus
  std::string gc_config, gc_out;
  std::int64_t gc_seed = -1;
  CLI::App* gc = app.add_subcommand(
      "generate-corpus", "synthesize a scene/caption/referring corpus");
  gc->add_option("--config", gc_config, "config file")->required();
  gc->add_option("--out", gc_out, "corpus output path (jsonl)")->required();
  gc->add_option("--seed", gc_seed, "override the corpus.seed key");

  // pretrain
  std::string pt_config, pt_corpus, pt_adapt_corpus, pt_init, pt_out;
  bool pt_no_adapt = false;
  int pt_average_last = 0;
  CLI::App* pt = app.add_subcommand(
      "pretrain", "masked-word pre-training on a corpus");
  pt->add_option("--config", pt_config, "config file")->required();
  pt->add_option("--corpus", pt_corpus, "training corpus")->required();
  pt->add_option("--out", pt_out, "model checkpoint output")->required();
  pt->add_option("--init", pt_init, "start from this checkpoint");
  pt->add_option("--adapt-corpus", pt_adapt_corpus,
                 "downstream corpus for the second, domain-adaptive stage "
                 "(defaults to the training corpus)");
  pt->add_flag("--no-adapt", pt_no_adapt, "skip the domain-adaptive stage");
  pt->add_option("--average-last", pt_average_last,
                 "average the last K per-epoch checkpoints into the output "
                 "(needs pretrain.checkpoints; 0 keeps the final step)");

  // finetune
  std::string ft_config, ft_corpus, ft_init, ft_out, ft_task = "caption";
  CLI::App* ft = app.add_subcommand(
      "finetune", "caption or referring fine-tuning from a checkpoint");
  ft->add_option("--config", ft_config, "config file")->required();
  ft->add_option("--corpus", ft_corpus, "fine-tuning corpus")->required();
  ft->add_option("--init", ft_init, "starting checkpoint")->required();
  ft->add_option("--out", ft_out, "model checkpoint output")->required();
  ft->add_option("--task", ft_task, "caption | referring")
      ->check(CLI::IsMember({"caption", "referring"}));

  // generate
  std::string gen_config, gen_corpus, gen_model, gen_out;
  std::int64_t gen_record = -1;
  CLI::App* gen = app.add_subcommand(
      "generate", "beam-search captions for corpus records");
  gen->add_option("--config", gen_config, "config file")->required();
  gen->add_option("--corpus", gen_corpus, "corpus")->required();
  gen->add_option("--model", gen_model, "model checkpoint")->required();
  gen->add_option("--record", gen_record, "single record index (default: all)");
  gen->add_option("--out", gen_out, "output path (default: stdout)");

  // evaluate
  std::string ev_config, ev_corpus, ev_model, ev_out;
  CLI::App* ev = app.add_subcommand(
      "evaluate", "token accuracy, BLEU, and referring accuracy report");
  ev->add_option("--config", ev_config, "config file")->required();
  ev->add_option("--corpus", ev_corpus, "corpus")->required();
  ev->add_option("--model", ev_model, "model checkpoint")->required();
  ev->add_option("--out", ev_out, "report path (default: stdout)");

  // ablate
  std::string ab_config, ab_corpus, ab_out;
  CLI::App* ab = app.add_subcommand(
      "ablate", "attention-mode x concepts x pretraining grid");
  ab->add_option("--config", ab_config, "config file")->required();
  ab->add_option("--corpus", ab_corpus, "corpus")->required();
  ab->add_option("--out", ab_out, "grid report path (default: stdout)");

  // sweep-concepts
  std::string sw_config, sw_corpus, sw_out;
  CLI::App* sw = app.add_subcommand(
      "sweep-concepts", "concept-extractor precision/recall/F1 per budget");
  sw->add_option("--config", sw_config, "config file")->required();
  sw->add_option("--corpus", sw_corpus, "corpus")->required();
  sw->add_option("--out", sw_out, "report path (default: stdout)");

  // dump-attention
  std::string da_corpus, da_model, da_out, da_mask = "blm";
  std::int64_t da_record = 0;
  CLI::App* da = app.add_subcommand(
      "dump-attention", "attention matrices and cross-modal top lists");
  da->add_option("--corpus", da_corpus, "corpus")->required();
  da->add_option("--model", da_model, "model checkpoint")->required();
  da->add_option("--record", da_record, "record index")->required();
  da->add_option("--mask", da_mask, "blm | s2slm")
      ->check(CLI::IsMember({"blm", "s2slm"}));
  da->add_option("--out", da_out, "artifact path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  if (gc->parsed()) {
    ConfigPtr config = open_config(gc_config);
    // The seed lives in the config so a corpus stays regenerable from one
    // file; the flag exists for quick variants.
    std::uint64_t seed = 1;
    if (gc_seed >= 0) {
      seed = static_cast<std::uint64_t>(gc_seed);
    } else {
      char* value = nullptr;
      check(dim_config_get(config.get(), "corpus.seed", "1", &value));
      const std::string text = take_string(value);
      try {
        seed = std::stoull(text);
      } catch (const std::exception&) {
        die("config: key corpus.seed is not a seed: " + text);
      }
    }
    dim_corpus* corpus = nullptr;
    check(dim_corpus_generate(config.get(), seed, &corpus));
    CorpusPtr owned(corpus);
    check(dim_corpus_save(corpus, gc_out.c_str()));
    std::int64_t records = 0;
    check(dim_corpus_record_count(corpus, &records));
    std::cout << "wrote " << records << " records to " << gc_out << "\n";
    return 0;
  }

  if (pt->parsed()) {
    ConfigPtr config = open_config(pt_config);
    CorpusPtr corpus = load_corpus(pt_corpus);
    ModelPtr model;
    if (pt_init.empty()) {
      dim_model* raw = nullptr;
      check(dim_model_create(config.get(), corpus.get(), &raw));
      model.reset(raw);
    } else {
      model = load_model(pt_init);
    }
    check(dim_pretrain(model.get(), corpus.get(), config.get(), 0));
    if (!pt_no_adapt) {
      CorpusPtr adapt_corpus;
      const dim_corpus* downstream = corpus.get();
      if (!pt_adapt_corpus.empty()) {
        adapt_corpus = load_corpus(pt_adapt_corpus);
        downstream = adapt_corpus.get();
      }
      check(dim_pretrain(model.get(), downstream, config.get(), 1));
    }
    if (pt_average_last > 0) {
      // Protocol variant: the shipped model is the mean of the last K
      // per-epoch checkpoints rather than the final step.
      char* dir = nullptr;
      check(dim_config_get(config.get(), "pretrain.checkpoints", "", &dir));
      const std::string checkpoint_dir = take_string(dir);
      if (checkpoint_dir.empty()) {
        die("config: --average-last needs the pretrain.checkpoints key");
      }
      check(dim_average_checkpoint_dir(checkpoint_dir.c_str(), pt_average_last,
                                       pt_out.c_str()));
    } else {
      check(dim_model_save(model.get(), pt_out.c_str()));
    }
    std::cout << "wrote " << pt_out << "\n";
    return 0;
  }

  if (ft->parsed()) {
    ConfigPtr config = open_config(ft_config);
    CorpusPtr corpus = load_corpus(ft_corpus);
    ModelPtr model = load_model(ft_init);
    if (ft_task == "caption") {
      check(dim_finetune_caption(model.get(), corpus.get(), config.get()));
    } else {
      check(dim_finetune_referring(model.get(), corpus.get(), config.get()));
    }
    check(dim_model_save(model.get(), ft_out.c_str()));
    std::cout << "wrote " << ft_out << "\n";
    return 0;
  }

  if (gen->parsed()) {
    ConfigPtr config = open_config(gen_config);
    CorpusPtr corpus = load_corpus(gen_corpus);
    ModelPtr model = load_model(gen_model);
    std::string text;
    if (gen_record >= 0) {
      char* caption = nullptr;
      check(dim_generate_caption(model.get(), corpus.get(),
                                 static_cast<int>(gen_record), config.get(),
                                 &caption));
      text = take_string(caption);
    } else {
      std::int64_t records = 0;
      check(dim_corpus_record_count(corpus.get(), &records));
      for (std::int64_t i = 0; i < records; ++i) {
        char* caption = nullptr;
        check(dim_generate_caption(model.get(), corpus.get(),
                                   static_cast<int>(i), config.get(), &caption));
        if (i > 0) text += "\n";
        text += std::to_string(i) + "\t" + take_string(caption);
      }
    }
    emit(text, gen_out);
    return 0;
  }

  if (ev->parsed()) {
    ConfigPtr config = open_config(ev_config);
    CorpusPtr corpus = load_corpus(ev_corpus);
    ModelPtr model = load_model(ev_model);
    char* json = nullptr;
    check(dim_evaluate(model.get(), corpus.get(), config.get(), &json));
    emit(take_string(json), ev_out);
    return 0;
  }

  if (ab->parsed()) {
    ConfigPtr config = open_config(ab_config);
    CorpusPtr corpus = load_corpus(ab_corpus);
    char* json = nullptr;
    check(dim_ablate(corpus.get(), config.get(), &json));
    emit(take_string(json), ab_out);
    return 0;
  }

  if (sw->parsed()) {
    ConfigPtr config = open_config(sw_config);
    CorpusPtr corpus = load_corpus(sw_corpus);
    char* json = nullptr;
    check(dim_sweep_concepts(corpus.get(), config.get(), &json));
    emit(take_string(json), sw_out);
    return 0;
  }

  if (da->parsed()) {
    CorpusPtr corpus = load_corpus(da_corpus);
    ModelPtr model = load_model(da_model);
    char* json = nullptr;
    check(dim_dump_attention(model.get(), corpus.get(),
                             static_cast<int>(da_record), da_mask.c_str(),
                             &json));
    emit(take_string(json), da_out);
    return 0;
  }

  die("unknown subcommand");
}
