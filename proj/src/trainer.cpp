#include "dimbert/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dimbert/error.hpp"

namespace dimbert {

void AdamConfig::validate() const {
  require(lr > 0.0, ErrorCode::config, "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, ErrorCode::config, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, ErrorCode::config, "beta2 must lie in [0, 1)");
  require(eps > 0.0, ErrorCode::config, "adam epsilon must be positive");
  require(warmup_steps >= 0, ErrorCode::config, "warmup steps must be non-negative");
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params,
                             const AdamConfig& config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  require(!params_.empty(), ErrorCode::invalid_argument,
          "optimizer needs at least one parameter");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    require(p.defined() && p.requires_grad(), ErrorCode::contract,
            "parameter " + name + " is not trainable");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamOptimizer::lr_at(std::uint64_t t) const {
  if (config_.warmup_steps > 0 && t < static_cast<std::uint64_t>(config_.warmup_steps)) {
    return config_.lr * static_cast<double>(t) /
           static_cast<double>(config_.warmup_steps);
  }
  return config_.lr;
}

void AdamOptimizer::step() {
  ++t_;
  const double lr = lr_at(t_);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    require(p.grad_valid(), ErrorCode::contract,
            "parameter " + params_[i].first +
                " has no gradient; the step needs a completed backward pass");
    const auto g = p.grad();
    auto w = p.values_mut();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
    p.clear_grad();
  }
}

OptimizerBlob AdamOptimizer::state() const {
  OptimizerBlob blob;
  blob.step = t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    blob.entries.push_back({params_[i].first, m_[i], v_[i]});
  }
  return blob;
}

void AdamOptimizer::restore(const OptimizerBlob& blob) {
  require(blob.entries.size() == params_.size(), ErrorCode::fingerprint,
          "optimizer state does not cover the parameter list");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const OptimizerEntry& entry = blob.entries[i];
    require(entry.name == params_[i].first, ErrorCode::fingerprint,
            "optimizer state order diverges at " + entry.name);
    require(entry.m.size() == m_[i].size() && entry.v.size() == v_[i].size(),
            ErrorCode::shape, "optimizer moment size mismatch at " + entry.name);
    m_[i] = entry.m;
    v_[i] = entry.v;
  }
  t_ = blob.step;
}

namespace {

// Append-only run log: step, task, loss, lr, wall-time seconds.
class RunLog {
 public:
  explicit RunLog(const std::string& path) {
    if (path.empty()) return;
    const bool fresh = !std::filesystem::exists(path) ||
                       std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    require(out_.good(), ErrorCode::io, "cannot open run log: " + path);
    if (fresh) out_ << "step\ttask\tloss\tlr\tseconds\n";
    start_ = std::chrono::steady_clock::now();
  }

  void row(std::uint64_t step, const char* task, double loss, double lr) {
    if (!out_.is_open()) return;
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    char line[160];
    std::snprintf(line, sizeof line, "%llu\t%s\t%.10g\t%.10g\t%.3f\n",
                  static_cast<unsigned long long>(step), task, loss, lr, seconds);
    out_ << line;
    require(out_.good(), ErrorCode::io, "failed writing run log");
  }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

template <typename T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

Tensor batch_mean(std::vector<Tensor>& losses) {
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, 1.0 / static_cast<double>(losses.size()));
}

void check_corpus_compat(const Model& model, const Corpus& corpus) {
  require(model.vocab.content_hash() == corpus.vocab.content_hash(),
          ErrorCode::fingerprint,
          "model and corpus vocabularies disagree; they come from different worlds");
}

std::vector<int> resolve_indices(const Corpus& corpus,
                                 const std::vector<int>& requested) {
  const int n = static_cast<int>(corpus.records.size());
  require(n > 0, ErrorCode::contract, "corpus holds no records");
  if (requested.empty()) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  for (int i : requested) {
    require(i >= 0 && i < n, ErrorCode::index, "record index out of range");
  }
  return requested;
}

}  // namespace

void PretrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::config, "pretraining needs at least one epoch");
  require(steps_per_epoch >= 1, ErrorCode::config,
          "pretraining needs at least one step per epoch");
  require(batch_size >= 1, ErrorCode::config, "batch size must be at least 1");
  adam.validate();
  mix.validate();
  policy.validate();
}

PretrainResult pretrain(Model& model, const Corpus& corpus,
                        const PretrainConfig& config) {
  config.validate();
  check_corpus_compat(model, corpus);
  require(!corpus.records.empty(), ErrorCode::contract, "corpus holds no records");

  Rng root(config.seed);
  Rng task_rng = root.derive(1);
  Rng sample_rng = root.derive(2);
  Rng mask_rng = root.derive(3);
  Rng dropout_rng = root.derive(4);

  AdamOptimizer opt(model.parameters(ParamSet::LanguageModel), config.adam);
  RunLog log(config.log_path);
  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
  }

  PretrainResult result;
  const std::size_t n = corpus.records.size();
  std::uint64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int s = 0; s < config.steps_per_epoch; ++s) {
      const TaskKind kind = sample_task(task_rng, config.mix);
      std::vector<Tensor> losses;
      losses.reserve(static_cast<std::size_t>(config.batch_size));
      for (int b = 0; b < config.batch_size; ++b) {
        const Record& rec = corpus.records[sample_rng.below(n)];
        TrainingInstance inst =
            make_instance(rec.rois, rec.concepts, rec.caption, kind, config.policy,
                          mask_rng, model.tables, model.config, corpus.vocab,
                          config.mask_concepts);
        TrainContext tc{&dropout_rng, model.config.dropout};
        Tensor h = model.encode(inst.seq, inst.mask, nullptr,
                                model.config.dropout > 0.0 ? &tc : nullptr);
        losses.push_back(model.masked_word_loss(h, inst.seq, inst.target_positions,
                                                inst.target_ids,
                                                config.mask_concepts));
      }
      Tensor total = batch_mean(losses);
      backward(total);
      opt.step();
      ++global_step;
      result.losses.push_back(total.item());
      result.tasks.push_back(kind);
      log.row(global_step, task_kind_name(kind), total.item(),
              opt.lr_at(opt.steps_done()));
    }
    if (!config.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%04d.ckpt", epoch);
      const std::string path = config.checkpoint_dir + "/" + name;
      const OptimizerBlob blob = opt.state();
      save_model(model, path, &blob);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

void FinetuneCaptionConfig::validate() const {
  require(epochs >= 0, ErrorCode::config, "epoch count must be non-negative");
  require(batch_size >= 1, ErrorCode::config, "batch size must be at least 1");
  adam.validate();
  if (!full_coverage) policy.validate();
}

FinetuneResult finetune_caption(Model& model, const Corpus& corpus,
                                const FinetuneCaptionConfig& config,
                                const std::vector<int>& record_indices) {
  config.validate();
  check_corpus_compat(model, corpus);
  const std::vector<int> indices = resolve_indices(corpus, record_indices);

  Rng root(config.seed);
  Rng order_rng = root.derive(1);
  Rng mask_rng = root.derive(2);
  Rng dropout_rng = root.derive(3);

  AdamOptimizer opt(model.parameters(ParamSet::LanguageModel), config.adam);
  RunLog log(config.log_path);
  FinetuneResult result;

  // One work item is a (record, target position) pair under full coverage,
  // or just a record under the sampling policy.
  std::vector<std::pair<int, int>> items;
  for (int ri : indices) {
    const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
    if (config.full_coverage) {
      const int slots = static_cast<int>(rec.caption.size()) + 1;  // words + end
      for (int p = 0; p < slots; ++p) items.emplace_back(ri, p);
    } else {
      items.emplace_back(ri, -1);
    }
  }
  require(!items.empty(), ErrorCode::contract, "nothing to fine-tune on");

  std::uint64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    seeded_shuffle(items, order_rng);
    for (std::size_t begin = 0; begin < items.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(items.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor> losses;
      losses.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const auto [ri, p] = items[k];
        const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
        TrainingInstance inst;
        if (config.full_coverage) {
          std::vector<int> extended = rec.caption;
          extended.push_back(Vocabulary::kEnd);
          const int original = extended[static_cast<std::size_t>(p)];
          extended[static_cast<std::size_t>(p)] = Vocabulary::kMask;
          std::vector<int> sentence(extended.begin(), extended.end() - 1);
          inst.kind = TaskKind::S2slm;
          inst.seq = model.sequence_for_training(rec.rois, rec.concepts, sentence,
                                                 extended.back());
          inst.target_positions = {inst.seq.sentence_start + p};
          inst.target_ids = {original};
          inst.mask = build_s2slm_mask(inst.seq);
        } else {
          inst = make_instance(rec.rois, rec.concepts, rec.caption, TaskKind::S2slm,
                               config.policy, mask_rng, model.tables, model.config,
                               corpus.vocab);
        }
        TrainContext tc{&dropout_rng, model.config.dropout};
        Tensor h = model.encode(inst.seq, inst.mask, nullptr,
                                model.config.dropout > 0.0 ? &tc : nullptr);
        losses.push_back(model.masked_word_loss(h, inst.seq, inst.target_positions,
                                                inst.target_ids));
      }
      Tensor total = batch_mean(losses);
      backward(total);
      opt.step();
      ++global_step;
      result.losses.push_back(total.item());
      log.row(global_step, "s2slm", total.item(), opt.lr_at(opt.steps_done()));
    }
  }
  return result;
}

void FinetuneReferringConfig::validate() const {
  require(epochs >= 0, ErrorCode::config, "epoch count must be non-negative");
  require(batch_size >= 1, ErrorCode::config, "batch size must be at least 1");
  adam.validate();
}

FinetuneResult finetune_referring(Model& model, const Corpus& corpus,
                                  const FinetuneReferringConfig& config,
                                  const std::vector<int>& record_indices) {
  config.validate();
  check_corpus_compat(model, corpus);
  const std::vector<int> indices = resolve_indices(corpus, record_indices);

  Rng root(config.seed);
  Rng order_rng = root.derive(1);
  Rng dropout_rng = root.derive(2);

  AdamOptimizer opt(model.parameters(ParamSet::Referring), config.adam);
  RunLog log(config.log_path);
  FinetuneResult result;

  std::vector<std::pair<int, int>> items;  // (record index, task index)
  for (int ri : indices) {
    const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
    for (std::size_t t = 0; t < rec.referring.size(); ++t) {
      items.emplace_back(ri, static_cast<int>(t));
    }
  }
  require(!items.empty(), ErrorCode::contract,
          "corpus provides no referring tasks over the chosen records");

  std::uint64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    seeded_shuffle(items, order_rng);
    for (std::size_t begin = 0; begin < items.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(items.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor> losses;
      losses.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const auto [ri, ti] = items[k];
        const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
        const ReferringTask& task = rec.referring[static_cast<std::size_t>(ti)];
        MultimodalSequence seq =
            model.sequence_for_training(rec.rois, rec.concepts, task.query);
        AttentionMask mask = build_blm_mask(seq);
        TrainContext tc{&dropout_rng, model.config.dropout};
        Tensor h = model.encode(seq, mask, nullptr,
                                model.config.dropout > 0.0 ? &tc : nullptr);
        Tensor scores = model.referring_scores(h, seq);
        require(task.target >= 0 && task.target < seq.roi_count, ErrorCode::contract,
                "referring target is not one of the RoIs");
        losses.push_back(binary_cross_entropy_logits(scores, task.target));
      }
      Tensor total = batch_mean(losses);
      backward(total);
      opt.step();
      ++global_step;
      result.losses.push_back(total.item());
      log.row(global_step, "refer", total.item(), opt.lr_at(opt.steps_done()));
    }
  }
  return result;
}

}  // namespace dimbert
