#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dimbert/checkpoint.hpp"
#include "dimbert/model.hpp"
#include "dimbert/objectives.hpp"
#include "dimbert/world.hpp"

namespace dimbert {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear ramp to lr; 0 keeps the rate constant
  void validate() const;
};

// Bias-corrected Adam over a fixed parameter list. Every managed parameter
// must carry a gradient when step() runs; the step consumes and clears them.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params,
                const AdamConfig& config);

  void step();
  std::uint64_t steps_done() const { return t_; }
  double lr_at(std::uint64_t t) const;  // 1-based step index

  OptimizerBlob state() const;
  void restore(const OptimizerBlob& blob);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct PretrainConfig {
  int epochs = 10;
  int steps_per_epoch = 20;
  int batch_size = 16;
  AdamConfig adam;           // lr 3e-4 default
  TaskMix mix;               // 25% bidirectional, 75% seq-to-seq
  MaskingPolicy policy;
  bool mask_concepts = false;
  std::uint64_t seed = 1;
  std::string log_path;        // empty: no log
  std::string checkpoint_dir;  // empty: no checkpoints
  void validate() const;
};

struct PretrainResult {
  std::vector<double> losses;            // one per step
  std::vector<TaskKind> tasks;           // task sampled per step
  std::vector<std::string> checkpoints;  // one per epoch when a dir is set
};

// Per step: sample a task kind, draw a batch of records, corrupt, forward,
// mean masked-word loss, backward, Adam. A non-finite loss aborts with a
// numeric error from the engine. Checkpoints are written per epoch.
PretrainResult pretrain(Model& model, const Corpus& corpus,
                        const PretrainConfig& config);

struct FinetuneCaptionConfig {
  int epochs = 10;
  int batch_size = 16;
  AdamConfig adam{.lr = 1e-4};
  // Full coverage targets every caption position exactly once per epoch in
  // seeded random order; otherwise the pre-training policy draws targets.
  bool full_coverage = true;
  MaskingPolicy policy;
  std::uint64_t seed = 2;
  std::string log_path;
  void validate() const;
};

struct FinetuneResult {
  std::vector<double> losses;  // one per optimization step
};

// Sequence-to-sequence objective only, on (scene, caption) records.
FinetuneResult finetune_caption(Model& model, const Corpus& corpus,
                                const FinetuneCaptionConfig& config,
                                const std::vector<int>& record_indices = {});

struct FinetuneReferringConfig {
  int epochs = 10;
  int batch_size = 16;
  AdamConfig adam{.lr = 1e-4};
  std::uint64_t seed = 3;
  std::string log_path;
  void validate() const;
};

// Binary cross-entropy over RoI scores under the bidirectional mask. Only
// the referring parameter set updates; the output head stays frozen.
FinetuneResult finetune_referring(Model& model, const Corpus& corpus,
                                  const FinetuneReferringConfig& config,
                                  const std::vector<int>& record_indices = {});

}  // namespace dimbert
