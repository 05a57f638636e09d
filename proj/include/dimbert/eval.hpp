#pragma once

#include <string>
#include <vector>

#include "dimbert/decoding.hpp"
#include "dimbert/metrics.hpp"
#include "dimbert/trainer.hpp"

namespace dimbert {

// Teacher-forced next-token accuracy over the captions of the chosen
// records; the end-of-caption prediction counts as a token.
double token_accuracy(const Model& model, const Corpus& corpus,
                      const std::vector<int>& record_indices = {});

struct EvalOutput {
  MetricReport report;
  std::vector<std::vector<int>> captions;  // decoded, one per evaluated record
};

// Full evaluation: teacher-forced accuracy, beam-decoded corpus BLEU against
// the reference captions, and referring accuracy over the stored tasks.
EvalOutput evaluate_model(const Model& model, const Corpus& corpus,
                          const GenerationConfig& gen,
                          const std::vector<int>& record_indices = {});

struct AblationConfig {
  ModelConfig model;            // base; mode, concept usage, seed vary per cell
  PretrainConfig pretrain;      // task mix varies per cell; "none" skips it
  FinetuneCaptionConfig caption;
  GenerationConfig gen;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct AblationCell {
  std::string mode;      // "esa" or "dim"
  bool concepts = true;
  std::string pretrain;  // none | blm | s2slm | both
  std::vector<MetricReport> per_seed;
  MetricReport mean;   // rates averaged over seeds
  MetricReport range;  // max minus min per rate
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::string to_json() const;
};

// The full 2 x 2 x 4 grid over one pinned corpus and seed list. Every cell
// sees identical data order; only the architecture knobs differ.
AblationResult run_ablation(const Corpus& corpus, const AblationConfig& config);

struct SweepPoint {
  int m = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::string to_json() const;
};

// Concept-extractor quality against scene ground truth per concept budget.
// m = 0 is reported as all-zero without running the extractor.
SweepResult sweep_concepts(const Corpus& corpus, const std::vector<int>& ms);

struct AttentionTopEntry {
  int position = 0;      // column index in the sequence
  std::string label;     // token text or RoI tag
  double weight = 0.0;
};

struct AttentionRowSummary {
  int position = 0;  // row index in the sequence
  std::string label;
  std::vector<AttentionTopEntry> top;  // descending, at most 3
};

struct AttentionDump {
  int record_index = 0;
  std::string mask_kind;                 // "blm" or "s2slm"
  std::vector<std::string> row_labels;   // one per sequence position
  // attention[layer][head] is an S x S row-stochastic matrix.
  std::vector<std::vector<std::vector<std::vector<double>>>> attention;
  std::vector<std::vector<double>> last_layer_mean;  // heads averaged
  std::vector<AttentionRowSummary> text_to_roi;      // sentence word rows
  std::vector<AttentionRowSummary> roi_to_text;      // RoI rows

  std::string to_json() const;
};

AttentionDump dump_attention(const Model& model, const Corpus& corpus,
                             int record_index, TaskKind mask_kind = TaskKind::Blm);

}  // namespace dimbert
