#pragma once

#include <string>
#include <vector>

#include "dimbert/embeddings.hpp"
#include "dimbert/transformer.hpp"

namespace dimbert {

// Token corruption policy: fraction selected as prediction targets and the
// [MASK]/random/keep split applied to the selected ones.
struct MaskingPolicy {
  double select = 0.15;
  double mask = 0.8;
  double random = 0.1;
  double keep = 0.1;
  void validate() const;
};

struct MaskingResult {
  std::vector<int> corrupted;         // same length as the input
  std::vector<int> target_positions;  // indices into the input, ascending
  std::vector<int> target_ids;        // original tokens at those indices
};

// Independent selection per token with at least one target guaranteed:
// zero-selection draws are redone, and a select rate of 0 degenerates to a
// single uniformly forced target. Targets are recorded even when the
// corruption draw keeps the original token.
MaskingResult apply_masking(const std::vector<int>& tokens,
                            const MaskingPolicy& policy, Rng& rng,
                            const Vocabulary& vocab);

enum class TaskKind { Blm, S2slm };

const char* task_kind_name(TaskKind kind);

struct TaskMix {
  double blm = 0.25;
  double s2slm = 0.75;
  void validate() const;
};

TaskKind sample_task(Rng& rng, const TaskMix& mix);

// Bidirectional mask: every real position attends every real position.
// padded_len > length pads with rows that attend only themselves and are
// attendable by nobody.
AttentionMask build_blm_mask(const MultimodalSequence& seq, int padded_len = 0);

// Sequence-to-sequence mask. Rows before the sentence segment attend exactly
// the rows before the sentence segment (both [SEP] boundaries included);
// sentence rows additionally attend sentence positions up to their own.
AttentionMask build_s2slm_mask(const MultimodalSequence& seq, int padded_len = 0);

AttentionMask build_task_mask(TaskKind kind, const MultimodalSequence& seq);

struct TrainingInstance {
  MultimodalSequence seq;
  AttentionMask mask;
  TaskKind kind = TaskKind::Blm;
  std::vector<int> target_positions;  // absolute row indices
  std::vector<int> target_ids;        // original tokens
};

// Builds one training instance from a record: corrupts the caption plus its
// end-of-sentence slot, assembles the sequence, and attaches the task mask.
// mask_concepts extends corruption to the concept words.
TrainingInstance make_instance(const std::vector<RoiFeature>& rois,
                               const ConceptSet& concepts,
                               const std::vector<int>& caption, TaskKind kind,
                               const MaskingPolicy& policy, Rng& rng,
                               const EmbeddingTables& tables,
                               const ModelConfig& config, const Vocabulary& vocab,
                               bool mask_concepts = false);

// Mean cross-entropy of the output head over the target rows of the final
// hidden states. Targets must lie in the sentence segment (or the concept
// segment when concept targets are enabled).
Tensor mlm_loss(const Tensor& h_last, const MultimodalSequence& seq,
                const std::vector<int>& target_positions,
                const std::vector<int>& target_ids, const Tensor& out_w,
                const Tensor& out_b, const Tensor& word_table, bool tie_output,
                bool allow_concept_targets = false);

}  // namespace dimbert
