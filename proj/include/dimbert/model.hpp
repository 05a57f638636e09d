#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dimbert/transformer.hpp"
#include "dimbert/vocab.hpp"

namespace dimbert {

// Which parameters an optimizer run may touch. Language-model work (both
// pre-training objectives and caption fine-tuning) never sees the referring
// head; referring fine-tuning never sees the output head.
enum class ParamSet { All, LanguageModel, Referring };

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  EmbeddingTables tables;
  std::vector<LayerParams> layers;
  Tensor out_w;    // d x V; absent when the output head is tied to the word table
  Tensor out_b;    // V
  Tensor refer_w;  // d x 1
  Tensor refer_b;  // 1

  static Model init(const ModelConfig& config, const Vocabulary& vocab);

  // Stable name -> tensor registry; iteration order is the creation order.
  std::vector<std::pair<std::string, Tensor>> parameters(
      ParamSet set = ParamSet::All) const;
  std::int64_t parameter_count() const;

  // Flat key = value text embedding the full configuration; a checkpoint
  // carries it so loading needs no side channel.
  std::string config_block() const;
  static ModelConfig config_from_block(const std::string& text);

  // Architecture identity: configuration fields that change tensor shapes or
  // semantics, plus the vocabulary content. Seed, dropout, and init scale do
  // not participate.
  std::uint64_t fingerprint() const;

  MultimodalSequence sequence_for_training(
      const std::vector<RoiFeature>& rois, const ConceptSet& concepts,
      const std::vector<int>& sentence,
      int trailing_token = Vocabulary::kEnd) const;
  MultimodalSequence sequence_for_decoding(const std::vector<RoiFeature>& rois,
                                           const ConceptSet& concepts,
                                           const std::vector<int>& prefix) const;

  Tensor encode(const MultimodalSequence& seq, const AttentionMask& mask,
                ForwardTrace* trace = nullptr, TrainContext* train = nullptr) const;

  // Output-head logits for the chosen rows, shape (rows, vocab).
  Tensor vocab_logits(const Tensor& h_last, const std::vector<int>& rows) const;

  // Referring scores over the RoI rows, shape (roi_count, 1).
  Tensor referring_scores(const Tensor& h_last, const MultimodalSequence& seq) const;

  Tensor masked_word_loss(const Tensor& h_last, const MultimodalSequence& seq,
                          const std::vector<int>& target_positions,
                          const std::vector<int>& target_ids,
                          bool allow_concept_targets = false) const;
};

}  // namespace dimbert
