#pragma once

#include <string>
#include <vector>

#include "dimbert/tensor.hpp"
#include "dimbert/vocab.hpp"
#include "dimbert/world.hpp"

namespace dimbert {

enum class Modality { Visual, Textual };
enum class SegmentKind { Roi = 0, Concept = 1, Sentence = 2 };
enum class SourceKind { Special, Roi, Concept, Word };

// Annotation for one sequence row. Position ids restart at 0 inside each
// segment; RoIs carry their block index for bookkeeping but receive no
// position embedding, which is what makes their order immaterial.
struct SequencePosition {
  Modality modality = Modality::Textual;
  SegmentKind segment = SegmentKind::Roi;
  SourceKind source = SourceKind::Special;
  int position_id = 0;
  int token_id = -1;      // -1 on visual rows
  int source_index = -1;  // RoI index / concept rank / sentence order
  bool is_target = false;
};

struct MultimodalSequence {
  Tensor embeddings;  // S x d_model
  std::vector<SequencePosition> positions;
  int roi_start = 0, roi_count = 0;
  int concept_start = 0, concept_count = 0;
  int sentence_start = 0, sentence_count = 0;  // sentence_count includes [END]/[MASK]

  int length() const { return static_cast<int>(positions.size()); }
};

// Learned input-side tables. The word table covers the whole id space, so
// the four special tokens own its head rows.
struct EmbeddingTables {
  Tensor word;          // V x d
  Tensor position;      // max_len x d
  Tensor segment;       // 3 x d
  Tensor appearance_proj;  // d_r x d
  Tensor geometry_proj;    // 5 x d/2
  Tensor class_proj;       // d_c x d/2
  Tensor geometry_ln_gain, geometry_ln_bias;  // d/2
  Tensor class_ln_gain, class_ln_bias;        // d/2
  // Per-source fusion gains on RoI rows, init 1.
  Tensor gain_appearance, gain_geometry, gain_segment;  // scalars

  std::vector<std::pair<std::string, Tensor>> named() const;
};

EmbeddingTables init_embedding_tables(int vocab_size, int max_len, int d_model,
                                      int d_r, int d_c, Rng& rng, double sigma);

// Fused RoI rows: gained sum of projected appearance, the layer-normalized
// geometry/class pair, and the RoI segment embedding. Shape (N, d).
Tensor embed_rois(const std::vector<RoiFeature>& rois, const EmbeddingTables& tables);

// [CLS] R1..Rn [SEP] c1..cm [SEP] w1..wk [END]. The trailing slot normally
// holds [END] but is overridable so corruption can reach it during training.
MultimodalSequence assemble_training(const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& sentence,
                                     const EmbeddingTables& tables, int max_len,
                                     int vocab_size,
                                     int trailing_token = Vocabulary::kEnd);

// [CLS] R1..Rn [SEP] c1..cm [SEP] p1..pk [MASK]; the trailing [MASK] is the
// prediction slot at sentence position k.
MultimodalSequence assemble_decoding(const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& prefix,
                                     const EmbeddingTables& tables, int max_len,
                                     int vocab_size);

}  // namespace dimbert
