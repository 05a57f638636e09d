#include "dimbert/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "dimbert/error.hpp"

namespace dimbert {
namespace {

// Safety valve for pathologically small select rates; the forced pick keeps
// the at-least-one-target guarantee without an unbounded loop.
constexpr int kMaxSelectionRounds = 10000;

}  // namespace

void MaskingPolicy::validate() const {
  require(select >= 0.0 && select <= 1.0, ErrorCode::config,
          "masking select rate must lie in [0, 1]");
  require(mask >= 0.0 && random >= 0.0 && keep >= 0.0, ErrorCode::config,
          "masking split weights must be non-negative");
  require(std::abs(mask + random + keep - 1.0) <= 1e-9, ErrorCode::config,
          "masking split weights must sum to 1");
}

MaskingResult apply_masking(const std::vector<int>& tokens,
                            const MaskingPolicy& policy, Rng& rng,
                            const Vocabulary& vocab) {
  policy.validate();
  require(!tokens.empty(), ErrorCode::invalid_argument,
          "apply_masking requires at least one token");
  const int n = static_cast<int>(tokens.size());
  for (int id : tokens) {
    require(id >= 0 && id < vocab.size(), ErrorCode::vocab,
            "apply_masking saw a token outside the vocabulary");
  }

  std::vector<char> selected(tokens.size(), 0);
  if (policy.select <= 0.0) {
    selected[static_cast<size_t>(rng.below(static_cast<std::uint64_t>(n)))] = 1;
  } else {
    bool any = false;
    for (int round = 0; round < kMaxSelectionRounds && !any; ++round) {
      for (size_t i = 0; i < tokens.size(); ++i) {
        selected[i] = rng.bernoulli(policy.select) ? 1 : 0;
        any = any || selected[i] != 0;
      }
    }
    if (!any) {
      selected[static_cast<size_t>(rng.below(static_cast<std::uint64_t>(n)))] = 1;
    }
  }

  const int replaceable = vocab.size() - Vocabulary::kNumSpecial;
  require(replaceable > 0, ErrorCode::vocab,
          "vocabulary has no non-special tokens for random replacement");

  MaskingResult result;
  result.corrupted = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!selected[i]) continue;
    result.target_positions.push_back(static_cast<int>(i));
    result.target_ids.push_back(tokens[i]);
    const double u = rng.uniform();
    if (u < policy.mask) {
      result.corrupted[i] = Vocabulary::kMask;
    } else if (u < policy.mask + policy.random) {
      result.corrupted[i] =
          Vocabulary::kNumSpecial +
          static_cast<int>(rng.below(static_cast<std::uint64_t>(replaceable)));
    }
    // else: keep the original token; it still counts as a target.
  }
  return result;
}

const char* task_kind_name(TaskKind kind) {
  return kind == TaskKind::Blm ? "blm" : "s2slm";
}

void TaskMix::validate() const {
  require(blm >= 0.0 && s2slm >= 0.0, ErrorCode::config,
          "task mix weights must be non-negative");
  require(std::abs(blm + s2slm - 1.0) <= 1e-9, ErrorCode::config,
          "task mix weights must sum to 1");
}

TaskKind sample_task(Rng& rng, const TaskMix& mix) {
  mix.validate();
  return rng.uniform() < mix.blm ? TaskKind::Blm : TaskKind::S2slm;
}

namespace {

AttentionMask padded_frame(int length, int padded_len) {
  require(padded_len == 0 || padded_len >= length, ErrorCode::invalid_argument,
          "padded mask length is smaller than the sequence");
  const int size = padded_len > length ? padded_len : length;
  AttentionMask mask(size);
  // Pad rows attend only themselves; nobody attends a pad column.
  for (int i = length; i < size; ++i) mask.set(i, i, true);
  return mask;
}

}  // namespace

AttentionMask build_blm_mask(const MultimodalSequence& seq, int padded_len) {
  const int n = seq.length();
  AttentionMask mask = padded_frame(n, padded_len);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) mask.set(i, j, true);
  }
  return mask;
}

AttentionMask build_s2slm_mask(const MultimodalSequence& seq, int padded_len) {
  const int n = seq.length();
  const int split = seq.sentence_start;
  require(split > 0 && split <= n, ErrorCode::contract,
          "sequence has no encoder block before the sentence segment");
  AttentionMask mask = padded_frame(n, padded_len);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < split; ++j) mask.set(i, j, true);
    if (i >= split) {
      for (int j = split; j <= i; ++j) mask.set(i, j, true);
    }
  }
  return mask;
}

AttentionMask build_task_mask(TaskKind kind, const MultimodalSequence& seq) {
  return kind == TaskKind::Blm ? build_blm_mask(seq) : build_s2slm_mask(seq);
}

TrainingInstance make_instance(const std::vector<RoiFeature>& rois,
                               const ConceptSet& concepts,
                               const std::vector<int>& caption, TaskKind kind,
                               const MaskingPolicy& policy, Rng& rng,
                               const EmbeddingTables& tables,
                               const ModelConfig& config, const Vocabulary& vocab,
                               bool mask_concepts) {
  // The end-of-sentence slot is corrupted and predicted like any sentence
  // token; without that signal decoding would never learn to stop.
  std::vector<int> extended = caption;
  extended.push_back(Vocabulary::kEnd);
  MaskingResult sentence_masking = apply_masking(extended, policy, rng, vocab);

  ConceptSet used_concepts = config.use_concepts ? concepts : ConceptSet{};
  MaskingResult concept_masking;
  if (mask_concepts && !used_concepts.empty()) {
    std::vector<int> concept_words;
    concept_words.reserve(used_concepts.size());
    for (const Concept& entry : used_concepts) concept_words.push_back(entry.word_id);
    concept_masking = apply_masking(concept_words, policy, rng, vocab);
    for (size_t i = 0; i < used_concepts.size(); ++i) {
      used_concepts[i].word_id = concept_masking.corrupted[i];
    }
  }

  std::vector<int> sentence(extended.begin(), extended.end() - 1);
  const int trailing = extended.back();

  TrainingInstance instance;
  instance.kind = kind;
  instance.seq =
      assemble_training(rois, used_concepts, sentence, tables, config.max_seq_len,
                        config.vocab_size, trailing);

  for (size_t t = 0; t < concept_masking.target_positions.size(); ++t) {
    instance.target_positions.push_back(instance.seq.concept_start +
                                        concept_masking.target_positions[t]);
    instance.target_ids.push_back(concept_masking.target_ids[t]);
  }
  for (size_t t = 0; t < sentence_masking.target_positions.size(); ++t) {
    instance.target_positions.push_back(instance.seq.sentence_start +
                                        sentence_masking.target_positions[t]);
    instance.target_ids.push_back(sentence_masking.target_ids[t]);
  }
  for (int pos : instance.target_positions) {
    instance.seq.positions[static_cast<size_t>(pos)].is_target = true;
  }
  instance.mask = build_task_mask(kind, instance.seq);
  return instance;
}

Tensor mlm_loss(const Tensor& h_last, const MultimodalSequence& seq,
                const std::vector<int>& target_positions,
                const std::vector<int>& target_ids, const Tensor& out_w,
                const Tensor& out_b, const Tensor& word_table, bool tie_output,
                bool allow_concept_targets) {
  require(!target_positions.empty(), ErrorCode::contract,
          "mlm_loss requires at least one target position");
  require(target_positions.size() == target_ids.size(), ErrorCode::shape,
          "target positions and ids differ in length");
  const int n = seq.length();
  std::vector<int> rows;
  rows.reserve(target_positions.size());
  for (int pos : target_positions) {
    require(pos >= 0 && pos < n, ErrorCode::index,
            "mlm target position outside the sequence");
    const SegmentKind segment = seq.positions[static_cast<size_t>(pos)].segment;
    const bool in_sentence = pos >= seq.sentence_start &&
                             pos < seq.sentence_start + seq.sentence_count;
    const bool in_concepts = pos >= seq.concept_start &&
                             pos < seq.concept_start + seq.concept_count;
    if (allow_concept_targets) {
      require(in_sentence || in_concepts, ErrorCode::contract,
              "mlm target outside the sentence and concept segments");
    } else {
      require(in_sentence, ErrorCode::contract,
              "mlm target outside the sentence segment");
    }
    require(segment == SegmentKind::Sentence || segment == SegmentKind::Concept,
            ErrorCode::contract, "mlm target row has a non-token segment");
    rows.push_back(pos);
  }
  Tensor picked = gather_rows(h_last, rows);
  Tensor logits = tie_output ? add_bias(matmul_nt(picked, word_table), out_b)
                             : add_bias(matmul(picked, out_w), out_b);
  return cross_entropy_rows(logits, target_ids);
}

}  // namespace dimbert
