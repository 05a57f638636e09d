#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "dimbert/embeddings.hpp"
#include "test_support.hpp"

using namespace dimbert;
using dimbert::testing::tiny_corpus;

namespace {

struct Fixture {
  Corpus corpus = tiny_corpus(19, 4);
  Rng rng{2};
  int d_model = 8;
  EmbeddingTables tables = init_embedding_tables(
      corpus.vocab.size(), 32, d_model, corpus.config.appearance_dim(),
      corpus.config.concept_dim, rng, 0.1);

  const Record& record() const { return corpus.records.front(); }

  MultimodalSequence assemble(const std::vector<int>& sentence,
                              int trailing = Vocabulary::kEnd) const {
    return assemble_training(record().rois, record().concepts, sentence, tables,
                             32, corpus.vocab.size(), trailing);
  }
};

}  // namespace

TEST_CASE("training layout is CLS, RoIs, SEP, concepts, SEP, sentence, END") {
  Fixture f;
  const Record& rec = f.record();
  const std::vector<int> sentence = rec.caption;
  const MultimodalSequence seq = f.assemble(sentence);

  const int n_rois = static_cast<int>(rec.rois.size());
  const int n_concepts = static_cast<int>(rec.concepts.size());
  const int n_words = static_cast<int>(sentence.size());
  REQUIRE(seq.length() == 1 + n_rois + 1 + n_concepts + 1 + n_words + 1);
  CHECK(seq.embeddings.extent(0) == static_cast<std::size_t>(seq.length()));
  CHECK(seq.embeddings.extent(1) == static_cast<std::size_t>(f.d_model));

  CHECK(seq.positions[0].source == SourceKind::Special);
  CHECK(seq.positions[0].token_id == Vocabulary::kCls);

  CHECK(seq.roi_start == 1);
  CHECK(seq.roi_count == n_rois);
  for (int i = 0; i < n_rois; ++i) {
    const SequencePosition& pos = seq.positions[static_cast<std::size_t>(seq.roi_start + i)];
    CHECK(pos.modality == Modality::Visual);
    CHECK(pos.segment == SegmentKind::Roi);
    CHECK(pos.source == SourceKind::Roi);
    CHECK(pos.source_index == i);
    CHECK(pos.token_id == -1);
  }

  const int sep1 = seq.roi_start + n_rois;
  CHECK(seq.positions[static_cast<std::size_t>(sep1)].token_id == Vocabulary::kSep);

  CHECK(seq.concept_start == sep1 + 1);
  CHECK(seq.concept_count == n_concepts);
  for (int i = 0; i < n_concepts; ++i) {
    const SequencePosition& pos =
        seq.positions[static_cast<std::size_t>(seq.concept_start + i)];
    CHECK(pos.modality == Modality::Textual);
    CHECK(pos.segment == SegmentKind::Concept);
    CHECK(pos.source == SourceKind::Concept);
    CHECK(pos.token_id == rec.concepts[static_cast<std::size_t>(i)].word_id);
    CHECK(pos.position_id == i);  // concept rank doubles as its position
  }

  const int sep2 = seq.concept_start + n_concepts;
  CHECK(seq.positions[static_cast<std::size_t>(sep2)].token_id == Vocabulary::kSep);

  CHECK(seq.sentence_start == sep2 + 1);
  CHECK(seq.sentence_count == n_words + 1);  // trailing slot included
  for (int i = 0; i < n_words; ++i) {
    const SequencePosition& pos =
        seq.positions[static_cast<std::size_t>(seq.sentence_start + i)];
    CHECK(pos.segment == SegmentKind::Sentence);
    CHECK(pos.source == SourceKind::Word);
    CHECK(pos.token_id == sentence[static_cast<std::size_t>(i)]);
    CHECK(pos.position_id == i);
  }
  const SequencePosition& last = seq.positions.back();
  CHECK(last.token_id == Vocabulary::kEnd);
  CHECK(last.position_id == n_words);
  CHECK(last.segment == SegmentKind::Sentence);
}

TEST_CASE("the trailing slot accepts an override token") {
  Fixture f;
  const MultimodalSequence seq = f.assemble(f.record().caption, Vocabulary::kMask);
  CHECK(seq.positions.back().token_id == Vocabulary::kMask);
  // Everything else is unchanged relative to the END layout.
  const MultimodalSequence base = f.assemble(f.record().caption);
  CHECK(seq.length() == base.length());
  CHECK(seq.sentence_count == base.sentence_count);
}

TEST_CASE("decoding layout ends in a MASK prediction slot") {
  Fixture f;
  const std::vector<int> prefix = {Vocabulary::kNumSpecial,
                                   Vocabulary::kNumSpecial + 1};
  const MultimodalSequence seq =
      assemble_decoding(f.record().rois, f.record().concepts, prefix, f.tables, 32,
                        f.corpus.vocab.size());
  CHECK(seq.positions.back().token_id == Vocabulary::kMask);
  CHECK(seq.positions.back().position_id == static_cast<int>(prefix.size()));
  CHECK(seq.sentence_count == static_cast<int>(prefix.size()) + 1);

  // Special tokens may not appear inside a decoding prefix.
  CHECK_THROWS_AS(assemble_decoding(f.record().rois, f.record().concepts,
                                    {Vocabulary::kMask}, f.tables, 32,
                                    f.corpus.vocab.size()),
                  Error);
}

TEST_CASE("sequences that exceed the position budget are rejected") {
  Fixture f;
  const std::vector<int> longest(40, Vocabulary::kNumSpecial);
  CHECK_THROWS_AS(f.assemble(longest), Error);
}

TEST_CASE("unknown token ids are rejected") {
  Fixture f;
  CHECK_THROWS_AS(f.assemble({f.corpus.vocab.size()}), Error);
  CHECK_THROWS_AS(f.assemble({-1}), Error);
}

TEST_CASE("roi embeddings react to each fused source") {
  Fixture f;
  const Record& rec = f.record();
  const Tensor base = embed_rois(rec.rois, f.tables);
  CHECK(base.extent(0) == rec.rois.size());
  CHECK(base.extent(1) == static_cast<std::size_t>(f.d_model));

  // Scaling the appearance gain changes the rows; fusion gains are live.
  f.tables.gain_appearance.values_mut()[0] = 2.0;
  const Tensor scaled = embed_rois(rec.rois, f.tables);
  bool changed = false;
  for (std::size_t i = 0; i < base.numel() && !changed; ++i) {
    changed = scaled.values()[i] != base.values()[i];
  }
  CHECK(changed);
}

TEST_CASE("named tables expose every tensor exactly once") {
  Fixture f;
  const auto named = f.tables.named();
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& [name, tensor] : named) {
    CHECK(names.insert(name).second);
    total += tensor.numel();
  }
  CHECK(names.count("embed.word") == 1);
  CHECK(names.count("embed.position") == 1);
  CHECK(names.count("embed.segment") == 1);
  CHECK(total > 0);
}
