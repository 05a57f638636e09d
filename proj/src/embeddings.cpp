#include "dimbert/embeddings.hpp"

#include <algorithm>

namespace dimbert {

std::vector<std::pair<std::string, Tensor>> EmbeddingTables::named() const {
  return {{"embed.word", word},
          {"embed.position", position},
          {"embed.segment", segment},
          {"embed.appearance_proj", appearance_proj},
          {"embed.geometry_proj", geometry_proj},
          {"embed.class_proj", class_proj},
          {"embed.geometry_ln_gain", geometry_ln_gain},
          {"embed.geometry_ln_bias", geometry_ln_bias},
          {"embed.class_ln_gain", class_ln_gain},
          {"embed.class_ln_bias", class_ln_bias},
          {"embed.gain_appearance", gain_appearance},
          {"embed.gain_geometry", gain_geometry},
          {"embed.gain_segment", gain_segment}};
}

EmbeddingTables init_embedding_tables(int vocab_size, int max_len, int d_model,
                                      int d_r, int d_c, Rng& rng, double sigma) {
  require(d_model % 2 == 0, ErrorCode::config, "d_model must be even");
  const std::size_t d = static_cast<std::size_t>(d_model);
  const std::size_t half = d / 2;
  EmbeddingTables t;
  t.word = Tensor::randn({static_cast<std::size_t>(vocab_size), d}, rng, sigma)
               .set_requires_grad(true);
  t.position = Tensor::randn({static_cast<std::size_t>(max_len), d}, rng, sigma)
                   .set_requires_grad(true);
  t.segment = Tensor::randn({3, d}, rng, sigma).set_requires_grad(true);
  t.appearance_proj =
      Tensor::randn({static_cast<std::size_t>(d_r), d}, rng, sigma)
          .set_requires_grad(true);
  t.geometry_proj =
      Tensor::randn({5, half}, rng, sigma).set_requires_grad(true);
  t.class_proj = Tensor::randn({static_cast<std::size_t>(d_c), half}, rng, sigma)
                     .set_requires_grad(true);
  t.geometry_ln_gain = Tensor::full({half}, 1.0).set_requires_grad(true);
  t.geometry_ln_bias = Tensor::zeros({half}).set_requires_grad(true);
  t.class_ln_gain = Tensor::full({half}, 1.0).set_requires_grad(true);
  t.class_ln_bias = Tensor::zeros({half}).set_requires_grad(true);
  t.gain_appearance = Tensor::scalar(1.0).set_requires_grad(true);
  t.gain_geometry = Tensor::scalar(1.0).set_requires_grad(true);
  t.gain_segment = Tensor::scalar(1.0).set_requires_grad(true);
  return t;
}

Tensor embed_rois(const std::vector<RoiFeature>& rois, const EmbeddingTables& tables) {
  require(!rois.empty(), ErrorCode::contract, "RoI block cannot be empty");
  const std::size_t n = rois.size();
  const std::size_t d_r = tables.appearance_proj.extent(0);
  const std::size_t d_c = tables.class_proj.extent(0);
  std::vector<double> app(n * d_r), geo(n * 5), cls(n * d_c);
  for (std::size_t i = 0; i < n; ++i) {
    require(rois[i].appearance.size() == d_r, ErrorCode::shape,
            "appearance width does not match the projection");
    require(rois[i].class_probs.size() == d_c, ErrorCode::shape,
            "class-probability width does not match the projection");
    std::copy(rois[i].appearance.begin(), rois[i].appearance.end(),
              app.begin() + static_cast<std::ptrdiff_t>(i * d_r));
    std::copy(rois[i].geometry.begin(), rois[i].geometry.end(),
              geo.begin() + static_cast<std::ptrdiff_t>(i * 5));
    std::copy(rois[i].class_probs.begin(), rois[i].class_probs.end(),
              cls.begin() + static_cast<std::ptrdiff_t>(i * d_c));
  }
  Tensor appearance = matmul(Tensor::from({n, d_r}, std::move(app)),
                             tables.appearance_proj);
  Tensor geometry = layer_norm(
      matmul(Tensor::from({n, 5}, std::move(geo)), tables.geometry_proj),
      tables.geometry_ln_gain, tables.geometry_ln_bias);
  Tensor classes = layer_norm(
      matmul(Tensor::from({n, d_c}, std::move(cls)), tables.class_proj),
      tables.class_ln_gain, tables.class_ln_bias);
  Tensor paired = concat({geometry, classes}, 1);
  Tensor seg = embedding_lookup(
      tables.segment, std::vector<int>(n, static_cast<int>(SegmentKind::Roi)));
  return add(add(scale_by(appearance, tables.gain_appearance),
                 scale_by(paired, tables.gain_geometry)),
             scale_by(seg, tables.gain_segment));
}

namespace {

// Word + position + segment sum for a run of textual rows.
Tensor embed_text_rows(const std::vector<int>& token_ids,
                       const std::vector<int>& position_ids, SegmentKind segment,
                       const EmbeddingTables& tables) {
  Tensor words = embedding_lookup(tables.word, token_ids);
  Tensor positions = embedding_lookup(tables.position, position_ids);
  Tensor segments = embedding_lookup(
      tables.segment,
      std::vector<int>(token_ids.size(), static_cast<int>(segment)));
  return add(add(words, positions), segments);
}

// Specials other than [END]/[MASK] carry no position embedding.
Tensor embed_special(int token_id, SegmentKind segment, const EmbeddingTables& tables) {
  Tensor word = embedding_lookup(tables.word, {token_id});
  Tensor seg = embedding_lookup(tables.segment, {static_cast<int>(segment)});
  return add(word, seg);
}

struct AssembleInputs {
  const std::vector<RoiFeature>& rois;
  const ConceptSet& concepts;
  const std::vector<int>& sentence;  // without the trailing [END]/[MASK]
  int trailing_token;                // Vocabulary::kEnd or kMask
  SourceKind trailing_source;
};

MultimodalSequence assemble(const AssembleInputs& in, const EmbeddingTables& tables,
                            int max_len, int vocab_size) {
  require(!in.rois.empty(), ErrorCode::contract, "sequence needs at least one RoI");
  const int total = 1 + static_cast<int>(in.rois.size()) + 1 +
                    static_cast<int>(in.concepts.size()) + 1 +
                    static_cast<int>(in.sentence.size()) + 1;
  require(total <= max_len, ErrorCode::length,
          "sequence length " + std::to_string(total) +
              " exceeds the maximum of " + std::to_string(max_len));
  auto check_token = [vocab_size](int id) {
    require(id >= 0 && id < vocab_size, ErrorCode::vocab,
            "token id " + std::to_string(id) + " outside the vocabulary");
  };
  for (const Concept& c : in.concepts) check_token(c.word_id);
  for (int id : in.sentence) check_token(id);

  MultimodalSequence seq;
  std::vector<Tensor> blocks;

  // [CLS] heads the visual block.
  blocks.push_back(embed_special(Vocabulary::kCls, SegmentKind::Roi, tables));
  seq.positions.push_back({Modality::Textual, SegmentKind::Roi, SourceKind::Special,
                           0, Vocabulary::kCls, -1, false});

  seq.roi_start = 1;
  seq.roi_count = static_cast<int>(in.rois.size());
  blocks.push_back(embed_rois(in.rois, tables));
  for (int i = 0; i < seq.roi_count; ++i)
    seq.positions.push_back(
        {Modality::Visual, SegmentKind::Roi, SourceKind::Roi, i, -1, i, false});

  blocks.push_back(embed_special(Vocabulary::kSep, SegmentKind::Roi, tables));
  seq.positions.push_back({Modality::Textual, SegmentKind::Roi, SourceKind::Special,
                           0, Vocabulary::kSep, -1, false});

  seq.concept_start = seq.length();
  seq.concept_count = static_cast<int>(in.concepts.size());
  if (!in.concepts.empty()) {
    std::vector<int> ids, pos;
    for (std::size_t r = 0; r < in.concepts.size(); ++r) {
      ids.push_back(in.concepts[r].word_id);
      pos.push_back(static_cast<int>(r));  // rank in score order
    }
    blocks.push_back(embed_text_rows(ids, pos, SegmentKind::Concept, tables));
    for (std::size_t r = 0; r < in.concepts.size(); ++r)
      seq.positions.push_back({Modality::Textual, SegmentKind::Concept,
                               SourceKind::Concept, static_cast<int>(r),
                               in.concepts[r].word_id, static_cast<int>(r), false});
  }

  blocks.push_back(embed_special(Vocabulary::kSep, SegmentKind::Concept, tables));
  seq.positions.push_back({Modality::Textual, SegmentKind::Concept,
                           SourceKind::Special, 0, Vocabulary::kSep, -1, false});

  seq.sentence_start = seq.length();
  std::vector<int> ids(in.sentence), pos;
  for (std::size_t i = 0; i < in.sentence.size(); ++i)
    pos.push_back(static_cast<int>(i));
  ids.push_back(in.trailing_token);
  pos.push_back(static_cast<int>(in.sentence.size()));
  require(static_cast<int>(in.sentence.size()) + 1 <= max_len, ErrorCode::length,
          "sentence exceeds the position table");
  blocks.push_back(embed_text_rows(ids, pos, SegmentKind::Sentence, tables));
  for (std::size_t i = 0; i < in.sentence.size(); ++i)
    seq.positions.push_back({Modality::Textual, SegmentKind::Sentence,
                             SourceKind::Word, static_cast<int>(i), in.sentence[i],
                             static_cast<int>(i), false});
  seq.positions.push_back({Modality::Textual, SegmentKind::Sentence,
                           in.trailing_source,
                           static_cast<int>(in.sentence.size()), in.trailing_token,
                           static_cast<int>(in.sentence.size()), false});
  seq.sentence_count = static_cast<int>(in.sentence.size()) + 1;

  seq.embeddings = concat(blocks, 0);
  require(seq.embeddings.extent(0) == static_cast<std::size_t>(seq.length()),
          ErrorCode::contract, "embedding rows diverge from annotations");
  return seq;
}

}  // namespace

MultimodalSequence assemble_training(const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& sentence,
                                     const EmbeddingTables& tables, int max_len,
                                     int vocab_size, int trailing_token) {
  return assemble({rois, concepts, sentence, trailing_token, SourceKind::Special},
                  tables, max_len, vocab_size);
}

MultimodalSequence assemble_decoding(const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& prefix,
                                     const EmbeddingTables& tables, int max_len,
                                     int vocab_size) {
  for (int id : prefix)
    require(id >= Vocabulary::kNumSpecial, ErrorCode::vocab,
            "decoding prefix must hold ordinary words");
  return assemble({rois, concepts, prefix, Vocabulary::kMask, SourceKind::Special},
                  tables, max_len, vocab_size);
}

}  // namespace dimbert
