#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "dimbert/model.hpp"
#include "dimbert/objectives.hpp"
#include "dimbert/transformer.hpp"
#include "test_support.hpp"

using namespace dimbert;
using dimbert::testing::tiny_corpus;
using dimbert::testing::tiny_model_config;

namespace {

// Copies the textual projection weights over the visual ones, the literal
// reduction of disentangled attention to the entangled form.
void tie_visual_to_textual(Model& model) {
  for (LayerParams& layer : model.layers) {
    auto copy = [](Tensor& dst, const Tensor& src) {
      std::span<double> d = dst.values_mut();
      std::span<const double> s = src.values();
      REQUIRE(d.size() == s.size());
      std::memcpy(d.data(), s.data(), s.size() * sizeof(double));
    };
    copy(layer.vis_q, layer.text_q);
    copy(layer.vis_k, layer.text_k);
    copy(layer.vis_v, layer.text_v);
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::fabs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("tied disentangled attention reduces to entangled attention") {
  const Corpus corpus = tiny_corpus(3, 10);
  ModelConfig config = tiny_model_config(corpus);
  Model model = Model::init(config, corpus.vocab);
  tie_visual_to_textual(model);

  NoGradGuard guard;
  for (const Record& rec : corpus.records) {
    const MultimodalSequence seq =
        model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
    const AttentionMask mask = AttentionMask::all(seq.length());

    ModelConfig esa = config;
    esa.mode = AttentionMode::Entangled;
    const Tensor dim_out = encoder_forward(seq, mask, model.layers, config);
    const Tensor esa_out = encoder_forward(seq, mask, model.layers, esa);
    CHECK(max_abs_diff(dim_out, esa_out) <= 1e-12);
  }
}

TEST_CASE("untied visual projections change visual rows only through attention") {
  const Corpus corpus = tiny_corpus(4, 1);
  const ModelConfig config = tiny_model_config(corpus);
  Model model = Model::init(config, corpus.vocab);
  const Record& rec = corpus.records.front();

  NoGradGuard guard;
  const MultimodalSequence seq =
      model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
  const AttentionMask mask = AttentionMask::all(seq.length());
  const Tensor before = encoder_forward(seq, mask, model.layers, config);

  // Perturb one visual value projection; with full attention every row can
  // read visual rows, so outputs move, proving the visual path is live.
  model.layers[0].vis_v.values_mut()[0] += 0.25;
  const Tensor after = encoder_forward(seq, mask, model.layers, config);
  CHECK(max_abs_diff(before, after) > 1e-9);
}

TEST_CASE("disentangled mode owns exactly three extra square maps per layer") {
  const Corpus corpus = tiny_corpus(5, 2);
  ModelConfig dim_config = tiny_model_config(corpus, AttentionMode::Disentangled);
  ModelConfig esa_config = tiny_model_config(corpus, AttentionMode::Entangled);

  const Model dim_model = Model::init(dim_config, corpus.vocab);
  const Model esa_model = Model::init(esa_config, corpus.vocab);
  const std::int64_t d = dim_config.d_model;
  CHECK(dim_model.parameter_count() - esa_model.parameter_count() ==
        3 * dim_config.layers * d * d);
}

TEST_CASE("encoder output keeps the input shape across configurations") {
  const Corpus corpus = tiny_corpus(6, 1);
  const Record& rec = corpus.records.front();
  for (AttentionMode mode : {AttentionMode::Entangled, AttentionMode::Disentangled}) {
    for (int heads : {1, 2, 4}) {
      ModelConfig config = tiny_model_config(corpus, mode);
      config.heads = heads;
      Model model = Model::init(config, corpus.vocab);
      NoGradGuard guard;
      const MultimodalSequence seq =
          model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
      const Tensor out =
          encoder_forward(seq, AttentionMask::all(seq.length()), model.layers, config);
      CHECK(out.extent(0) == static_cast<std::size_t>(seq.length()));
      CHECK(out.extent(1) == static_cast<std::size_t>(config.d_model));
    }
  }
}

TEST_CASE("attention traces are row-stochastic and honor the mask exactly") {
  const Corpus corpus = tiny_corpus(7, 1);
  const ModelConfig config = tiny_model_config(corpus);
  Model model = Model::init(config, corpus.vocab);
  const Record& rec = corpus.records.front();

  NoGradGuard guard;
  const MultimodalSequence seq =
      model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
  const AttentionMask mask = build_s2slm_mask(seq);

  ForwardTrace trace;
  encoder_forward(seq, mask, model.layers, config, &trace);
  REQUIRE(trace.attention.size() == static_cast<std::size_t>(config.layers));
  for (const auto& layer : trace.attention) {
    REQUIRE(layer.size() == static_cast<std::size_t>(config.heads));
    for (const Tensor& head : layer) {
      REQUIRE(head.extent(0) == static_cast<std::size_t>(seq.length()));
      REQUIRE(head.extent(1) == static_cast<std::size_t>(seq.length()));
      for (int i = 0; i < seq.length(); ++i) {
        double row = 0;
        for (int j = 0; j < seq.length(); ++j) {
          const double w = head.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
          CHECK(w >= 0.0);
          if (!mask.at(i, j)) CHECK(w == 0.0);  // exact, not approximate
          row += w;
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("mask helpers enforce their contracts") {
  AttentionMask empty_row(3);
  empty_row.set(0, 0, true);
  empty_row.set(1, 1, true);
  CHECK_THROWS_AS(empty_row.validate(), Error);  // row 2 attends nothing

  const AttentionMask full = AttentionMask::all(3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(full.at(i, j));
  CHECK_THROWS_AS(AttentionMask(0), Error);
}

TEST_CASE("dropout only acts when a training context is supplied") {
  const Corpus corpus = tiny_corpus(8, 1);
  ModelConfig config = tiny_model_config(corpus);
  config.dropout = 0.5;
  config.validate();
  Model model = Model::init(config, corpus.vocab);
  const Record& rec = corpus.records.front();

  NoGradGuard guard;
  const MultimodalSequence seq =
      model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
  const AttentionMask mask = AttentionMask::all(seq.length());

  const Tensor a = encoder_forward(seq, mask, model.layers, config);
  const Tensor b = encoder_forward(seq, mask, model.layers, config);
  CHECK(max_abs_diff(a, b) == 0.0);  // inference path has no randomness

  Rng rng(3);
  TrainContext train{&rng, config.dropout};
  const Tensor c = encoder_forward(seq, mask, model.layers, config, nullptr, &train);
  CHECK(max_abs_diff(a, c) > 0.0);
}

TEST_CASE("model config validation rejects inconsistent settings") {
  const Corpus corpus = tiny_corpus(9, 1);
  ModelConfig config = tiny_model_config(corpus);
  config.heads = 3;  // does not divide d_model = 8
  CHECK_THROWS_AS(config.validate(), Error);

  ModelConfig negative = tiny_model_config(corpus);
  negative.layers = 0;
  CHECK_THROWS_AS(negative.validate(), Error);

  ModelConfig bad_dropout = tiny_model_config(corpus);
  bad_dropout.dropout = 1.5;
  CHECK_THROWS_AS(bad_dropout.validate(), Error);

  CHECK(attention_mode_from_name("esa") == AttentionMode::Entangled);
  CHECK(attention_mode_from_name("dim") == AttentionMode::Disentangled);
  CHECK_THROWS_AS(attention_mode_from_name("other"), Error);
}
