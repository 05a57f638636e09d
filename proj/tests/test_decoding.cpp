#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "dimbert/decoding.hpp"
#include "dimbert/model.hpp"
#include "test_support.hpp"

using namespace dimbert;
using dimbert::testing::tiny_corpus;
using dimbert::testing::tiny_model_config;

namespace {

// Five-candidate decoding alphabet: four words plus the end token. Hand-made
// so the exhaustive oracle stays exact and small.
Vocabulary five_candidate_vocab() {
  return Vocabulary::from_text(
      "# dimbert-vocab 1 4 0 0\n[CLS]\n[SEP]\n[MASK]\n[END]\naa\nbb\ncc\ndd\n");
}

std::vector<RoiFeature> synthetic_rois(Rng& rng, int count, int d_r, int d_c) {
  std::vector<RoiFeature> rois(static_cast<std::size_t>(count));
  for (RoiFeature& roi : rois) {
    roi.appearance.resize(static_cast<std::size_t>(d_r));
    for (double& v : roi.appearance) v = rng.uniform();
    for (double& v : roi.geometry) v = rng.uniform() * 0.5;
    roi.geometry[4] = roi.geometry[0] * roi.geometry[1];
    roi.class_probs.assign(static_cast<std::size_t>(d_c), 0.0);
    double total = 0;
    for (double& v : roi.class_probs) {
      v = rng.uniform() + 1e-3;
      total += v;
    }
    for (double& v : roi.class_probs) v /= total;
  }
  return rois;
}

Model five_candidate_model(std::uint64_t seed) {
  const Vocabulary vocab = five_candidate_vocab();
  ModelConfig config;
  config.layers = 1;
  config.heads = 2;
  config.d_model = 8;
  config.ffn_width = 16;
  config.max_seq_len = 16;
  config.use_concepts = false;
  config.vocab_size = vocab.size();
  config.d_r = 6;
  config.d_c = 4;
  config.seed = seed;
  return Model::init(config, vocab);
}

// Every candidate sequence up to max_length: the end token closes a
// sequence early with its own probability factor; sequences that reach
// max_length are truncated without an end factor, mirroring the decoder.
// best.finished doubles as the "anything recorded yet" flag.
void consider(Hypothesis& best, Hypothesis candidate) {
  if (!best.finished || hypothesis_precedes(candidate, best, 0.0)) {
    best = std::move(candidate);
  }
}

void enumerate(const Model& model, const std::vector<RoiFeature>& rois,
               std::vector<int>& prefix, double logprob, int max_length,
               Hypothesis& best) {
  const std::vector<double> lp = next_token_logprobs(model, rois, {}, prefix);
  consider(best, Hypothesis{prefix, logprob + lp[Vocabulary::kEnd], true});
  for (int id = Vocabulary::kNumSpecial; id < model.vocab.size(); ++id) {
    prefix.push_back(id);
    const double extended = logprob + lp[static_cast<std::size_t>(id)];
    if (static_cast<int>(prefix.size()) == max_length) {
      consider(best, Hypothesis{prefix, extended, true});
    } else {
      enumerate(model, rois, prefix, extended, max_length, best);
    }
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("beam width one reproduces greedy decoding exactly") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const Corpus corpus = tiny_corpus(seed, 2);
    ModelConfig config = tiny_model_config(corpus);
    config.seed = seed * 31 + 1;
    const Model model = Model::init(config, corpus.vocab);

    GenerationConfig gen;
    gen.beam_size = 1;
    gen.max_length = 6;
    for (const Record& rec : corpus.records) {
      const std::vector<int> greedy =
          greedy_decode(model, rec.rois, rec.concepts, gen);
      const Hypothesis beam = beam_search(model, rec.rois, rec.concepts, gen);
      CHECK(beam.tokens == greedy);
    }
  }
}

TEST_CASE("a wide beam equals exhaustive search on the five-candidate alphabet") {
  Rng feature_rng(400);
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Model model = five_candidate_model(seed * 7 + 3);
    const std::vector<RoiFeature> rois =
        synthetic_rois(feature_rng, 2, model.config.d_r, model.config.d_c);

    GenerationConfig gen;
    gen.beam_size = 125;  // exceeds every frontier, so nothing is pruned
    gen.max_length = 3;
    const Hypothesis beam = beam_search(model, rois, {}, gen);

    Hypothesis best;
    best.finished = false;
    std::vector<int> prefix;
    enumerate(model, rois, prefix, 0.0, gen.max_length, best);

    CHECK(beam.tokens == best.tokens);
    CHECK(beam.logprob == doctest::Approx(best.logprob).epsilon(1e-12));
  }
}

TEST_CASE("beam search never scores below greedy") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const Corpus corpus = tiny_corpus(seed, 1);
    ModelConfig config = tiny_model_config(corpus);
    config.seed = seed;
    const Model model = Model::init(config, corpus.vocab);
    const Record& rec = corpus.records.front();

    GenerationConfig narrow;
    narrow.beam_size = 1;
    narrow.max_length = 5;
    GenerationConfig wide = narrow;
    wide.beam_size = 4;

    const Hypothesis g = beam_search(model, rec.rois, rec.concepts, narrow);
    const Hypothesis b = beam_search(model, rec.rois, rec.concepts, wide);
    CHECK(b.logprob >= g.logprob - 1e-12);
  }
}

TEST_CASE("decoded sequences stop at the length bound and contain words only") {
  const Corpus corpus = tiny_corpus(33, 2);
  const Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  GenerationConfig gen;
  gen.beam_size = 3;
  gen.max_length = 4;
  for (const Record& rec : corpus.records) {
    const Hypothesis h = beam_search(model, rec.rois, rec.concepts, gen);
    CHECK(h.finished);
    CHECK(h.tokens.size() <= 4);
    for (int id : h.tokens) CHECK(id >= Vocabulary::kNumSpecial);
  }
}

TEST_CASE("hypothesis ordering ranks score, then brevity, then tokens") {
  Hypothesis strong{{5, 6}, -1.0, true};
  Hypothesis weak{{5}, -2.0, true};
  CHECK(hypothesis_precedes(strong, weak, 0.0));
  CHECK(!hypothesis_precedes(weak, strong, 0.0));

  Hypothesis shorter{{5}, -1.0, true};
  CHECK(hypothesis_precedes(shorter, strong, 0.0));  // equal score, fewer tokens

  Hypothesis lex_a{{5, 6}, -1.0, true};
  Hypothesis lex_b{{5, 7}, -1.0, true};
  CHECK(hypothesis_precedes(lex_a, lex_b, 0.0));

  // Length normalization: -4 over 4 tokens beats -2.5 over 1 token at
  // alpha 1 (per-token -1 vs -2.5) but loses on raw sums.
  Hypothesis longer{{5, 5, 5, 5}, -4.0, true};
  Hypothesis shorter_better_raw{{6}, -2.5, true};
  CHECK(hypothesis_precedes(shorter_better_raw, longer, 0.0));
  CHECK(hypothesis_precedes(longer, shorter_better_raw, 1.0));
}

TEST_CASE("next-token log-probabilities are a normalized distribution") {
  const Corpus corpus = tiny_corpus(41, 1);
  const Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  const Record& rec = corpus.records.front();

  const std::vector<double> lp =
      next_token_logprobs(model, rec.rois, rec.concepts, {});
  REQUIRE(lp.size() == static_cast<std::size_t>(corpus.vocab.size()));
  double total = 0;
  for (double v : lp) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("generation config validation") {
  GenerationConfig gen;
  gen.beam_size = 0;
  CHECK_THROWS_AS(gen.validate(), Error);
  gen.beam_size = 2;
  gen.max_length = 0;
  CHECK_THROWS_AS(gen.validate(), Error);
  gen.max_length = 4;
  gen.alpha = -1;
  CHECK_THROWS_AS(gen.validate(), Error);
}

TEST_CASE("referring predictions score each candidate region") {
  const Corpus corpus = tiny_corpus(55, 6);
  const Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  for (const Record& rec : corpus.records) {
    for (const ReferringTask& task : rec.referring) {
      const std::vector<double> scores =
          referring_scores(model, rec.rois, rec.concepts, task.query);
      CHECK(scores.size() == rec.rois.size());
      const int pick = referring_predict(model, rec.rois, rec.concepts, task.query);
      CHECK(pick >= 0);
      CHECK(pick < static_cast<int>(scores.size()));
      for (double s : scores) {
        CHECK(scores[static_cast<std::size_t>(pick)] >= s);
      }
    }
  }
}
