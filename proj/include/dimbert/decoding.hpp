#pragma once

#include <vector>

#include "dimbert/model.hpp"

namespace dimbert {

struct GenerationConfig {
  int beam_size = 3;
  int max_length = 16;   // caption words, end token excluded
  double alpha = 0.0;    // length-normalization exponent; 0 ranks by raw sum
  void validate() const;
};

// Log-probabilities over the vocabulary at the prediction slot of
// [CLS] R [SEP] c [SEP] prefix [MASK], run without gradients under the
// sequence-to-sequence mask.
std::vector<double> next_token_logprobs(const Model& model,
                                        const std::vector<RoiFeature>& rois,
                                        const ConceptSet& concepts,
                                        const std::vector<int>& prefix);

// Greedy decoding: repeatedly take the best word (ties go to the lowest id)
// until the end token wins or max_length words are emitted. Specials other
// than the end token never compete. Returns caption words only.
std::vector<int> greedy_decode(const Model& model,
                               const std::vector<RoiFeature>& rois,
                               const ConceptSet& concepts,
                               const GenerationConfig& gen);

struct Hypothesis {
  std::vector<int> tokens;  // caption words, end token excluded
  double logprob = 0.0;     // sum of chosen log-probabilities
  bool finished = false;
};

// True when a ranks strictly ahead of b: higher normalized score, then
// shorter caption (earlier finish), then lexicographically smaller tokens.
bool hypothesis_precedes(const Hypothesis& a, const Hypothesis& b, double alpha);

// Beam search over caption words. Finishing via the end token adds its
// log-probability; hitting max_length completes the hypothesis without an
// end factor. Finished hypotheses are kept, never pruned; only the live
// ones compete for beam slots. beam_size 1 reproduces greedy decoding.
Hypothesis beam_search(const Model& model, const std::vector<RoiFeature>& rois,
                       const ConceptSet& concepts, const GenerationConfig& gen);

// Referring scores over RoIs for a query sentence, bidirectional mask, no
// gradients. Returns one raw score per RoI.
std::vector<double> referring_scores(const Model& model,
                                     const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& query);

// Argmax over referring scores; ties go to the lowest RoI index.
int referring_predict(const Model& model, const std::vector<RoiFeature>& rois,
                      const ConceptSet& concepts, const std::vector<int>& query);

}  // namespace dimbert
