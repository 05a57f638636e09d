#include "dimbert/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "dimbert/error.hpp"
#include "dimbert/objectives.hpp"

namespace dimbert {

void GenerationConfig::validate() const {
  require(beam_size >= 1, ErrorCode::config, "beam size must be at least 1");
  require(max_length >= 1, ErrorCode::config, "max caption length must be at least 1");
  require(alpha >= 0.0, ErrorCode::config,
          "length-normalization exponent must be non-negative");
}

std::vector<double> next_token_logprobs(const Model& model,
                                        const std::vector<RoiFeature>& rois,
                                        const ConceptSet& concepts,
                                        const std::vector<int>& prefix) {
  NoGradGuard guard;
  MultimodalSequence seq = model.sequence_for_decoding(rois, concepts, prefix);
  AttentionMask mask = build_s2slm_mask(seq);
  Tensor h = model.encode(seq, mask);
  const int slot = seq.sentence_start + seq.sentence_count - 1;
  Tensor logits = model.vocab_logits(h, {slot});
  const std::span<const double> row = logits.values();
  double best = row[0];
  for (double v : row) best = std::max(best, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - best);
  const double log_z = std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - best - log_z;
  return out;
}

namespace {

// Candidate ids at a decode step: the end token, then every ordinary word.
// [CLS], [SEP], and [MASK] never compete.
bool is_candidate(int id) { return id == Vocabulary::kEnd || id >= Vocabulary::kNumSpecial; }

double normalized_score(const Hypothesis& h, double alpha) {
  if (alpha == 0.0) return h.logprob;
  const double len = static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
  return h.logprob / std::pow(len, alpha);
}

}  // namespace

bool hypothesis_precedes(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = normalized_score(a, alpha);
  const double sb = normalized_score(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

std::vector<int> greedy_decode(const Model& model,
                               const std::vector<RoiFeature>& rois,
                               const ConceptSet& concepts,
                               const GenerationConfig& gen) {
  gen.validate();
  std::vector<int> out;
  for (int step = 0; step < gen.max_length; ++step) {
    const std::vector<double> lp = next_token_logprobs(model, rois, concepts, out);
    int best = -1;
    for (int id = 0; id < static_cast<int>(lp.size()); ++id) {
      if (!is_candidate(id)) continue;
      if (best < 0 || lp[id] > lp[best]) best = id;  // ties keep the lower id
    }
    require(best >= 0, ErrorCode::contract, "no decodable candidate token");
    if (best == Vocabulary::kEnd) break;
    out.push_back(best);
  }
  return out;
}

Hypothesis beam_search(const Model& model, const std::vector<RoiFeature>& rois,
                       const ConceptSet& concepts, const GenerationConfig& gen) {
  gen.validate();
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  while (!live.empty()) {
    std::vector<Hypothesis> expansions;
    for (const Hypothesis& hyp : live) {
      const std::vector<double> lp =
          next_token_logprobs(model, rois, concepts, hyp.tokens);
      for (int id = 0; id < static_cast<int>(lp.size()); ++id) {
        if (!is_candidate(id)) continue;
        Hypothesis next = hyp;
        next.logprob += lp[id];
        if (id == Vocabulary::kEnd) {
          next.finished = true;
        } else {
          next.tokens.push_back(id);
          // Hitting the length cap completes the caption without an end factor.
          next.finished = static_cast<int>(next.tokens.size()) >= gen.max_length;
        }
        expansions.push_back(std::move(next));
      }
    }
    // Slot competition is by raw cumulative log-probability; an end-token
    // extension must win a slot to survive, which is what reduces beam size 1
    // to greedy decoding. Length normalization only reranks at the end.
    std::sort(expansions.begin(), expansions.end(),
              [](const Hypothesis& a, const Hypothesis& b) {
                return hypothesis_precedes(a, b, 0.0);
              });
    if (static_cast<int>(expansions.size()) > gen.beam_size) {
      expansions.resize(static_cast<std::size_t>(gen.beam_size));
    }
    live.clear();
    for (Hypothesis& hyp : expansions) {
      (hyp.finished ? finished : live).push_back(std::move(hyp));
    }
  }
  require(!finished.empty(), ErrorCode::contract, "beam search finished nothing");
  Hypothesis best = finished.front();
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (hypothesis_precedes(finished[i], best, gen.alpha)) best = finished[i];
  }
  return best;
}

std::vector<double> referring_scores(const Model& model,
                                     const std::vector<RoiFeature>& rois,
                                     const ConceptSet& concepts,
                                     const std::vector<int>& query) {
  NoGradGuard guard;
  MultimodalSequence seq = model.sequence_for_training(rois, concepts, query);
  AttentionMask mask = build_blm_mask(seq);
  Tensor h = model.encode(seq, mask);
  Tensor scores = model.referring_scores(h, seq);
  const std::span<const double> raw = scores.values();
  return std::vector<double>(raw.begin(), raw.end());
}

int referring_predict(const Model& model, const std::vector<RoiFeature>& rois,
                      const ConceptSet& concepts, const std::vector<int>& query) {
  const std::vector<double> scores = referring_scores(model, rois, concepts, query);
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) {
      best = i;  // ties keep the lower index
    }
  }
  return best;
}

}  // namespace dimbert
