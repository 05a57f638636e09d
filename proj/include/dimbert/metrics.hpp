#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dimbert {

struct BleuReport {
  std::array<double, 4> bleu{0.0, 0.0, 0.0, 0.0};       // BLEU-1..4, penalized
  std::array<double, 4> precision{0.0, 0.0, 0.0, 0.0};  // modified n-gram precision
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

// Corpus-level BLEU with clipped n-gram counts and the brevity penalty,
// one reference per candidate. A zero precision at any order zeroes every
// BLEU that includes it.
BleuReport corpus_bleu(const std::vector<std::vector<int>>& candidates,
                       const std::vector<std::vector<int>>& references);

struct SetScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Duplicate-insensitive overlap of predicted against truth.
SetScore set_overlap_score(const std::vector<int>& predicted,
                           const std::vector<int>& truth);

struct MetricReport {
  double token_accuracy = 0.0;
  std::array<double, 4> bleu{0.0, 0.0, 0.0, 0.0};
  double referring_accuracy = 0.0;
  std::map<std::string, std::int64_t> counts;  // per-split record/task tallies
  std::uint64_t fingerprint = 0;
  std::vector<std::uint64_t> seeds;

  void validate() const;  // all rates in [0, 1]
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

}  // namespace dimbert
