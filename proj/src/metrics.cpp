#include "dimbert/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

#include "dimbert/error.hpp"

namespace dimbert {
namespace {

using Ngram = std::vector<int>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<int>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::vector<int>>& candidates,
                       const std::vector<std::vector<int>>& references) {
  require(!references.empty(), ErrorCode::contract,
          "BLEU needs at least one reference");
  require(candidates.size() == references.size(), ErrorCode::shape,
          "BLEU candidate and reference counts differ");

  BleuReport report;
  std::array<std::size_t, 4> matched{0, 0, 0, 0};
  std::array<std::size_t, 4> total{0, 0, 0, 0};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::vector<int>& cand = candidates[i];
    const std::vector<int>& ref = references[i];
    report.candidate_length += cand.size();
    report.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand_counts = ngram_counts(cand, n);
      const auto ref_counts = ngram_counts(ref, n);
      for (const auto& [gram, count] : cand_counts) {
        const auto it = ref_counts.find(gram);
        const std::size_t clip = it == ref_counts.end() ? 0 : it->second;
        matched[n - 1] += std::min(count, clip);
        total[n - 1] += count;
      }
    }
  }

  for (std::size_t n = 0; n < 4; ++n) {
    report.precision[n] =
        total[n] == 0 ? 0.0
                      : static_cast<double>(matched[n]) / static_cast<double>(total[n]);
  }
  if (report.candidate_length == 0) {
    report.brevity_penalty = 0.0;
    return report;
  }
  report.brevity_penalty =
      report.candidate_length >= report.reference_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(report.reference_length) /
                               static_cast<double>(report.candidate_length));
  for (std::size_t n = 0; n < 4; ++n) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t k = 0; k <= n; ++k) {
      if (report.precision[k] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(report.precision[k]);
    }
    report.bleu[n] =
        zero ? 0.0
             : report.brevity_penalty * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return report;
}

SetScore set_overlap_score(const std::vector<int>& predicted,
                           const std::vector<int>& truth) {
  const std::set<int> p(predicted.begin(), predicted.end());
  const std::set<int> t(truth.begin(), truth.end());
  std::size_t hit = 0;
  for (int id : p) hit += t.count(id);
  SetScore score;
  if (!p.empty()) score.precision = static_cast<double>(hit) / static_cast<double>(p.size());
  if (!t.empty()) score.recall = static_cast<double>(hit) / static_cast<double>(t.size());
  if (score.precision + score.recall > 0.0) {
    score.f1 = 2.0 * score.precision * score.recall / (score.precision + score.recall);
  }
  return score;
}

void MetricReport::validate() const {
  auto rate = [](double v, const char* what) {
    require(v >= 0.0 && v <= 1.0, ErrorCode::contract,
            std::string(what) + " must lie in [0, 1]");
  };
  rate(token_accuracy, "token accuracy");
  rate(referring_accuracy, "referring accuracy");
  for (double b : bleu) rate(b, "BLEU");
}

std::string MetricReport::to_json() const {
  validate();
  nlohmann::json j;
  j["token_accuracy"] = token_accuracy;
  j["bleu"] = bleu;
  j["referring_accuracy"] = referring_accuracy;
  j["counts"] = counts;
  j["fingerprint"] = fingerprint;
  j["seeds"] = seeds;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("metric report is not valid JSON: ") + e.what());
  }
  MetricReport report;
  try {
    report.token_accuracy = j.at("token_accuracy").get<double>();
    report.bleu = j.at("bleu").get<std::array<double, 4>>();
    report.referring_accuracy = j.at("referring_accuracy").get<double>();
    report.counts = j.at("counts").get<std::map<std::string, std::int64_t>>();
    report.fingerprint = j.at("fingerprint").get<std::uint64_t>();
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("metric report misses a field: ") + e.what());
  }
  report.validate();
  return report;
}

}  // namespace dimbert
