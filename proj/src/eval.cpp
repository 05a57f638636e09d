#include "dimbert/eval.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "dimbert/error.hpp"
#include "dimbert/objectives.hpp"

namespace dimbert {
namespace {

std::vector<int> resolve(const Corpus& corpus, const std::vector<int>& requested) {
  const int n = static_cast<int>(corpus.records.size());
  require(n > 0, ErrorCode::contract, "corpus holds no records");
  if (requested.empty()) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  for (int i : requested) {
    require(i >= 0 && i < n, ErrorCode::index, "record index out of range");
  }
  return requested;
}

int argmax_candidate(const std::vector<double>& logprobs) {
  int best = -1;
  for (int id = 0; id < static_cast<int>(logprobs.size()); ++id) {
    if (id != Vocabulary::kEnd && id < Vocabulary::kNumSpecial) continue;
    if (best < 0 || logprobs[static_cast<std::size_t>(id)] >
                        logprobs[static_cast<std::size_t>(best)]) {
      best = id;
    }
  }
  return best;
}

}  // namespace

double token_accuracy(const Model& model, const Corpus& corpus,
                      const std::vector<int>& record_indices) {
  const std::vector<int> indices = resolve(corpus, record_indices);
  std::size_t correct = 0, total = 0;
  for (int ri : indices) {
    const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
    std::vector<int> truth = rec.caption;
    truth.push_back(Vocabulary::kEnd);
    for (std::size_t p = 0; p < truth.size(); ++p) {
      const std::vector<int> prefix(rec.caption.begin(),
                                    rec.caption.begin() + static_cast<long>(p));
      const std::vector<double> lp =
          next_token_logprobs(model, rec.rois, rec.concepts, prefix);
      correct += argmax_candidate(lp) == truth[p] ? 1 : 0;
      ++total;
    }
  }
  require(total > 0, ErrorCode::contract, "no caption tokens to evaluate");
  return static_cast<double>(correct) / static_cast<double>(total);
}

EvalOutput evaluate_model(const Model& model, const Corpus& corpus,
                          const GenerationConfig& gen,
                          const std::vector<int>& record_indices) {
  gen.validate();
  const std::vector<int> indices = resolve(corpus, record_indices);

  EvalOutput out;
  std::vector<std::vector<int>> references;
  std::size_t caption_tokens = 0;
  for (int ri : indices) {
    const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
    out.captions.push_back(
        beam_search(model, rec.rois, rec.concepts, gen).tokens);
    references.push_back(rec.caption);
    caption_tokens += rec.caption.size() + 1;
  }
  const BleuReport bleu = corpus_bleu(out.captions, references);

  std::size_t refer_total = 0, refer_correct = 0;
  for (int ri : indices) {
    const Record& rec = corpus.records[static_cast<std::size_t>(ri)];
    for (const ReferringTask& task : rec.referring) {
      const int predicted =
          referring_predict(model, rec.rois, rec.concepts, task.query);
      refer_correct += predicted == task.target ? 1 : 0;
      ++refer_total;
    }
  }

  MetricReport& report = out.report;
  report.token_accuracy = token_accuracy(model, corpus, indices);
  report.bleu = bleu.bleu;
  report.referring_accuracy =
      refer_total == 0 ? 0.0
                       : static_cast<double>(refer_correct) /
                             static_cast<double>(refer_total);
  report.counts["records"] = static_cast<std::int64_t>(indices.size());
  report.counts["caption_tokens"] = static_cast<std::int64_t>(caption_tokens);
  report.counts["referring_tasks"] = static_cast<std::int64_t>(refer_total);
  report.fingerprint = model.fingerprint();
  report.seeds = {model.config.seed, corpus.seed};
  report.validate();
  return out;
}

namespace {

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport mean = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    mean.token_accuracy += reports[i].token_accuracy;
    mean.referring_accuracy += reports[i].referring_accuracy;
    for (std::size_t b = 0; b < 4; ++b) mean.bleu[b] += reports[i].bleu[b];
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  mean.token_accuracy *= inv;
  mean.referring_accuracy *= inv;
  for (double& b : mean.bleu) b *= inv;
  mean.seeds.clear();
  for (const MetricReport& r : reports) {
    mean.seeds.insert(mean.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  return mean;
}

MetricReport range_report(const std::vector<MetricReport>& reports) {
  MetricReport lo = reports.front();
  MetricReport hi = reports.front();
  for (const MetricReport& r : reports) {
    lo.token_accuracy = std::min(lo.token_accuracy, r.token_accuracy);
    hi.token_accuracy = std::max(hi.token_accuracy, r.token_accuracy);
    lo.referring_accuracy = std::min(lo.referring_accuracy, r.referring_accuracy);
    hi.referring_accuracy = std::max(hi.referring_accuracy, r.referring_accuracy);
    for (std::size_t b = 0; b < 4; ++b) {
      lo.bleu[b] = std::min(lo.bleu[b], r.bleu[b]);
      hi.bleu[b] = std::max(hi.bleu[b], r.bleu[b]);
    }
  }
  MetricReport range = reports.front();
  range.token_accuracy = hi.token_accuracy - lo.token_accuracy;
  range.referring_accuracy = hi.referring_accuracy - lo.referring_accuracy;
  for (std::size_t b = 0; b < 4; ++b) range.bleu[b] = hi.bleu[b] - lo.bleu[b];
  range.seeds.clear();
  return range;
}

nlohmann::json report_json(const MetricReport& report) {
  return nlohmann::json::parse(report.to_json());
}

}  // namespace

AblationResult run_ablation(const Corpus& corpus, const AblationConfig& config) {
  require(!config.seeds.empty(), ErrorCode::config,
          "ablation needs at least one seed");
  static const AttentionMode kModes[] = {AttentionMode::Entangled,
                                         AttentionMode::Disentangled};
  static const bool kConcepts[] = {true, false};
  static const char* kPretrain[] = {"none", "blm", "s2slm", "both"};

  AblationResult result;
  for (AttentionMode mode : kModes) {
    for (bool concepts : kConcepts) {
      for (const char* phase : kPretrain) {
        AblationCell cell;
        cell.mode = attention_mode_name(mode);
        cell.concepts = concepts;
        cell.pretrain = phase;
        for (std::uint64_t seed : config.seeds) {
          ModelConfig mc = config.model;
          mc.mode = mode;
          mc.use_concepts = concepts;
          mc.seed = seed;
          Model model = Model::init(mc, corpus.vocab);

          const std::string kind = phase;
          if (kind != "none") {
            PretrainConfig pc = config.pretrain;
            pc.seed = seed;
            pc.checkpoint_dir.clear();
            pc.log_path.clear();
            if (kind == "blm") pc.mix = TaskMix{1.0, 0.0};
            if (kind == "s2slm") pc.mix = TaskMix{0.0, 1.0};
            pretrain(model, corpus, pc);
          }
          FinetuneCaptionConfig fc = config.caption;
          fc.seed = seed;
          fc.log_path.clear();
          finetune_caption(model, corpus, fc);

          cell.per_seed.push_back(
              evaluate_model(model, corpus, config.gen).report);
        }
        cell.mean = mean_report(cell.per_seed);
        cell.range = range_report(cell.per_seed);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

std::string AblationResult::to_json() const {
  nlohmann::json grid = nlohmann::json::array();
  for (const AblationCell& cell : cells) {
    nlohmann::json j;
    j["mode"] = cell.mode;
    j["concepts"] = cell.concepts;
    j["pretrain"] = cell.pretrain;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const MetricReport& r : cell.per_seed) per_seed.push_back(report_json(r));
    j["per_seed"] = per_seed;
    j["mean"] = report_json(cell.mean);
    j["range"] = report_json(cell.range);
    grid.push_back(j);
  }
  nlohmann::json root;
  root["grid"] = grid;
  return root.dump(2);
}

SweepResult sweep_concepts(const Corpus& corpus, const std::vector<int>& ms) {
  require(!ms.empty(), ErrorCode::config, "concept sweep needs at least one budget");
  require(!corpus.records.empty(), ErrorCode::contract, "corpus holds no records");
  SweepResult result;
  for (int m : ms) {
    require(m >= 0, ErrorCode::config, "concept budget must be non-negative");
    SweepPoint point;
    point.m = m;
    if (m > 0) {
      double p = 0.0, r = 0.0, f = 0.0;
      for (const Record& rec : corpus.records) {
        const ConceptSet concepts =
            extract_concepts(rec.scene, corpus.config, m, corpus.vocab);
        std::vector<int> predicted;
        predicted.reserve(concepts.size());
        for (const Concept& c : concepts) predicted.push_back(c.word_id);
        const SetScore score = set_overlap_score(
            predicted, scene_content_words(rec.scene, corpus.vocab));
        p += score.precision;
        r += score.recall;
        f += score.f1;
      }
      const double inv = 1.0 / static_cast<double>(corpus.records.size());
      point.precision = p * inv;
      point.recall = r * inv;
      point.f1 = f * inv;
    }
    result.points.push_back(point);
  }
  return result;
}

std::string SweepResult::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const SweepPoint& point : points) {
    arr.push_back({{"m", point.m},
                   {"precision", point.precision},
                   {"recall", point.recall},
                   {"f1", point.f1}});
  }
  nlohmann::json root;
  root["sweep"] = arr;
  return root.dump(2);
}

namespace {

std::string row_label(const Model& model, const Record& rec,
                      const SequencePosition& pos) {
  if (pos.source == SourceKind::Roi) {
    const SceneObject& obj =
        rec.scene.objects[static_cast<std::size_t>(pos.source_index)];
    return "roi" + std::to_string(pos.source_index) + ":" +
           model.vocab.token(model.vocab.class_token(obj.class_id));
  }
  return model.vocab.token(pos.token_id);
}

std::vector<AttentionTopEntry> top_columns(
    const std::vector<std::vector<double>>& matrix, int row,
    const std::vector<char>& eligible, const std::vector<std::string>& labels) {
  std::vector<AttentionTopEntry> entries;
  const std::vector<double>& weights = matrix[static_cast<std::size_t>(row)];
  for (int col = 0; col < static_cast<int>(weights.size()); ++col) {
    if (!eligible[static_cast<std::size_t>(col)]) continue;
    entries.push_back({col, labels[static_cast<std::size_t>(col)],
                       weights[static_cast<std::size_t>(col)]});
  }
  std::sort(entries.begin(), entries.end(),
            [](const AttentionTopEntry& a, const AttentionTopEntry& b) {
              if (a.weight != b.weight) return a.weight > b.weight;
              return a.position < b.position;
            });
  if (entries.size() > 3) entries.resize(3);
  return entries;
}

}  // namespace

AttentionDump dump_attention(const Model& model, const Corpus& corpus,
                             int record_index, TaskKind mask_kind) {
  require(record_index >= 0 &&
              record_index < static_cast<int>(corpus.records.size()),
          ErrorCode::index, "record index out of range");
  require(model.vocab.content_hash() == corpus.vocab.content_hash(),
          ErrorCode::fingerprint,
          "model and corpus vocabularies disagree; they come from different worlds");
  const Record& rec = corpus.records[static_cast<std::size_t>(record_index)];

  NoGradGuard guard;
  MultimodalSequence seq =
      model.sequence_for_training(rec.rois, rec.concepts, rec.caption);
  AttentionMask mask = build_task_mask(mask_kind, seq);
  ForwardTrace trace;
  model.encode(seq, mask, &trace);

  const int n = seq.length();
  AttentionDump dump;
  dump.record_index = record_index;
  dump.mask_kind = task_kind_name(mask_kind);
  for (const SequencePosition& pos : seq.positions) {
    dump.row_labels.push_back(row_label(model, rec, pos));
  }

  for (const auto& layer : trace.attention) {
    std::vector<std::vector<std::vector<double>>> heads;
    for (const Tensor& head : layer) {
      std::vector<std::vector<double>> matrix(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        matrix[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
          matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
              head.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
      }
      heads.push_back(std::move(matrix));
    }
    dump.attention.push_back(std::move(heads));
  }

  const auto& last = dump.attention.back();
  dump.last_layer_mean.assign(static_cast<std::size_t>(n),
                              std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (const auto& head : last) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        dump.last_layer_mean[static_cast<std::size_t>(i)]
                            [static_cast<std::size_t>(j)] +=
            head[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(last.size());
  for (auto& row : dump.last_layer_mean) {
    for (double& v : row) v *= inv;
  }

  // Eligibility vectors for the two directions: visual columns for word
  // rows, word/concept columns for RoI rows; both respect the mask.
  std::vector<char> visual(static_cast<std::size_t>(n), 0);
  std::vector<char> textual_word(static_cast<std::size_t>(n), 0);
  for (int j = 0; j < n; ++j) {
    const SequencePosition& pos = seq.positions[static_cast<std::size_t>(j)];
    visual[static_cast<std::size_t>(j)] = pos.modality == Modality::Visual ? 1 : 0;
    textual_word[static_cast<std::size_t>(j)] =
        (pos.source == SourceKind::Word || pos.source == SourceKind::Concept) ? 1 : 0;
  }
  for (int i = 0; i < n; ++i) {
    const SequencePosition& pos = seq.positions[static_cast<std::size_t>(i)];
    std::vector<char> visual_here = visual;
    std::vector<char> words_here = textual_word;
    for (int j = 0; j < n; ++j) {
      if (!mask.at(i, j)) {
        visual_here[static_cast<std::size_t>(j)] = 0;
        words_here[static_cast<std::size_t>(j)] = 0;
      }
    }
    if (pos.source == SourceKind::Word && pos.segment == SegmentKind::Sentence) {
      dump.text_to_roi.push_back(
          {i, dump.row_labels[static_cast<std::size_t>(i)],
           top_columns(dump.last_layer_mean, i, visual_here, dump.row_labels)});
    }
    if (pos.source == SourceKind::Roi) {
      dump.roi_to_text.push_back(
          {i, dump.row_labels[static_cast<std::size_t>(i)],
           top_columns(dump.last_layer_mean, i, words_here, dump.row_labels)});
    }
  }
  return dump;
}

std::string AttentionDump::to_json() const {
  nlohmann::json root;
  root["record_index"] = record_index;
  root["mask"] = mask_kind;
  root["rows"] = row_labels;
  root["attention"] = attention;
  root["last_layer_mean"] = last_layer_mean;
  auto summaries = [](const std::vector<AttentionRowSummary>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const AttentionRowSummary& s : list) {
      nlohmann::json top = nlohmann::json::array();
      for (const AttentionTopEntry& e : s.top) {
        top.push_back(
            {{"position", e.position}, {"label", e.label}, {"weight", e.weight}});
      }
      arr.push_back({{"position", s.position}, {"label", s.label}, {"top", top}});
    }
    return arr;
  };
  root["text_to_roi"] = summaries(text_to_roi);
  root["roi_to_text"] = summaries(roi_to_text);
  return root.dump();
}

}  // namespace dimbert
