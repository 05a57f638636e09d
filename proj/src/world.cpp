#include "dimbert/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"

namespace dimbert {

using nlohmann::json;

namespace {

// Stream tags for per-scene derived randomness. Fixed constants so every
// consumer sees the same stream regardless of evaluation order.
constexpr std::uint64_t kRoiNoiseStream = 11;
constexpr std::uint64_t kConceptStream = 12;

constexpr double kSizeFractions[3] = {0.10, 0.16, 0.26};

}  // namespace

std::array<double, 5> geometry_feature(const Box& box, double canvas_w,
                                       double canvas_h) {
  require(canvas_w > 0 && canvas_h > 0, ErrorCode::invalid_argument,
          "canvas extents must be positive");
  require(box.x0 >= 0 && box.y0 >= 0, ErrorCode::invalid_argument,
          "box corner outside the canvas");
  require(box.x1 <= canvas_w && box.y1 <= canvas_h, ErrorCode::invalid_argument,
          "box corner outside the canvas");
  require(box.x0 < box.x1 && box.y0 < box.y1, ErrorCode::invalid_argument,
          "degenerate box");
  return {box.x0 / canvas_w, box.y0 / canvas_h, box.x1 / canvas_w,
          box.y1 / canvas_h, box.area() / (canvas_w * canvas_h)};
}

void WorldConfig::validate() const {
  require(canvas_w >= 16 && canvas_h >= 16, ErrorCode::config,
          "canvas must be at least 16x16");
  require(min_objects >= 1, ErrorCode::config, "scenes need at least one object");
  require(max_objects >= min_objects, ErrorCode::config,
          "max_objects below min_objects");
  require(num_classes >= 1 &&
              num_classes <= static_cast<int>(Vocabulary::class_universe().size()),
          ErrorCode::config, "num_classes outside the class universe");
  require(num_colors >= 1 &&
              num_colors <= static_cast<int>(Vocabulary::color_universe().size()),
          ErrorCode::config, "num_colors outside the color universe");
  require(num_sizes >= 1 &&
              num_sizes <= static_cast<int>(Vocabulary::size_universe().size()),
          ErrorCode::config, "num_sizes outside the size universe");
  if (unique_objects) {
    const long long combos = static_cast<long long>(num_classes) * num_colors * num_sizes;
    require(max_objects <= combos, ErrorCode::config,
            "unique_objects needs at least as many attribute combinations as objects");
  }
  require(noise_sigma >= 0.0, ErrorCode::config, "noise_sigma must be >= 0");
  require(concept_noise >= 0.0, ErrorCode::config, "concept_noise must be >= 0");
  require(concept_count >= 1, ErrorCode::config, "concept_count must be >= 1");
  require(concept_dim >= num_classes, ErrorCode::config,
          "concept_dim must cover every class");
  require(max_caption_len >= 10, ErrorCode::config, "max_caption_len too small");
  if (caption_mode == CaptionMode::Exhaustive)
    require(max_caption_len >= 3 * max_objects - 1, ErrorCode::config,
            "max_caption_len cannot list every object in exhaustive mode");
  require(scenes >= 1, ErrorCode::config, "corpus needs at least one scene");
  require(referring_per_scene >= 0, ErrorCode::config,
          "referring_per_scene must be >= 0");
}

Scene generate_scene(std::uint64_t seed, const WorldConfig& config) {
  config.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.width = config.canvas_w;
  scene.height = config.canvas_h;
  const int count =
      config.min_objects +
      static_cast<int>(rng.below(static_cast<std::uint64_t>(
          config.max_objects - config.min_objects + 1)));
  std::set<std::tuple<int, int, int>> used;
  const double base = std::min(config.canvas_w, config.canvas_h);
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    for (int attempt = 0;; ++attempt) {
      obj.class_id = static_cast<int>(rng.below(config.num_classes));
      obj.color_id = static_cast<int>(rng.below(config.num_colors));
      obj.size_id = static_cast<int>(rng.below(config.num_sizes));
      if (!config.unique_objects) break;
      auto key = std::make_tuple(obj.class_id, obj.color_id, obj.size_id);
      if (!used.count(key)) {
        used.insert(key);
        break;
      }
      // validate() guarantees enough combinations exist
      require(attempt < 10000, ErrorCode::config,
              "unable to draw distinct objects");
    }
    const double frac = kSizeFractions[obj.size_id];
    auto extent = [&](int canvas) {
      const double jitter = (rng.uniform() * 2.0 - 1.0) * 0.02;
      double px = std::floor((frac + jitter) * base);
      px = std::max(2.0, std::min(px, static_cast<double>(canvas)));
      return px;
    };
    const double w = extent(config.canvas_w);
    const double h = extent(config.canvas_h);
    const double x0 = static_cast<double>(
        rng.below(static_cast<std::uint64_t>(config.canvas_w - w) + 1));
    const double y0 = static_cast<double>(
        rng.below(static_cast<std::uint64_t>(config.canvas_h - h) + 1));
    obj.box = Box{x0, y0, x0 + w, y0 + h};
    scene.objects.push_back(obj);
  }
  return scene;
}

std::vector<RoiFeature> roi_features(const Scene& scene, const WorldConfig& config) {
  require(!scene.objects.empty(), ErrorCode::contract, "scene has no objects");
  std::vector<RoiFeature> rois;
  rois.reserve(scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& obj = scene.objects[i];
    Rng rng(Rng::mix(scene.seed, kRoiNoiseStream + i));
    RoiFeature roi;
    roi.appearance.assign(static_cast<std::size_t>(config.appearance_dim()), 0.0);
    roi.appearance[static_cast<std::size_t>(obj.class_id)] = 1.0;
    roi.appearance[static_cast<std::size_t>(config.num_classes + obj.color_id)] = 1.0;
    roi.appearance[static_cast<std::size_t>(config.num_classes + config.num_colors +
                                            obj.size_id)] = 1.0;
    for (double& v : roi.appearance) v += rng.gaussian(config.noise_sigma);
    roi.geometry = geometry_feature(obj.box, scene.width, scene.height);
    roi.class_probs.assign(static_cast<std::size_t>(config.concept_dim), 0.0);
    roi.class_probs[static_cast<std::size_t>(obj.class_id)] = 1.0;
    if (config.noise_sigma > 0.0) {
      double total = 0.0;
      for (double& v : roi.class_probs) {
        v += std::abs(rng.gaussian(config.noise_sigma));
        total += v;
      }
      for (double& v : roi.class_probs) v /= total;
    }
    rois.push_back(std::move(roi));
  }
  return rois;
}

std::vector<int> scene_content_words(const Scene& scene, const Vocabulary& vocab) {
  std::set<int> words;
  for (const SceneObject& obj : scene.objects) {
    words.insert(vocab.class_token(obj.class_id));
    words.insert(vocab.color_token(obj.color_id));
    words.insert(vocab.size_token(obj.size_id));
  }
  return {words.begin(), words.end()};
}

ConceptSet extract_concepts(const Scene& scene, const WorldConfig& config, int m,
                            const Vocabulary& vocab) {
  require(m >= 1, ErrorCode::config, "concept count must be >= 1");
  require(!scene.objects.empty(), ErrorCode::contract, "scene has no objects");
  const double canvas_area =
      static_cast<double>(scene.width) * static_cast<double>(scene.height);
  std::map<int, double> salience;  // word id -> summed relative area
  for (const SceneObject& obj : scene.objects) {
    const double a = obj.box.area() / canvas_area;
    salience[vocab.class_token(obj.class_id)] += a;
    salience[vocab.color_token(obj.color_id)] += a;
    salience[vocab.size_token(obj.size_id)] += a;
  }
  double s_max = 0.0;
  for (const auto& [w, s] : salience) s_max = std::max(s_max, s);

  // Every content word consumes one draw so the stream does not depend on
  // scene composition. Absent words receive a small spurious score scaled by
  // the injection rate; cubing the uniform keeps most of them far below the
  // genuine ones.
  Rng rng(Rng::mix(scene.seed, kConceptStream));
  ConceptSet entries;
  for (int word : vocab.content_ids()) {
    const double u = rng.uniform();
    auto it = salience.find(word);
    double score;
    if (it != salience.end()) {
      score = it->second;
    } else {
      score = config.concept_noise * u * u * u * s_max;
    }
    if (score > 1e-12) entries.push_back({word, score});
  }
  std::sort(entries.begin(), entries.end(), [](const Concept& a, const Concept& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.word_id < b.word_id;
  });
  if (static_cast<int>(entries.size()) > m)
    entries.resize(static_cast<std::size_t>(m));
  return entries;
}

namespace {

std::vector<int> object_phrase(const SceneObject& obj, const Vocabulary& vocab,
                               bool with_size, bool with_color) {
  std::vector<int> out{vocab.id("a")};
  if (with_size) out.push_back(vocab.size_token(obj.size_id));
  if (with_color) out.push_back(vocab.color_token(obj.color_id));
  out.push_back(vocab.class_token(obj.class_id));
  return out;
}

void append(std::vector<int>& dst, const std::vector<int>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

std::vector<int> relation_tokens(const SceneObject& a, const SceneObject& b,
                                 const Scene& scene, const Vocabulary& vocab) {
  const double dx = a.box.center_x() - b.box.center_x();
  const double dy = a.box.center_y() - b.box.center_y();
  const double near_limit = 0.12 * std::min(scene.width, scene.height);
  if (std::max(std::abs(dx), std::abs(dy)) < near_limit) return {vocab.id("near")};
  if (std::abs(dx) >= std::abs(dy)) {
    if (dx < 0) return {vocab.id("left"), vocab.id("of")};
    return {vocab.id("right"), vocab.id("of")};
  }
  return {vocab.id(dy < 0 ? "above" : "below")};
}

}  // namespace

std::vector<int> render_caption(const Scene& scene, std::uint64_t seed,
                                const WorldConfig& config, const Vocabulary& vocab) {
  require(!scene.objects.empty(), ErrorCode::contract, "scene has no objects");
  Rng rng(seed);
  std::vector<int> caption;
  if (config.caption_mode == CaptionMode::Exhaustive) {
    const int n = static_cast<int>(scene.objects.size());
    const bool with_color = 4 * n - 1 <= config.max_caption_len;
    for (int i = 0; i < n; ++i) {
      if (i) caption.push_back(vocab.id("and"));
      append(caption, object_phrase(scene.objects[static_cast<std::size_t>(i)],
                                    vocab, false, with_color));
    }
    return caption;
  }
  // Relational mode: one object phrase, or two tied by a spatial relation.
  if (scene.objects.size() == 1) {
    caption = object_phrase(scene.objects[0], vocab, rng.bernoulli(0.4),
                            rng.bernoulli(0.8));
    return caption;
  }
  const std::size_t n = scene.objects.size();
  const std::size_t i = static_cast<std::size_t>(rng.below(n));
  std::size_t j = static_cast<std::size_t>(rng.below(n - 1));
  if (j >= i) ++j;
  const bool size_a = rng.bernoulli(0.4), color_a = rng.bernoulli(0.8);
  const bool size_b = rng.bernoulli(0.4), color_b = rng.bernoulli(0.8);
  append(caption, object_phrase(scene.objects[i], vocab, size_a, color_a));
  append(caption, relation_tokens(scene.objects[i], scene.objects[j], scene, vocab));
  append(caption, object_phrase(scene.objects[j], vocab, size_b, color_b));
  if (static_cast<int>(caption.size()) > config.max_caption_len) {
    caption.clear();
    append(caption, object_phrase(scene.objects[i], vocab, false, false));
    append(caption, relation_tokens(scene.objects[i], scene.objects[j], scene, vocab));
    append(caption, object_phrase(scene.objects[j], vocab, false, false));
  }
  require(static_cast<int>(caption.size()) <= config.max_caption_len,
          ErrorCode::length, "caption exceeds the configured maximum");
  return caption;
}

namespace {

// True when the object satisfies every attribute constraint in the query.
bool predicate_matches(const SceneObject& obj, const std::vector<int>& query,
                       const Vocabulary& vocab) {
  for (int token : query) {
    const int nc = vocab.num_classes(), nk = vocab.num_colors();
    const int base = Vocabulary::kNumSpecial;
    if (token >= base && token < base + nc) {
      if (obj.class_id != token - base) return false;
    } else if (token < base + nc + nk) {
      if (obj.color_id != token - base - nc) return false;
    } else if (token < base + nc + nk + vocab.num_sizes()) {
      if (obj.size_id != token - base - nc - nk) return false;
    } else {
      fail(ErrorCode::contract, "referring query may only hold attribute words");
    }
  }
  return true;
}

}  // namespace

std::optional<ReferringTask> make_referring(const Scene& scene, std::uint64_t seed,
                                            const WorldConfig& config,
                                            const Vocabulary& vocab) {
  (void)config;
  require(!scene.objects.empty(), ErrorCode::contract, "scene has no objects");
  Rng rng(seed);
  const std::size_t n = scene.objects.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  // Descriptor shapes from specific to general; the seeded shuffle varies
  // which unique phrase gets picked when several apply.
  std::vector<std::array<bool, 2>> kinds = {
      {false, true},   // color class
      {true, false},   // size class
      {true, true},    // size color class
      {false, false},  // class
  };
  for (std::size_t i = kinds.size(); i > 1; --i)
    std::swap(kinds[i - 1], kinds[rng.below(i)]);

  for (std::size_t idx : order) {
    const SceneObject& obj = scene.objects[idx];
    for (const auto& [with_size, with_color] : kinds) {
      std::vector<int> query;
      if (with_size) query.push_back(vocab.size_token(obj.size_id));
      if (with_color) query.push_back(vocab.color_token(obj.color_id));
      query.push_back(vocab.class_token(obj.class_id));
      int matches = 0;
      for (const SceneObject& other : scene.objects)
        if (predicate_matches(other, query, vocab)) ++matches;
      if (matches == 1) {
        ReferringTask task;
        task.query = query;
        task.candidates.resize(n);
        for (std::size_t c = 0; c < n; ++c)
          task.candidates[c] = static_cast<int>(c);
        task.target = static_cast<int>(idx);
        return task;
      }
    }
  }
  return std::nullopt;
}

Corpus generate_corpus(std::uint64_t seed, const WorldConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.seed = seed;
  corpus.vocab =
      Vocabulary::build(config.num_classes, config.num_colors, config.num_sizes);
  corpus.records.reserve(static_cast<std::size_t>(config.scenes));
  for (int i = 0; i < config.scenes; ++i) {
    const std::uint64_t scene_seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
    Record rec;
    rec.scene = generate_scene(scene_seed, config);
    rec.rois = roi_features(rec.scene, config);
    rec.concepts =
        extract_concepts(rec.scene, config, config.concept_count, corpus.vocab);
    rec.caption = render_caption(rec.scene, Rng::mix(scene_seed, 101), config,
                                 corpus.vocab);
    for (int t = 0; t < config.referring_per_scene; ++t) {
      auto task = make_referring(rec.scene, Rng::mix(scene_seed, 202 + static_cast<std::uint64_t>(t)),
                                 config, corpus.vocab);
      if (!task) continue;
      bool duplicate = false;
      for (const auto& existing : rec.referring)
        duplicate = duplicate || (existing.query == task->query &&
                                  existing.target == task->target);
      if (!duplicate) rec.referring.push_back(std::move(*task));
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

// --- serialization -----------------------------------------------------------

namespace {

json world_to_json(const WorldConfig& c) {
  return json{{"canvas_w", c.canvas_w},
              {"canvas_h", c.canvas_h},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"num_classes", c.num_classes},
              {"num_colors", c.num_colors},
              {"num_sizes", c.num_sizes},
              {"unique_objects", c.unique_objects},
              {"noise_sigma", c.noise_sigma},
              {"concept_noise", c.concept_noise},
              {"concept_count", c.concept_count},
              {"concept_dim", c.concept_dim},
              {"caption_mode", caption_mode_name(c.caption_mode)},
              {"max_caption_len", c.max_caption_len},
              {"scenes", c.scenes},
              {"referring_per_scene", c.referring_per_scene}};
}

WorldConfig world_from_json(const json& j) {
  WorldConfig c;
  c.canvas_w = j.at("canvas_w").get<int>();
  c.canvas_h = j.at("canvas_h").get<int>();
  c.min_objects = j.at("min_objects").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.num_colors = j.at("num_colors").get<int>();
  c.num_sizes = j.at("num_sizes").get<int>();
  c.unique_objects = j.at("unique_objects").get<bool>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.concept_noise = j.at("concept_noise").get<double>();
  c.concept_count = j.at("concept_count").get<int>();
  c.concept_dim = j.at("concept_dim").get<int>();
  c.caption_mode = caption_mode_from_name(j.at("caption_mode").get<std::string>());
  c.max_caption_len = j.at("max_caption_len").get<int>();
  c.scenes = j.at("scenes").get<int>();
  c.referring_per_scene = j.at("referring_per_scene").get<int>();
  return c;
}

}  // namespace

const char* caption_mode_name(CaptionMode mode) {
  return mode == CaptionMode::Relational ? "relational" : "exhaustive";
}

CaptionMode caption_mode_from_name(const std::string& name) {
  if (name == "relational") return CaptionMode::Relational;
  if (name == "exhaustive") return CaptionMode::Exhaustive;
  fail(ErrorCode::config, "unknown caption mode: " + name);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot open corpus file for write: " + path);
  json header{{"format", "dimbert-corpus"},
              {"version", 1},
              {"seed", corpus.seed},
              {"world", world_to_json(corpus.config)}};
  out << header.dump() << "\n";
  for (const Record& rec : corpus.records) {
    json objects = json::array();
    for (const SceneObject& obj : rec.scene.objects)
      objects.push_back(json{{"class", obj.class_id},
                             {"color", obj.color_id},
                             {"size", obj.size_id},
                             {"box", {obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1}}});
    json rois = json::array();
    for (const RoiFeature& roi : rec.rois)
      rois.push_back(json{{"appearance", roi.appearance},
                          {"geometry", roi.geometry},
                          {"class_probs", roi.class_probs}});
    json concepts = json::array();
    for (const Concept& c : rec.concepts)
      concepts.push_back(json{{"word", corpus.vocab.token(c.word_id)},
                              {"score", c.score}});
    json caption = json::array();
    for (int id : rec.caption) caption.push_back(corpus.vocab.token(id));
    json referring = json::array();
    for (const ReferringTask& task : rec.referring) {
      json query = json::array();
      for (int id : task.query) query.push_back(corpus.vocab.token(id));
      referring.push_back(
          json{{"query", query}, {"candidates", task.candidates}, {"target", task.target}});
    }
    json line{{"scene",
               json{{"seed", rec.scene.seed},
                    {"width", rec.scene.width},
                    {"height", rec.scene.height},
                    {"objects", objects}}},
              {"rois", rois},
              {"concepts", concepts},
              {"caption", caption},
              {"referring", referring}};
    out << line.dump() << "\n";
  }
  require(out.good(), ErrorCode::io, "failed writing corpus file: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open corpus file: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::io,
          "corpus file is empty: " + path);
  json header = json::parse(line, nullptr, false);
  require(!header.is_discarded() && header.value("format", "") == "dimbert-corpus",
          ErrorCode::io, "not a corpus file: " + path);
  require(header.value("version", 0) == 1, ErrorCode::io,
          "unsupported corpus version");
  Corpus corpus;
  corpus.seed = header.at("seed").get<std::uint64_t>();
  corpus.config = world_from_json(header.at("world"));
  corpus.config.validate();
  corpus.vocab = Vocabulary::build(corpus.config.num_classes,
                                   corpus.config.num_colors,
                                   corpus.config.num_sizes);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    require(!j.is_discarded(), ErrorCode::io, "malformed corpus record");
    Record rec;
    const json& sc = j.at("scene");
    rec.scene.seed = sc.at("seed").get<std::uint64_t>();
    rec.scene.width = sc.at("width").get<int>();
    rec.scene.height = sc.at("height").get<int>();
    for (const json& o : sc.at("objects")) {
      SceneObject obj;
      obj.class_id = o.at("class").get<int>();
      obj.color_id = o.at("color").get<int>();
      obj.size_id = o.at("size").get<int>();
      const auto& b = o.at("box");
      obj.box = Box{b.at(0).get<double>(), b.at(1).get<double>(),
                    b.at(2).get<double>(), b.at(3).get<double>()};
      rec.scene.objects.push_back(obj);
    }
    for (const json& r : j.at("rois")) {
      RoiFeature roi;
      roi.appearance = r.at("appearance").get<std::vector<double>>();
      const auto& g = r.at("geometry");
      for (std::size_t i = 0; i < 5; ++i) roi.geometry[i] = g.at(i).get<double>();
      roi.class_probs = r.at("class_probs").get<std::vector<double>>();
      rec.rois.push_back(std::move(roi));
    }
    for (const json& c : j.at("concepts"))
      rec.concepts.push_back(
          {corpus.vocab.id(c.at("word").get<std::string>()), c.at("score").get<double>()});
    for (const json& w : j.at("caption"))
      rec.caption.push_back(corpus.vocab.id(w.get<std::string>()));
    for (const json& t : j.at("referring")) {
      ReferringTask task;
      for (const json& q : t.at("query"))
        task.query.push_back(corpus.vocab.id(q.get<std::string>()));
      task.candidates = t.at("candidates").get<std::vector<int>>();
      task.target = t.at("target").get<int>();
      rec.referring.push_back(std::move(task));
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace dimbert
