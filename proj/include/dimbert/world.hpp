#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dimbert/error.hpp"
#include "dimbert/rng.hpp"
#include "dimbert/vocab.hpp"

namespace dimbert {

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixels, top-left / bottom-right
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
};

// Normalized box descriptor: corners over canvas extent plus relative area.
// All five entries land in [0, 1].
std::array<double, 5> geometry_feature(const Box& box, double canvas_w,
                                       double canvas_h);

struct SceneObject {
  int class_id = 0;
  int color_id = 0;
  int size_id = 0;
  Box box;
};

struct Scene {
  std::uint64_t seed = 0;  // stream root for everything derived from this scene
  int width = 0, height = 0;
  std::vector<SceneObject> objects;
};

enum class CaptionMode { Relational, Exhaustive };

struct WorldConfig {
  int canvas_w = 128;
  int canvas_h = 128;
  int min_objects = 2;
  int max_objects = 6;
  int num_classes = 16;
  int num_colors = 8;
  int num_sizes = 3;
  bool unique_objects = false;
  double noise_sigma = 0.05;    // additive appearance noise / class-prob smoothing
  double concept_noise = 0.25;  // spurious concept injection rate
  int concept_count = 5;        // M, concepts kept per scene
  int concept_dim = 16;         // width of the class-probability vector
  CaptionMode caption_mode = CaptionMode::Relational;
  int max_caption_len = 24;
  int scenes = 256;
  int referring_per_scene = 1;

  int appearance_dim() const { return num_classes + num_colors + num_sizes; }
  void validate() const;
};

struct RoiFeature {
  std::vector<double> appearance;   // one-hot class|color|size + noise
  std::array<double, 5> geometry;
  std::vector<double> class_probs;  // simplex over concept_dim entries
};

struct Concept {
  int word_id = 0;
  double score = 0.0;
};
// Sorted by score descending, ties broken by ascending word id.
using ConceptSet = std::vector<Concept>;

struct ReferringTask {
  std::vector<int> query;       // attribute/class tokens, order: size color class
  std::vector<int> candidates;  // RoI indices, all objects of the scene
  int target = 0;               // index into candidates with exactly-one match
};

struct Record {
  Scene scene;
  std::vector<RoiFeature> rois;
  ConceptSet concepts;
  std::vector<int> caption;
  std::vector<ReferringTask> referring;
};

struct Corpus {
  WorldConfig config;
  std::uint64_t seed = 0;
  Vocabulary vocab;
  std::vector<Record> records;
};

Scene generate_scene(std::uint64_t seed, const WorldConfig& config);
std::vector<RoiFeature> roi_features(const Scene& scene, const WorldConfig& config);
ConceptSet extract_concepts(const Scene& scene, const WorldConfig& config, int m,
                            const Vocabulary& vocab);
std::vector<int> render_caption(const Scene& scene, std::uint64_t seed,
                                const WorldConfig& config, const Vocabulary& vocab);
// Ground-truth word set for concept extractor scoring: the attribute/class
// tokens of every object in the scene.
std::vector<int> scene_content_words(const Scene& scene, const Vocabulary& vocab);
// Returns nothing when no attribute phrase singles out one object.
std::optional<ReferringTask> make_referring(const Scene& scene, std::uint64_t seed,
                                            const WorldConfig& config,
                                            const Vocabulary& vocab);

Corpus generate_corpus(std::uint64_t seed, const WorldConfig& config);
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

const char* caption_mode_name(CaptionMode mode);
CaptionMode caption_mode_from_name(const std::string& name);

}  // namespace dimbert
