#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dimbert/error.hpp"

namespace dimbert {

// Closed, whitespace-tokenized vocabulary. Ids are dense; the first four ids
// are reserved for the special tokens and never collide with words.
class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kMask = 2;
  static constexpr int kEnd = 3;
  static constexpr int kNumSpecial = 4;

  // Word universes. A config selects a prefix of each attribute list.
  static const std::vector<std::string>& class_universe();     // 16 nouns
  static const std::vector<std::string>& color_universe();     // 8 colors
  static const std::vector<std::string>& size_universe();      // 3 sizes
  static const std::vector<std::string>& relation_words();     // left,right,...
  static const std::vector<std::string>& function_words();     // a,and,of,...

  static Vocabulary build(int num_classes, int num_colors, int num_sizes);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  int id(const std::string& token) const;
  const std::string& token(int id) const;

  // Attribute-word accessors; arguments index into the configured prefix.
  int class_token(int class_id) const;
  int color_token(int color_id) const;
  int size_token(int size_id) const;

  int num_classes() const { return num_classes_; }
  int num_colors() const { return num_colors_; }
  int num_sizes() const { return num_sizes_; }

  // Ids of all attribute/class words, in id order. Concept extraction and
  // random token replacement draw from these.
  const std::vector<int>& content_ids() const { return content_ids_; }
  std::vector<int> non_special_ids() const;

  // Text form: one token per line under a counted comment header. Files and
  // checkpoints embed the same bytes.
  std::string to_text() const;
  static Vocabulary from_text(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::uint64_t content_hash() const;

  std::string detokenize(const std::vector<int>& ids) const;
  std::vector<int> tokenize(const std::string& text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int num_classes_ = 0;
  int num_colors_ = 0;
  int num_sizes_ = 0;
  std::vector<int> content_ids_;

  void add(const std::string& token);
  void rebuild_index();
};

}  // namespace dimbert
