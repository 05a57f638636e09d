#include "dimbert/vocab.hpp"

#include <fstream>
#include <sstream>

namespace dimbert {

namespace {
const std::vector<std::string> kSpecials = {"[CLS]", "[SEP]", "[MASK]", "[END]"};
}

const std::vector<std::string>& Vocabulary::class_universe() {
  static const std::vector<std::string> words = {
      "circle", "square",   "triangle", "star",   "diamond", "ring",
      "cross",  "arrow",    "heart",    "moon",   "hexagon", "pentagon",
      "spiral", "crescent", "wedge",    "knot"};
  return words;
}

const std::vector<std::string>& Vocabulary::color_universe() {
  static const std::vector<std::string> words = {"red",    "blue", "green",
                                                 "yellow", "purple", "orange",
                                                 "pink",   "gray"};
  return words;
}

const std::vector<std::string>& Vocabulary::size_universe() {
  static const std::vector<std::string> words = {"tiny", "small", "big"};
  return words;
}

const std::vector<std::string>& Vocabulary::relation_words() {
  static const std::vector<std::string> words = {"left", "right", "above",
                                                 "below", "near"};
  return words;
}

const std::vector<std::string>& Vocabulary::function_words() {
  static const std::vector<std::string> words = {"a", "and", "of", "the", "is"};
  return words;
}

void Vocabulary::add(const std::string& token) {
  require(!index_.count(token), ErrorCode::vocab, "duplicate token: " + token);
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_[tokens_[i]] = static_cast<int>(i);
}

Vocabulary Vocabulary::build(int num_classes, int num_colors, int num_sizes) {
  require(num_classes >= 1 &&
              num_classes <= static_cast<int>(class_universe().size()),
          ErrorCode::config, "num_classes outside the class universe");
  require(num_colors >= 1 && num_colors <= static_cast<int>(color_universe().size()),
          ErrorCode::config, "num_colors outside the color universe");
  require(num_sizes >= 1 && num_sizes <= static_cast<int>(size_universe().size()),
          ErrorCode::config, "num_sizes outside the size universe");
  Vocabulary v;
  v.num_classes_ = num_classes;
  v.num_colors_ = num_colors;
  v.num_sizes_ = num_sizes;
  for (const auto& t : kSpecials) v.add(t);
  for (int i = 0; i < num_classes; ++i) v.add(class_universe()[i]);
  for (int i = 0; i < num_colors; ++i) v.add(color_universe()[i]);
  for (int i = 0; i < num_sizes; ++i) v.add(size_universe()[i]);
  for (const auto& t : relation_words()) v.add(t);
  for (const auto& t : function_words()) v.add(t);
  for (int id = kNumSpecial; id < kNumSpecial + num_classes + num_colors + num_sizes;
       ++id)
    v.content_ids_.push_back(id);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  require(it != index_.end(), ErrorCode::vocab, "unknown token: " + token);
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && id < size(), ErrorCode::index,
          "token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::class_token(int class_id) const {
  require(class_id >= 0 && class_id < num_classes_, ErrorCode::index,
          "class id out of range");
  return kNumSpecial + class_id;
}

int Vocabulary::color_token(int color_id) const {
  require(color_id >= 0 && color_id < num_colors_, ErrorCode::index,
          "color id out of range");
  return kNumSpecial + num_classes_ + color_id;
}

int Vocabulary::size_token(int size_id) const {
  require(size_id >= 0 && size_id < num_sizes_, ErrorCode::index,
          "size id out of range");
  return kNumSpecial + num_classes_ + num_colors_ + size_id;
}

std::vector<int> Vocabulary::non_special_ids() const {
  std::vector<int> ids;
  for (int i = kNumSpecial; i < size(); ++i) ids.push_back(i);
  return ids;
}

std::string Vocabulary::to_text() const {
  std::ostringstream out;
  // Line number == token id. The attribute counts ride in a comment header
  // so a saved vocabulary round-trips without the world config.
  out << "# dimbert-vocab 1 " << num_classes_ << " " << num_colors_ << " "
      << num_sizes_ << "\n";
  for (const auto& t : tokens_) out << t << "\n";
  return out.str();
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot open vocabulary file for write: " + path);
  out << to_text();
  require(out.good(), ErrorCode::io, "failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string hash, tag;
  int version = 0, nc = 0, nk = 0, ns = 0;
  hs >> hash >> tag >> version >> nc >> nk >> ns;
  require(hash == "#" && tag == "dimbert-vocab" && version == 1, ErrorCode::io,
          "text does not describe a vocabulary");
  Vocabulary v;
  v.num_classes_ = nc;
  v.num_colors_ = nk;
  v.num_sizes_ = ns;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.tokens_.push_back(line);
  }
  require(v.tokens_.size() >= kNumSpecial, ErrorCode::io, "vocabulary too short");
  for (int i = 0; i < kNumSpecial; ++i)
    require(v.tokens_[static_cast<std::size_t>(i)] == kSpecials[static_cast<std::size_t>(i)],
            ErrorCode::io, "special tokens must occupy the reserved head ids");
  v.rebuild_index();
  require(v.index_.size() == v.tokens_.size(), ErrorCode::io,
          "vocabulary contains duplicate tokens");
  for (int id = kNumSpecial; id < kNumSpecial + nc + nk + ns; ++id)
    v.content_ids_.push_back(id);
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open vocabulary file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= '\n';
    h *= 1099511628211ull;
  };
  for (const auto& t : tokens_) feed(t);
  return h;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) ids.push_back(id(tok));
  return ids;
}

}  // namespace dimbert
