#include "dimbert/model.hpp"

#include <cinttypes>
#include <cstdio>
#include <map>
#include <sstream>

#include "dimbert/error.hpp"
#include "dimbert/objectives.hpp"

namespace dimbert {
namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Model Model::init(const ModelConfig& config, const Vocabulary& vocab) {
  config.validate();
  require(config.vocab_size == vocab.size(), ErrorCode::config,
          "configured vocab size disagrees with the vocabulary");
  Model m;
  m.config = config;
  m.vocab = vocab;
  Rng rng(config.seed);
  const double sigma = config.sigma();
  m.tables = init_embedding_tables(config.vocab_size, config.max_seq_len,
                                   config.d_model, config.d_r, config.d_c, rng,
                                   sigma);
  m.layers.reserve(static_cast<std::size_t>(config.layers));
  for (int l = 0; l < config.layers; ++l) {
    m.layers.push_back(init_layer_params(config, rng));
  }
  const std::size_t d = static_cast<std::size_t>(config.d_model);
  const std::size_t v = static_cast<std::size_t>(config.vocab_size);
  if (!config.tie_output) {
    m.out_w = Tensor::randn({d, v}, rng, sigma);
    m.out_w.set_requires_grad(true);
  }
  m.out_b = Tensor::zeros({v});
  m.out_b.set_requires_grad(true);
  m.refer_w = Tensor::randn({d, 1}, rng, sigma);
  m.refer_w.set_requires_grad(true);
  m.refer_b = Tensor::zeros({1});
  m.refer_b.set_requires_grad(true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters(ParamSet set) const {
  std::vector<std::pair<std::string, Tensor>> out = tables.named();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto named = layers[l].named(static_cast<int>(l));
    out.insert(out.end(), named.begin(), named.end());
  }
  if (set != ParamSet::Referring) {
    if (out_w.defined()) out.emplace_back("out.weight", out_w);
    out.emplace_back("out.bias", out_b);
  }
  if (set != ParamSet::LanguageModel) {
    out.emplace_back("refer.weight", refer_w);
    out.emplace_back("refer.bias", refer_b);
  }
  return out;
}

std::int64_t Model::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, tensor] : parameters(ParamSet::All)) {
    total += static_cast<std::int64_t>(tensor.numel());
  }
  return total;
}

std::string Model::config_block() const {
  std::ostringstream out;
  out << "mode = " << attention_mode_name(config.mode) << "\n";
  out << "layers = " << config.layers << "\n";
  out << "heads = " << config.heads << "\n";
  out << "d_model = " << config.d_model << "\n";
  out << "ffn_width = " << config.ffn_width << "\n";
  out << "max_seq_len = " << config.max_seq_len << "\n";
  out << "dropout = " << format_double(config.dropout) << "\n";
  out << "tie_output = " << (config.tie_output ? 1 : 0) << "\n";
  out << "use_concepts = " << (config.use_concepts ? 1 : 0) << "\n";
  out << "vocab_size = " << config.vocab_size << "\n";
  out << "d_r = " << config.d_r << "\n";
  out << "d_c = " << config.d_c << "\n";
  out << "init_sigma = " << format_double(config.init_sigma) << "\n";
  out << "seed = " << config.seed << "\n";
  return out.str();
}

ModelConfig Model::config_from_block(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find(" = ");
    require(eq != std::string::npos, ErrorCode::config,
            "malformed model config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto take = [&kv](const char* key) {
    auto it = kv.find(key);
    require(it != kv.end(), ErrorCode::config,
            std::string("model config block lacks key ") + key);
    std::string value = it->second;
    kv.erase(it);
    return value;
  };
  ModelConfig c;
  c.mode = attention_mode_from_name(take("mode"));
  c.layers = std::stoi(take("layers"));
  c.heads = std::stoi(take("heads"));
  c.d_model = std::stoi(take("d_model"));
  c.ffn_width = std::stoi(take("ffn_width"));
  c.max_seq_len = std::stoi(take("max_seq_len"));
  c.dropout = std::stod(take("dropout"));
  c.tie_output = std::stoi(take("tie_output")) != 0;
  c.use_concepts = std::stoi(take("use_concepts")) != 0;
  c.vocab_size = std::stoi(take("vocab_size"));
  c.d_r = std::stoi(take("d_r"));
  c.d_c = std::stoi(take("d_c"));
  c.init_sigma = std::stod(take("init_sigma"));
  c.seed = std::stoull(take("seed"));
  if (!kv.empty()) {
    fail(ErrorCode::config,
         "model config block holds an unknown key: " + kv.begin()->first);
  }
  c.validate();
  return c;
}

std::uint64_t Model::fingerprint() const {
  std::ostringstream arch;
  arch << attention_mode_name(config.mode) << '|' << config.layers << '|'
       << config.heads << '|' << config.d_model << '|' << config.ffn_dim() << '|'
       << config.max_seq_len << '|' << (config.tie_output ? 1 : 0) << '|'
       << (config.use_concepts ? 1 : 0) << '|' << config.vocab_size << '|'
       << config.d_r << '|' << config.d_c;
  char vocab_part[32];
  std::snprintf(vocab_part, sizeof vocab_part, "|%016" PRIx64, vocab.content_hash());
  return fnv1a(arch.str() + vocab_part);
}

MultimodalSequence Model::sequence_for_training(const std::vector<RoiFeature>& rois,
                                                const ConceptSet& concepts,
                                                const std::vector<int>& sentence,
                                                int trailing_token) const {
  ConceptSet used = config.use_concepts ? concepts : ConceptSet{};
  return assemble_training(rois, used, sentence, tables, config.max_seq_len,
                           config.vocab_size, trailing_token);
}

MultimodalSequence Model::sequence_for_decoding(const std::vector<RoiFeature>& rois,
                                                const ConceptSet& concepts,
                                                const std::vector<int>& prefix) const {
  ConceptSet used = config.use_concepts ? concepts : ConceptSet{};
  return assemble_decoding(rois, used, prefix, tables, config.max_seq_len,
                           config.vocab_size);
}

Tensor Model::encode(const MultimodalSequence& seq, const AttentionMask& mask,
                     ForwardTrace* trace, TrainContext* train) const {
  return encoder_forward(seq, mask, layers, config, trace, train);
}

Tensor Model::vocab_logits(const Tensor& h_last, const std::vector<int>& rows) const {
  Tensor picked = gather_rows(h_last, rows);
  return config.tie_output ? add_bias(matmul_nt(picked, tables.word), out_b)
                           : add_bias(matmul(picked, out_w), out_b);
}

Tensor Model::referring_scores(const Tensor& h_last,
                               const MultimodalSequence& seq) const {
  require(seq.roi_count > 0, ErrorCode::contract,
          "referring scores need at least one RoI row");
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(seq.roi_count));
  for (int i = 0; i < seq.roi_count; ++i) rows.push_back(seq.roi_start + i);
  return add_bias(matmul(gather_rows(h_last, rows), refer_w), refer_b);
}

Tensor Model::masked_word_loss(const Tensor& h_last, const MultimodalSequence& seq,
                               const std::vector<int>& target_positions,
                               const std::vector<int>& target_ids,
                               bool allow_concept_targets) const {
  return mlm_loss(h_last, seq, target_positions, target_ids, out_w, out_b,
                  tables.word, config.tie_output, allow_concept_targets);
}

}  // namespace dimbert
