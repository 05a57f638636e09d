#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dimbert/embeddings.hpp"
#include "dimbert/tensor.hpp"

namespace dimbert {

// Entangled: one projection set serves every row. Disentangled: visual rows
// are projected by a visual set, textual rows by the textual set; softmax,
// output map, and FFN stay shared either way.
enum class AttentionMode { Entangled, Disentangled };

const char* attention_mode_name(AttentionMode mode);
AttentionMode attention_mode_from_name(const std::string& name);

struct ModelConfig {
  AttentionMode mode = AttentionMode::Disentangled;
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int ffn_width = 0;  // 0 -> 4 * d_model
  int max_seq_len = 64;
  double dropout = 0.0;
  bool tie_output = false;   // share the word table with the output head
  bool use_concepts = true;  // include the concept segment when assembling
  int vocab_size = 0;
  int d_r = 0;
  int d_c = 0;
  double init_sigma = 0.0;  // 0 -> 1/sqrt(d_model)
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / heads; }
  int ffn_dim() const { return ffn_width > 0 ? ffn_width : 4 * d_model; }
  double sigma() const;
  void validate() const;
};

struct LayerParams {
  // Textual projections; in entangled mode these serve all rows.
  Tensor text_q, text_k, text_v;  // d x d, no bias
  // Visual projections; allocated only in disentangled mode.
  Tensor vis_q, vis_k, vis_v;
  Tensor out_proj;  // d x d
  Tensor out_bias;  // d
  Tensor ffn1, ffn1_bias;  // d x f, f
  Tensor ffn2, ffn2_bias;  // f x d, d
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // d

  std::vector<std::pair<std::string, Tensor>> named(int layer_index) const;
};

LayerParams init_layer_params(const ModelConfig& config, Rng& rng);

// Row-level attendability. allow[i*size+j] says row i may read column j.
struct AttentionMask {
  int size = 0;
  std::vector<std::uint8_t> allow;

  AttentionMask() = default;
  // All-false mask; rows must be opened explicitly before use.
  explicit AttentionMask(int n);
  static AttentionMask all(int size);
  bool at(int row, int col) const { return allow[static_cast<std::size_t>(row) * size + col] != 0; }
  void set(int row, int col, bool value) {
    allow[static_cast<std::size_t>(row) * size + col] = value ? 1 : 0;
  }
  // Every row must keep at least one attendable column.
  void validate() const;
};

struct QkvProjection {
  Tensor q, k, v;  // S x d each
};

QkvProjection project_qkv(const Tensor& h, const std::vector<Modality>& modality,
                          const LayerParams& params, AttentionMode mode);

struct TrainContext {
  Rng* rng = nullptr;
  double dropout = 0.0;
};

// Scaled dot-product attention over heads with additive masking; returns the
// S x d context after the output map. head_weights, when given, receives one
// S x S probability matrix per head.
Tensor attention(const QkvProjection& qkv, const AttentionMask& mask,
                 const LayerParams& params, int heads,
                 std::vector<Tensor>* head_weights = nullptr,
                 TrainContext* train = nullptr);

// Post-norm residual block: LN(x + FFN(LN(x + Attn(x)))).
Tensor encoder_layer(const Tensor& h, const std::vector<Modality>& modality,
                     const AttentionMask& mask, const LayerParams& params,
                     const ModelConfig& config,
                     std::vector<Tensor>* head_weights = nullptr,
                     TrainContext* train = nullptr);

struct ForwardTrace {
  // attention[layer][head] is an S x S probability matrix.
  std::vector<std::vector<Tensor>> attention;
};

Tensor encoder_forward(const MultimodalSequence& seq, const AttentionMask& mask,
                       const std::vector<LayerParams>& layers,
                       const ModelConfig& config, ForwardTrace* trace = nullptr,
                       TrainContext* train = nullptr);

std::vector<Modality> modality_of(const MultimodalSequence& seq);

}  // namespace dimbert
