#include "dimbert/transformer.hpp"

#include <cmath>

namespace dimbert {

const char* attention_mode_name(AttentionMode mode) {
  return mode == AttentionMode::Entangled ? "esa" : "dim";
}

AttentionMode attention_mode_from_name(const std::string& name) {
  if (name == "esa") return AttentionMode::Entangled;
  if (name == "dim") return AttentionMode::Disentangled;
  fail(ErrorCode::config, "unknown attention mode: " + name);
}

double ModelConfig::sigma() const {
  return init_sigma > 0.0 ? init_sigma : 1.0 / std::sqrt(static_cast<double>(d_model));
}

void ModelConfig::validate() const {
  require(layers >= 1, ErrorCode::config, "layers must be >= 1");
  require(heads >= 1, ErrorCode::config, "heads must be >= 1");
  require(d_model >= 2 && d_model % 2 == 0, ErrorCode::config,
          "d_model must be even and positive");
  require(d_model % heads == 0, ErrorCode::config,
          "d_model must be divisible by the head count");
  require(ffn_width >= 0, ErrorCode::config, "ffn_width must be >= 0");
  require(max_seq_len >= 8, ErrorCode::config, "max_seq_len too small");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::config,
          "dropout must be in [0, 1)");
  require(vocab_size > Vocabulary::kNumSpecial, ErrorCode::config,
          "vocabulary must extend past the special tokens");
  require(d_r > 0, ErrorCode::config, "appearance width must be positive");
  require(d_c > 0, ErrorCode::config, "class-probability width must be positive");
  require(init_sigma >= 0.0, ErrorCode::config, "init_sigma must be >= 0");
}

std::vector<std::pair<std::string, Tensor>> LayerParams::named(int layer_index) const {
  const std::string p = "layer" + std::to_string(layer_index) + ".";
  std::vector<std::pair<std::string, Tensor>> out = {
      {p + "text_q", text_q}, {p + "text_k", text_k}, {p + "text_v", text_v}};
  if (vis_q.defined()) {
    out.push_back({p + "vis_q", vis_q});
    out.push_back({p + "vis_k", vis_k});
    out.push_back({p + "vis_v", vis_v});
  }
  out.push_back({p + "out_proj", out_proj});
  out.push_back({p + "out_bias", out_bias});
  out.push_back({p + "ffn1", ffn1});
  out.push_back({p + "ffn1_bias", ffn1_bias});
  out.push_back({p + "ffn2", ffn2});
  out.push_back({p + "ffn2_bias", ffn2_bias});
  out.push_back({p + "ln1_gain", ln1_gain});
  out.push_back({p + "ln1_bias", ln1_bias});
  out.push_back({p + "ln2_gain", ln2_gain});
  out.push_back({p + "ln2_bias", ln2_bias});
  return out;
}

LayerParams init_layer_params(const ModelConfig& config, Rng& rng) {
  const std::size_t d = static_cast<std::size_t>(config.d_model);
  const std::size_t f = static_cast<std::size_t>(config.ffn_dim());
  const double s = config.sigma();
  LayerParams p;
  p.text_q = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
  p.text_k = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
  p.text_v = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
  if (config.mode == AttentionMode::Disentangled) {
    p.vis_q = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
    p.vis_k = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
    p.vis_v = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
  }
  p.out_proj = Tensor::randn({d, d}, rng, s).set_requires_grad(true);
  p.out_bias = Tensor::zeros({d}).set_requires_grad(true);
  p.ffn1 = Tensor::randn({d, f}, rng, s).set_requires_grad(true);
  p.ffn1_bias = Tensor::zeros({f}).set_requires_grad(true);
  p.ffn2 = Tensor::randn({f, d}, rng, s).set_requires_grad(true);
  p.ffn2_bias = Tensor::zeros({d}).set_requires_grad(true);
  p.ln1_gain = Tensor::full({d}, 1.0).set_requires_grad(true);
  p.ln1_bias = Tensor::zeros({d}).set_requires_grad(true);
  p.ln2_gain = Tensor::full({d}, 1.0).set_requires_grad(true);
  p.ln2_bias = Tensor::zeros({d}).set_requires_grad(true);
  return p;
}

AttentionMask::AttentionMask(int n) : size(n) {
  require(n > 0, ErrorCode::invalid_argument, "mask size must be positive");
  allow.assign(static_cast<std::size_t>(n) * n, 0);
}

AttentionMask AttentionMask::all(int size) {
  AttentionMask m(size);
  std::fill(m.allow.begin(), m.allow.end(), std::uint8_t{1});
  return m;
}

void AttentionMask::validate() const {
  require(size > 0 && allow.size() == static_cast<std::size_t>(size) * size,
          ErrorCode::contract, "mask storage inconsistent with its size");
  for (int i = 0; i < size; ++i) {
    bool any = false;
    for (int j = 0; j < size; ++j) any = any || at(i, j);
    require(any, ErrorCode::contract,
            "mask row " + std::to_string(i) + " has no attendable column");
  }
}

QkvProjection project_qkv(const Tensor& h, const std::vector<Modality>& modality,
                          const LayerParams& params, AttentionMode mode) {
  require(h.ndim() == 2, ErrorCode::shape, "hidden states must be 2-d");
  const std::size_t s = h.extent(0), d = h.extent(1);
  require(modality.size() == s, ErrorCode::shape,
          "one modality tag per row is required");
  if (mode == AttentionMode::Entangled) {
    return {matmul(h, params.text_q), matmul(h, params.text_k),
            matmul(h, params.text_v)};
  }
  require(params.vis_q.defined(), ErrorCode::contract,
          "disentangled mode requires visual projections");
  // Row selectors as 0/1 constants; each row takes exactly one of the two
  // projections, so tying the weights reproduces the entangled result
  // bit for bit.
  std::vector<double> vis(s * d, 0.0), txt(s * d, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const double v = modality[i] == Modality::Visual ? 1.0 : 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      vis[i * d + j] = v;
      txt[i * d + j] = 1.0 - v;
    }
  }
  Tensor sel_v = Tensor::from({s, d}, std::move(vis));
  Tensor sel_t = Tensor::from({s, d}, std::move(txt));
  auto route = [&](const Tensor& wv, const Tensor& wt) {
    return add(mul(sel_v, matmul(h, wv)), mul(sel_t, matmul(h, wt)));
  };
  return {route(params.vis_q, params.text_q), route(params.vis_k, params.text_k),
          route(params.vis_v, params.text_v)};
}

Tensor attention(const QkvProjection& qkv, const AttentionMask& mask,
                 const LayerParams& params, int heads,
                 std::vector<Tensor>* head_weights, TrainContext* train) {
  const std::size_t s = qkv.q.extent(0), d = qkv.q.extent(1);
  require(mask.size == static_cast<int>(s), ErrorCode::shape,
          "mask size does not match the sequence");
  mask.validate();
  require(d % static_cast<std::size_t>(heads) == 0, ErrorCode::shape,
          "width not divisible by the head count");
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  // Additive bias: 0 on attendable pairs, -1e9 otherwise. After the in-op
  // max subtraction the masked entries underflow to an exact zero weight.
  std::vector<double> bias(s * s, 0.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      if (!mask.at(static_cast<int>(i), static_cast<int>(j)))
        bias[i * s + j] = -1e9;
  Tensor mask_bias = Tensor::from({s, s}, std::move(bias));

  std::vector<Tensor> contexts;
  for (int hd = 0; hd < heads; ++hd) {
    Tensor qh = slice_cols(qkv.q, static_cast<std::size_t>(hd) * dk, dk);
    Tensor kh = slice_cols(qkv.k, static_cast<std::size_t>(hd) * dk, dk);
    Tensor vh = slice_cols(qkv.v, static_cast<std::size_t>(hd) * dk, dk);
    Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt_dk), mask_bias);
    Tensor probs = softmax(scores, 1);
    if (head_weights) head_weights->push_back(probs);
    if (train && train->dropout > 0.0)
      probs = dropout(probs, train->dropout, *train->rng);
    contexts.push_back(matmul(probs, vh));
  }
  Tensor ctx = heads == 1 ? contexts[0] : concat(contexts, 1);
  return add_bias(matmul(ctx, params.out_proj), params.out_bias);
}

Tensor encoder_layer(const Tensor& h, const std::vector<Modality>& modality,
                     const AttentionMask& mask, const LayerParams& params,
                     const ModelConfig& config,
                     std::vector<Tensor>* head_weights, TrainContext* train) {
  QkvProjection qkv = project_qkv(h, modality, params, config.mode);
  Tensor attn = attention(qkv, mask, params, config.heads, head_weights, train);
  if (train && train->dropout > 0.0)
    attn = dropout(attn, train->dropout, *train->rng);
  Tensor a = layer_norm(add(h, attn), params.ln1_gain, params.ln1_bias);
  Tensor inner = gelu(add_bias(matmul(a, params.ffn1), params.ffn1_bias));
  Tensor ffn = add_bias(matmul(inner, params.ffn2), params.ffn2_bias);
  if (train && train->dropout > 0.0)
    ffn = dropout(ffn, train->dropout, *train->rng);
  return layer_norm(add(a, ffn), params.ln2_gain, params.ln2_bias);
}

std::vector<Modality> modality_of(const MultimodalSequence& seq) {
  std::vector<Modality> out;
  out.reserve(seq.positions.size());
  for (const SequencePosition& p : seq.positions) out.push_back(p.modality);
  return out;
}

Tensor encoder_forward(const MultimodalSequence& seq, const AttentionMask& mask,
                       const std::vector<LayerParams>& layers,
                       const ModelConfig& config, ForwardTrace* trace,
                       TrainContext* train) {
  require(seq.embeddings.defined(), ErrorCode::contract, "sequence not assembled");
  require(mask.size == seq.length(), ErrorCode::shape,
          "mask size does not match the sequence");
  const std::vector<Modality> modality = modality_of(seq);
  Tensor h = seq.embeddings;
  for (const LayerParams& layer : layers) {
    std::vector<Tensor>* weights = nullptr;
    if (trace) {
      trace->attention.emplace_back();
      weights = &trace->attention.back();
    }
    h = encoder_layer(h, modality, mask, layer, config, weights, train);
  }
  return h;
}

}  // namespace dimbert
