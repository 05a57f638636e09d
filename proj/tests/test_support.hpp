#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dimbert/model.hpp"
#include "dimbert/tensor.hpp"
#include "dimbert/world.hpp"

namespace dimbert::testing {

// Small world that keeps vocabularies and feature widths tiny so exhaustive
// finite-difference sweeps stay fast.
inline WorldConfig tiny_world() {
  WorldConfig w;
  w.canvas_w = 64;
  w.canvas_h = 64;
  w.min_objects = 2;
  w.max_objects = 3;
  w.num_classes = 4;
  w.num_colors = 3;
  w.num_sizes = 2;
  w.concept_count = 2;
  w.concept_dim = 6;
  w.max_caption_len = 12;
  w.scenes = 8;
  return w;
}

inline Corpus tiny_corpus(std::uint64_t seed = 11, int scenes = 8) {
  WorldConfig w = tiny_world();
  w.scenes = scenes;
  return generate_corpus(seed, w);
}

inline ModelConfig tiny_model_config(const Corpus& corpus,
                                     AttentionMode mode = AttentionMode::Disentangled) {
  ModelConfig c;
  c.mode = mode;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.ffn_width = 16;
  c.max_seq_len = 32;
  c.vocab_size = corpus.vocab.size();
  c.d_r = corpus.config.appearance_dim();
  c.d_c = corpus.config.concept_dim;
  c.seed = 5;
  return c;
}

struct FdResult {
  double max_rel = 0.0;
  std::string worst;
  long checked = 0;
};

// Central finite differences against reverse-mode gradients, every element
// of every listed parameter. The loss builder must be a deterministic pure
// function of the parameters. Relative error uses an absolute floor so
// near-dead coordinates are compared at finite-difference noise scale.
inline FdResult fd_check(const std::vector<std::pair<std::string, Tensor>>& params,
                         const std::function<Tensor()>& make_loss,
                         double eps = 1e-4, double floor = 1e-5) {
  for (const auto& [name, p] : params) {
    Tensor(p).clear_grad();
  }
  Tensor loss = make_loss();
  backward(loss);

  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& [name, p] : params) {
    require(p.grad_valid(), ErrorCode::contract, "missing gradient: " + name);
    grads.emplace_back(p.grad().begin(), p.grad().end());
  }

  FdResult result;
  NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi].second;
    std::span<double> w = param.values_mut();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double saved = w[k];
      w[k] = saved + eps;
      const double up = make_loss().item();
      w[k] = saved - eps;
      const double down = make_loss().item();
      w[k] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double g = grads[pi][k];
      const double rel =
          std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), floor});
      ++result.checked;
      if (rel > result.max_rel) {
        result.max_rel = rel;
        char where[64];
        std::snprintf(where, sizeof(where), "[%zu]", k);
        result.worst = params[pi].first + where;
      }
    }
  }
  for (const auto& [name, p] : params) {
    Tensor(p).clear_grad();
  }
  return result;
}

}  // namespace dimbert::testing
