#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dimbert/model.hpp"

namespace dimbert {

struct TensorEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Adam moment vectors for one parameter, stored flat in parameter order.
struct OptimizerEntry {
  std::string name;
  std::vector<double> m;
  std::vector<double> v;
};

struct OptimizerBlob {
  std::uint64_t step = 0;
  std::vector<OptimizerEntry> entries;
};

// On-disk model state. The embedded config block and vocabulary text make a
// checkpoint self-sufficient: loading needs no side files. The binary layout
// is little-endian with an FNV-1a trailer; reads reject any altered byte.
struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::string config_block;
  std::string vocab_text;
  std::vector<TensorEntry> tensors;
  std::optional<OptimizerBlob> optimizer;
};

Checkpoint snapshot_model(const Model& model,
                          const OptimizerBlob* optimizer = nullptr);

void write_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const std::string& path);

// Rebuilds the model and verifies the stored fingerprint against the rebuilt
// one; a mismatch means the payload does not belong to this architecture.
Model model_from_checkpoint(const Checkpoint& cp);

void save_model(const Model& model, const std::string& path,
                const OptimizerBlob* optimizer = nullptr);
Model load_model(const std::string& path, OptimizerBlob* optimizer_out = nullptr);

// Element-wise mean of the parameter payloads. All checkpoints must share
// one fingerprint and tensor directory; optimizer state is dropped, the
// config and vocabulary come from the last path.
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

}  // namespace dimbert
