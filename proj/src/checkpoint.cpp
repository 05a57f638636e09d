#include "dimbert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dimbert/error.hpp"

namespace dimbert {
namespace {

constexpr char kMagic[8] = {'D', 'I', 'M', 'B', 'E', 'R', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a_bytes(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

void put_blob(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out.append(s);
}

struct Cursor {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    require(pos + n <= bytes.size(), ErrorCode::io, "checkpoint file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string blob() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t count) {
    require(count <= (bytes.size() - pos) / 8, ErrorCode::io,
            "checkpoint file truncated");
    std::vector<double> v(count);
    for (std::uint64_t i = 0; i < count; ++i) v[i] = f64();
    return v;
  }
};

}  // namespace

Checkpoint snapshot_model(const Model& model, const OptimizerBlob* optimizer) {
  Checkpoint cp;
  cp.fingerprint = model.fingerprint();
  cp.config_block = model.config_block();
  cp.vocab_text = model.vocab.to_text();
  for (const auto& [name, tensor] : model.parameters(ParamSet::All)) {
    TensorEntry entry;
    entry.name = name;
    entry.shape = tensor.shape();
    const auto raw = tensor.values();
    entry.values.assign(raw.begin(), raw.end());
    cp.tensors.push_back(std::move(entry));
  }
  if (optimizer != nullptr) cp.optimizer = *optimizer;
  return cp;
}

void write_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, cp.fingerprint);
  put_blob(out, cp.config_block);
  put_blob(out, cp.vocab_text);
  put_u64(out, cp.tensors.size());
  for (const TensorEntry& entry : cp.tensors) {
    put_blob(out, entry.name);
    put_u32(out, static_cast<std::uint32_t>(entry.shape.size()));
    std::size_t numel = 1;
    for (std::size_t e : entry.shape) {
      put_u64(out, e);
      numel *= e;
    }
    require(entry.values.size() == numel, ErrorCode::shape,
            "tensor entry " + entry.name + " has a value count off its shape");
  }
  for (const TensorEntry& entry : cp.tensors) {
    for (double v : entry.values) put_f64(out, v);
  }
  if (cp.optimizer.has_value()) {
    out.push_back(1);
    put_u64(out, cp.optimizer->step);
    put_u64(out, cp.optimizer->entries.size());
    for (const OptimizerEntry& entry : cp.optimizer->entries) {
      put_blob(out, entry.name);
      require(entry.m.size() == entry.v.size(), ErrorCode::shape,
              "optimizer moments of " + entry.name + " differ in length");
      put_u64(out, entry.m.size());
      for (double v : entry.m) put_f64(out, v);
      for (double v : entry.v) put_f64(out, v);
    }
  } else {
    out.push_back(0);
  }
  put_u64(out, fnv1a_bytes(out));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require(file.good(), ErrorCode::io, "cannot open checkpoint for write: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(file.good(), ErrorCode::io, "failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  require(file.good(), ErrorCode::io, "cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << file.rdbuf();
  const std::string bytes = buf.str();
  require(bytes.size() >= sizeof kMagic + 4 + 8 + 8, ErrorCode::io,
          "checkpoint file too small: " + path);

  const std::string body = bytes.substr(0, bytes.size() - 8);
  Cursor tail{bytes, bytes.size() - 8};
  require(tail.u64() == fnv1a_bytes(body), ErrorCode::io,
          "checkpoint checksum mismatch: " + path);

  Cursor in{body, 0};
  in.need(sizeof kMagic);
  require(std::memcmp(body.data(), kMagic, sizeof kMagic) == 0, ErrorCode::io,
          "not a checkpoint file: " + path);
  in.pos = sizeof kMagic;
  require(in.u32() == kVersion, ErrorCode::io,
          "unsupported checkpoint version: " + path);

  Checkpoint cp;
  cp.fingerprint = in.u64();
  cp.config_block = in.blob();
  cp.vocab_text = in.blob();
  const std::uint64_t count = in.u64();
  cp.tensors.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorEntry& entry = cp.tensors[i];
    entry.name = in.blob();
    const std::uint32_t rank = in.u32();
    require(rank <= 8, ErrorCode::io, "implausible tensor rank in checkpoint");
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint64_t extent = in.u64();
      require(extent > 0, ErrorCode::io, "zero extent in checkpoint tensor");
      entry.shape.push_back(extent);
      numel *= extent;
    }
    entry.values.reserve(numel);
    entry.values.resize(numel);  // filled by the payload pass below
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    cp.tensors[i].values = in.doubles(cp.tensors[i].values.size());
  }
  in.need(1);
  const bool has_optimizer = body[in.pos++] != 0;
  if (has_optimizer) {
    OptimizerBlob opt;
    opt.step = in.u64();
    const std::uint64_t entries = in.u64();
    for (std::uint64_t i = 0; i < entries; ++i) {
      OptimizerEntry entry;
      entry.name = in.blob();
      const std::uint64_t n = in.u64();
      entry.m = in.doubles(n);
      entry.v = in.doubles(n);
      opt.entries.push_back(std::move(entry));
    }
    cp.optimizer = std::move(opt);
  }
  require(in.pos == body.size(), ErrorCode::io,
          "checkpoint holds trailing bytes: " + path);
  return cp;
}

Model model_from_checkpoint(const Checkpoint& cp) {
  const ModelConfig config = Model::config_from_block(cp.config_block);
  const Vocabulary vocab = Vocabulary::from_text(cp.vocab_text);
  Model model = Model::init(config, vocab);
  require(model.fingerprint() == cp.fingerprint, ErrorCode::fingerprint,
          "checkpoint fingerprint does not match its own configuration");

  auto params = model.parameters(ParamSet::All);
  require(params.size() == cp.tensors.size(), ErrorCode::fingerprint,
          "checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const TensorEntry& entry = cp.tensors[i];
    Tensor& tensor = params[i].second;
    require(entry.name == params[i].first, ErrorCode::fingerprint,
            "checkpoint tensor order diverges at " + entry.name);
    require(entry.shape == tensor.shape(), ErrorCode::shape,
            "checkpoint tensor " + entry.name + " has the wrong shape");
    auto dst = tensor.values_mut();
    require(entry.values.size() == dst.size(), ErrorCode::shape,
            "checkpoint tensor " + entry.name + " has the wrong element count");
    std::copy(entry.values.begin(), entry.values.end(), dst.begin());
  }
  return model;
}

void save_model(const Model& model, const std::string& path,
                const OptimizerBlob* optimizer) {
  write_checkpoint(path, snapshot_model(model, optimizer));
}

Model load_model(const std::string& path, OptimizerBlob* optimizer_out) {
  Checkpoint cp = read_checkpoint(path);
  if (optimizer_out != nullptr) {
    *optimizer_out = cp.optimizer.value_or(OptimizerBlob{});
  }
  return model_from_checkpoint(cp);
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  require(!paths.empty(), ErrorCode::invalid_argument,
          "cannot average zero checkpoints");
  Checkpoint mean = read_checkpoint(paths.front());
  mean.optimizer.reset();
  for (std::size_t p = 1; p < paths.size(); ++p) {
    Checkpoint next = read_checkpoint(paths[p]);
    require(next.fingerprint == mean.fingerprint, ErrorCode::fingerprint,
            "checkpoint fingerprints differ; refusing to average " + paths[p]);
    require(next.tensors.size() == mean.tensors.size(), ErrorCode::fingerprint,
            "checkpoint tensor directories differ: " + paths[p]);
    for (std::size_t i = 0; i < mean.tensors.size(); ++i) {
      TensorEntry& acc = mean.tensors[i];
      const TensorEntry& add = next.tensors[i];
      require(add.name == acc.name && add.shape == acc.shape, ErrorCode::fingerprint,
              "checkpoint tensor directories differ at " + add.name);
      for (std::size_t k = 0; k < acc.values.size(); ++k) {
        acc.values[k] += add.values[k];
      }
    }
    // The newest checkpoint donates the config text (they all agree on the
    // architecture; trailing fields like the seed are informational).
    mean.config_block = std::move(next.config_block);
    mean.vocab_text = std::move(next.vocab_text);
  }
  const double inv = 1.0 / static_cast<double>(paths.size());
  for (TensorEntry& entry : mean.tensors) {
    for (double& v : entry.values) v *= inv;
  }
  return mean;
}

}  // namespace dimbert
