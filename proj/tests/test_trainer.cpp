#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dimbert/checkpoint.hpp"
#include "dimbert/decoding.hpp"
#include "dimbert/trainer.hpp"
#include "test_support.hpp"

using namespace dimbert;
using dimbert::testing::tiny_corpus;
using dimbert::testing::tiny_model_config;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const char* stem) : path(fs::path("trainer_test_") += stem) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

bool same_parameters(const Model& a, const Model& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first) return false;
    const auto va = pa[i].second.values();
    const auto vb = pb[i].second.values();
    if (va.size() != vb.size()) return false;
    for (std::size_t k = 0; k < va.size(); ++k) {
      if (va[k] != vb[k]) return false;  // bitwise, not approximate
    }
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("adam first step matches the closed-form update") {
  Tensor w = Tensor::from({1}, {0.5});
  w.set_requires_grad(true);
  AdamConfig config;
  config.lr = 0.1;
  AdamOptimizer opt({{"w", w}}, config);

  // Unit gradient: loss = w.
  backward(sum(w));
  opt.step();

  // m-hat = 1, v-hat = 1, so the update is lr / (1 + eps), within eps of lr.
  const double expected = 0.5 - 0.1 / (1.0 + config.eps);
  CHECK(w.values()[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(std::fabs((0.5 - w.values()[0]) - 0.1) < 1e-8);
  CHECK(opt.steps_done() == 1);
}

TEST_CASE("a zero gradient leaves the parameter untouched") {
  Tensor w = Tensor::from({2}, {1.0, -2.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({{"w", w}}, AdamConfig{});

  backward(sum(mul(w, Tensor::zeros({2}))));
  REQUIRE(w.grad_valid());
  opt.step();
  CHECK(w.values()[0] == 1.0);
  CHECK(w.values()[1] == -2.0);
}

TEST_CASE("a missing gradient is a contract error naming the parameter") {
  Tensor a = Tensor::from({1}, {1.0});
  a.set_requires_grad(true);
  Tensor b = Tensor::from({1}, {2.0});
  b.set_requires_grad(true);
  AdamOptimizer opt({{"a", a}, {"b", b}}, AdamConfig{});

  backward(sum(a));  // b never participates
  try {
    opt.step();
    FAIL("step accepted a parameter without a gradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::contract);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  a.clear_grad();
}

TEST_CASE("warmup ramps the learning rate linearly") {
  AdamConfig config;
  config.lr = 1.0;
  config.warmup_steps = 4;
  Tensor w = Tensor::from({1}, {0.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({{"w", w}}, config);
  CHECK(opt.lr_at(1) == doctest::Approx(0.25));
  CHECK(opt.lr_at(2) == doctest::Approx(0.5));
  CHECK(opt.lr_at(4) == doctest::Approx(1.0));
  CHECK(opt.lr_at(50) == doctest::Approx(1.0));
}

TEST_CASE("optimizer state restores into an identical trajectory") {
  auto make_param = [] {
    Tensor w = Tensor::from({2}, {0.4, -0.3});
    return w.set_requires_grad(true);
  };
  auto loss_of = [](Tensor& w) { return sum(mul(w, w)); };

  // Uninterrupted: four steps.
  Tensor w1 = make_param();
  AdamOptimizer opt1({{"w", w1}}, AdamConfig{.lr = 0.05});
  for (int i = 0; i < 4; ++i) {
    backward(loss_of(w1));
    opt1.step();
  }

  // Interrupted after two steps, state carried across a blob round-trip.
  Tensor w2 = make_param();
  AdamOptimizer opt2({{"w", w2}}, AdamConfig{.lr = 0.05});
  for (int i = 0; i < 2; ++i) {
    backward(loss_of(w2));
    opt2.step();
  }
  const OptimizerBlob blob = opt2.state();
  CHECK(blob.step == 2);

  Tensor w3 = Tensor::from({2}, {w2.values()[0], w2.values()[1]});
  w3.set_requires_grad(true);
  AdamOptimizer opt3({{"w", w3}}, AdamConfig{.lr = 0.05});
  opt3.restore(blob);
  for (int i = 0; i < 2; ++i) {
    backward(loss_of(w3));
    opt3.step();
  }
  CHECK(w3.values()[0] == w1.values()[0]);
  CHECK(w3.values()[1] == w1.values()[1]);

  OptimizerBlob wrong = blob;
  wrong.entries[0].m.pop_back();
  AdamOptimizer opt4({{"w", make_param()}}, AdamConfig{});
  CHECK_THROWS_AS(opt4.restore(wrong), Error);
}

TEST_CASE("pretraining runs, logs, and checkpoints per epoch") {
  TempDir dir("pretrain");
  const Corpus corpus = tiny_corpus(60, 6);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);

  PretrainConfig config;
  config.epochs = 2;
  config.steps_per_epoch = 3;
  config.batch_size = 2;
  config.seed = 41;
  config.log_path = dir.file("run.log");
  config.checkpoint_dir = dir.path.string();

  const PretrainResult result = pretrain(model, corpus, config);
  CHECK(result.losses.size() == 6);
  CHECK(result.tasks.size() == 6);
  CHECK(result.checkpoints.size() == 2);  // one per epoch
  for (double loss : result.losses) {
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
  }
  for (const std::string& path : result.checkpoints) {
    CHECK(fs::exists(path));
  }

  // Run log: header plus one row per step, tab-delimited.
  std::ifstream log(config.log_path);
  REQUIRE(log.good());
  std::string line;
  std::getline(log, line);
  CHECK(line == "step\ttask\tloss\tlr\tseconds");
  int rows = 0;
  while (std::getline(log, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("identical run configurations reproduce bitwise-identical models") {
  const Corpus corpus = tiny_corpus(61, 4);
  PretrainConfig config;
  config.epochs = 1;
  config.steps_per_epoch = 4;
  config.batch_size = 2;
  config.seed = 9;

  Model a = Model::init(tiny_model_config(corpus), corpus.vocab);
  Model b = Model::init(tiny_model_config(corpus), corpus.vocab);
  pretrain(a, corpus, config);
  pretrain(b, corpus, config);
  CHECK(same_parameters(a, b));

  // And the serialized artifacts agree byte for byte.
  TempDir dir("determinism");
  save_model(a, dir.file("a.ckpt"));
  save_model(b, dir.file("b.ckpt"));
  CHECK(slurp(dir.file("a.ckpt")) == slurp(dir.file("b.ckpt")));
}

TEST_CASE("checkpoints round-trip bitwise with optimizer state") {
  TempDir dir("roundtrip");
  const Corpus corpus = tiny_corpus(62, 4);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);

  PretrainConfig config;
  config.epochs = 1;
  config.steps_per_epoch = 2;
  config.batch_size = 2;
  config.checkpoint_dir = dir.path.string();
  const PretrainResult result = pretrain(model, corpus, config);
  REQUIRE(result.checkpoints.size() == 1);

  OptimizerBlob optimizer;
  const Model loaded = load_model(result.checkpoints.front(), &optimizer);
  CHECK(same_parameters(model, loaded));
  CHECK(loaded.fingerprint() == model.fingerprint());
  CHECK(optimizer.step == 2);
  CHECK(!optimizer.entries.empty());

  // A fresh save of the loaded model reproduces identical payload bytes.
  save_model(loaded, dir.file("resaved.ckpt"), &optimizer);
  CHECK(slurp(result.checkpoints.front()) == slurp(dir.file("resaved.ckpt")));
}

TEST_CASE("checkpoint reads reject corruption and architecture mismatches") {
  TempDir dir("corrupt");
  const Corpus corpus = tiny_corpus(63, 2);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  const std::string path = dir.file("model.ckpt");
  save_model(model, path);

  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  std::ofstream(dir.file("flipped.ckpt"), std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_model(dir.file("flipped.ckpt")), Error);

  std::ofstream(dir.file("short.ckpt"), std::ios::binary)
      << bytes.substr(0, bytes.size() / 3);
  CHECK_THROWS_AS(load_model(dir.file("short.ckpt")), Error);

  CHECK_THROWS_AS(load_model(dir.file("missing.ckpt")), Error);
}

TEST_CASE("checkpoint averaging is an element-wise mean") {
  TempDir dir("average");
  const Corpus corpus = tiny_corpus(64, 2);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);

  // Two snapshots: all parameters 0 and all parameters 2; the mean is 1.
  for (double value : {0.0, 2.0}) {
    for (auto& [name, tensor] : model.parameters()) {
      for (double& v : tensor.values_mut()) v = value;
    }
    const std::string name = value == 0.0 ? "zeros.ckpt" : "twos.ckpt";
    save_model(model, dir.file(name.c_str()));
  }
  const Checkpoint mean =
      average_checkpoints({dir.file("zeros.ckpt"), dir.file("twos.ckpt")});
  for (const TensorEntry& entry : mean.tensors) {
    for (double v : entry.values) CHECK(v == 1.0);
  }
  CHECK(!mean.optimizer.has_value());

  // Averaging k copies of one checkpoint reproduces it.
  const Checkpoint same = average_checkpoints(
      {dir.file("twos.ckpt"), dir.file("twos.ckpt"), dir.file("twos.ckpt")});
  for (const TensorEntry& entry : same.tensors) {
    for (double v : entry.values) CHECK(v == 2.0);
  }

  // Architecture mismatch across files is rejected.
  ModelConfig other_config = tiny_model_config(corpus, AttentionMode::Entangled);
  const Model other = Model::init(other_config, corpus.vocab);
  save_model(other, dir.file("other.ckpt"));
  CHECK_THROWS_AS(
      average_checkpoints({dir.file("twos.ckpt"), dir.file("other.ckpt")}), Error);
  CHECK_THROWS_AS(average_checkpoints({}), Error);
}

TEST_CASE("every language-model parameter receives gradient in one step") {
  const Corpus corpus = tiny_corpus(65, 4);
  const ModelConfig config = tiny_model_config(corpus);  // disentangled
  Model model = Model::init(config, corpus.vocab);
  Rng rng(7);

  // One batch mixing both word objectives plus a referring term. The word
  // losses never read the visual rows of the last layer, so the referring
  // term is what exercises the final visual query projection.
  std::vector<Tensor> losses;
  for (int b = 0; b < 4; ++b) {
    const Record& rec = corpus.records[static_cast<std::size_t>(b)];
    const TrainingInstance inst =
        make_instance(rec.rois, rec.concepts, rec.caption,
                      b % 2 == 0 ? TaskKind::Blm : TaskKind::S2slm,
                      MaskingPolicy{}, rng, model.tables, config, corpus.vocab);
    const Tensor h = model.encode(inst.seq, inst.mask);
    losses.push_back(model.masked_word_loss(h, inst.seq, inst.target_positions,
                                            inst.target_ids));
  }
  const Record& ref_rec = corpus.records[0];
  REQUIRE(!ref_rec.referring.empty());
  const ReferringTask& task = ref_rec.referring[0];
  const MultimodalSequence ref_seq =
      model.sequence_for_training(ref_rec.rois, ref_rec.concepts, task.query);
  const Tensor ref_h = model.encode(ref_seq, build_blm_mask(ref_seq));
  losses.push_back(
      binary_cross_entropy_logits(model.referring_scores(ref_h, ref_seq), task.target));

  Tensor total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  backward(scale(total, 0.2));

  for (const auto& [name, tensor] : model.parameters(ParamSet::LanguageModel)) {
    REQUIRE_MESSAGE(tensor.grad_valid(), name);
    bool nonzero = false;
    for (double g : tensor.grad()) {
      if (g != 0.0) {
        nonzero = true;
        break;
      }
    }
    CHECK_MESSAGE(nonzero, name);
  }
  for (auto& [name, tensor] : model.parameters()) tensor.clear_grad();
}

TEST_CASE("zero-epoch fine-tunes change nothing") {
  const Corpus corpus = tiny_corpus(66, 4);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  Model reference = Model::init(tiny_model_config(corpus), corpus.vocab);

  FinetuneCaptionConfig caption;
  caption.epochs = 0;
  const FinetuneResult a = finetune_caption(model, corpus, caption);
  CHECK(a.losses.empty());

  FinetuneReferringConfig referring;
  referring.epochs = 0;
  const FinetuneResult b = finetune_referring(model, corpus, referring);
  CHECK(b.losses.empty());

  CHECK(same_parameters(model, reference));
}

TEST_CASE("caption fine-tuning lowers the sentence loss") {
  const Corpus corpus = tiny_corpus(67, 4);
  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);

  FinetuneCaptionConfig config;
  config.epochs = 12;
  config.batch_size = 8;
  config.adam.lr = 5e-3;
  const FinetuneResult result = finetune_caption(model, corpus, config);
  REQUIRE(result.losses.size() > 10);

  double early = 0, late = 0;
  for (int i = 0; i < 3; ++i) early += result.losses[static_cast<std::size_t>(i)];
  for (std::size_t i = result.losses.size() - 3; i < result.losses.size(); ++i)
    late += result.losses[i];
  CHECK(late < early * 0.7);
}

TEST_CASE("referring fine-tuning overfits sixteen tasks completely") {
  WorldConfig w = dimbert::testing::tiny_world();
  w.scenes = 16;
  w.referring_per_scene = 1;
  w.unique_objects = true;  // every scene admits an exactly-one-match query
  const Corpus corpus = generate_corpus(68, w);

  int tasks = 0;
  for (const Record& rec : corpus.records) tasks += static_cast<int>(rec.referring.size());
  REQUIRE(tasks == 16);

  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  FinetuneReferringConfig config;
  config.epochs = 40;
  config.batch_size = 8;
  config.adam.lr = 5e-3;
  finetune_referring(model, corpus, config);

  int correct = 0, total = 0;
  for (const Record& rec : corpus.records) {
    for (const ReferringTask& task : rec.referring) {
      const int pick = referring_predict(model, rec.rois, rec.concepts, task.query);
      correct += pick == task.target ? 1 : 0;
      ++total;
    }
  }
  CHECK(correct == total);
}

TEST_CASE("fine-tuning rejects a corpus from a different world") {
  const Corpus corpus = tiny_corpus(69, 2);
  WorldConfig other_world = dimbert::testing::tiny_world();
  other_world.num_classes = 3;  // different vocabulary
  const Corpus other = generate_corpus(70, other_world);

  Model model = Model::init(tiny_model_config(corpus), corpus.vocab);
  FinetuneCaptionConfig config;
  config.epochs = 1;
  try {
    finetune_caption(model, other, config);
    FAIL("accepted a mismatched vocabulary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::fingerprint);
  }
}

TEST_CASE("training configs validate their bounds") {
  PretrainConfig p;
  p.batch_size = 0;
  CHECK_THROWS_AS(p.validate(), Error);

  FinetuneCaptionConfig c;
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), Error);

  AdamConfig a;
  a.lr = 0.0;
  CHECK_THROWS_AS(a.validate(), Error);
  a = AdamConfig{};
  a.beta1 = 1.0;
  CHECK_THROWS_AS(a.validate(), Error);
}
