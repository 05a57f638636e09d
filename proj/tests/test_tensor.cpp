#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dimbert/rng.hpp"
#include "dimbert/tensor.hpp"
#include "test_support.hpp"

using namespace dimbert;
using dimbert::testing::fd_check;
using dimbert::testing::FdResult;

namespace {

struct PrecisionRestore {
  Precision saved = precision_mode();
  ~PrecisionRestore() { set_precision_mode(saved); }
};

Tensor leaf(const Shape& shape, std::vector<double> values) {
  Tensor t = Tensor::from(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("factories produce the requested shapes and values") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  for (double v : z.values()) CHECK(v == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (double v : f.values()) CHECK(v == 2.5);

  CHECK(Tensor::scalar(7.0).item() == 7.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), Error);

  Rng rng(3);
  Tensor r = Tensor::randn({64, 4}, rng, 0.5);
  double mean = 0;
  for (double v : r.values()) mean += v;
  mean /= static_cast<double>(r.numel());
  CHECK(std::fabs(mean) < 0.2);
}

TEST_CASE("elementwise arithmetic and hand-checked matmul") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const Tensor s = add(a, b);
  CHECK(s.at(0, 0) == 6.0);
  CHECK(s.at(1, 1) == 12.0);
  CHECK(sub(b, a).at(0, 1) == 4.0);
  CHECK(mul(a, b).at(1, 0) == 21.0);
  CHECK(scale(a, -2.0).at(0, 1) == -4.0);

  const Tensor m = matmul(a, b);
  CHECK(m.at(0, 0) == 19.0);
  CHECK(m.at(0, 1) == 22.0);
  CHECK(m.at(1, 0) == 43.0);
  CHECK(m.at(1, 1) == 50.0);

  // matmul_nt(a, b) multiplies by the transpose of b.
  Tensor bt = Tensor::from({2, 2}, {5, 7, 6, 8});
  const Tensor mnt = matmul_nt(a, bt);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(mnt.at(i, j) == m.at(i, j));

  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), Error);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), Error);
}

TEST_CASE("softmax rows are simplexes and shift-invariant") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 1});
  const Tensor p = softmax(x, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 3; ++j) row += p.at(i, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Both rows are shifts of (1,2,3), so the distributions match.
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(p.at(0, j) == doctest::Approx(p.at(1, j)).epsilon(1e-12));

  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  CHECK(p.at(0, 2) == doctest::Approx(e3 / (e1 + e2 + e3)).epsilon(1e-12));
}

TEST_CASE("layer_norm standardizes the last axis") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, -5, 0, 5, 10});
  const Tensor y = layer_norm(x, gain, bias);
  for (std::size_t i = 0; i < 2; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 4; ++j) m += y.at(i, j);
    m /= 4;
    for (std::size_t j = 0; j < 4; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
    v /= 4;
    CHECK(std::fabs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("gelu matches the exact Gaussian cdf form") {
  Tensor x = Tensor::from({3}, {-1.0, 0.0, 1.0});
  const Tensor y = gelu(x);
  CHECK(y.at(1) == 0.0);
  const double expect = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(y.at(2) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(y.at(0) == doctest::Approx(-(1.0 - expect)).epsilon(1e-12));
}

TEST_CASE("cross entropy hand values") {
  Tensor logits = Tensor::from({2}, {0.0, 0.0});
  CHECK(cross_entropy(logits, 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor rows = Tensor::from({2, 2}, {0, 0, 0, 0});
  CHECK(cross_entropy_rows(rows, {0, 1}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Zero raw scores: every candidate sits at sigmoid 0.5, so the summed
  // binary cross-entropy is one ln 2 per candidate.
  Tensor scores = Tensor::from({4, 1}, {0, 0, 0, 0});
  CHECK(binary_cross_entropy_logits(scores, 2).item() ==
        doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(logits, 5), Error);
  CHECK_THROWS_AS(cross_entropy_rows(rows, {0}), Error);
}

TEST_CASE("gradients match central finite differences per op") {
  Rng rng(17);

  SUBCASE("matmul chain with bias and gelu") {
    Tensor a = Tensor::randn({3, 4}, rng, 0.7);
    a.set_requires_grad(true);
    Tensor b = Tensor::randn({4, 5}, rng, 0.7);
    b.set_requires_grad(true);
    Tensor bias = Tensor::randn({5}, rng, 0.5);
    bias.set_requires_grad(true);
    auto loss = [&] { return mean(gelu(add_bias(matmul(a, b), bias))); };
    const FdResult r = fd_check({{"a", a}, {"b", b}, {"bias", bias}}, loss);
    CAPTURE(r.worst);
    CHECK(r.max_rel < 1e-6);
    CHECK(r.checked == 3 * 4 + 4 * 5 + 5);
  }

  SUBCASE("softmax cross entropy") {
    Tensor x = Tensor::randn({4, 6}, rng, 1.0);
    x.set_requires_grad(true);
    auto loss = [&] { return cross_entropy_rows(scale(x, 1.7), {1, 0, 5, 2}); };
    const FdResult r = fd_check({{"x", x}}, loss);
    CHECK(r.max_rel < 1e-6);
  }

  SUBCASE("layer norm") {
    Tensor x = Tensor::randn({3, 6}, rng, 1.0);
    x.set_requires_grad(true);
    Tensor gain = Tensor::randn({6}, rng, 0.3);
    gain.set_requires_grad(true);
    Tensor bias = Tensor::randn({6}, rng, 0.3);
    bias.set_requires_grad(true);
    auto loss = [&] { return mean(mul(layer_norm(x, gain, bias), layer_norm(x, gain, bias))); };
    const FdResult r = fd_check({{"x", x}, {"gain", gain}, {"bias", bias}}, loss, 1e-5);
    CAPTURE(r.worst);
    CHECK(r.max_rel < 1e-5);
  }

  SUBCASE("softmax, slice, concat, gather with duplicate rows") {
    Tensor x = Tensor::randn({4, 6}, rng, 0.8);
    x.set_requires_grad(true);
    auto loss = [&] {
      Tensor p = softmax(x, 1);
      Tensor left = slice_cols(p, 0, 3);
      Tensor right = slice_cols(p, 3, 3);
      Tensor joined = concat({left, right}, 1);
      // Row 2 gathered twice: its gradient must accumulate.
      Tensor picked = gather_rows(joined, {2, 0, 2});
      return sum(mul(picked, picked));
    };
    const FdResult r = fd_check({{"x", x}}, loss);
    CHECK(r.max_rel < 1e-6);
  }

  SUBCASE("scalar gate and binary cross entropy") {
    Tensor s = Tensor::randn({5, 1}, rng, 1.0);
    s.set_requires_grad(true);
    Tensor gate = Tensor::scalar(0.7);
    gate.set_requires_grad(true);
    auto loss = [&] { return binary_cross_entropy_logits(scale_by(s, gate), 3); };
    const FdResult r = fd_check({{"s", s}, {"gate", gate}}, loss);
    CHECK(r.max_rel < 1e-6);
  }
}

TEST_CASE("backward contract") {
  SUBCASE("repeated backward without clearing is rejected") {
    Tensor x = leaf({2}, {1, 2});
    Tensor loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad_valid());
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS(backward(loss), Error);
    x.clear_grad();
  }

  SUBCASE("non-scalar loss is rejected") {
    Tensor x = leaf({2}, {1, 2});
    CHECK_THROWS_AS(backward(mul(x, x)), Error);
  }

  SUBCASE("loss with no trainable leaves is rejected") {
    Tensor x = Tensor::from({2}, {1, 2});
    CHECK_THROWS_AS(backward(sum(x)), Error);
  }

  SUBCASE("mutating a consumed node is rejected") {
    Tensor x = leaf({2}, {1, 2});
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(y.values_mut(), Error);
    // The leaf stays mutable: optimizers update parameters in place.
    CHECK(x.values_mut().size() == 2);
  }
}

TEST_CASE("no-grad scope skips graph recording") {
  Tensor x = leaf({2}, {3, 4});
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK(y.at(0) == 9.0);
  CHECK_THROWS_AS(backward(sum(y)), Error);
}

TEST_CASE("non-finite op outputs are rejected") {
  Tensor big = Tensor::from({1}, {1e308});
  CHECK_THROWS_AS(mul(big, big), Error);
}

TEST_CASE("single precision mode rounds op outputs through float") {
  PrecisionRestore restore;
  Tensor a = Tensor::scalar(1.0);
  Tensor b = Tensor::scalar(1e-9);

  set_precision_mode(Precision::Single);
  CHECK(add(a, b).item() == 1.0);  // absorbed at float precision

  set_precision_mode(Precision::Double);
  CHECK(add(a, b).item() == 1.0 + 1e-9);
}

TEST_CASE("dropout is identity at rate zero and rescales survivors") {
  Rng rng(9);
  Tensor x = leaf({1000}, std::vector<double>(1000, 1.0));
  const Tensor kept = dropout(x, 0.0, rng);
  for (double v : kept.values()) CHECK(v == 1.0);

  const Tensor half = dropout(x, 0.5, rng);
  int zeros = 0;
  for (double v : half.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(2.0));  // inverse-scaled survivor
    }
  }
  CHECK(zeros > 350);
  CHECK(zeros < 650);
}

TEST_CASE("mean and sum reduce correctly") {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(sum(x).item() == 10.0);
  CHECK(mean(x).item() == 2.5);
}
