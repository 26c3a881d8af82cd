#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "shape/nets.hpp"
#include "shape/rng.hpp"
#include "test_util.hpp"

using namespace shape;

TEST_CASE("mlp_forward basics") {
  // zero weights -> bias pass-through
  Rng rng(1);
  MlpParams mlp = make_mlp({3, 3}, rng);
  for (auto& v : mlp.layers[0].weight.values) v = 0.0;
  mlp.layers[0].bias = Tensor::vector({1.0, -2.0, 0.5});
  Tensor out = mlp_forward(mlp, Tensor::vector({9.0, 9.0, 9.0}));
  CHECK(out.values[0] == 1.0);
  CHECK(out.values[1] == -2.0);
  CHECK(out.values[2] == 0.5);

  // identity single layer
  MlpParams id = make_mlp({2, 2}, rng);
  id.layers[0].weight = Tensor::identity(2);
  id.layers[0].bias = Tensor::zeros({2});
  Tensor x = Tensor::vector({0.25, -0.75});
  Tensor y = mlp_forward(id, x);
  CHECK(y.values[0] == x.values[0]);
  CHECK(y.values[1] == x.values[1]);

  CHECK_THROWS_AS(mlp_forward(id, Tensor::vector({1.0})), ShapeMismatchError);
}

TEST_CASE("mlp_forward matches straight-line matrix arithmetic") {
  Rng rng(77);
  MlpParams mlp = make_mlp({3, 4, 2}, rng);
  std::vector<double> x = {0.2, -1.1, 0.6};

  // independent straight-line evaluation
  std::vector<double> h(4, 0.0);
  for (int r = 0; r < 4; ++r) {
    double acc = mlp.layers[0].bias.values[static_cast<size_t>(r)];
    for (int c = 0; c < 3; ++c) acc += mlp.layers[0].weight.values[static_cast<size_t>(r) * 3 + c] * x[static_cast<size_t>(c)];
    h[static_cast<size_t>(r)] = std::tanh(acc);
  }
  std::vector<double> want(2, 0.0);
  for (int r = 0; r < 2; ++r) {
    double acc = mlp.layers[1].bias.values[static_cast<size_t>(r)];
    for (int c = 0; c < 4; ++c) acc += mlp.layers[1].weight.values[static_cast<size_t>(r) * 4 + c] * h[static_cast<size_t>(c)];
    want[static_cast<size_t>(r)] = acc;
  }

  Tensor got = mlp_forward(mlp, Tensor::vector(x));
  CHECK(got.values[0] == doctest::Approx(want[0]).epsilon(1e-14));
  CHECK(got.values[1] == doctest::Approx(want[1]).epsilon(1e-14));
}

TEST_CASE("adam zero gradient leaves params, advances step") {
  Tensor p = Tensor::vector({1.0, -2.0});
  AdamState st;
  adam_param_update(p, Tensor::zeros({2}), st, 0.1, 0.9, 0.999, 1e-8);
  CHECK(p.values[0] == 1.0);
  CHECK(p.values[1] == -2.0);
  CHECK(st.step == 1);
}

TEST_CASE("adam first step matches the bias-corrected formula") {
  Tensor p = Tensor::vector({0.0});
  AdamState st;
  adam_param_update(p, Tensor::vector({2.0}), st, 0.1, 0.9, 0.999, 1e-8);
  // k=1: mhat=g, vhat=g^2 -> delta = -lr * g/(|g|+eps)
  const double want = -0.1 * 2.0 / (2.0 + 1e-8);
  CHECK(p.values[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("adam ten steps on f(w)=w^2 matches a hand-stepped reference") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor p = Tensor::vector({1.0});
  AdamState st;

  // independent straight-line trajectory
  double w = 1.0, m = 0.0, v = 0.0;
  std::vector<double> expected;
  for (int k = 1; k <= 10; ++k) {
    const double g = 2.0 * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, k));
    const double vhat = v / (1 - std::pow(b2, k));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    expected.push_back(w);
  }

  for (int k = 0; k < 10; ++k) {
    adam_param_update(p, Tensor::vector({2.0 * p.values[0]}), st, lr, b1, b2, eps);
    CHECK(std::abs(p.values[0] - expected[static_cast<size_t>(k)]) <= 1e-10);
  }

  CHECK_THROWS_AS(adam_param_update(p, Tensor::vector({std::nan("")}), st, lr, b1, b2, eps), NonFiniteError);
}

TEST_CASE("checkpoint round-trip is exact") {
  Rng rng(123);
  Checkpoint ck;
  Tensor t = Tensor::zeros({3, 4});
  for (auto& v : t.values) v = rng.normal() * std::pow(10.0, rng.uniform(-12, 12));
  t.values[0] = 1.0 / 3.0;
  t.values[1] = -0.0;
  ck.tensors["psi.trunk.W0"] = t;
  ck.tensors["phi.head.b"] = Tensor::vector({1e-300, 1e300, 0.1});

  const std::string text = checkpoint_to_string(ck);
  Checkpoint back = checkpoint_from_string(text);
  REQUIRE(back.tensors.size() == 2);
  for (const auto& [name, tensor] : ck.tensors) {
    const Tensor& got = back.tensors.at(name);
    REQUIRE(got.shape == tensor.shape);
    for (size_t i = 0; i < tensor.values.size(); ++i) CHECK(got.values[i] == tensor.values[i]);
  }

  const std::string path = (std::filesystem::temp_directory_path() / "shape_ck_test.txt").string();
  save_checkpoint(ck, path);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.tensors.at("psi.trunk.W0").values == ck.tensors.at("psi.trunk.W0").values);
  std::remove(path.c_str());

  CHECK_THROWS_AS(checkpoint_from_string("bogus"), IoError);
}
