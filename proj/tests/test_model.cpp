#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "xrisk/model.hpp"

using namespace xrisk;

namespace {

ScoreModelSpec linear_spec(int d, int out = 1, bool norm = false) {
  ScoreModelSpec s;
  s.kind = ModelKind::Linear;
  s.input_dim = d;
  s.output_dim = out;
  s.normalize_output = norm;
  return s;
}

ScoreModelSpec mlp_spec(int d, std::vector<int> hidden, int out = 1,
                        bool norm = false, Activation act = Activation::Tanh) {
  ScoreModelSpec s;
  s.kind = ModelKind::Mlp;
  s.input_dim = d;
  s.hidden_dims = std::move(hidden);
  s.output_dim = out;
  s.normalize_output = norm;
  s.activation = act;
  return s;
}

}  // namespace

TEST_CASE("linear init is zero and deterministic") {
  const ScoreModel m = init_model(linear_spec(3), 7);
  CHECK(m.params == Vec{0.0, 0.0, 0.0});
  const ScoreModel a = init_model(mlp_spec(4, {4}), 1);
  const ScoreModel b = init_model(mlp_spec(4, {4}), 1);
  const ScoreModel c = init_model(mlp_spec(4, {4}), 2);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS_AS(init_model(linear_spec(0), 0), std::invalid_argument);
  CHECK_THROWS_AS(init_model(mlp_spec(3, {}), 0), std::invalid_argument);
  CHECK_THROWS_AS(init_model(mlp_spec(3, {4, 0}), 0), std::invalid_argument);
  CHECK_THROWS_AS(init_model(mlp_spec(3, {4, 4, 4}), 0), std::invalid_argument);
  CHECK_THROWS_AS(init_model(linear_spec(3, 1, true), 0), std::invalid_argument);
}

TEST_CASE("linear score is the dot product") {
  ScoreModel m = init_model(linear_spec(2), 0);
  m.params = {1.0, 2.0};
  CHECK(score_scalar(m, Vec{3.0, 1.0}) == doctest::Approx(5.0));
  m.params = {0.0, 0.0};
  CHECK(score_scalar(m, Vec{4.0, -2.0}) == 0.0);
  CHECK_THROWS_AS(score_scalar(m, Vec{1.0}), std::invalid_argument);
}

TEST_CASE("small mlp matches hand evaluation") {
  // one hidden unit, tanh: h = w2 * tanh(w1 . x + b1) + b2
  ScoreModel m = init_model(mlp_spec(2, {1}), 0);
  m.params = {0.5, -0.25, 0.1,  // layer 0: W (1x2), b
              2.0, -0.3};       // layer 1: W (1x1), b
  const double hidden = std::tanh(0.5 * 1.0 + (-0.25) * 0.0 + 0.1);
  CHECK(score_scalar(m, Vec{1.0, 0.0}) ==
        doctest::Approx(2.0 * hidden - 0.3).epsilon(1e-12));
}

TEST_CASE("vjp of a linear model returns the input") {
  ScoreModel m = init_model(linear_spec(3), 0);
  m.params = {0.3, -0.2, 0.9};
  const Vec x{1.5, -2.0, 0.25};
  CHECK(vjp(m, x, Vec{1.0}) == x);
  CHECK(vjp(m, x, Vec{0.0}) == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("vjp matches finite differences on random models") {
  const std::vector<ScoreModelSpec> specs = {
      linear_spec(4),
      linear_spec(3, 3, true),
      mlp_spec(3, {5}),
      mlp_spec(4, {4, 3}),
      mlp_spec(3, {4}, 3, true),
      mlp_spec(2, {3, 2}, 2, true, Activation::Softplus),
  };
  Rng rng(41);
  int checked = 0;
  for (const auto& spec : specs) {
    for (int rep = 0; rep < 17; ++rep) {
      const ScoreModel m = oracles::random_model(spec, 100 * rep + checked);
      const Vec x = oracles::random_vec(spec.input_dim, rng);
      Vec upstream = oracles::random_vec(spec.output_dim, rng);
      const Vec analytic = vjp(m, x, upstream);
      ModelBundle bundle{{m}};
      const Vec fd = oracles::fd_model_gradient(
          [&](const ModelBundle& b) {
            const Vec out = score(b.models[0], x);
            return dot(out, upstream);
          },
          bundle, 1e-5);
      CHECK(oracles::rel_err(analytic, fd) <= 1e-6);
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("normalized outputs have unit norm") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const ScoreModel m = oracles::random_model(mlp_spec(3, {4}, 3, true), rep);
    const Vec out = score(m, oracles::random_vec(3, rng));
    CHECK(std::abs(norm2(out) - 1.0) <= 1e-12);
  }
}

TEST_CASE("score and vjp are pure") {
  const ScoreModel m = oracles::random_model(mlp_spec(3, {4}, 2, true), 9);
  const Vec x{0.2, -0.4, 1.1};
  const Vec u{0.3, -0.8};
  CHECK(score(m, x) == score(m, x));
  CHECK(vjp(m, x, u) == vjp(m, x, u));
}

TEST_CASE("apply_update arithmetic") {
  ScoreModel m = init_model(linear_spec(1), 0);
  m.params = {1.0};
  CHECK(apply_update(m, Vec{2.0}, 0.5).params == Vec{0.0});
  CHECK(apply_update(m, Vec{0.0}, 0.3).params == m.params);
  CHECK_THROWS_AS(apply_update(m, Vec{1.0, 2.0}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(apply_update(m, Vec{1.0}, std::nan("")), std::invalid_argument);
  // two equal half steps match one combined step
  const ScoreModel two = apply_update(apply_update(m, Vec{0.7}, 0.2), Vec{0.7}, 0.2);
  const ScoreModel one = apply_update(m, Vec{0.7}, 0.4);
  CHECK(two.params[0] == doctest::Approx(one.params[0]).epsilon(1e-15));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const ScoreModel m = oracles::random_model(mlp_spec(3, {4, 2}, 2, true), 77);
  const auto path = std::filesystem::temp_directory_path() / "xrisk_model_test.txt";
  save_model(m, path.string());
  const ScoreModel loaded = load_model(path.string());
  CHECK(loaded.params == m.params);
  CHECK(loaded.spec.hidden_dims == m.spec.hidden_dims);
  CHECK(loaded.spec.normalize_output == m.spec.normalize_output);
  std::filesystem::remove(path);
}
