#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "ipfed/checkpoint.hpp"
#include "ipfed/model.hpp"
#include "ipfed/rng.hpp"

using namespace ipfed;

namespace {

std::vector<double> fd_theta_gradient(
    const std::function<double(const ModelParams&)>& loss_of,
    const ModelParams& params, double h = 1e-6) {
  std::vector<double> g(params.values.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    ModelParams p = params, m = params;
    p.values[i] += h;
    m.values[i] -= h;
    g[i] = (loss_of(p) - loss_of(m)) / (2.0 * h);
  }
  return g;
}

double vec_rel_error(const std::vector<double>& a,
                     const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / scale;
}

std::vector<double> random_input(std::size_t d, CounterStream& s) {
  std::vector<double> x(d);
  for (double& v : x) v = s.next_normal();
  return x;
}

}  // namespace

TEST_CASE("forward output is unit normalized and deterministic") {
  const FeatureExtractor fx = make_extractor(8, {16, 16}, 6, 42);
  CounterStream s(5, StreamTag::Trials);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x = random_input(8, s);
    const EmbeddingVec f1 = forward(fx, x);
    const EmbeddingVec f2 = forward(fx, x);
    REQUIRE(std::abs(norm2(f1) - 1.0) <= 1e-9);
    REQUIRE(f1 == f2);
  }
}

TEST_CASE("zero-weight network with bias is a constant map") {
  FeatureExtractor fx;
  fx.params = make_params(4, {3}, 2);
  // layout: layer0 W(3x4)+b(3), layer1 W(2x3)+b(2)
  fx.params.values[12] = 0.5;              // b0[0]
  fx.params.values[12 + 3 + 6] = 0.3;      // b1[0]
  fx.params.values[12 + 3 + 6 + 1] = -0.4; // b1[1]
  const EmbeddingVec fa = forward(fx, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  const EmbeddingVec fb = forward(fx, std::vector<double>{-9.0, 0.0, 1.0, 7.0});
  REQUIRE(fa == fb);
  REQUIRE(std::abs(norm2(fa) - 1.0) <= 1e-12);
}

TEST_CASE("degenerate pre-normalization falls back to the first basis vector") {
  FeatureExtractor fx;
  fx.params = make_params(3, {}, 4);  // single all-zero linear layer
  const EmbeddingVec f = forward(fx, std::vector<double>{1.0, 2.0, 3.0});
  REQUIRE(f == EmbeddingVec{1.0, 0.0, 0.0, 0.0});
  REQUIRE(fx.norm_fallback_count == 1);
}

TEST_CASE("forward rejects shape mismatch") {
  const FeatureExtractor fx = make_extractor(8, {4}, 2, 1);
  REQUIRE_THROWS_AS(forward(fx, std::vector<double>(7, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("backward_positive is zero on the flat side") {
  const FeatureExtractor fx = make_extractor(6, {8}, 4, 3);
  CounterStream s(9, StreamTag::Trials);
  const std::vector<double> x = random_input(6, s);
  const EmbeddingVec f = forward(fx, x);
  const EmbeddingVec w = f;  // w.f = 1 > m
  const BackwardPositiveResult b =
      backward_positive(fx, x, w, PositiveLossParams{0.9});
  REQUIRE(b.loss == 0.0);
  for (double g : b.grad_theta) REQUIRE(g == 0.0);
  for (double g : b.grad_w) REQUIRE(g == 0.0);
}

TEST_CASE("backward_positive matches finite differences over all parameters") {
  CounterStream s(17, StreamTag::Trials);
  const PositiveLossParams p{0.9};
  int checked = 0;
  while (checked < 5) {
    const FeatureExtractor fx = make_extractor(5, {6, 5}, 4, s.next_u64());
    const std::vector<double> x = random_input(5, s);
    EmbeddingVec w(4);
    for (double& v : w) v = 0.6 * s.next_normal();
    const EmbeddingVec f = forward(fx, x);
    if (dot(w, f) > p.margin_m - 0.05) continue;  // want an active hinge
    ++checked;
    const BackwardPositiveResult b = backward_positive(fx, x, w, p);
    const auto fd = fd_theta_gradient(
        [&](const ModelParams& params) {
          const FeatureExtractor probe{params};
          return positive_loss(forward(probe, x), w, p);
        },
        fx.params);
    REQUIRE(vec_rel_error(b.grad_theta, fd) <= 1e-4);
  }
}

TEST_CASE("backward_positive grad_w agrees with the loss-level gradient") {
  CounterStream s(21, StreamTag::Trials);
  const FeatureExtractor fx = make_extractor(5, {6}, 4, 77);
  const std::vector<double> x = random_input(5, s);
  EmbeddingVec w(4);
  for (double& v : w) v = 0.3 * s.next_normal();
  const EmbeddingVec f = forward(fx, x);
  const BackwardPositiveResult b =
      backward_positive(fx, x, w, PositiveLossParams{0.9});
  const PositiveLossGrad g = positive_loss_grad(f, w, PositiveLossParams{0.9});
  for (std::size_t i = 0; i < w.size(); ++i) {
    REQUIRE(b.grad_w[i] == Approx(g.grad_w[i]).margin(1e-15));
  }
}

TEST_CASE("sgd_step spec points") {
  ModelParams p;
  p.layer_shapes = {{1, 1}};
  p.values = {1.0, 0.0};  // weight 1.0, bias 0.0
  SECTION("zero eta") {
    REQUIRE(sgd_step(p, std::vector<double>{0.5, 0.5}, 0.0).values == p.values);
  }
  SECTION("zero gradient") {
    REQUIRE(sgd_step(p, std::vector<double>{0.0, 0.0}, 0.1).values == p.values);
  }
  SECTION("scalar case") {
    const ModelParams q = sgd_step(p, std::vector<double>{0.5, 0.0}, 0.1);
    REQUIRE(q.values[0] == Approx(0.95).margin(1e-15));
  }
  SECTION("size mismatch") {
    REQUIRE_THROWS_AS(sgd_step(p, std::vector<double>{1.0}, 0.1),
                      std::invalid_argument);
  }
}

TEST_CASE("average_params spec points") {
  ModelParams a;
  a.layer_shapes = {{1, 1}};
  a.values = {0.0, 0.0};
  ModelParams b = a;
  b.values = {4.0, 0.0};

  SECTION("single client is unchanged") {
    const ModelParams avg = average_params({{a, 5.0}});
    REQUIRE(avg.values == a.values);
  }
  SECTION("opposing params cancel") {
    ModelParams neg = b;
    for (double& v : neg.values) v = -v;
    const ModelParams avg = average_params({{b, 2.0}, {neg, 2.0}});
    REQUIRE(avg.values[0] == 0.0);
  }
  SECTION("weighted mean 1:3 of 0 and 4 is 3") {
    const ModelParams avg = average_params({{a, 1.0}, {b, 3.0}});
    REQUIRE(avg.values[0] == Approx(3.0).margin(1e-15));
  }
  SECTION("errors") {
    REQUIRE_THROWS_AS(average_params({}), std::invalid_argument);
    REQUIRE_THROWS_AS(average_params({{a, 0.0}}), std::invalid_argument);
    ModelParams other;
    other.layer_shapes = {{2, 1}};
    other.values = {0.0, 0.0, 0.0};
    REQUIRE_THROWS_AS(average_params({{a, 1.0}, {other, 1.0}}),
                      std::invalid_argument);
  }
}

TEST_CASE("average_params is permutation tolerant") {
  CounterStream s(33, StreamTag::Trials);
  std::vector<std::pair<ModelParams, double>> list;
  for (int i = 0; i < 7; ++i) {
    ModelParams p = make_params(3, {4}, 2);
    for (double& v : p.values) v = s.next_normal();
    list.emplace_back(std::move(p), 1.0 + s.next_unit() * 10.0);
  }
  const ModelParams fwd = average_params(list);
  std::reverse(list.begin(), list.end());
  const ModelParams rev = average_params(list);
  for (std::size_t i = 0; i < fwd.values.size(); ++i) {
    REQUIRE(std::abs(fwd.values[i] - rev.values[i]) <= 1e-12);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  const FeatureExtractor fx = make_extractor(8, {16, 16}, 6, 99);
  ModelParams p = fx.params;
  p.version = 17;
  const auto path =
      std::filesystem::temp_directory_path() / "ipfed_ckpt_test.bin";
  save_checkpoint(path, p);
  const ModelParams loaded = load_checkpoint(path);
  REQUIRE(loaded.version == 17);
  REQUIRE(loaded.layer_shapes == p.layer_shapes);
  REQUIRE(loaded.values == p.values);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint reader rejects garbage") {
  const auto path =
      std::filesystem::temp_directory_path() / "ipfed_ckpt_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
  REQUIRE_THROWS_AS(load_checkpoint(path.string() + ".missing"),
                    std::runtime_error);
  std::filesystem::remove(path);
}
