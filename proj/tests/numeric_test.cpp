#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace hicl;
using hicl::testing::random_vector;

namespace {

TwoLayerNet identity_net(std::size_t n) {
  TwoLayerNet net;
  net.w1 = Matrix(n, n);
  net.w2 = Matrix(n, n);
  net.b1 = Vector(n, 0.0);
  net.b2 = Vector(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    net.w1(i, i) = 1.0;
    net.w2(i, i) = 1.0;
  }
  return net;
}

// Straight-line re-implementation of the two matrix products.
Vector forward_oracle(const TwoLayerNet& net, const Vector& x) {
  Vector h(net.hidden_dim(), 0.0);
  for (std::size_t r = 0; r < net.hidden_dim(); ++r) {
    double s = net.b1[r];
    for (std::size_t c = 0; c < net.in_dim(); ++c) s += net.w1(r, c) * x[c];
    h[r] = std::max(0.0, s);
  }
  Vector out(net.out_dim(), 0.0);
  for (std::size_t r = 0; r < net.out_dim(); ++r) {
    double s = net.b2[r];
    for (std::size_t c = 0; c < net.hidden_dim(); ++c) s += net.w2(r, c) * h[c];
    out[r] = s;
  }
  return out;
}

std::vector<Vector*> param_blocks(TwoLayerNet& net) {
  return {&net.w1.data, &net.b1, &net.w2.data, &net.b2};
}

Vector flatten_params(TwoLayerNet& net) {
  Vector flat;
  for (Vector* block : param_blocks(net)) flat.insert(flat.end(), block->begin(), block->end());
  return flat;
}

void unflatten_params(TwoLayerNet& net, const Vector& flat) {
  std::size_t pos = 0;
  for (Vector* block : param_blocks(net)) {
    std::copy(flat.begin() + pos, flat.begin() + pos + block->size(), block->begin());
    pos += block->size();
  }
}

// Random net/input pair whose hidden preactivations stay away from the
// rectifier kink, so central differences are valid.
std::pair<TwoLayerNet, Vector> smooth_config(Rng& rng, std::size_t in, std::size_t hidden,
                                             std::size_t out) {
  for (;;) {
    TwoLayerNet net = TwoLayerNet::init(in, hidden, out, rng);
    for (double& b : net.b1) b = rng.uniform(-0.5, 0.5);
    for (double& b : net.b2) b = rng.uniform(-0.5, 0.5);
    Vector x = random_vector(rng, in);
    LayerCache cache;
    net.forward(x, &cache);
    bool near_kink = false;
    for (double h : cache.h_pre) near_kink |= std::abs(h) < 1e-3;
    if (!near_kink) return {std::move(net), std::move(x)};
  }
}

}  // namespace

TEST_CASE("forward of an all-zero net is zero") {
  TwoLayerNet net;
  net.w1 = Matrix(3, 2);
  net.b1 = Vector(3, 0.0);
  net.w2 = Matrix(4, 3);
  net.b2 = Vector(4, 0.0);
  CHECK(net.forward({1.0, -2.0}) == Vector(4, 0.0));
}

TEST_CASE("identity-shaped net passes nonnegative input through") {
  TwoLayerNet net = identity_net(3);
  Vector x{0.5, 0.0, 2.0};
  CHECK(net.forward(x) == x);
}

TEST_CASE("forward matches an independent re-implementation") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    TwoLayerNet net = TwoLayerNet::init(5, 7, 3, rng);
    for (double& b : net.b1) b = rng.uniform(-1, 1);
    for (double& b : net.b2) b = rng.uniform(-1, 1);
    Vector x = random_vector(rng, 5);
    Vector got = net.forward(x);
    Vector want = forward_oracle(net, x);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == Catch::Approx(want[i]).margin(1e-12));
  }
}

TEST_CASE("forward rejects dimension mismatches") {
  Rng rng(1);
  TwoLayerNet net = TwoLayerNet::init(4, 3, 2, rng);
  CHECK_THROWS_AS(net.forward(Vector(5, 0.0)), DataError);
}

TEST_CASE("backward with zero upstream gradient yields zero gradients") {
  Rng rng(2);
  TwoLayerNet net = TwoLayerNet::init(3, 4, 2, rng);
  LayerCache cache;
  net.forward(random_vector(rng, 3), &cache);
  auto grads = TwoLayerNet::Grads::zeros_like(net);
  Vector dx = net.backward(cache, Vector(2, 0.0), grads);
  CHECK(dx == Vector(3, 0.0));
  CHECK(grads.w1.data == Vector(12, 0.0));
  CHECK(grads.w2.data == Vector(8, 0.0));
}

TEST_CASE("backward matches the hand-differentiated 1-d closed form") {
  // out = w2 * relu(w1*x + b1) + b2, all scalars, in the active region:
  // d out / d w2 = h, d/db2 = 1, d/dw1 = w2*x, d/db1 = w2, d/dx = w2*w1
  TwoLayerNet net;
  net.w1 = Matrix(1, 1);
  net.w1(0, 0) = 1.5;
  net.b1 = {0.25};
  net.w2 = Matrix(1, 1);
  net.w2(0, 0) = -2.0;
  net.b2 = {0.5};
  Vector x{0.75};

  LayerCache cache;
  net.forward(x, &cache);
  double h = std::max(0.0, 1.5 * 0.75 + 0.25);
  auto grads = TwoLayerNet::Grads::zeros_like(net);
  Vector dx = net.backward(cache, {1.0}, grads);

  CHECK(grads.w2(0, 0) == Catch::Approx(h));
  CHECK(grads.b2[0] == Catch::Approx(1.0));
  CHECK(grads.w1(0, 0) == Catch::Approx(-2.0 * 0.75));
  CHECK(grads.b1[0] == Catch::Approx(-2.0));
  CHECK(dx[0] == Catch::Approx(-2.0 * 1.5));
}

TEST_CASE("backward matches central finite differences on random configs") {
  Rng rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto [net, x] = smooth_config(rng, 4, 5, 3);
    Vector probe = random_vector(rng, 3);

    // scalar loss: probe . forward(x)
    LossFn loss_fn = [&net, &x, &probe](const Vector& theta) {
      TwoLayerNet local = net;
      unflatten_params(local, theta);
      LayerCache cache;
      Vector out = local.forward(x, &cache);
      auto grads = TwoLayerNet::Grads::zeros_like(local);
      local.backward(cache, probe, grads);
      Vector flat_grad;
      flat_grad.insert(flat_grad.end(), grads.w1.data.begin(), grads.w1.data.end());
      flat_grad.insert(flat_grad.end(), grads.b1.begin(), grads.b1.end());
      flat_grad.insert(flat_grad.end(), grads.w2.data.begin(), grads.w2.data.end());
      flat_grad.insert(flat_grad.end(), grads.b2.begin(), grads.b2.end());
      return std::make_pair(dot(probe, out), flat_grad);
    };

    double err = grad_check(loss_fn, flatten_params(net), 1e-5);
    worst = std::max(worst, err);
  }
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax basics") {
  SECTION("uniform logits give 1/n") {
    Vector p = softmax(Vector(5, 3.0));
    for (double v : p) CHECK(v == Catch::Approx(0.2));
  }
  SECTION("closed form for [0, ln 3]") {
    Vector p = softmax({0.0, std::log(3.0)});
    CHECK(p[0] == Catch::Approx(0.25));
    CHECK(p[1] == Catch::Approx(0.75));
  }
  SECTION("output sums to one") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      Vector p = softmax(random_vector(rng, 1 + rng.uniform_index(16), -30, 30));
      double sum = 0.0;
      for (double v : p) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax is bit-identical under logit shifts") {
  // logits on a dyadic grid and power-of-two shifts add exactly, so the
  // max-subtracted exponents are bitwise equal
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 2 + rng.uniform_index(6);
    Vector logits(n);
    for (double& v : logits)
      v = static_cast<double>(static_cast<int>(rng.uniform_index(1025)) - 512) / 64.0;
    double shift = static_cast<double>(1u << rng.uniform_index(16));
    if (rng.bernoulli(0.5)) shift = -shift;
    Vector shifted = logits;
    for (double& v : shifted) v += shift;
    CHECK(softmax(logits) == softmax(shifted));
  }
}

TEST_CASE("sgd_step follows the classical momentum recurrence") {
  SECTION("zero gradient and zero momentum leave parameters unchanged") {
    OptimState st;
    st.learning_rate = 0.1;
    Vector p{1.0, -2.0};
    sgd_step(p, {0.0, 0.0}, st, "p");
    CHECK(p == Vector{1.0, -2.0});
  }
  SECTION("first step is p - lr*g") {
    OptimState st;
    st.learning_rate = 0.5;
    Vector p{1.0};
    sgd_step(p, {0.2}, st, "p");
    CHECK(p[0] == Catch::Approx(1.0 - 0.5 * 0.2));
  }
  SECTION("two steps with constant gradient reach p - lr*g*(1 + 1.9)") {
    // unrolled by hand: v1 = g, v2 = 0.9 g + g = 1.9 g
    OptimState st;
    st.learning_rate = 0.5;
    Vector p{1.0};
    sgd_step(p, {0.2}, st, "p");
    sgd_step(p, {0.2}, st, "p");
    CHECK(p[0] == Catch::Approx(1.0 - 0.5 * 0.2 * (1.0 + 1.9)));
  }
  SECTION("lr = 0 is the identity on parameters") {
    OptimState st;
    st.learning_rate = 0.0;
    Rng rng(3);
    Vector p = random_vector(rng, 8);
    Vector orig = p;
    for (int i = 0; i < 5; ++i) sgd_step(p, random_vector(rng, 8), st, "p");
    CHECK(p == orig);
  }
}

TEST_CASE("grad_check validates analytic gradients") {
  SECTION("quadratic loss is exact up to roundoff") {
    LossFn quad = [](const Vector& x) {
      double v = 0.0;
      Vector g(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        v += 0.5 * x[i] * x[i];
        g[i] = x[i];
      }
      return std::make_pair(v, g);
    };
    Rng rng(8);
    CHECK(grad_check(quad, random_vector(rng, 6), 1e-5) < 1e-8);
  }

  SECTION("softmax cross entropy on random logits") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      std::size_t n = 3 + rng.uniform_index(5);
      std::size_t target = rng.uniform_index(n);
      LossFn ce = [target](const Vector& logits) { return cross_entropy_from_logits(logits, target); };
      CHECK(grad_check(ce, random_vector(rng, n, -2, 2), 1e-5) < 1e-4);
    }
  }

  SECTION("a non-deterministic loss is rejected") {
    int calls = 0;
    LossFn flaky = [&calls](const Vector& x) {
      return std::make_pair(static_cast<double>(++calls) + x[0], Vector(x.size(), 1.0));
    };
    CHECK_THROWS_AS(grad_check(flaky, {0.0}, 1e-5), NumericError);
  }

  SECTION("tolerance breach throws when requested") {
    LossFn wrong = [](const Vector& x) {
      return std::make_pair(x[0] * x[0], Vector{0.0});  // gradient deliberately wrong
    };
    CHECK_THROWS_AS(grad_check(wrong, {1.0}, 1e-5, 1e-6), NumericError);
  }
}
