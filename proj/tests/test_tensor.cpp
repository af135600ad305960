#include <doctest.h>

#include <cmath>

#include "firenet/error.hpp"
#include "firenet/gradcheck.hpp"
#include "firenet/layers.hpp"
#include "firenet/ops.hpp"
#include "test_helpers.hpp"

using namespace firenet;
using namespace firenet::testing;

TEST_CASE("tensor construction enforces shape invariants") {
  Tensor5 t(Shape(1, 2, 3, 4, 5));
  CHECK(t.data().size() == 120);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(Tensor5(Shape(1, 0, 1, 1, 1)), ShapeError);
  CHECK_THROWS_AS(Tensor5(Shape(1, 1, 2, 2, 2), std::vector<float>(7)), ShapeError);
}

TEST_CASE("elementwise examples") {
  SUBCASE("sigmoid midpoint") {
    CHECK(sigmoid(Tensor5::scalar(0.0f)).item() == 0.5f);
    CHECK(elementwise(ElementwiseOp::Sigmoid, Tensor5::scalar(0.0f)).item() == 0.5f);
  }
  SUBCASE("additive identity") {
    Rng rng(1);
    Tensor5 x = random_tensor(Shape(1, 2, 3, 3, 3), rng);
    CHECK(bitwise_equal(add(x, Tensor5::zeros(x.shape())), x));
  }
  SUBCASE("mul gradient matches central difference") {
    Tensor5 a = Tensor5::scalar(2.0f, true), b = Tensor5::scalar(3.0f, true);
    backward(mul(a, b));
    CHECK(a.grad()[0] == doctest::Approx(3.0f));
    CHECK(b.grad()[0] == doctest::Approx(2.0f));
    const double h = 1e-3 * std::max(1.0, 2.0);
    const double fd = ((2.0 + h) * 3.0 - (2.0 - h) * 3.0) / (2 * h);
    CHECK(std::fabs(a.grad()[0] - fd) / std::fabs(fd) < 1e-4);
  }
  SUBCASE("shape mismatch names both shapes") {
    Tensor5 a(Shape(1, 1, 2, 2, 2)), b(Shape(1, 1, 2, 2, 3));
    try {
      (void)add(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(1,1,2,2,2)") != std::string::npos);
      CHECK(msg.find("(1,1,2,2,3)") != std::string::npos);
    }
  }
  SUBCASE("scale accepts a scalar or a one-value tensor") {
    Tensor5 x = Tensor5::full(Shape(1, 1, 1, 1, 2), 2.0f);
    CHECK(elementwise(ElementwiseOp::Scale, x, 3.0f).data()[1] == 6.0f);
    CHECK(elementwise(ElementwiseOp::Scale, x, Tensor5::scalar(0.5f)).data()[0] == 1.0f);
  }
}

TEST_CASE("softmax over channels") {
  SUBCASE("uniform logits") {
    Tensor5 x = Tensor5::full(Shape(1, 4, 2, 2, 2), 0.7f);
    Tensor5 p = softmax_channels(x);
    for (float v : p.data()) CHECK(v == doctest::Approx(0.25f));
  }
  SUBCASE("large logits do not overflow") {
    Tensor5 x(Shape(1, 2, 1, 1, 1), std::vector<float>{1000.0f, 0.0f});
    auto p = softmax_channels(x);
    CHECK(p.data()[0] == doctest::Approx(1.0f));
    CHECK(p.data()[1] == doctest::Approx(0.0f));
    CHECK(std::isfinite(p.data()[1]));
  }
  SUBCASE("random logits sum to one per voxel") {
    Rng rng(3);
    Tensor5 x = random_tensor(Shape(2, 2, 3, 4, 5), rng, -5, 5);
    auto p = softmax_channels(x);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t d = 0; d < 3; ++d)
        for (int64_t h = 0; h < 4; ++h)
          for (int64_t w = 0; w < 5; ++w) {
            CHECK(std::fabs(p.at(n, 0, d, h, w) + p.at(n, 1, d, h, w) - 1.0f) < 1e-5f);
          }
  }
}

namespace {
// Naive loop reference: mean over voxels of -sum_c t log(p + eps).
double cross_entropy_oracle(const Tensor5& p, const Tensor5& t, double eps) {
  const auto& s = p.shape();
  double total = 0.0;
  for (int64_t n = 0; n < s.batch(); ++n)
    for (int64_t d = 0; d < s.depth(); ++d)
      for (int64_t h = 0; h < s.height(); ++h)
        for (int64_t w = 0; w < s.width(); ++w)
          for (int64_t c = 0; c < s.channels(); ++c)
            total -= t.at(n, c, d, h, w) * std::log(p.at(n, c, d, h, w) + eps);
  return total / static_cast<double>(s.batch() * s.voxels());
}
}  // namespace

TEST_CASE("cross entropy") {
  const Extent3 ext{2, 3, 2};
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
  Tensor5 target = one_hot(labels, ext, 4);
  SUBCASE("perfect prediction") {
    CHECK(cross_entropy(target, target, 1e-7f).item() <= 1e-6f);
  }
  SUBCASE("uniform prediction over four classes") {
    Tensor5 p = Tensor5::full(target.shape(), 0.25f);
    CHECK(cross_entropy(p, target).item() == doctest::Approx(std::log(4.0)).epsilon(1e-5));
  }
  SUBCASE("random case against loop oracle") {
    Rng rng(11);
    Tensor5 p = softmax_channels(random_tensor(target.shape(), rng, -3, 3));
    CHECK(std::fabs(cross_entropy(p, target).item() - cross_entropy_oracle(p, target, 1e-7)) <
          1e-5);
    CHECK(cross_entropy(p, target).item() >= 0.0f);
  }
  SUBCASE("non one-hot target rejected") {
    Tensor5 bad = Tensor5::full(target.shape(), 0.5f);
    CHECK_THROWS_AS(cross_entropy(target, bad), Error);
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives all-ones") {
    Tensor5 x(Shape(1, 1, 2, 2, 2), 0.3f, true);
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("fan-out accumulates") {
    Tensor5 x = Tensor5::scalar(1.5f, true);
    backward(add(x, x));
    CHECK(x.grad()[0] == 2.0f);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor5 x(Shape(1, 1, 1, 1, 2), 0.0f, true);
    CHECK_THROWS_AS(backward(x), ShapeError);
  }
  SUBCASE("tape visits every node once") {
    Tensor5 x = Tensor5::scalar(1.0f, true);
    Tensor5 y = sigmoid(x);
    Tensor5 z = add(mul(y, y), y);  // y reached three times
    auto tape = GradTape::record(z);
    CHECK(tape.size() == 4);  // x, y, mul, add
  }
  SUBCASE("leaves that do not require grad receive nothing") {
    Tensor5 a = Tensor5::scalar(2.0f, true), b = Tensor5::scalar(3.0f, false);
    backward(mul(a, b));
    CHECK_FALSE(b.has_grad());
  }
}

TEST_CASE("tape is linear: backward(L1 + L2) equals backward(L1) + backward(L2)") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor5 x = random_tensor(Shape(1, 2, 3, 3, 2), rng, -1, 1, true);
    auto l1 = [&] { return sum(mul(sigmoid(x), x)); };
    auto l2 = [&] { return mean(exp(scale(x, 0.5f))); };
    backward(add(l1(), l2()));
    std::vector<float> joint(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(l1());
    backward(l2());
    for (std::size_t i = 0; i < joint.size(); ++i) {
      CHECK(joint[i] == doctest::Approx(x.grad()[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("operations never mutate their inputs") {
  Rng rng(9);
  Tensor5 a = random_tensor(Shape(1, 3, 4, 4, 4), rng, 0.2f, 2.0f, true);
  Tensor5 b = random_tensor(Shape(1, 3, 4, 4, 4), rng, 0.2f, 2.0f, true);
  const uint64_t ha = hash_values(a.data()), hb = hash_values(b.data());
  Tensor5 w = random_tensor(Shape(2, 3, 3, 3, 3), rng);
  Tensor5 gam = Tensor5::full(Shape(1, 3, 1, 1, 1), 1.0f), bet = Tensor5::zeros(gam.shape());
  const uint64_t hw = hash_values(w.data());
  std::vector<Tensor5> outs{add(a, b), sub(a, b), mul(a, b), scale(a, 2), sigmoid(a), relu(a),
                            exp(a), log(a), softmax_channels(a), upsample_trilinear(a, 2),
                            maxpool3d(a, {2}), instance_norm(a, gam, bet),
                            conv3d(a, Conv3dSpec::same(3, 2), w)};
  Tensor5 loss = Tensor5::scalar(0.0f);
  for (auto& o : outs) loss = add(loss, sum(o));
  backward(loss);
  CHECK(hash_values(a.data()) == ha);
  CHECK(hash_values(b.data()) == hb);
  CHECK(hash_values(w.data()) == hw);
}

TEST_CASE("gradcheck examples") {
  Rng rng(21);
  SUBCASE("identity is exact") {
    Tensor5 x = random_tensor(Shape(1, 1, 2, 3, 2), rng);
    GradcheckOptions two_point;
    two_point.stencil = Stencil::TwoPoint;
    auto r = gradcheck([](const Tensor5& t) { return t; }, x, 1e-3f, 0.0, two_point);
    CHECK(r.max_rel_error < 1e-12);
  }
  SUBCASE("sigmoid") {
    Tensor5 x = random_tensor(Shape(1, 2, 3, 3, 3), rng, -3, 3);
    auto r = gradcheck([](const Tensor5& t) { return sigmoid(t); }, x, 2e-2f, 1e-4);
    INFO(r.worst);
    CHECK(r.passed());
  }
  SUBCASE("conv3d with random kernel") {
    Tensor5 x = random_tensor(Shape(1, 2, 5, 5, 5), rng);
    Tensor5 w = random_tensor(Shape(3, 2, 3, 3, 3), rng);
    auto r = gradcheck([&](const Tensor5& t) { return conv3d(t, Conv3dSpec::same(2, 3), w); }, x,
                       1e-2f, 1e-2);
    INFO(r.worst);
    CHECK(r.passed());
  }
}

TEST_CASE("elementwise ops pass gradcheck over 20 random shapes") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s(1 + trial % 2, 1 + trial % 3, 1 + (trial * 7) % 4, 2 + trial % 3, 1 + trial % 5);
    Tensor5 other = random_tensor(s, rng, 0.5f, 1.5f);
    Tensor5 x = random_off_kink(s, rng);
    Tensor5 pos = random_tensor(s, rng, 0.5f, 2.0f);
    GradcheckOptions opts;
    opts.seed = static_cast<uint64_t>(trial);
    struct Case {
      const char* name;
      std::function<Tensor5(const Tensor5&)> f;
      const Tensor5* input;
      double tol;
      float h = 2e-2f;
    };
    const std::vector<Case> cases{
        {"add", [&](const Tensor5& t) { return add(t, other); }, &x, 1e-4},
        {"sub", [&](const Tensor5& t) { return sub(other, t); }, &x, 1e-4},
        {"mul", [&](const Tensor5& t) { return mul(t, other); }, &x, 1e-4},
        {"scale", [&](const Tensor5& t) { return scale(t, -1.7f); }, &x, 1e-4},
        {"sigmoid", [&](const Tensor5& t) { return sigmoid(t); }, &x, 1e-4},
        {"relu", [&](const Tensor5& t) { return relu(t); }, &x, 1e-4},
        {"exp", [&](const Tensor5& t) { return exp(t); }, &x, 1e-4},
        {"log", [&](const Tensor5& t) { return log(t); }, &pos, 1e-4},
        // Channel-coupled: the gradient is a difference of nearly equal terms, so
        // float rounding of the outputs limits it to composite-op accuracy.
        {"softmax", [&](const Tensor5& t) { return softmax_channels(t); }, &x, 1e-3, 5e-2f},
    };
    for (const auto& c : cases) {
      auto r = gradcheck(c.f, *c.input, c.h, c.tol, opts);
      INFO(std::string(c.name) << " trial " << trial << ": " << r.worst);
      CHECK(r.passed());
    }
  }
}

TEST_CASE("cross entropy gradient") {
  Rng rng(8);
  std::vector<int> labels(27);
  for (auto& l : labels) l = static_cast<int>(uniform01(rng) * 3);
  Tensor5 target = one_hot(labels, {3, 3, 3}, 3);
  Tensor5 logits = random_tensor(target.shape(), rng, -2, 2);
  auto r = gradcheck(
      [&](const Tensor5& t) { return cross_entropy(softmax_channels(t), target); }, logits, 5e-2f,
      1e-3);
  INFO(r.worst);
  CHECK(r.passed());
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor5 x = Tensor5::scalar(1.0f, true);
  Tensor5 y;
  {
    NoGradGuard guard;
    y = sigmoid(x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(sigmoid(x).requires_grad());
}

TEST_CASE("branch replay pins relu and pool decisions") {
  // relu(x) at x = 0.01: a 0.1 step straddles the kink.
  Tensor5 x(Shape(1, 1, 1, 1, 1), std::vector<float>{0.01f});
  auto f = [](const Tensor5& t) { return relu(t); };
  SUBCASE("live branches see the kink") {
    GradcheckOptions live;
    live.freeze_branches = false;
    live.stencil = Stencil::TwoPoint;
    auto r = gradcheck(f, x, 0.1f, 1e-4, live);
    CHECK(r.max_rel_error > 0.1);
  }
  SUBCASE("frozen branches recover the one-sided slope") {
    GradcheckOptions frozen;
    frozen.stencil = Stencil::TwoPoint;
    auto r = gradcheck(f, x, 0.1f, 1e-6, frozen);
    CHECK(r.passed());
    CHECK(r.kinks_straddled == 1);
  }
  SUBCASE("replay reuses masks and argmaxes") {
    Tensor5 a(Shape(1, 1, 2, 2, 2), std::vector<float>{1, -1, 2, -2, 3, -3, 4, -4});
    BranchRecord rec;
    {
      BranchTrace trace;
      (void)relu(a);
      (void)maxpool3d(a, PoolSpec{2});
      rec = trace.take();
    }
    REQUIRE(rec.masks.size() == 1);
    REQUIRE(rec.choices.size() == 1);
    CHECK(rec.choices[0][0] == 6);
    Tensor5 b = scale(a, -1.0f);
    BranchTrace replay(rec);
    Tensor5 y = relu(b);
    CHECK(y.data()[0] == -1.0f);  // mask from `a`, value from `b`
    CHECK(y.data()[1] == 0.0f);
    CHECK(maxpool3d(b, PoolSpec{2}).item() == -4.0f);
    CHECK(replay.divergences() == 8 + 1);
  }
  SUBCASE("replaying a different graph is an error") {
    BranchRecord rec;
    {
      BranchTrace trace;
      (void)relu(x);
      rec = trace.take();
    }
    BranchTrace replay(rec);
    CHECK_THROWS_AS(relu(Tensor5(Shape(1, 2, 1, 1, 1))), Error);
  }
}
