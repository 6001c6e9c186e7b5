#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mva/nn.hpp"
#include "mva/ops.hpp"
#include "mva/optim.hpp"
#include "support/fd.hpp"

using namespace mva;
using mva::testing::max_rel_err;
using mva::testing::random_array;
using D = ArrayD<double>;

TEST_CASE("matmul forward") {
  auto I = D::from({2, 2}, {1, 0, 0, 1});
  auto X = D::from({2, 2}, {3.5, -2, 0.25, 7});
  auto y = matmul(Value<double>::constant(I), Value<double>::constant(X));
  CHECK(y.val().data == X.data);

  auto a = Value<double>::constant(D::from({2, 2}, {1, 2, 3, 4}));
  auto b = Value<double>::constant(D::from({2, 2}, {5, 6, 7, 8}));
  auto c = matmul(a, b);
  CHECK(c.val().data == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = Value<double>::constant(D::zeros({2, 3}));
  auto b = Value<double>::constant(D::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ValidationError);
}

TEST_CASE("grad of sum(A*B) wrt A is row-broadcast of column sums of B") {
  Rng rng(7);
  auto A = random_array({3, 4}, rng);
  auto B = random_array({4, 5}, rng);
  Tape<double> tape;
  auto a = tape.leaf(A, true);
  auto loss = sum_all(matmul(a, Value<double>::constant(B)));
  auto grads = tape.backward(loss);
  const auto& ga = grads.at(a.node());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double colsum = 0;
      for (int k = 0; k < 5; ++k) colsum += B.data[static_cast<size_t>(j) * 5 + k];
      CHECK(ga.at(i, j) == doctest::Approx(colsum).epsilon(1e-12));
    }
  // and against the independent finite-difference oracle
  double err = max_rel_err(
      [&](const std::vector<Value<double>>& in) {
        return sum_all(matmul(in[0], Value<double>::constant(B)));
      },
      {A});
  CHECK(err <= 1e-5);
}

TEST_CASE("elementwise sign cases") {
  auto x = Value<double>::constant(D::from({2}, {-3, 3}));
  auto y = relu(x);
  CHECK(y.val().data[0] == 0);
  CHECK(y.val().data[1] == 3);
  auto l = leaky_relu(Value<double>::constant(D::from({1}, {-1.0})));
  CHECK(l.val().data[0] == doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("softplus derivative at 0 is 0.5") {
  Tape<double> tape;
  auto x = tape.leaf(D::scalar(0.0), true);
  auto loss = sum_all(softplus(x));
  auto grads = tape.backward(loss);
  CHECK(grads.at(x.node()).data[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("elementwise binary shape mismatch") {
  auto a = Value<double>::constant(D::zeros({2, 3}));
  auto b = Value<double>::constant(D::zeros({3, 2}));
  CHECK_THROWS_AS(add(a, b), ValidationError);
}

TEST_CASE("non-finite forward is a hard error") {
  auto z = Value<double>::constant(D::from({2}, {0.0, 0.0}));
  CHECK_THROWS_AS(recip(z), NumericalError);
}

TEST_CASE("conv2d identity and constant-field cases") {
  Rng rng(3);
  auto x = random_array({1, 4, 4}, rng);
  auto k1 = Value<double>::constant(D::from({1, 1, 1, 1}, {1.0}));
  auto y = conv2d(Value<double>::constant(x), k1, 1, 0);
  CHECK(y.val().data == x.data);

  const double c = 0.37;
  auto xc = Value<double>::constant(D::full({1, 5, 5}, c));
  auto ones = Value<double>::constant(D::full({1, 1, 3, 3}, 1.0));
  auto yc = conv2d(xc, ones, 1, 1);
  CHECK(yc.shape() == Shape{1, 5, 5});
  CHECK(yc.val().data[2 * 5 + 2] == doctest::Approx(9 * c).epsilon(1e-12));
}

TEST_CASE("conv2d rejects kernel larger than padded input") {
  auto x = Value<double>::constant(D::zeros({1, 2, 2}));
  auto k = Value<double>::constant(D::zeros({1, 1, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, k, 1, 0), ValidationError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  auto x = random_array({1, 4, 4}, rng);
  auto k = random_array({2, 1, 3, 3}, rng);
  double err = max_rel_err(
      [](const std::vector<Value<double>>& in) {
        return sum_all(conv2d(in[0], in[1], 1, 1));
      },
      {x, k});
  CHECK(err <= 1e-5);
  // strided
  err = max_rel_err(
      [](const std::vector<Value<double>>& in) {
        return sum_all(square(conv2d(in[0], in[1], 2, 1)));
      },
      {x, k});
  CHECK(err <= 1e-5);
}

TEST_CASE("conv2d_transpose scatter definition for 1x1 kernel stride 2") {
  auto x = Value<double>::constant(D::from({1, 2, 2}, {1, 2, 3, 4}));
  auto k = Value<double>::constant(D::from({1, 1, 1, 1}, {1.0}));
  auto y = conv2d_transpose(x, k, 2);
  CHECK(y.shape() == Shape{1, 4, 4});
  std::vector<double> want = {1, 0, 2, 0, 0, 0, 0, 0, 3, 0, 4, 0, 0, 0, 0, 0};
  CHECK(y.val().data == want);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_transpose(y)> for matching geometry
  Rng rng(5);
  auto x = random_array({2, 6, 6}, rng);
  auto k = random_array({3, 2, 3, 3}, rng);   // conv: 2ch -> 3ch, stride 2, pad 1
  auto y = random_array({3, 3, 3}, rng);
  auto cx = conv2d(Value<double>::constant(x), Value<double>::constant(k), 2, 1);
  REQUIRE(cx.shape() == Shape{3, 3, 3});
  // the same weights serve as the transpose kernel: [F x C] read as [Cin x Cout]
  auto ty = conv2d_transpose(Value<double>::constant(y), Value<double>::constant(k), 2);
  REQUIRE(ty.shape() == Shape{2, 6, 6});
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < cx.val().data.size(); ++i) lhs += cx.val().data[i] * y.data[i];
  for (size_t i = 0; i < ty.val().data.size(); ++i) rhs += ty.val().data[i] * x.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv2d_transpose gradients match finite differences") {
  Rng rng(13);
  auto x = random_array({2, 3, 3}, rng);
  auto k = random_array({2, 1, 2, 2}, rng);
  double err = max_rel_err(
      [](const std::vector<Value<double>>& in) {
        return sum_all(square(conv2d_transpose(in[0], in[1], 2)));
      },
      {x, k});
  CHECK(err <= 1e-5);
}

TEST_CASE("backward of sum(x^2) is 2x") {
  Rng rng(17);
  auto X = random_array({3, 3}, rng);
  Tape<double> tape;
  auto x = tape.leaf(X, true);
  auto grads = tape.backward(sum_all(square(x)));
  const auto& g = grads.at(x.node());
  for (size_t i = 0; i < X.data.size(); ++i)
    CHECK(g.data[i] == doctest::Approx(2 * X.data[i]).epsilon(1e-12));
}

TEST_CASE("backward of sum(sigmoid(W*x)) matches finite differences") {
  Rng rng(19);
  auto W = random_array({4, 3}, rng);
  auto x = random_array({3, 2}, rng);
  double err = max_rel_err(
      [](const std::vector<Value<double>>& in) {
        return sum_all(sigmoid(matmul(in[0], in[1])));
      },
      {W, x});
  CHECK(err <= 1e-5);
}

TEST_CASE("no parameters yields an empty gradient table") {
  Tape<double> tape;
  auto x = tape.leaf(D::from({2}, {1, 2}), /*is_param=*/false);
  auto grads = tape.backward(sum_all(square(x)));
  CHECK(grads.empty());
}

TEST_CASE("backward requires a scalar loss") {
  Tape<double> tape;
  auto x = tape.leaf(D::zeros({2, 2}), true);
  auto y = square(x);
  CHECK_THROWS_AS(tape.backward(y), ValidationError);
}

TEST_CASE("repeated use of a value accumulates gradients additively") {
  Tape<double> tape;
  auto x = tape.leaf(D::scalar(3.0), true);
  auto loss = add(mul(x, x), mul(x, x));  // 2x^2, grad 4x
  auto grads = tape.backward(loss);
  CHECK(grads.at(x.node()).data[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  auto p = D::from({3}, {1.0, -2.0, 0.5});
  auto p0 = p;
  AdamState<double> st;
  adam_step(p, D::zeros({3}), st, 1e-2);
  CHECK(p.data == p0.data);
  CHECK(st.t == 1);
}

TEST_CASE("adam first step moves by ~lr against the gradient sign") {
  const double lr = 1e-2, eps = 1e-8;
  auto p = D::from({2}, {0.0, 0.0});
  auto g = D::from({2}, {0.35, -1.7});
  AdamState<double> st;
  adam_step(p, g, st, lr, 0.9, 0.999, eps);
  for (int i = 0; i < 2; ++i) {
    const double gi = g.data[static_cast<size_t>(i)];
    const double want = -lr * gi / (std::abs(gi) + eps);  // closed form after bias correction
    CHECK(p.data[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(p.data[static_cast<size_t>(i)]) == doctest::Approx(lr).epsilon(1e-6));
  }
}

TEST_CASE("adam two constant-gradient steps reproduce the hand-unrolled recurrence") {
  const double lr = 3e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g = 0.8;
  auto p = D::from({1}, {0.25});
  AdamState<double> st;
  adam_step(p, D::scalar(g), st, lr, b1, b2, eps);
  adam_step(p, D::scalar(g), st, lr, b1, b2, eps);

  // manual unroll
  double m = 0, v = 0, x = 0.25;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  CHECK(p.data[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam shape mismatch") {
  auto p = D::zeros({3});
  AdamState<double> st;
  CHECK_THROWS_AS(adam_step(p, D::zeros({4}), st, 1e-2), ValidationError);
}

// --- property suite -------------------------------------------------------

TEST_CASE("gradient property suite: 10 randomized shapes per op") {
  Rng rng(101);
  auto rand_shape = [&](int max_dim) {
    return Shape{1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_dim))),
                 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_dim)))};
  };

  for (int trial = 0; trial < 10; ++trial) {
    Shape sh = rand_shape(5);

    // unary kinds (positive-domain kinds get shifted inputs)
    struct K {
      Ew kind;
      double lo, hi;
    };
    for (const K& k : {K{Ew::relu, -1, 1}, K{Ew::leaky_relu, -1, 1}, K{Ew::sigmoid, -2, 2},
                       K{Ew::softplus, -2, 2}, K{Ew::sine, -3, 3}, K{Ew::cosine, -3, 3},
                       K{Ew::exp, -1, 1}, K{Ew::square, -1, 1}, K{Ew::sqrt, 0.5, 2},
                       K{Ew::recip, 0.5, 2}, K{Ew::neg, -1, 1}, K{Ew::cos_sqrt, 0.1, 2},
                       K{Ew::sinc_sqrt, 0.1, 2}, K{Ew::sinc_sqrt_deriv, 0.1, 2}}) {
      auto x = random_array(sh, rng, k.lo, k.hi);
      double err = max_rel_err(
          [&](const std::vector<Value<double>>& in) {
            return sum_all(elementwise(k.kind, in[0]));
          },
          {x});
      CAPTURE(static_cast<int>(k.kind));
      CHECK(err <= 1e-5);
    }

    // binary kinds
    for (EwBin kb : {EwBin::add, EwBin::sub, EwBin::mul, EwBin::div}) {
      auto a = random_array(sh, rng);
      auto b = random_array(sh, rng, 0.5, 1.5);  // keep divisor away from 0
      double err = max_rel_err(
          [&](const std::vector<Value<double>>& in) {
            return sum_all(square(elementwise(kb, in[0], in[1])));
          },
          {a, b});
      CHECK(err <= 1e-5);
    }

    // matrix plumbing ops under a nonlinear head so grads are nontrivial
    const int m = sh[0], n = sh[1], kk = 1 + static_cast<int>(rng.uniform_int(4));
    auto A = random_array({m, kk}, rng);
    auto B = random_array({kk, n}, rng);
    double err = max_rel_err(
        [](const std::vector<Value<double>>& in) {
          return sum_all(square(matmul(in[0], in[1])));
        },
        {A, B});
    CHECK(err <= 1e-5);

    auto M = random_array({m, n}, rng);
    auto bias = random_array({n}, rng);
    err = max_rel_err(
        [](const std::vector<Value<double>>& in) {
          return sum_all(square(add_bias(in[0], in[1])));
        },
        {M, bias});
    CHECK(err <= 1e-5);

    auto s = random_array({m}, rng);
    err = max_rel_err(
        [](const std::vector<Value<double>>& in) {
          return sum_all(square(scale_rows(in[0], in[1])));
        },
        {M, s});
    CHECK(err <= 1e-5);

    const int groups = 3;
    auto G = random_array({m * groups, n}, rng);
    err = max_rel_err(
        [&](const std::vector<Value<double>>& in) {
          return sum_all(square(sum_groups(in[0], groups)));
        },
        {G});
    CHECK(err <= 1e-5);

    err = max_rel_err(
        [&](const std::vector<Value<double>>& in) {
          return sum_all(square(repeat_rows(in[0], groups)));
        },
        {M});
    CHECK(err <= 1e-5);

    std::vector<int> idx;
    for (int i = 0; i < 2 * m; ++i) idx.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(m))));
    err = max_rel_err(
        [&](const std::vector<Value<double>>& in) {
          return sum_all(square(gather_rows(in[0], idx)));
        },
        {M});
    CHECK(err <= 1e-5);

    auto T = random_array({m * 4, 1}, rng);
    err = max_rel_err(
        [&](const std::vector<Value<double>>& in) {
          return sum_all(square(cumsum_excl_groups(in[0], 4)));
        },
        {T});
    CHECK(err <= 1e-5);

    err = max_rel_err(
        [&](const std::vector<Value<double>>& in) {
          auto cat = concat_cols<double>({in[0], in[1]});
          return sum_all(square(slice_cols(cat, 1, cat.shape()[1])));
        },
        {M, random_array({m, 2}, rng)});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("determinism: identical inputs give bit-identical values and gradients") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto W = random_array({6, 6}, rng);
    auto x = random_array({6, 4}, rng);
    Tape<double> tape;
    auto w = tape.leaf(W, true);
    auto loss = sum_all(sigmoid(matmul(w, Value<double>::constant(x))));
    auto grads = tape.backward(loss);
    return std::make_pair(loss.item(), grads.at(w.node()).data);
  };
  auto [l1, g1] = run(42);
  auto [l2, g2] = run(42);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(23);
  auto W = random_array({5, 5}, rng);
  auto x = random_array({5, 3}, rng);
  const double a = 1.7, b = -0.4;

  Tape<double> tape;
  auto w = tape.leaf(W, true);
  auto xc = Value<double>::constant(x);
  auto y = matmul(w, xc);
  auto loss1 = sum_all(square(y));
  auto loss2 = sum_all(sigmoid(y));
  auto combo = add(scale(loss1, a), scale(loss2, b));

  auto g1 = tape.backward(loss1);
  auto g2 = tape.backward(loss2);
  auto gc = tape.backward(combo);
  for (size_t i = 0; i < W.data.size(); ++i) {
    const double want = a * g1.at(w.node()).data[i] + b * g2.at(w.node()).data[i];
    CHECK(gc.at(w.node()).data[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("weighted_gather matches manual combination and finite differences") {
  Rng rng(29);
  auto A = random_array({5, 3}, rng);
  auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{0, 2, -1, 4, 1, 1});
  auto w = std::make_shared<const std::vector<double>>(std::vector<double>{0.5, 0.25, 9.0, 1.0, -1.0, 2.0});
  auto out = weighted_gather(Value<double>::constant(A), idx, w, 2);
  REQUIRE(out.shape() == Shape{3, 3});
  for (int c = 0; c < 3; ++c) {
    CHECK(out.val().at(0, c) ==
          doctest::Approx(0.5 * A.at(0, c) + 0.25 * A.at(2, c)).epsilon(1e-12));
    CHECK(out.val().at(1, c) == doctest::Approx(1.0 * A.at(4, c)).epsilon(1e-12));
    CHECK(out.val().at(2, c) == doctest::Approx(-1.0 * A.at(1, c) + 2.0 * A.at(1, c)).epsilon(1e-12));
  }
  double err = max_rel_err(
      [&](const std::vector<Value<double>>& in) {
        return sum_all(square(weighted_gather(in[0], idx, w, 2)));
      },
      {A});
  CHECK(err <= 1e-5);
}

TEST_CASE("dense layer and mlp helpers differentiate end to end") {
  ParamStore<double> ps;
  Rng rng(31);
  declare_mlp(ps, "net", 3, {8, 8, 1}, rng);
  auto X = random_array({4, 3}, rng);

  Tape<double> tape;
  Binding<double> bind(ps, tape);
  auto y = mlp_forward(bind, "net", Value<double>::constant(X), 3, false);
  auto grads = bind.to_named(tape.backward(sum_all(y)));
  CHECK(grads.size() == 6);  // 3 layers x (W, b)
  // cross-check one weight against finite differences through a fresh store
  const std::string pick = "net.l1.W";
  auto& W = ps.get(pick);
  auto fd_loss = [&](double delta, size_t elem) {
    W.data[elem] += delta;
    Binding<double> cb(ps);
    double v = sum_all(mlp_forward(cb, "net", Value<double>::constant(X), 3, false)).item();
    W.data[elem] -= delta;
    return v;
  };
  const size_t elem = 5;
  const double h = 1e-6;
  const double fd = (fd_loss(h, elem) - fd_loss(-h, elem)) / (2 * h);
  CHECK(grads.at(pick).data[elem] == doctest::Approx(fd).epsilon(1e-6));
}
