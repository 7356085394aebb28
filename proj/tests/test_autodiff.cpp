#include "dcgnet/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "dcgnet/gradcheck.hpp"
#include "dcgnet/rng.hpp"

using namespace dcgnet;

namespace {

// Normal draws pushed away from zero so kinked ops (relu, l1) never see an
// input within the finite-difference step of their kink.
std::vector<double> random_values(Rng& rng, std::size_t n, bool avoid_kinks) {
  std::vector<double> v(n);
  for (double& x : v) {
    x = rng.normal();
    if (avoid_kinks && std::abs(x) < 0.1) x += x >= 0 ? 0.2 : -0.2;
  }
  return v;
}

Tensor random_param(Rng& rng, int rows, int cols, bool avoid_kinks = false) {
  return Tensor::parameter(rows, cols,
                           random_values(rng, static_cast<std::size_t>(rows) * cols, avoid_kinks));
}

Tensor random_const(Rng& rng, int rows, int cols) {
  return Tensor::constant(rows, cols, random_values(rng, static_cast<std::size_t>(rows) * cols, false));
}

// Scalarizes an op output against a fixed random probe so every output entry
// influences the loss with a distinct coefficient.
Tensor probe_loss(const Tensor& y, const Tensor& probe) { return sum(mul(y, probe)); }

TEST(Autodiff, MatmulIdentityAndAllOnesGradient) {
  Tensor x = Tensor::parameter(3, 2, {1, -2, 3, 4, -5, 6});
  const Tensor eye = Tensor::constant(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor y = matmul(eye, x);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_EQ(y.at(i, j), x.at(i, j));
  }
  x.zero_grad();
  backward(sum(y));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, MatmulMatchesNaiveTripleLoop) {
  Rng rng(11);
  const Tensor a = random_const(rng, 4, 5);
  const Tensor b = random_const(rng, 5, 3);
  const Tensor c = matmul(a, b);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
  }
}

TEST(Autodiff, ReluBackwardIsZeroAtNegativeInputs) {
  Tensor x = Tensor::parameter(1, 3, {-1.0, 2.0, -0.5});
  x.zero_grad();
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Autodiff, BackwardOnConstantLossIsNoOp) {
  const Tensor c = Tensor::constant(1, 1, {42.0});
  EXPECT_NO_THROW(backward(c));
  Tensor p = Tensor::parameter(2, 2, {1, 2, 3, 4});
  NoGradGuard guard;
  const Tensor loss = sum(mul(p, p));
  EXPECT_FALSE(loss.requires_grad());
  backward(loss);
  EXPECT_TRUE(p.grad().empty());
}

TEST(Autodiff, BackwardTwiceDoublesLeafGradients) {
  Tensor p = Tensor::parameter(2, 2, {0.5, -1.5, 2.0, 3.0});
  p.zero_grad();
  const Tensor loss = sum(mul(p, p));
  backward(loss);
  const std::vector<double> once = p.grad();
  backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(p.grad()[i], 2.0 * once[i]);
}

TEST(Autodiff, GradientsAccumulateAcrossSeparateGraphs) {
  Tensor p = Tensor::parameter(1, 2, {1.0, 2.0});
  p.zero_grad();
  backward(sum(mul(p, p)));          // d/dp = 2p
  backward(scale(sum(p), 3.0));      // d/dp = 3
  EXPECT_DOUBLE_EQ(p.grad()[0], 2.0 * 1.0 + 3.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 2.0 * 2.0 + 3.0);
}

TEST(Autodiff, BackwardRejectsNonScalarLoss) {
  Tensor p = Tensor::parameter(2, 2, {1, 2, 3, 4});
  try {
    backward(mul(p, p));
    FAIL() << "expected invalid_argument";
  } catch (const AutodiffError& e) {
    EXPECT_EQ(e.kind(), AutodiffErrorKind::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("2x2"), std::string::npos);
  }
}

TEST(Autodiff, ShapeErrorsNameOperationAndBothShapes) {
  const Tensor a = Tensor::constant(3, 4, std::vector<double>(12, 0.0));
  const Tensor b = Tensor::constant(5, 2, std::vector<double>(10, 0.0));
  try {
    matmul(a, b);
    FAIL() << "expected shape_mismatch";
  } catch (const AutodiffError& e) {
    EXPECT_EQ(e.kind(), AutodiffErrorKind::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("3x4"), std::string::npos);
    EXPECT_NE(msg.find("5x2"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), AutodiffError);
  EXPECT_THROW(add_row_bias(a, Tensor::constant(1, 3, {0, 0, 0})), AutodiffError);
  EXPECT_THROW(reshape(a, 5, 5), AutodiffError);
  EXPECT_THROW(slice_rows(a, 2, 2), AutodiffError);
  try {
    group_norm(a, 5, Tensor::constant(1, 4, {1, 1, 1, 1}), Tensor::constant(1, 4, {0, 0, 0, 0}));
    FAIL() << "expected invalid_argument";
  } catch (const AutodiffError& e) {
    EXPECT_EQ(e.kind(), AutodiffErrorKind::invalid_argument);
  }
}

TEST(Autodiff, SoftmaxRowsSumToOneAndStayPositive) {
  Rng rng(5);
  const Tensor x = random_const(rng, 6, 5);
  const Tensor y = softmax_rows(x);
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) {
      EXPECT_GT(y.at(i, j), 0.0);
      s += y.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Autodiff, SoftmaxUnderflowsMaskedLogitsToExactZero) {
  const Tensor x = Tensor::constant(1, 3, {0.3, -1e30, 1.1});
  const Tensor y = softmax_rows(x);
  EXPECT_EQ(y.at(0, 1), 0.0);
  EXPECT_NEAR(y.at(0, 0) + y.at(0, 2), 1.0, 1e-12);
}

TEST(Autodiff, SparseMatmulMatchesDenseOracle) {
  Rng rng(7);
  const SparseMatrix s = SparseMatrix::from_triplets(
      3, 4, {{0, 1, 2.0}, {0, 3, -1.0}, {1, 0, 0.5}, {2, 2, 3.0}, {2, 3, 1.5}});
  const Tensor x = random_const(rng, 4, 2);
  const Tensor y = sparse_matmul(s, x);
  const std::vector<std::vector<double>> d = [&] {
    std::vector<std::vector<double>> dd(3, std::vector<double>(4, 0.0));
    for (const SparseTriplet& t : s.entries) dd[static_cast<std::size_t>(t.row)][static_cast<std::size_t>(t.col)] = t.value;
    return dd;
  }();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * x.at(k, j);
      EXPECT_NEAR(y.at(i, j), acc, 1e-12);
    }
  }
}

TEST(Autodiff, GroupNormMatchesDirectComputation) {
  Rng rng(13);
  const Tensor x = random_const(rng, 4, 6);
  const Tensor gain = Tensor::constant(1, 6, {1.1, 0.9, 1.2, 0.8, 1.0, 1.3});
  const Tensor bias = Tensor::constant(1, 6, {0.1, -0.2, 0.3, 0.0, -0.1, 0.2});
  const double eps = 1e-5;
  const Tensor y = group_norm(x, 2, gain, bias, eps);
  for (int i = 0; i < 4; ++i) {
    for (int g = 0; g < 2; ++g) {
      double m = 0;
      for (int j = 0; j < 3; ++j) m += x.at(i, g * 3 + j);
      m /= 3;
      double var = 0;
      for (int j = 0; j < 3; ++j) var += (x.at(i, g * 3 + j) - m) * (x.at(i, g * 3 + j) - m);
      var /= 3;
      for (int j = 0; j < 3; ++j) {
        const int ch = g * 3 + j;
        const double expect_v =
            (x.at(i, ch) - m) / std::sqrt(var + eps) * gain.at(0, ch) + bias.at(0, ch);
        EXPECT_NEAR(y.at(i, ch), expect_v, 1e-12);
      }
    }
  }
}

TEST(Autodiff, GroupNormNormalizesEachGroup) {
  Rng rng(17);
  const Tensor x = random_const(rng, 5, 8);
  const Tensor gain = Tensor::constant(1, 8, std::vector<double>(8, 1.0));
  const Tensor bias = Tensor::constant(1, 8, std::vector<double>(8, 0.0));
  const Tensor y = group_norm(x, 2, gain, bias);
  for (int i = 0; i < 5; ++i) {
    for (int g = 0; g < 2; ++g) {
      double m = 0, var = 0;
      for (int j = 0; j < 4; ++j) m += y.at(i, g * 4 + j);
      m /= 4;
      for (int j = 0; j < 4; ++j) var += (y.at(i, g * 4 + j) - m) * (y.at(i, g * 4 + j) - m);
      var /= 4;
      EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(Autodiff, NoGradGuardStopsGraphRecording) {
  Tensor p = Tensor::parameter(2, 2, {1, 2, 3, 4});
  NoGradGuard guard;
  const Tensor y = mul(p, p);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autodiff, DetachCutsTheGraph) {
  Tensor p = Tensor::parameter(2, 2, {1, 2, 3, 4});
  p.zero_grad();
  const Tensor d = detach(mul(p, p));
  EXPECT_FALSE(d.requires_grad());
  backward(sum(d));
  for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, ForwardAndBackwardAreBitwiseDeterministic) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = random_param(rng, 4, 3);
    Tensor b = random_param(rng, 1, 3);
    const Tensor x = random_const(rng, 5, 4);
    w.zero_grad();
    b.zero_grad();
    const Tensor y = softmax_rows(add_row_bias(relu(matmul(x, w)), b));
    const Tensor loss = sum(mul(y, y));
    backward(loss);
    return std::tuple<double, std::vector<double>, std::vector<double>>(loss.values()[0], w.grad(),
                                                                        b.grad());
  };
  const auto a = run(123);
  const auto b = run(123);
  EXPECT_EQ(std::get<0>(a), std::get<0>(b));
  EXPECT_EQ(std::get<1>(a), std::get<1>(b));
  EXPECT_EQ(std::get<2>(a), std::get<2>(b));
}

TEST(Autodiff, RandomWeightGradientMatchesFiniteDifferencesElementwise) {
  // 5x4 weight feeding a scalar loss; elementwise |analytic - fd| / (|analytic| + 1e-8) < 1e-4.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(900, seed));
    Tensor w = random_param(rng, 5, 4);
    const Tensor x = random_const(rng, 3, 5);
    const Tensor probe = random_const(rng, 3, 4);
    auto forward = [&]() { return probe_loss(sigmoid(matmul(x, w)), probe); };
    w.zero_grad();
    backward(forward());
    const std::vector<double> analytic = w.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w.mutable_values()[i];
      w.mutable_values()[i] = saved + 1e-5;
      double f_plus;
      {
        NoGradGuard g;
        f_plus = forward().values()[0];
      }
      w.mutable_values()[i] = saved - 1e-5;
      double f_minus;
      {
        NoGradGuard g;
        f_minus = forward().values()[0];
      }
      w.mutable_values()[i] = saved;
      const double fd = (f_plus - f_minus) / 2e-5;
      EXPECT_LT(std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8), 1e-4)
          << "seed " << seed << " entry " << i;
    }
  }
}

TEST(Autodiff, EveryOpPassesFiniteDifferenceChecks) {
  // Each case builds a scalar loss from fresh parameters; checked on 10 seeds.
  using Case = std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(Rng&)>;
  std::map<std::string, Case> cases;
  cases["matmul_both_sides"] = [](Rng& rng) {
    Tensor a = random_param(rng, 3, 4);
    Tensor b = random_param(rng, 4, 2);
    Tensor probe = random_const(rng, 3, 2);
    return std::make_pair(std::function<Tensor()>([=]() { return probe_loss(matmul(a, b), probe); }),
                          std::vector<Tensor>{a, b});
  };
  cases["add_sub_mul"] = [](Rng& rng) {
    Tensor a = random_param(rng, 3, 3);
    Tensor b = random_param(rng, 3, 3);
    Tensor probe = random_const(rng, 3, 3);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(mul(add(a, b), sub(a, b)), probe); }),
        std::vector<Tensor>{a, b});
  };
  cases["relu"] = [](Rng& rng) {
    Tensor x = random_param(rng, 4, 3, true);
    Tensor probe = random_const(rng, 4, 3);
    return std::make_pair(std::function<Tensor()>([=]() { return probe_loss(relu(x), probe); }),
                          std::vector<Tensor>{x});
  };
  cases["leaky_relu"] = [](Rng& rng) {
    Tensor x = random_param(rng, 4, 3, true);
    Tensor probe = random_const(rng, 4, 3);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(leaky_relu(x, 0.2), probe); }),
        std::vector<Tensor>{x});
  };
  cases["sigmoid"] = [](Rng& rng) {
    Tensor x = random_param(rng, 4, 3);
    Tensor probe = random_const(rng, 4, 3);
    return std::make_pair(std::function<Tensor()>([=]() { return probe_loss(sigmoid(x), probe); }),
                          std::vector<Tensor>{x});
  };
  cases["softmax_rows"] = [](Rng& rng) {
    Tensor x = random_param(rng, 4, 5);
    Tensor probe = random_const(rng, 4, 5);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(softmax_rows(x), probe); }),
        std::vector<Tensor>{x});
  };
  cases["concat_cols"] = [](Rng& rng) {
    Tensor a = random_param(rng, 3, 2);
    Tensor b = random_param(rng, 3, 4);
    Tensor c = random_param(rng, 3, 1);
    Tensor probe = random_const(rng, 3, 7);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(concat_cols({a, b, c}), probe); }),
        std::vector<Tensor>{a, b, c});
  };
  cases["sparse_matmul"] = [](Rng& rng) {
    auto s = std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(
        4, 3, {{0, 0, 1.5}, {1, 2, -2.0}, {2, 1, 0.7}, {3, 0, -0.3}, {3, 2, 1.1}}));
    Tensor x = random_param(rng, 3, 2);
    Tensor probe = random_const(rng, 4, 2);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(sparse_matmul(s, x), probe); }),
        std::vector<Tensor>{x});
  };
  cases["sum_mean"] = [](Rng& rng) {
    Tensor x = random_param(rng, 3, 4);
    return std::make_pair(
        std::function<Tensor()>([=]() { return add(sum(x), scale(mean(x), 2.5)); }),
        std::vector<Tensor>{x});
  };
  cases["l1_norm"] = [](Rng& rng) {
    Tensor x = random_param(rng, 3, 4, true);
    return std::make_pair(std::function<Tensor()>([=]() { return l1_norm(x); }),
                          std::vector<Tensor>{x});
  };
  cases["l2_norm"] = [](Rng& rng) {
    Tensor x = random_param(rng, 3, 4, true);
    return std::make_pair(std::function<Tensor()>([=]() { return l2_norm(x); }),
                          std::vector<Tensor>{x});
  };
  cases["reshape_transpose"] = [](Rng& rng) {
    Tensor x = random_param(rng, 3, 4);
    Tensor probe = random_const(rng, 6, 2);
    return std::make_pair(std::function<Tensor()>([=]() {
                            return probe_loss(transpose(reshape(x, 2, 6)), probe);
                          }),
                          std::vector<Tensor>{x});
  };
  cases["slices"] = [](Rng& rng) {
    Tensor x = random_param(rng, 5, 6);
    Tensor probe = random_const(rng, 2, 3);
    return std::make_pair(std::function<Tensor()>([=]() {
                            return probe_loss(slice_cols(slice_rows(x, 1, 3), 2, 5), probe);
                          }),
                          std::vector<Tensor>{x});
  };
  cases["scale_add_row_bias"] = [](Rng& rng) {
    Tensor x = random_param(rng, 4, 3);
    Tensor b = random_param(rng, 1, 3);
    Tensor probe = random_const(rng, 4, 3);
    return std::make_pair(std::function<Tensor()>([=]() {
                            return probe_loss(add_row_bias(scale(x, -1.7), b), probe);
                          }),
                          std::vector<Tensor>{x, b});
  };
  cases["pairwise_sum"] = [](Rng& rng) {
    Tensor u = random_param(rng, 4, 1);
    Tensor v = random_param(rng, 3, 1);
    Tensor probe = random_const(rng, 4, 3);
    return std::make_pair(
        std::function<Tensor()>([=]() { return probe_loss(pairwise_sum(u, v), probe); }),
        std::vector<Tensor>{u, v});
  };
  cases["group_norm"] = [](Rng& rng) {
    Tensor x = random_param(rng, 3, 6);
    Tensor gain = random_param(rng, 1, 6);
    Tensor bias = random_param(rng, 1, 6);
    Tensor probe = random_const(rng, 3, 6);
    return std::make_pair(std::function<Tensor()>([=]() {
                            return probe_loss(group_norm(x, 3, gain, bias), probe);
                          }),
                          std::vector<Tensor>{x, gain, bias});
  };
  cases["masked_softmax_attention"] = [](Rng& rng) {
    // Composite mirroring the attention pattern: pairwise logits, additive
    // mask, softmax, weighted aggregation.
    Tensor u = random_param(rng, 4, 1);
    Tensor v = random_param(rng, 4, 1);
    Tensor h = random_param(rng, 4, 2);
    Tensor mask = Tensor::constant(4, 4, [] {
      std::vector<double> m(16, -1e30);
      for (int i = 0; i < 4; ++i) {
        m[static_cast<std::size_t>(i) * 4 + i] = 0;
        m[static_cast<std::size_t>(i) * 4 + ((i + 1) % 4)] = 0;
      }
      return m;
    }());
    Tensor probe = random_const(rng, 4, 2);
    return std::make_pair(std::function<Tensor()>([=]() {
                            const Tensor logits = leaky_relu(pairwise_sum(u, v), 0.2);
                            const Tensor att = softmax_rows(add(logits, mask));
                            return probe_loss(matmul(att, h), probe);
                          }),
                          std::vector<Tensor>{u, v, h});
  };
  for (const auto& [name, make_case] : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(derive_seed(1000, seed));
      auto [forward, params] = make_case(rng);
      const FiniteDiffReport report = finite_difference_check(forward, params);
      EXPECT_TRUE(report.passed) << name << " seed " << seed << ": " << report.worst;
      EXPECT_LT(report.max_rel, 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(Autodiff, ChainReluSumMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(1100, seed));
    Tensor x = random_param(rng, 4, 4, true);
    const FiniteDiffReport report =
        finite_difference_check([&]() { return sum(relu(x)); }, {x});
    EXPECT_TRUE(report.passed) << "seed " << seed << ": " << report.worst;
  }
}

TEST(Autodiff, FiniteDiffSubsamplingChecksRequestedEntryCount) {
  Rng rng(31);
  Tensor w = random_param(rng, 8, 8);
  const Tensor x = random_const(rng, 2, 8);
  FiniteDiffOptions opt;
  opt.max_entries_per_param = 5;
  opt.seed = 77;
  const FiniteDiffReport report =
      finite_difference_check([&]() { return sum(matmul(x, w)); }, {w}, opt);
  EXPECT_EQ(report.entries_checked, 5);
  EXPECT_TRUE(report.passed);
}

}  // namespace
