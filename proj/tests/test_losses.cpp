#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etnet/losses.hpp"
#include "etnet/rng.hpp"
#include "oracles.hpp"

using namespace etnet::losses;
using etnet::Rng;

namespace {
ProbMap make_probs(std::vector<double> values, int pixels, int classes) {
  ProbMap p;
  p.pixels = pixels;
  p.classes = classes;
  p.values = std::move(values);
  return p;
}
}  // namespace

TEST_CASE("softmax basics") {
  auto p = softmax({0.0, 0.0}, 1, 2);
  CHECK(p.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  for (double x : {-3.0, 0.0, 17.5, 1e8}) {
    auto q = softmax({x, x, x}, 1, 3);
    for (int c = 0; c < 3; ++c) CHECK(q.at(0, c) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  auto r = softmax({1.0, 0.0}, 1, 2);
  const double e = std::exp(1.0);
  CHECK(r.at(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(r.at(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
}

TEST_CASE("softmax is stable and order preserving for large logits") {
  auto p = softmax({1000.0, 999.0, -1000.0}, 1, 3);
  CHECK(std::isfinite(p.at(0, 0)));
  CHECK(p.at(0, 0) > p.at(0, 1));
  CHECK(p.at(0, 1) > p.at(0, 2));
  double sum = p.at(0, 0) + p.at(0, 1) + p.at(0, 2);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_THROWS_AS(softmax({std::nan(""), 0.0}, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(softmax({INFINITY, 0.0}, 1, 2), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one on random input") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = rng.uniform_int(1, 6), c = rng.uniform_int(2, 5);
    std::vector<double> logits(static_cast<std::size_t>(n) * c);
    for (double& v : logits) v = rng.uniform(-8.0, 8.0);
    auto p = softmax(logits, n, c);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      int argmax_l = 0, argmax_p = 0;
      for (int k = 0; k < c; ++k) {
        s += p.at(i, k);
        if (logits[i * c + k] > logits[i * c + argmax_l]) argmax_l = k;
        if (p.at(i, k) > p.at(i, argmax_p)) argmax_p = k;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(argmax_l == argmax_p);
    }
  }
}

TEST_CASE("pixel_errors branches") {
  auto p = make_probs({0.9, 0.1}, 1, 2);
  GroundTruth g0{{0}}, g1{{1}};
  CHECK(pixel_errors(p, g0, 0)[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(pixel_errors(p, g1, 0)[0] == doctest::Approx(0.9).epsilon(1e-12));

  auto perfect = make_probs({1.0, 0.0, 0.0, 1.0}, 2, 2);
  GroundTruth gt{{0, 1}};
  for (int c = 0; c < 2; ++c) {
    for (double m : pixel_errors(perfect, gt, c)) CHECK(m == 0.0);
  }
}

TEST_CASE("pixel_errors rejects mismatched sizes") {
  auto p = make_probs({0.5, 0.5}, 1, 2);
  CHECK_THROWS_AS(pixel_errors(p, GroundTruth{{0, 1}}, 0), std::invalid_argument);
  CHECK_THROWS_AS(pixel_errors(p, GroundTruth{{0}}, 2), std::invalid_argument);
}

TEST_CASE("lovasz_grad worked examples") {
  auto g1 = lovasz_grad({1});
  REQUIRE(g1.size() == 1);
  CHECK(g1[0] == doctest::Approx(1.0).epsilon(1e-12));

  auto g2 = lovasz_grad({1, 0});
  CHECK(g2[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g2[1] == doctest::Approx(0.0).epsilon(1e-12));

  auto g3 = lovasz_grad({0, 1});
  CHECK(g3[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g3[1] == doctest::Approx(0.5).epsilon(1e-12));

  for (double v : lovasz_grad({0, 0, 0})) CHECK(v == 0.0);
}

TEST_CASE("lovasz_grad is nonnegative and sums to the final jaccard loss") {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = rng.uniform_int(1, 12);
    std::vector<int> fg(n);
    long p = 0;
    for (int& v : fg) {
      v = rng.uniform_int(0, 1);
      p += v;
    }
    auto g = lovasz_grad(fg);
    double sum = 0.0;
    for (double v : g) {
      CHECK(v >= -1e-15);
      sum += v;
    }
    if (p == 0) {
      CHECK(sum == 0.0);
    } else {
      // J_N with every pixel missed: intersection 0, union P + (N - P)
      const double jn = 1.0 - 0.0 / static_cast<double>(n);
      CHECK(sum == doctest::Approx(jn).epsilon(1e-12));
    }
  }
}

TEST_CASE("lovasz loss worked examples") {
  auto perfect = make_probs({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3);
  CHECK(lovasz_softmax_loss(perfect, GroundTruth{{0, 1, 2}}) == doctest::Approx(0.0));

  // N=1, C=2, maximal error: the present class contributes 1; the absent
  // class contributes 0 under the all-classes average, so the default loss
  // is 0.5 and the present-classes-only variant is exactly 1
  auto wrong = make_probs({1.0, 0.0}, 1, 2);
  CHECK(lovasz_softmax_loss(wrong, GroundTruth{{1}}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lovasz_softmax_loss(wrong, GroundTruth{{1}}, true) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // frozen after checking against the independent extension oracle
  auto p = make_probs({0.4, 0.6, 0.6, 0.4}, 2, 2);
  GroundTruth gt{{1, 0}};
  CHECK(oracle::lovasz_extension_loss(p, gt.labels) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(lovasz_softmax_loss(p, gt) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("lovasz loss rejects empty or malformed probability maps") {
  ProbMap empty;
  CHECK_THROWS_AS(lovasz_softmax_loss(empty, GroundTruth{{}}), std::invalid_argument);

  auto bad_sum = make_probs({0.9, 0.3}, 1, 2);
  CHECK_THROWS_AS(lovasz_softmax_loss(bad_sum, GroundTruth{{0}}), std::invalid_argument);

  auto out_of_range = make_probs({1.2, -0.2}, 1, 2);
  CHECK_THROWS_AS(lovasz_softmax_loss(out_of_range, GroundTruth{{0}}), std::invalid_argument);

  auto fine = make_probs({0.7, 0.3}, 1, 2);
  CHECK_THROWS_AS(lovasz_softmax_loss(fine, GroundTruth{{2}}), std::invalid_argument);
}

TEST_CASE("lovasz loss equals the brute-force extension oracle") {
  Rng rng(42);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = rng.uniform_int(1, 8);
    const int c = rng.uniform_int(2, 3);
    auto probs = oracle::random_grid_probs(rng, n, c);
    auto labels = oracle::random_labels(rng, n, c);
    GroundTruth gt{labels};
    for (bool present_only : {false, true}) {
      const double impl = lovasz_softmax_loss(probs, gt, present_only);
      const double ref = oracle::lovasz_extension_loss(probs, labels, present_only);
      CHECK(impl == doctest::Approx(ref).epsilon(1e-9));
      CHECK(impl >= 0.0);
      CHECK(impl <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("permuting pixels leaves the loss unchanged") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = rng.uniform_int(2, 8), c = rng.uniform_int(2, 3);
    auto probs = oracle::random_grid_probs(rng, n, c);
    auto labels = oracle::random_labels(rng, n, c);
    const double base = lovasz_softmax_loss(probs, GroundTruth{labels});

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    ProbMap shuffled = probs;
    std::vector<int> shuffled_labels(n);
    for (int i = 0; i < n; ++i) {
      shuffled_labels[i] = labels[perm[i]];
      for (int k = 0; k < c; ++k) {
        shuffled.values[static_cast<std::size_t>(i) * c + k] = probs.at(perm[i], k);
      }
    }
    CHECK(lovasz_softmax_loss(shuffled, GroundTruth{shuffled_labels}) ==
          doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("loss is zero iff the true-class mass is one everywhere") {
  auto almost = make_probs({0.95, 0.05, 0.05, 0.95}, 2, 2);
  CHECK(lovasz_softmax_loss(almost, GroundTruth{{0, 1}}) > 0.0);
  auto exact = make_probs({1, 0, 0, 1}, 2, 2);
  CHECK(lovasz_softmax_loss(exact, GroundTruth{{0, 1}}) == 0.0);
}

TEST_CASE("total_loss convex combination") {
  auto perfect = make_probs({1, 0, 0, 1}, 2, 2);
  auto worst = make_probs({0, 1, 1, 0}, 2, 2);
  GroundTruth gt{{0, 1}};

  auto zero = total_loss(perfect, perfect, gt, gt, LossWeights{0.3});
  CHECK(zero.total == doctest::Approx(0.0));

  auto mixed = total_loss(worst, perfect, gt, gt, LossWeights{0.3});
  CHECK(mixed.seg == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mixed.edge == doctest::Approx(0.0));
  CHECK(mixed.total == doctest::Approx(0.3).epsilon(1e-12));

  auto sym = total_loss(perfect, worst, gt, gt, LossWeights{0.3});
  CHECK(sym.total == doctest::Approx(0.7).epsilon(1e-12));

  // equal components: any alpha gives the shared value
  Rng rng(3);
  auto p = oracle::random_grid_probs(rng, 4, 2);
  for (double a : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    auto t = total_loss(p, p, GroundTruth{{0, 1, 0, 1}}, GroundTruth{{0, 1, 0, 1}},
                        LossWeights{a});
    CHECK(t.total == doctest::Approx(t.seg).epsilon(1e-12));
  }

  CHECK_THROWS_AS(total_loss(perfect, perfect, gt, gt, LossWeights{1.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(total_loss(perfect, perfect, gt, gt, LossWeights{-0.1}),
                  std::invalid_argument);
}

TEST_CASE("logit gradients match central finite differences") {
  Rng rng(19);
  const double step = 1e-4;
  int tested = 0;
  while (tested < 40) {
    const int n = rng.uniform_int(1, 16), c = rng.uniform_int(2, 3);
    std::vector<double> logits(static_cast<std::size_t>(n) * c);
    for (double& v : logits) v = rng.uniform(-2.0, 2.0);
    GroundTruth gt{oracle::random_labels(rng, n, c)};

    // keep away from sorting ties: per-class errors must be well separated
    auto probs = softmax(logits, n, c);
    bool tie = false;
    for (int cls = 0; cls < c && !tie; ++cls) {
      auto m = pixel_errors(probs, gt, cls);
      std::sort(m.begin(), m.end());
      for (std::size_t i = 1; i < m.size(); ++i) {
        if (m[i] - m[i - 1] < 1e-3) tie = true;
      }
    }
    if (tie) continue;
    ++tested;

    auto lg = lovasz_softmax_from_logits(logits, n, c, gt);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto plus = logits, minus = logits;
      plus[i] += step;
      minus[i] -= step;
      const double fd = (lovasz_softmax_from_logits(plus, n, c, gt).loss -
                         lovasz_softmax_from_logits(minus, n, c, gt).loss) /
                        (2 * step);
      const double denom = std::max({std::abs(fd), std::abs(lg.dlogits[i]), 1e-6});
      CHECK(std::abs(fd - lg.dlogits[i]) / denom < 1e-3);
    }
  }
}
