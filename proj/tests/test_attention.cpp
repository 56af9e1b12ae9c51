#include <algorithm>
#include <chrono>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pat/attention.hpp"
#include "pat/codebook.hpp"
#include "pat/error.hpp"
#include "pat/ops.hpp"

using namespace pat;

namespace {

Tensor rows(std::size_t n, std::size_t d, std::vector<double> v, bool grad = false) {
  return Tensor::from_vector({n, d}, std::move(v), grad);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t d = t.size(1);
  return {t.values().begin() + r * d, t.values().begin() + (r + 1) * d};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Unit rows spread on the sphere, pairwise cosine below `max_cos`.
oracle::Matrix separated_units(std::size_t n, std::size_t d, double max_cos, Rng& rng) {
  oracle::Matrix out;
  while (out.size() < n) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    v = oracle::unit(v);
    bool ok = true;
    for (const auto& u : out) ok = ok && oracle::dot(u, v) < max_cos;
    if (ok) out.push_back(v);
  }
  return out;
}

Tensor from_matrix(const oracle::Matrix& m) {
  std::vector<double> v;
  for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
  return Tensor::from_vector({m.size(), m[0].size()}, std::move(v));
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("attn with a single key returns its value row") {
    Rng rng(1);
    const Tensor q = oracle::random_tensor({3, 4}, rng);
    const Tensor k = oracle::random_tensor({1, 4}, rng);
    const Tensor v = oracle::random_tensor({1, 5}, rng);
    const Tensor out = attn(q, k, v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(row(out, i), row(v, 0)) < 1e-15);
  }

  TEST_CASE("attn with a query orthogonal to every key averages the values") {
    const Tensor q = rows(1, 3, {0, 0, 1});
    const Tensor k = rows(2, 3, {1, 0, 0, 0, 2, 0});
    const Tensor v = rows(2, 2, {1, 2, 3, 6});
    CHECK(max_abs_diff(attn(q, k, v).to_vector(), {2, 4}) < 1e-15);
  }

  TEST_CASE("attn matches a direct evaluation of the formula") {
    Rng rng(7);
    const Tensor q = oracle::random_tensor({3, 4}, rng);
    const Tensor k = oracle::random_tensor({5, 4}, rng);
    const Tensor v = oracle::random_tensor({5, 3}, rng);
    const auto ref = oracle::attention(oracle::to_matrix(q), oracle::to_matrix(k),
                                       oracle::to_matrix(v), 1.0 / std::sqrt(4.0));
    const auto got = oracle::to_matrix(attn(q, k, v));
    for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(got[i], ref[i]) < 1e-12);
  }

  TEST_CASE("attn rejects mismatched widths") {
    CHECK_THROWS_AS(attn(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 2})),
                    DimensionError);
    CHECK_THROWS_AS(attn(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({3, 2})),
                    DimensionError);
  }

  TEST_CASE("hs_attn at zero concentration is the normalised mean of V") {
    Rng rng(3);
    const Tensor q = oracle::random_tensor({4, 6}, rng);
    const Tensor k = oracle::random_tensor({9, 6}, rng);
    const Tensor v = oracle::random_tensor({9, 6}, rng);
    std::vector<double> mean(6, 0.0);
    for (std::size_t j = 0; j < 9; ++j)
      for (std::size_t c = 0; c < 6; ++c) mean[c] += v.value(j * 6 + c) / 9.0;
    const auto expected = oracle::unit(mean);
    const Tensor out = hs_attn(q, k, v, 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(max_abs_diff(row(out, i), expected) <= 1e-9);
  }

  TEST_CASE("hs_attn with one feature returns that feature normalised") {
    Rng rng(4);
    const Tensor v = oracle::random_tensor({1, 5}, rng);
    const auto expected = oracle::unit(row(v, 0));
    for (double kappa : {0.0, 1.0, 20.0, 1e4}) {
      const Tensor out = hs_attn(oracle::random_tensor({3, 5}, rng), v, v, kappa);
      for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(row(out, i), expected) < 1e-12);
    }
  }

  TEST_CASE("hs_attn at high concentration snaps to the cosine-nearest feature") {
    Rng rng(5);
    const auto features = separated_units(12, 8, 0.8, rng);
    const Tensor v = from_matrix(features);
    const Tensor q = oracle::separated_queries(features, 6, 0.01, rng);
    const Tensor out = hs_attn(q, v, v, 1e4);
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t nearest = oracle::cosine_nearest(features, row(q, i));
      CHECK(max_abs_diff(row(out, i), features[nearest]) <= 1e-6);
    }
  }

  TEST_CASE("hs_attn rows are unit norm") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const double kappa = rng.uniform(0.0, 50.0);
      const Tensor out = hs_attn(oracle::random_tensor({5, 4}, rng),
                                 oracle::random_tensor({7, 4}, rng),
                                 oracle::random_tensor({7, 4}, rng), kappa);
      for (std::size_t i = 0; i < 5; ++i) {
        const auto r = row(out, i);
        CHECK(std::abs(std::sqrt(oracle::dot(r, r)) - 1.0) <= 1e-9);
      }
    }
  }

  TEST_CASE("hs_attn distance to the nearest feature shrinks monotonically once concentrated") {
    Rng rng(8);
    const auto features = separated_units(10, 6, 0.9, rng);
    const Tensor v = from_matrix(features);
    const Tensor q = oracle::random_tensor({4, 6}, rng);
    std::vector<double> prev(4, 2.0);
    for (double kappa : {10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0}) {
      const Tensor out = hs_attn(q, v, v, kappa);
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& target = features[oracle::cosine_nearest(features, row(q, i))];
        const auto r = row(out, i);
        const double dist = std::sqrt(std::max(0.0, 2.0 - 2.0 * oracle::dot(r, target)));
        CAPTURE(kappa);
        CHECK(dist <= prev[i] + 1e-12);
        prev[i] = dist;
      }
    }
    CHECK(*std::max_element(prev.begin(), prev.end()) < 1e-6);
  }

  TEST_CASE("vq returns a code unchanged when the input is that code") {
    Codebook cb(rows(3, 2, {1, 0, 0, 1, -1, 0}), Stage::Early);
    const auto q = vq(cb, rows(1, 2, {0, 1}));
    CHECK(q.assignment.indices == std::vector<std::size_t>{1});
    CHECK(q.z_q.to_vector() == std::vector<double>{0, 1});
  }

  TEST_CASE("vq picks the nearest axis") {
    Codebook cb(rows(2, 2, {1, 0, 0, 1}), Stage::Early);
    const auto q = vq(cb, rows(1, 2, {0.9, 0.1}));
    CHECK(q.assignment.indices == std::vector<std::size_t>{0});
    CHECK(q.z_q.to_vector() == std::vector<double>{1, 0});
  }

  TEST_CASE("vq matches exhaustive search on 1000 random instances in under 5 s") {
    Rng rng(2024);
    const auto start = std::chrono::steady_clock::now();
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t c = 1 + rng.index(16), n = 1 + rng.index(256), d = 1 + rng.index(8);
      Codebook cb(oracle::random_tensor({c, d}, rng), Stage::Mid);
      const Tensor v = oracle::random_tensor({n, d}, rng);
      const auto q = vq(cb, v, false);
      const auto codes = oracle::to_matrix(cb.tokens());
      for (std::size_t i = 0; i < n; ++i) {
        mismatches += q.assignment.indices[i] != oracle::nearest_code(codes, row(v, i));
      }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(mismatches == 0);
    CHECK(seconds < 5.0);
  }

  TEST_CASE("vq is idempotent on its own output") {
    Rng rng(9);
    Codebook cb(oracle::random_tensor({8, 4}, rng), Stage::Late);
    const auto first = vq(cb, oracle::random_tensor({30, 4}, rng));
    const auto second = vq(cb, detach(first.z_q));
    CHECK(second.assignment.indices == first.assignment.indices);
    CHECK(second.z_q.to_vector() == first.z_q.to_vector());
  }

  TEST_CASE("vq gradient passes straight through to the features") {
    Rng rng(10);
    Codebook cb(oracle::random_tensor({5, 3}, rng, 1.0, true), Stage::Early);
    Tensor v = oracle::random_tensor({6, 3}, rng, 1.0, true);
    const Tensor w = oracle::random_tensor({6, 3}, rng);
    sum(mul(vq(cb, v).z_q, w)).backward();
    CHECK(max_abs_diff(v.grad(), w.to_vector()) == 0.0);
    // No gradient reaches the codebook through z_q; it trains via vq_loss.
    for (double g : cb.tokens().grad()) CHECK(g == 0.0);
  }

  TEST_CASE("vq records usage") {
    Codebook cb(rows(2, 1, {1, -1}), Stage::Latent);
    vq(cb, rows(3, 1, {2, 3, -1}));
    CHECK(cb.usage() == std::vector<std::uint64_t>{2, 1});
    vq(cb, rows(1, 1, {-5}), false);
    CHECK(cb.usage() == std::vector<std::uint64_t>{2, 1});
    cb.reset_usage();
    CHECK(cb.usage() == std::vector<std::uint64_t>{0, 0});
  }

  TEST_CASE("vq rejects a width mismatch") {
    Codebook cb(Tensor::zeros({2, 3}), Stage::Early);
    CHECK_THROWS_AS(vq(cb, Tensor::zeros({4, 2})), DimensionError);
    CHECK_THROWS_AS(vmf_vq(cb, Tensor::zeros({4, 2})), DimensionError);
  }

  TEST_CASE("vmf_vq is scale invariant") {
    Rng rng(11);
    Codebook cb(oracle::random_tensor({7, 5}, rng), Stage::Mid);
    const Tensor v = oracle::random_tensor({40, 5}, rng);
    const auto a = vmf_vq(cb, v, false);
    const auto b = vmf_vq(cb, scale(v, 2.0), false);
    CHECK(a.assignment.indices == b.assignment.indices);
  }

  TEST_CASE("vmf_vq with antipodal codes picks the closer pole") {
    Codebook cb(rows(2, 2, {1, 0, -1, 0}), Stage::Early);
    const double a = 10.0 * std::acos(-1.0) / 180.0;
    const auto q = vmf_vq(cb, rows(1, 2, {std::cos(a), std::sin(a)}));
    CHECK(q.assignment.indices == std::vector<std::size_t>{0});
  }

  TEST_CASE("vmf_vq matches a brute-force cosine search and returns unit codes") {
    Rng rng(12);
    // d >= 2: on a line every code of one sign ties exactly in cosine.
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t c = 1 + rng.index(16), n = 1 + rng.index(64), d = 2 + rng.index(7);
      Codebook cb(oracle::random_tensor({c, d}, rng, rng.uniform(0.1, 3.0)), Stage::Early);
      const Tensor v = oracle::random_tensor({n, d}, rng);
      const auto q = vmf_vq(cb, v, false);
      const auto codes = oracle::to_matrix(cb.tokens());
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t expected = oracle::cosine_nearest(codes, row(v, i));
        REQUIRE(q.assignment.indices[i] == expected);
        const auto z = row(q.z_q, i);
        CHECK(max_abs_diff(z, oracle::unit(codes[expected])) < 1e-15);
      }
    }
  }

  TEST_CASE("vq_loss values") {
    const Tensor v = rows(2, 2, {0.5, -1, 2, 0});
    CHECK(vq_loss(v, v).item() == 0.0);
    CHECK(vq_loss(rows(1, 2, {1, 0}), rows(1, 2, {0, 0}), 0.25).item() == doctest::Approx(1.25));
  }

  TEST_CASE("vq_loss gradient splits between features and codes") {
    const double beta = 0.25;
    Tensor v = rows(1, 3, {1.0, -2.0, 0.5}, true);
    Tensor e = rows(1, 3, {0.2, 0.3, -0.4}, true);
    vq_loss(v, e, beta).backward();
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(v.grad()[i] == doctest::Approx(2 * beta * (v.value(i) - e.value(i))));
      CHECK(e.grad()[i] == doctest::Approx(2 * (e.value(i) - v.value(i))));
    }
  }

  TEST_CASE("codebook_stats on collapsed and uniform usage") {
    Codebook cb(Tensor::zeros({8, 2}), Stage::Early);
    cb.record({3, 3, 3, 3});
    auto s = codebook_stats(cb);
    CHECK(s.utilization == doctest::Approx(1.0 / 8.0));
    CHECK(s.entropy == 0.0);
    cb.reset_usage();
    cb.record({0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6, 7});
    s = codebook_stats(cb);
    CHECK(s.utilization == 1.0);
    CHECK(s.entropy == doctest::Approx(std::log(8.0)));
  }

  TEST_CASE("codebook_stats on clustered data uses at least one code per cluster") {
    Rng rng(13);
    const std::size_t c = 32, d = 8, k = 4;
    Codebook cb(oracle::random_tensor({c, d}, rng), Stage::Latent);
    const auto codes = oracle::to_matrix(cb.tokens());
    std::vector<double> data;
    for (std::size_t i = 0; i < 200; ++i) {
      const auto& centre = codes[(i % k) * 7];
      for (std::size_t j = 0; j < d; ++j) data.push_back(centre[j] + rng.normal(0.0, 0.01));
    }
    vq(cb, Tensor::from_vector({200, d}, data));
    CHECK(codebook_stats(cb).utilization >= static_cast<double>(k) / c);
  }

  TEST_CASE("restart_dead_codes reseeds only unused codes") {
    Rng rng(14);
    Codebook cb(rows(3, 1, {1, 100, 200}), Stage::Early);
    cb.record({0});
    const Tensor feats = rows(2, 1, {5, 6});
    CHECK(restart_dead_codes(cb, feats, rng) == 2);
    const auto t = cb.tokens().to_vector();
    CHECK(t[0] == 1);
    CHECK((t[1] == 5 || t[1] == 6));
    CHECK((t[2] == 5 || t[2] == 6));
  }
}
