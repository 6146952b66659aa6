// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "instapbm/errors.hpp"
#include "instapbm/grad_check.hpp"
#include "instapbm/losses.hpp"

using namespace instapbm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  std::vector<double> v(r * c);
  for (auto& x : v) x = g(rng);
  return Tensor(Shape{r, c}, std::move(v));
}

double rbf_oracle(const Tensor& a, const Tensor& b, std::span<const double> bws) {
  const std::size_t d = a.dim(1);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(0); ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) sq += std::pow(a.at(i, c) - b.at(j, c), 2);
      for (double s : bws) acc += std::exp(-sq / (2.0 * s * s));
    }
  return acc / static_cast<double>(a.dim(0) * b.dim(0));
}

// Unbiased covariance by explicit sums.
std::vector<double> covariance_oracle(const Tensor& z) {
  const std::size_t n = z.dim(0);
  const std::size_t d = z.dim(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mu[c] += z.at(i, c) / static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      for (std::size_t i = 0; i < n; ++i) cov[a * d + b] += (z.at(i, a) - mu[a]) * (z.at(i, b) - mu[b]);
      cov[a * d + b] /= static_cast<double>(n - 1);
    }
  return cov;
}

Tensor log_of(std::vector<double> probs) {
  const std::size_t k = probs.size();
  for (auto& p : probs) p = std::log(p);
  return Tensor::matrix(1, k, std::move(probs));
}

}  // namespace

TEST_CASE("mutual information at analytic points") {
  const std::size_t k = 4;
  const double ln_k = std::log(4.0);
  SUBCASE("uniform predictions with a uniform marginal give zero") {
    MarginalTracker t(k, 0.1);
    CHECK(std::abs(mim_loss(Tensor(Shape{5, k}, 0.3), t, ln_k).item()) < 1e-12);
  }
  SUBCASE("confident balanced predictions give -ln K") {
    MarginalTracker t(k, 0.1);
    Tensor logits(Shape{k, k}, 0.0);
    for (std::size_t i = 0; i < k; ++i) logits.mutable_data()[i * k + i] = 60.0;
    CHECK(std::abs(mim_loss(logits, t, ln_k).item() + ln_k) < 1e-9);
  }
  SUBCASE("the diversity term is gated at the ceiling") {
    MarginalTracker t(k, 0.1);
    const MimTerms m = mim_terms(Tensor(Shape{3, k}, 0.0), t, 0.95 * ln_k);
    CHECK_FALSE(m.diversity_active);
    CHECK(m.loss.item() == doctest::Approx(ln_k));
    CHECK(LossConfig{}.ceiling_for(k) == doctest::Approx(0.95 * ln_k));
  }
}

TEST_CASE("marginal tracker moving average") {
  MarginalTracker t(2, 0.1);
  const double batch[] = {0.9, 0.1};
  t.update(batch);
  CHECK(std::abs(t.q()[0] - 0.54) < 1e-12);
  CHECK(std::abs(t.q()[1] - 0.46) < 1e-12);
  CHECK(t.updates() == 1);
  const double collapsed[] = {1.0, 0.0};
  t.reset(collapsed);
  CHECK(t.q()[1] > 0.0);
  CHECK(t.q()[0] + t.q()[1] == doctest::Approx(1.0));
  CHECK_THROWS(MarginalTracker(0, 0.1));
}

TEST_CASE("MIM gradient treats the marginal as a constant") {
  const Tensor point = random_matrix(6, 3, 11);
  const double q0[] = {0.6, 0.3, 0.1};
  auto fn = [&](const Tensor& x) {
    MarginalTracker t(3, 0.1);
    t.reset(q0);
    return mim_loss(x, t, std::log(3.0));
  };
  CHECK(grad_check(fn, point).passed);

  // d/dz_j sum_y p_y (log q_y - log p_y) = p_j (a_j - sum_y p_y a_y) with a = log q - log p.
  Tensor x = point.detach();
  x.set_requires_grad();
  MarginalTracker t(3, 0.1);
  t.reset(q0);
  backward(mim_loss(x, t, std::log(3.0)));
  const std::size_t n = 6;
  for (std::size_t r = 0; r < n; ++r) {
    double zmax = -1e300;
    for (std::size_t c = 0; c < 3; ++c) zmax = std::max(zmax, point.at(r, c));
    double norm = 0.0;
    for (std::size_t c = 0; c < 3; ++c) norm += std::exp(point.at(r, c) - zmax);
    std::vector<double> p(3), a(3);
    double pa = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      p[c] = std::exp(point.at(r, c) - zmax) / norm;
      a[c] = std::log(q0[c]) - std::log(p[c]);
      pa += p[c] * a[c];
    }
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(x.grad()[r * 3 + c] == doctest::Approx(p[c] * (a[c] - pa) / static_cast<double>(n)).epsilon(1e-8));
    }
  }
}

TEST_CASE("row KL against a direct sum") {
  const Tensor p = log_of({0.5, 0.5});
  const Tensor q = log_of({0.25, 0.75});
  const double oracle = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(std::abs(kl_rows(p, q).item() - oracle) < 1e-12);
  CHECK(std::abs(oracle - 0.1438410362) < 1e-9);
  CHECK(kl_rows(p, p).item() == doctest::Approx(0.0));
  const Tensor a = random_matrix(20, 5, 1, 2.0);
  const Tensor b = random_matrix(20, 5, 2, 2.0);
  for (double v : kl_rows(a, b).data()) CHECK(v >= -1e-12);
  CHECK_THROWS_AS(kl_rows(a, random_matrix(20, 4, 3)), ShapeError);
}

TEST_CASE("contrastive matching terms") {
  const Tensor orig = random_matrix(4, 3, 5);
  const Tensor aug = random_matrix(4, 3, 6);
  const Tensor sa = Tensor::matrix(2, 2, {40, 0, 0, 0});
  const Tensor sb = Tensor::matrix(2, 2, {0, 40, 0, 0});
  const double consistency = mean(kl_rows(orig, aug)).item();
  const bool none[] = {false, false};
  const bool first[] = {true, false};
  CHECK(cpbm_loss(orig, aug, sa, sb, none, 0.1).item() == doctest::Approx(consistency));
  // The first pair disagrees by ~40 nats, capped at the margin.
  CHECK(cpbm_loss(orig, aug, sa, sb, first, 0.1, 5.0).item() == doctest::Approx(consistency - 0.1 * 5.0));
  CHECK(cpbm_loss(orig, orig, sa, sb, none, 0.1).item() == doctest::Approx(0.0));
  const bool wrong[] = {true};
  CHECK_THROWS_AS(cpbm_loss(orig, aug, sa, sb, wrong, 0.1), ShapeError);
}

TEST_CASE("mix-up matching") {
  const Tensor logits = random_matrix(5, 3, 7);
  const std::vector<int> labels = {0, 2, 1, 1, 0};
  std::vector<double> onehot(15, 0.0);
  for (std::size_t r = 0; r < 5; ++r) onehot[r * 3 + static_cast<std::size_t>(labels[r])] = 1.0;
  const Tensor targets(Shape{5, 3}, onehot);
  SUBCASE("one-hot targets reduce to cross-entropy") {
    CHECK(mupbm_loss(logits, targets).item() == doctest::Approx(cross_entropy(logits, labels).item()).epsilon(1e-12));
  }
  SUBCASE("KL(q || p) against a direct sum") {
    const Tensor q = softmax(random_matrix(5, 3, 8));
    const Tensor p = softmax(logits);
    double oracle = 0.0;
    for (std::size_t i = 0; i < 15; ++i) oracle += q[i] * std::log(q[i] / p[i]);
    CHECK(mupbm_loss(logits, q).item() == doctest::Approx(oracle / 5.0).epsilon(1e-10));
    CHECK(mupbm_loss(logits, q, MixupDirection::prediction_to_target, 0.0).item() ==
          doctest::Approx(mean(kl_rows(logits, log(q))).item()).epsilon(1e-10));
  }
  SUBCASE("targets carry no gradient") {
    Tensor q = softmax(random_matrix(5, 3, 9));
    q.set_requires_grad();
    backward(mupbm_loss(logits.detach().set_requires_grad(), q));
    CHECK_FALSE(q.has_grad());
  }
  SUBCASE("targets must be distributions") {
    CHECK_THROWS_AS(mupbm_loss(logits, Tensor(Shape{5, 3}, 0.5)), ValidationError);
    CHECK_THROWS_AS(mupbm_loss(logits, Tensor(Shape{5, 2}, 0.5)), ShapeError);
  }
}

TEST_CASE("mixed soft labels interpolate one-hots and target predictions") {
  BatchBundle b;
  b.source_y = {1, 0};
  b.mix_first = {0, 2};
  b.mix_second = {1, 0};
  b.mix_beta = {0.25, 0.5};
  const Tensor tgt = Tensor::matrix(1, 2, {0.0, 0.0});
  const Tensor s = mixed_soft_labels(b, tgt, 2);
  CHECK(s.at(0, 0) == doctest::Approx(0.75));
  CHECK(s.at(0, 1) == doctest::Approx(0.25));
  CHECK(s.at(1, 0) == doctest::Approx(0.25));
  CHECK(s.at(1, 1) == doctest::Approx(0.75));
}

TEST_CASE("task matching") {
  const Tensor rot(Shape{6, 4}, 0.0);
  const std::map<Head, Tensor> logits = {{Head::rotation, rot}};
  const std::map<Head, std::vector<int>> labels = {{Head::rotation, {0, 1, 2, 3, 0, 1}}};
  CHECK(tpbm_loss(logits, labels).item() == doctest::Approx(std::log(4.0)));
  const std::map<Head, Tensor> two = {{Head::rotation, rot}, {Head::flip, Tensor(Shape{6, 2}, 0.0)}};
  const std::map<Head, std::vector<int>> two_labels = {{Head::rotation, {0, 1, 2, 3, 0, 1}},
                                                       {Head::flip, {0, 1, 0, 1, 0, 1}}};
  CHECK(tpbm_loss(two, two_labels).item() == doctest::Approx((std::log(4.0) + std::log(2.0)) / 2.0));
  CHECK_THROWS_AS(tpbm_loss({}, {}), ValidationError);
  const std::map<Head, Tensor> wrong = {{Head::flip, rot}};
  const std::map<Head, std::vector<int>> wrong_labels = {{Head::flip, {0, 1, 0, 1, 0, 1}}};
  CHECK_THROWS_AS(tpbm_loss(wrong, wrong_labels), ShapeError);
}

TEST_CASE("MMD matches a double-loop oracle") {
  const Tensor s = random_matrix(7, 3, 20);
  const Tensor t = random_matrix(5, 3, 21, 1.5);
  const std::vector<double> bws = median_bandwidths(s, t);
  REQUIRE(bws.size() == 4);
  CHECK(bws[1] == doctest::Approx(2.0 * bws[0]));
  const double oracle = rbf_oracle(s, s, bws) + rbf_oracle(t, t, bws) - 2.0 * rbf_oracle(s, t, bws);
  CHECK(std::abs(mmd_distance(s, t, bws).item() - oracle) < 1e-10);
  CHECK(mmd_distance(s, t, bws).item() == doctest::Approx(mmd_distance(t, s, bws).item()).epsilon(1e-12));
  const std::size_t perm[] = {3, 0, 6, 1, 5, 2, 4};
  CHECK(std::abs(mmd_distance(s, index_rows(s, perm), bws).item()) < 1e-12);
  double lin = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double ms = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < 7; ++i) ms += s.at(i, c) / 7.0;
    for (std::size_t i = 0; i < 5; ++i) mt += t.at(i, c) / 5.0;
    lin += (ms - mt) * (ms - mt);
  }
  CHECK(mmd_distance(s, t, {}, KernelKind::linear).item() == doctest::Approx(lin).epsilon(1e-12));
  CHECK_THROWS_AS(mmd_distance(s, t, std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(mmd_distance(s, random_matrix(3, 2, 1), bws), ShapeError);
}

TEST_CASE("CORAL matches explicit covariances") {
  const Tensor s = random_matrix(9, 3, 30);
  const Tensor t = random_matrix(6, 3, 31, 2.0);
  const auto cs = covariance_oracle(s);
  const auto ct = covariance_oracle(t);
  double fro = 0.0;
  for (std::size_t i = 0; i < 9; ++i) fro += std::pow(cs[i] - ct[i], 2);
  CHECK(coral_distance(s, t).item() == doctest::Approx(fro / 36.0).epsilon(1e-12));
  CHECK(coral_distance(s, t).item() == doctest::Approx(coral_distance(t, s).item()).epsilon(1e-12));
  // Variances 2 and 5 in one dimension: (5 - 2)^2 / 4.
  const Tensor a = Tensor::matrix(2, 1, {0.0, 2.0});
  const Tensor b = Tensor::matrix(2, 1, {0.0, std::sqrt(10.0)});
  CHECK(coral_distance(a, b).item() == doctest::Approx(2.25).epsilon(1e-12));
  const std::size_t perm[] = {8, 7, 6, 5, 4, 3, 2, 1, 0};
  CHECK(std::abs(coral_distance(s, index_rows(s, perm)).item()) < 1e-12);
  CHECK_THROWS_AS(coral_distance(Tensor::matrix(1, 1, {1.0}), a), ValidationError);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate(4));
  c.lambda_M = -1.0;
  CHECK_THROWS_AS(c.validate(4), ValidationError);
  c = LossConfig{};
  c.marginal_momentum = 0.0;
  CHECK_THROWS_AS(c.validate(4), ValidationError);
  c = LossConfig{};
  c.entropy_ceiling = 10.0;
  CHECK_THROWS_AS(c.validate(4), ValidationError);
}

TEST_CASE("zero weights reduce the objective to cross-entropy") {
  const std::size_t sizes[] = {6, 5, 3};
  const ModelParams params = init_params(sizes, 3);
  BatchBundle b;
  b.source_x = random_matrix(8, 6, 40);
  b.source_y = {0, 1, 2, 0, 1, 2, 0, 1};
  b.target_x = random_matrix(8, 6, 41);
  LossConfig cfg;
  cfg.lambda_M = cfg.lambda_C = cfg.lambda_U = cfg.lambda_S = 0.0;
  MarginalTracker t(3, 0.1);
  const auto [total, report] = total_objective(b, params, cfg, t);
  const double ce = cross_entropy(forward(params, b.source_x), b.source_y).item();
  CHECK(total.item() == ce);
  CHECK(report.supervised == ce);
  CHECK(t.updates() == 0);

  cfg.lambda_C = 1.0;
  CHECK_THROWS_AS(total_objective(b, params, cfg, t), ValidationError);
}

TEST_CASE("entropy terms stay within [0, ln K]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor logits = random_matrix(12, 5, seed, 3.0);
    MarginalTracker t(5, 0.3);
    const MimTerms m = mim_terms(logits, t, std::log(5.0));
    CHECK(m.confidence >= 0.0);
    CHECK(m.confidence <= std::log(5.0) + 1e-12);
    CHECK(t.entropy() >= 0.0);
    CHECK(t.entropy() <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("zero weights give the supervised gradient bitwise") {
  const std::size_t sizes[] = {6, 5, 3};
  BatchBundle b;
  b.source_x = random_matrix(8, 6, 50);
  b.source_y = {0, 1, 2, 0, 1, 2, 0, 1};
  b.target_x = random_matrix(8, 6, 51);
  LossConfig cfg;
  cfg.lambda_M = cfg.lambda_C = cfg.lambda_U = cfg.lambda_S = 0.0;
  ModelParams a = init_params(sizes, 4);
  ModelParams c = init_params(sizes, 4);
  MarginalTracker t(3, 0.1);
  backward(total_objective(b, a, cfg, t).first);
  backward(cross_entropy(forward(c, b.source_x), b.source_y));
  const auto pa = a.parameters();
  const auto pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!pa[i].has_grad()) {
      CHECK_FALSE(pc[i].has_grad());
      continue;
    }
    CHECK(std::ranges::equal(pa[i].grad(), pc[i].grad()));
  }
}
