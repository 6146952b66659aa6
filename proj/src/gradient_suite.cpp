// SPDX-License-Identifier: Apache-2.0
#include "instapbm/gradient_suite.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>

#include "instapbm/errors.hpp"
#include "instapbm/grad_check.hpp"
#include "instapbm/losses.hpp"
#include "instapbm/network.hpp"
#include "instapbm/rng.hpp"
#include "instapbm/transforms.hpp"

namespace instapbm {

namespace {

using Fn = std::function<Tensor(const Tensor&)>;

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

struct Instance {
  Fn fn;
  Tensor point;
};

using Builder = std::function<Instance(Rng&)>;

struct Case {
  std::string name;
  Builder build;
};

Tensor random_tensor(Rng& rng, Shape shape, double sigma = 1.0) {
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from zero by `gap`, random sign.
Tensor away_from_zero(Rng& rng, Shape shape, double gap) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) x = std::copysign(gap + std::abs(x), x);
  return t;
}

Tensor positive(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) x = 0.5 + std::abs(x);
  return t;
}

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts a tensor to a scalar with fixed random weights.
Fn weighted(Rng& rng, const Shape& out_shape, std::function<Tensor(const Tensor&)> op) {
  const Tensor w = random_tensor(rng, out_shape);
  return [w, op = std::move(op)](const Tensor& x) { return sum(op(x) * w); };
}

Instance unary(Rng& rng, Tensor point, std::function<Tensor(const Tensor&)> op) {
  const Shape out = op(point.detach()).shape();
  return {weighted(rng, out, std::move(op)), std::move(point)};
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(draw(rng, 0, k - 1));
  return y;
}

Tensor random_simplex_rows(Rng& rng, std::size_t rows, std::size_t k) {
  return softmax(random_tensor(rng, Shape{rows, k}, 1.5)).detach();
}

// Small network and joint batch with every auxiliary input populated.
struct ObjectiveFixture {
  ModelParams params;
  BatchBundle bundle;
  LossConfig cfg;
  MarginalTracker tracker{3, 0.1};
};

ObjectiveFixture make_fixture(Rng& rng) {
  constexpr std::size_t side = 4;
  constexpr std::size_t k = 3;
  const std::size_t ns = draw(rng, 3, 5);
  const std::size_t nt = ns;
  ObjectiveFixture f;
  const std::size_t sizes[] = {side * side, 6, 5, k};
  f.params = init_params(sizes, rng(), kPretextHeads);
  for (auto& t : f.params.parameters()) {
    for (auto& v : t.mutable_data()) v += 0.05 * std::normal_distribution<double>(0.0, 1.0)(rng);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto images = [&](std::size_t n) {
    ImageBatch b(n, side, side);
    for (auto& v : b.data.mutable_data()) v = unit(rng);
    return b;
  };
  const ImageBatch src = images(ns);
  const ImageBatch tgt = images(nt);
  f.bundle.source_x = src.flatten();
  f.bundle.target_x = tgt.flatten();
  f.bundle.source_y = random_labels(rng, ns, k);
  f.bundle.source_y[0] = 0;
  f.bundle.source_y[1] = 1;
  const Tensor parts[] = {f.bundle.source_x, f.bundle.target_x};
  const Tensor joint = concat_rows(parts);
  const ImageBatch joint_images(reshape(joint, Shape{ns + nt, side, side}));
  f.bundle.augmented_x = apply_semantic_preserving(joint_images, rng(), PreservingConfig::all()).flatten();
  f.bundle.pair_first.resize(ns);
  std::iota(f.bundle.pair_first.begin(), f.bundle.pair_first.end(), 0);
  for (std::size_t i = 0; i < ns; ++i) f.bundle.pair_second.push_back((i + 1) % ns);
  f.bundle.mix_first.resize(ns + nt);
  std::iota(f.bundle.mix_first.begin(), f.bundle.mix_first.end(), 0);
  for (std::size_t i = 0; i < ns + nt; ++i) {
    f.bundle.mix_second.push_back((i + ns) % (ns + nt));
    f.bundle.mix_beta.push_back(unit(rng));
  }
  f.bundle.mixed_x = mix_rows(joint, index_rows(joint, f.bundle.mix_second), f.bundle.mix_beta);
  for (auto task : {TransformingTask::rotate90, TransformingTask::vflip, TransformingTask::patch_location}) {
    auto [moved, labels] = apply_semantic_transforming(joint_images, task, rng());
    f.bundle.task_inputs.emplace(head_for(task), std::make_pair(moved.flatten(), std::move(labels)));
  }
  // Soft labels are stop-gradient quantities: freeze them at the base point.
  const Tensor tgt_logits = forward(f.params, f.bundle.target_x).detach();
  f.bundle.mix_targets = mixed_soft_labels(f.bundle, tgt_logits, k);
  const double skewed[] = {0.7, 0.2, 0.1};
  f.tracker.reset(skewed);
  return f;
}

// Replaces one parameter tensor of `params` by `point` (reshaped).
ModelParams with_parameter(const ModelParams& base, std::size_t which, const Tensor& point) {
  ModelParams p = base;
  auto swap_in = [&](Tensor& slot) { slot = reshape(point, slot.shape()); };
  std::size_t i = 0;
  for (auto& layer : p.phi) {
    if (i++ == which) swap_in(layer.weight);
    if (i++ == which) swap_in(layer.bias);
  }
  if (i++ == which) swap_in(p.psi.weight);
  if (i++ == which) swap_in(p.psi.bias);
  for (auto& [head, layer] : p.omega) {
    if (i++ == which) swap_in(layer.weight);
    if (i++ == which) swap_in(layer.bias);
  }
  return p;
}

Instance objective_instance(Rng& rng, const std::function<void(LossConfig&)>& tweak) {
  auto f = std::make_shared<ObjectiveFixture>(make_fixture(rng));
  tweak(f->cfg);
  const auto params = f->params.parameters();
  const std::size_t which = draw(rng, 0, params.size() - 1);
  const Tensor point = reshape(params[which].detach(), Shape{params[which].size()});
  Fn fn = [f, which](const Tensor& x) {
    MarginalTracker tracker = f->tracker;
    return total_objective(f->bundle, with_parameter(f->params, which, x), f->cfg, tracker).first;
  };
  return {fn, point.detach()};
}

Instance dm_instance(Rng& rng, bool coral) {
  auto f = std::make_shared<ObjectiveFixture>(make_fixture(rng));
  const auto params = f->params.parameters();
  const std::size_t which = draw(rng, 0, 2 * f->params.phi.size() + 1);  // phi and psi only
  const Tensor point = reshape(params[which].detach(), Shape{params[which].size()});
  const auto bw = median_bandwidths(features(f->params, f->bundle.source_x).detach(),
                                    features(f->params, f->bundle.target_x).detach());
  Fn fn = [f, which, bw, coral](const Tensor& x) {
    const ModelParams p = with_parameter(f->params, which, x);
    const Tensor ce = cross_entropy(forward(p, f->bundle.source_x), f->bundle.source_y);
    const Tensor zs = features(p, f->bundle.source_x);
    const Tensor zt = features(p, f->bundle.target_x);
    const Tensor d = coral ? coral_distance(zs, zt) : mmd_distance(zs, zt, bw);
    return ce + scale(d, 2.0);
  };
  return {fn, point.detach()};
}

std::vector<Case> all_cases() {
  std::vector<Case> c;
  auto rc = [](Rng& rng) { return Shape{draw(rng, 1, 4), draw(rng, 1, 5)}; };

  c.push_back({"add", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor b = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, s), [b](const Tensor& x) { return x + b; });
               }});
  c.push_back({"add_broadcast", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor b = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, Shape{s[1]}), [b](const Tensor& x) { return b + x; });
               }});
  c.push_back({"sub", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor b = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, s), [b](const Tensor& x) { return b - x; });
               }});
  c.push_back({"mul", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor b = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, s), [b](const Tensor& x) { return x * b; });
               }});
  c.push_back({"mul_self", [rc](Rng& rng) {
                 return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return x * x; });
               }});
  c.push_back({"div_numerator", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor b = away_from_zero(rng, s, 0.5);
                 return unary(rng, random_tensor(rng, s), [b](const Tensor& x) { return x / b; });
               }});
  c.push_back({"div_denominator", [rc](Rng& rng) {
                 const Shape s = rc(rng);
                 const Tensor a = random_tensor(rng, s);
                 return unary(rng, away_from_zero(rng, s, 0.5), [a](const Tensor& x) { return a / x; });
               }});
  c.push_back({"exp", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return exp(x); }); }});
  c.push_back({"log", [rc](Rng& rng) { return unary(rng, positive(rng, rc(rng)), [](const Tensor& x) { return log(x); }); }});
  c.push_back({"relu", [rc](Rng& rng) {
                 return unary(rng, away_from_zero(rng, rc(rng), 0.05), [](const Tensor& x) { return relu(x); });
               }});
  c.push_back({"neg", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return -x; }); }});
  c.push_back({"scale", [rc](Rng& rng) {
                 const double f = std::normal_distribution<double>(0.0, 2.0)(rng);
                 return unary(rng, random_tensor(rng, rc(rng)), [f](const Tensor& x) { return scale(x, f); });
               }});
  c.push_back({"add_scalar", [rc](Rng& rng) {
                 return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return add_scalar(x, 0.3); });
               }});
  c.push_back({"clamp_max", [rc](Rng& rng) {
                 // Keep every coordinate 0.05 away from the bound.
                 Tensor p = away_from_zero(rng, rc(rng), 0.05);
                 return unary(rng, p, [](const Tensor& x) { return clamp_max(x, 0.0); });
               }});
  c.push_back({"matmul_lhs", [](Rng& rng) {
                 const std::size_t m = draw(rng, 1, 4), n = draw(rng, 1, 4), p = draw(rng, 1, 4);
                 const Tensor b = random_tensor(rng, Shape{n, p});
                 return unary(rng, random_tensor(rng, Shape{m, n}), [b](const Tensor& x) { return matmul(x, b); });
               }});
  c.push_back({"matmul_rhs", [](Rng& rng) {
                 const std::size_t m = draw(rng, 1, 4), n = draw(rng, 1, 4), p = draw(rng, 1, 4);
                 const Tensor a = random_tensor(rng, Shape{m, n});
                 return unary(rng, random_tensor(rng, Shape{n, p}), [a](const Tensor& x) { return matmul(a, x); });
               }});
  c.push_back({"transpose", [rc](Rng& rng) {
                 return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return transpose(x); });
               }});
  c.push_back({"reshape", [](Rng& rng) {
                 const std::size_t m = draw(rng, 1, 4), n = draw(rng, 1, 4);
                 return unary(rng, random_tensor(rng, Shape{m, n}), [m, n](const Tensor& x) { return reshape(x, Shape{n, m}); });
               }});
  c.push_back({"sum_all", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return sum(x); }); }});
  c.push_back({"sum_axis0", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return sum(x, 0); }); }});
  c.push_back({"sum_axis1", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return sum(x, 1); }); }});
  c.push_back({"mean_all", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return mean(x); }); }});
  c.push_back({"mean_axis1", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return mean(x, 1); }); }});
  c.push_back({"max_axis1", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return max(x, 1); }); }});
  c.push_back({"max_all", [rc](Rng& rng) { return unary(rng, random_tensor(rng, rc(rng)), [](const Tensor& x) { return max(x); }); }});
  c.push_back({"log_softmax", [](Rng& rng) {
                 return unary(rng, random_tensor(rng, Shape{draw(rng, 1, 4), draw(rng, 2, 5)}, 2.0),
                              [](const Tensor& x) { return log_softmax(x); });
               }});
  c.push_back({"softmax", [](Rng& rng) {
                 return unary(rng, random_tensor(rng, Shape{draw(rng, 1, 4), draw(rng, 2, 5)}, 2.0),
                              [](const Tensor& x) { return softmax(x); });
               }});
  c.push_back({"index_rows", [](Rng& rng) {
                 const std::size_t n = draw(rng, 2, 5);
                 std::vector<std::size_t> rows;
                 for (std::size_t i = 0; i < n + 2; ++i) rows.push_back(draw(rng, 0, n - 1));
                 return unary(rng, random_tensor(rng, Shape{n, 3}), [rows](const Tensor& x) { return index_rows(x, rows); });
               }});
  c.push_back({"slice_rows", [](Rng& rng) {
                 const std::size_t n = draw(rng, 2, 6);
                 const std::size_t b = draw(rng, 0, n - 1);
                 const std::size_t e = draw(rng, b + 1, n);
                 return unary(rng, random_tensor(rng, Shape{n, 3}), [b, e](const Tensor& x) { return slice_rows(x, b, e); });
               }});
  c.push_back({"concat_rows", [](Rng& rng) {
                 const Tensor other = random_tensor(rng, Shape{draw(rng, 1, 3), 3});
                 return unary(rng, random_tensor(rng, Shape{draw(rng, 1, 3), 3}), [other](const Tensor& x) {
                   const Tensor parts[] = {other, x, x};
                   return concat_rows(parts);
                 });
               }});
  c.push_back({"dense_relu_chain", [](Rng& rng) {
                 const Tensor w = random_tensor(rng, Shape{4, 3});
                 const Tensor b = random_tensor(rng, Shape{3}, 0.1);
                 return unary(rng, random_tensor(rng, Shape{draw(rng, 1, 4), 4}),
                              [w, b](const Tensor& x) { return log_softmax(relu(matmul(x, w) + b)); });
               }});

  // Loss terms.
  c.push_back({"mim_diversity_active", [](Rng& rng) {
                 const std::size_t k = draw(rng, 2, 5);
                 MarginalTracker base(k, 0.1);
                 std::vector<double> q(k, 0.1 / static_cast<double>(k - 1));
                 q[0] = 0.9;
                 base.reset(q);
                 const double ceiling = LossConfig{}.ceiling_for(k);
                 Fn fn = [base, ceiling](const Tensor& x) {
                   MarginalTracker t = base;
                   return mim_loss(x, t, ceiling);
                 };
                 return Instance{fn, random_tensor(rng, Shape{draw(rng, 2, 6), k}, 1.5)};
               }});
  c.push_back({"mim_diversity_gated", [](Rng& rng) {
                 const std::size_t k = draw(rng, 2, 5);
                 MarginalTracker base(k, 0.1);
                 const double ceiling = LossConfig{}.ceiling_for(k);
                 Fn fn = [base, ceiling](const Tensor& x) {
                   MarginalTracker t = base;
                   return mim_loss(x, t, ceiling);
                 };
                 return Instance{fn, random_tensor(rng, Shape{draw(rng, 2, 6), k}, 1.5)};
               }});
  c.push_back({"kl_rows_first", [](Rng& rng) {
                 const Shape s{draw(rng, 1, 4), draw(rng, 2, 5)};
                 const Tensor other = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, s), [other](const Tensor& x) { return kl_rows(x, other); });
               }});
  c.push_back({"kl_rows_second", [](Rng& rng) {
                 const Shape s{draw(rng, 1, 4), draw(rng, 2, 5)};
                 const Tensor other = random_tensor(rng, s);
                 return unary(rng, random_tensor(rng, s), [other](const Tensor& x) { return kl_rows(other, x); });
               }});
  c.push_back({"cpbm", [](Rng& rng) {
                 // Point stacks the original logits over the first pair member.
                 const std::size_t n = draw(rng, 2, 5), k = draw(rng, 2, 4);
                 const Tensor aug = random_tensor(rng, Shape{n, k});
                 const Tensor second = random_tensor(rng, Shape{n, k}, 2.0);
                 auto mask = std::make_shared<std::vector<char>>(n);
                 for (auto& m : *mask) m = static_cast<char>(draw(rng, 0, 1));
                 (*mask)[0] = 1;
                 Fn fn = [aug, second, mask, n](const Tensor& x) {
                   std::unique_ptr<bool[]> flags(new bool[n]);
                   for (std::size_t i = 0; i < n; ++i) flags[i] = (*mask)[i] != 0;
                   return cpbm_loss(slice_rows(x, 0, n), aug, slice_rows(x, n, 2 * n), second,
                                    std::span<const bool>(flags.get(), n), 0.5, 5.0);
                 };
                 const Tensor stacked[] = {random_tensor(rng, Shape{n, k}), random_tensor(rng, Shape{n, k}, 2.0)};
                 return Instance{fn, concat_rows(stacked).detach()};
               }});
  c.push_back({"mupbm_target_to_prediction", [](Rng& rng) {
                 const std::size_t n = draw(rng, 1, 5), k = draw(rng, 2, 5);
                 const Tensor q = random_simplex_rows(rng, n, k);
                 Fn fn = [q](const Tensor& x) { return mupbm_loss(x, q, MixupDirection::target_to_prediction); };
                 return Instance{fn, random_tensor(rng, Shape{n, k})};
               }});
  c.push_back({"mupbm_prediction_to_target", [](Rng& rng) {
                 const std::size_t n = draw(rng, 1, 5), k = draw(rng, 2, 5);
                 const Tensor q = random_simplex_rows(rng, n, k);
                 Fn fn = [q](const Tensor& x) { return mupbm_loss(x, q, MixupDirection::prediction_to_target, 0.05); };
                 return Instance{fn, random_tensor(rng, Shape{n, k})};
               }});
  c.push_back({"cross_entropy", [](Rng& rng) {
                 const std::size_t n = draw(rng, 1, 5), k = draw(rng, 2, 5);
                 const auto y = random_labels(rng, n, k);
                 Fn fn = [y](const Tensor& x) { return cross_entropy(x, y); };
                 return Instance{fn, random_tensor(rng, Shape{n, k}, 2.0)};
               }});
  c.push_back({"tpbm", [](Rng& rng) {
                 const std::size_t n = draw(rng, 1, 4);
                 std::map<Head, std::vector<int>> labels;
                 std::map<Head, Tensor> fixed;
                 labels[Head::rotation] = random_labels(rng, n, 4);
                 labels[Head::flip] = random_labels(rng, n, 2);
                 labels[Head::patch_location] = random_labels(rng, n, 4);
                 fixed[Head::flip] = random_tensor(rng, Shape{n, 2});
                 fixed[Head::patch_location] = random_tensor(rng, Shape{n, 4});
                 Fn fn = [labels, fixed](const Tensor& x) {
                   std::map<Head, Tensor> logits = fixed;
                   logits[Head::rotation] = x;
                   return tpbm_loss(logits, labels);
                 };
                 return Instance{fn, random_tensor(rng, Shape{n, 4})};
               }});
  c.push_back({"mmd_rbf_source", [](Rng& rng) {
                 const std::size_t m = draw(rng, 2, 5), n = draw(rng, 2, 5), d = draw(rng, 1, 4);
                 const Tensor zs = random_tensor(rng, Shape{m, d});
                 const Tensor zt = random_tensor(rng, Shape{n, d}, 1.3);
                 const auto bw = median_bandwidths(zs, zt);
                 Fn fn = [zt, bw](const Tensor& x) { return mmd_distance(x, zt, bw); };
                 return Instance{fn, zs};
               }});
  c.push_back({"mmd_rbf_target", [](Rng& rng) {
                 const std::size_t m = draw(rng, 2, 5), n = draw(rng, 2, 5), d = draw(rng, 1, 4);
                 const Tensor zs = random_tensor(rng, Shape{m, d});
                 const Tensor zt = random_tensor(rng, Shape{n, d}, 1.3);
                 const auto bw = median_bandwidths(zs, zt);
                 Fn fn = [zs, bw](const Tensor& x) { return mmd_distance(zs, x, bw); };
                 return Instance{fn, zt};
               }});
  c.push_back({"mmd_linear", [](Rng& rng) {
                 const std::size_t m = draw(rng, 2, 5), n = draw(rng, 2, 5), d = draw(rng, 1, 4);
                 const Tensor zt = random_tensor(rng, Shape{n, d});
                 Fn fn = [zt](const Tensor& x) { return mmd_distance(x, zt, {}, KernelKind::linear); };
                 return Instance{fn, random_tensor(rng, Shape{m, d})};
               }});
  c.push_back({"coral", [](Rng& rng) {
                 const std::size_t m = draw(rng, 3, 6), n = draw(rng, 3, 6), d = draw(rng, 1, 4);
                 const Tensor zt = random_tensor(rng, Shape{n, d}, 1.5);
                 Fn fn = [zt](const Tensor& x) { return coral_distance(x, zt); };
                 return Instance{fn, random_tensor(rng, Shape{m, d})};
               }});
  c.push_back({"network_forward", [](Rng& rng) {
                 const std::size_t sizes[] = {5, 4, 3, 3};
                 const ModelParams p = init_params(sizes, rng(), kPretextHeads);
                 const Head head = kPretextHeads[draw(rng, 0, 2)];
                 const std::size_t n = draw(rng, 1, 4);
                 return unary(rng, random_tensor(rng, Shape{n, 5}), [p, head](const Tensor& x) { return forward(p, x, head); });
               }});

  // Combined objectives, differentiated with respect to one parameter tensor.
  c.push_back({"total_objective", [](Rng& rng) { return objective_instance(rng, [](LossConfig&) {}); }});
  c.push_back({"total_objective_source_marginal", [](Rng& rng) {
                 return objective_instance(rng, [](LossConfig& l) {
                   l.mim_source = MarginalSource::source;
                   l.mixup_direction = MixupDirection::prediction_to_target;
                 });
               }});
  c.push_back({"dm_mmd_objective", [](Rng& rng) { return dm_instance(rng, false); }});
  c.push_back({"dm_coral_objective", [](Rng& rng) { return dm_instance(rng, true); }});
  return c;
}

}  // namespace

bool GradientSuiteResult::passed() const {
  if (cases.empty()) return false;
  for (const auto& c : cases)
    if (!c.passed()) return false;
  return true;
}

nlohmann::json GradientSuiteResult::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : cases) {
    list.push_back({{"name", c.name},
                    {"instances", c.instances},
                    {"failures", c.failures},
                    {"max_relative_error", c.max_relative_error},
                    {"passed", c.passed()}});
  }
  return {{"tolerance", tolerance}, {"seconds", seconds}, {"passed", passed()}, {"cases", list}};
}

std::vector<std::string> gradient_case_names() {
  std::vector<std::string> names;
  for (const auto& c : all_cases()) names.push_back(c.name);
  return names;
}

GradientSuiteResult run_gradient_suite(double tolerance, std::size_t instances, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradientSuiteResult result;
  result.tolerance = tolerance;
  for (const auto& c : all_cases()) {
    GradientCaseResult r;
    r.name = c.name;
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(derive_seed({seed, name_hash(c.name), i}));
      Instance inst = c.build(rng);
      const GradCheckReport report = grad_check(inst.fn, inst.point, 1e-5, tolerance);
      ++r.instances;
      r.failures += report.passed ? 0 : 1;
      r.max_relative_error = std::max(r.max_relative_error, report.max_relative_error);
    }
    result.cases.push_back(r);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace instapbm
