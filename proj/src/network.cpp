// SPDX-License-Identifier: Apache-2.0
#include "instapbm/network.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "instapbm/binary_io.hpp"
#include "instapbm/errors.hpp"
#include "instapbm/rng.hpp"

namespace instapbm {

namespace {

DenseLayer make_layer(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = dist(rng);
  DenseLayer layer{Tensor(Shape{fan_in, fan_out}, std::move(w)), Tensor(Shape{fan_out}, 0.0)};
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

Tensor dense(const DenseLayer& layer, const Tensor& x) { return add(matmul(x, layer.weight), layer.bias); }

DenseLayer clone_layer(const DenseLayer& layer) {
  DenseLayer out{layer.weight.detach(), layer.bias.detach()};
  out.weight.set_requires_grad(true);
  out.bias.set_requires_grad(true);
  return out;
}

}  // namespace

std::string to_string(Head head) {
  switch (head) {
    case Head::label: return "label";
    case Head::rotation: return "rotation";
    case Head::flip: return "flip";
    case Head::patch_location: return "patch_location";
  }
  return "unknown";
}

Head head_from_string(const std::string& name) {
  for (Head h : {Head::label, Head::rotation, Head::flip, Head::patch_location})
    if (to_string(h) == name) return h;
  throw ValidationError("unknown head '" + name + "'");
}

std::size_t pretext_classes(Head head) {
  switch (head) {
    case Head::rotation: return 4;
    case Head::flip: return 2;
    case Head::patch_location: return 4;
    case Head::label: break;
  }
  throw ValidationError("pretext_classes: label head has no fixed class count");
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : phi) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(psi.weight);
  out.push_back(psi.bias);
  for (const auto& [head, l] : omega) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.size();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.layer_sizes = layer_sizes;
  out.seed = seed;
  for (const auto& l : phi) out.phi.push_back(clone_layer(l));
  out.psi = clone_layer(psi);
  for (const auto& [head, l] : omega) out.omega.emplace(head, clone_layer(l));
  return out;
}

ModelParams init_params(std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                        std::span<const Head> pretext_heads) {
  if (layer_sizes.size() < 3) {
    throw ValidationError("init_params: need input, latent and class sizes (got " +
                          std::to_string(layer_sizes.size()) + " sizes)");
  }
  for (auto s : layer_sizes)
    if (s < 1) throw ValidationError("init_params: layer sizes must be >= 1");
  if (layer_sizes.back() < 2) throw ValidationError("init_params: need at least 2 classes");

  ModelParams p;
  p.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  p.seed = seed;
  Rng rng(derive_seed({seed, 0x1a7e5}));
  for (std::size_t i = 0; i + 2 < layer_sizes.size(); ++i) p.phi.push_back(make_layer(layer_sizes[i], layer_sizes[i + 1], rng));
  p.psi = make_layer(p.latent_dim(), p.class_count(), rng);
  for (Head h : pretext_heads) {
    if (h == Head::label) throw ValidationError("init_params: label head is not a pretext head");
    Rng head_rng(derive_seed({seed, static_cast<std::uint64_t>(h)}));
    p.omega.insert_or_assign(h, make_layer(p.latent_dim(), pretext_classes(h), head_rng));
  }
  return p;
}

Tensor features(const ModelParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != params.input_dim()) {
    throw ShapeError("forward: input shape " + to_string(x.shape()) + " does not match input dim " +
                     std::to_string(params.input_dim()));
  }
  Tensor h = x;
  for (const auto& layer : params.phi) h = relu(dense(layer, h));
  return h;
}

Tensor head_logits(const ModelParams& params, const Tensor& z, Head head) {
  if (head == Head::label) return dense(params.psi, z);
  auto it = params.omega.find(head);
  if (it == params.omega.end()) throw ValidationError("forward: model has no '" + to_string(head) + "' head");
  return dense(it->second, z);
}

Tensor forward(const ModelParams& params, const Tensor& x, Head head) {
  if (head != Head::label && !params.omega.contains(head)) {
    throw ValidationError("forward: model has no '" + to_string(head) + "' head");
  }
  return head_logits(params, features(params, x), head);
}

void zero_grads(ModelParams& params) {
  for (auto& t : params.parameters()) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Optimizers

void OptimizerSettings::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("optimizer: learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("optimizer: weight decay must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("optimizer: momentum must lie in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ValidationError("optimizer: betas must lie in [0, 1)");
}

OptimState::OptimState(OptimizerSettings s) : settings(s) { settings.validate(); }

void step(ModelParams& params, OptimState& opt) {
  auto tensors = params.parameters();
  if (opt.first_moment.empty()) {
    for (const auto& t : tensors) {
      opt.first_moment.emplace_back(t.size(), 0.0);
      if (opt.settings.kind == OptimizerKind::adam) opt.second_moment.emplace_back(t.size(), 0.0);
    }
  }
  if (opt.first_moment.size() != tensors.size()) throw ValidationError("step: optimizer state does not match model");
  for (const auto& t : tensors)
    if (!t.has_grad()) throw ValidationError("step: parameter without gradient (call backward or zero_grads first)");

  const auto& s = opt.settings;
  ++opt.steps;
  const double bias1 = 1.0 - std::pow(s.beta1, static_cast<double>(opt.steps));
  const double bias2 = 1.0 - std::pow(s.beta2, static_cast<double>(opt.steps));
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    Tensor& t = tensors[p];
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = opt.first_moment[p];
    if (m.size() != w.size()) throw ValidationError("step: moment buffer shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g[i] + s.weight_decay * w[i];
      if (s.kind == OptimizerKind::sgd_momentum) {
        m[i] = s.momentum * m[i] + grad;
        w[i] -= s.learning_rate * m[i];
      } else {
        auto& v = opt.second_moment[p];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad * grad;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        w[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::size_t step_count) {
  nlohmann::json header;
  header["format"] = "instapbm-checkpoint";
  header["version"] = 1;
  header["layers"] = params.layer_sizes;
  header["seed"] = params.seed;
  header["steps"] = step_count;
  std::vector<std::string> heads;
  for (const auto& [h, l] : params.omega) heads.push_back(to_string(h));
  header["heads"] = heads;
  header["parameter_count"] = params.parameter_count();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write checkpoint " + path.string());
  os << header.dump() << '\n';
  for (const auto& t : params.parameters())
    for (double v : t.data()) binary::write_f64(os, v);
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::size_t* step_count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "instapbm-checkpoint") throw ValidationError("not an instapbm checkpoint");
  const auto sizes = header.at("layers").get<std::vector<std::size_t>>();
  std::vector<Head> heads;
  for (const auto& name : header.at("heads").get<std::vector<std::string>>()) heads.push_back(head_from_string(name));
  ModelParams params = init_params(sizes, header.at("seed").get<std::uint64_t>(), heads);
  if (params.parameter_count() != header.at("parameter_count").get<std::size_t>()) {
    throw ValidationError("checkpoint parameter count does not match its layer spec");
  }
  for (auto& t : params.parameters())
    for (double& v : t.mutable_data()) v = binary::read_f64(is);
  if (step_count) *step_count = header.at("steps").get<std::size_t>();
  return params;
}

}  // namespace instapbm
