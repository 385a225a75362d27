#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cstnet/color_transform.hpp"
#include "cstnet/error.hpp"
#include "cstnet/layers.hpp"
#include "cstnet/network.hpp"
#include "cstnet/rng.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// A scalar function of several real blocks together with its analytic
/// gradient at the current point.
struct GradProblem {
  struct Block {
    std::string name;
    std::span<double> values;
    std::vector<double> analytic;
  };

  std::vector<Block> blocks;
  std::function<double()> loss;
  // Piecewise-selection state (ReLU masks, pooling winners). Optional.
  std::function<std::vector<std::uint32_t>()> pattern;
  std::shared_ptr<void> state;
};

struct GradCheckOptions {
  std::size_t probes = 50;
  double epsilon = 1e-5;
  std::uint64_t seed = 7;
  std::size_t max_retries = 100;  // per probe, when landing near a kink
  double kink_margin = 10.0;     // in units of epsilon
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t reprobes = 0;
  std::size_t skipped = 0;
  std::string worst;  // "block[index]: analytic vs numeric"
};

/// Central differences at random coordinates. A probe whose ±margin·ε
/// neighbourhood changes the activation pattern is redrawn; after
/// `max_retries` redraws it is skipped and counted.
inline GradCheckReport run_grad_check(GradProblem& problem, const GradCheckOptions& opt) {
  if (problem.blocks.empty()) throw InputError("gradient check has nothing to probe");
  RngStream rng(opt.seed, "gradcheck");
  GradCheckReport report;
  const std::vector<std::uint32_t> base_pattern = problem.pattern ? problem.pattern() : std::vector<std::uint32_t>{};

  for (std::size_t probe = 0; probe < opt.probes; ++probe) {
    bool done = false;
    for (std::size_t attempt = 0; attempt <= opt.max_retries && !done; ++attempt) {
      auto& block = problem.blocks[rng.uniform_index(problem.blocks.size())];
      const std::size_t i = rng.uniform_index(block.values.size());
      double& theta = block.values[i];
      const double saved = theta;
      if (problem.pattern) {
        theta = saved + opt.kink_margin * opt.epsilon;
        const bool up_same = problem.pattern() == base_pattern;
        theta = saved - opt.kink_margin * opt.epsilon;
        const bool down_same = problem.pattern() == base_pattern;
        theta = saved;
        if (!up_same || !down_same) {
          ++report.reprobes;
          continue;
        }
      }
      theta = saved + opt.epsilon;
      const double up = problem.loss();
      theta = saved - opt.epsilon;
      const double down = problem.loss();
      theta = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double analytic = block.analytic[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s[%zu]: analytic %.9e numeric %.9e", block.name.c_str(), i, analytic,
                      numeric);
        report.worst = buf;
      }
      ++report.checked;
      done = true;
    }
    if (!done) ++report.skipped;
  }
  return report;
}

namespace detail {

inline std::vector<double> to_vector(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

inline double dot(const TensorD& a, const TensorD& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Mean cross-entropy reduced in extended precision. Rounding the loss itself
// to double costs ~4e-16 per evaluation, which at epsilon 1e-5 is already
// 1e-6 relative on gradients near 1e-5.
inline long double xent_extended(const TensorD& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  long double total = 0.0L;
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = logits.data().data() + s * k;
    const long double m = *std::max_element(z, z + k);
    long double sum = 0.0L;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<long double>(z[j]) - m);
    total += m + std::log(sum) - z[static_cast<std::size_t>(labels[s])];
  }
  return total / static_cast<long double>(n);
}

inline TensorD uniform_tensor(const Shape& shape, double lo, double hi, RngStream& rng) {
  TensorD t(shape);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Uniform magnitude in [0.1, 1] with random sign, keeping ReLU inputs off the kink.
inline TensorD away_from_zero(const Shape& shape, RngStream& rng) {
  TensorD t(shape);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.1 + 0.9 * rng.uniform());
  return t;
}

}  // namespace detail

inline std::vector<std::string> gradcheck_layer_names() {
  return {"color_transform", "color_transform_per_sample", "color_offset", "conv2d", "maxpool2",
          "avgpool",         "relu",                       "dense",        "softmax_xent"};
}

/// A random small instance of one layer under the loss ⟨layer(x), g⟩ for a
/// fixed random g (softmax_xent uses its own loss).
inline GradProblem make_layer_problem(std::string_view layer, std::uint64_t seed = 11) {
  RngStream rng(seed, "gradcheck/" + std::string(layer));
  struct State {
    std::vector<TensorD> tensors;
    std::vector<int> labels;
  };
  auto st = std::make_shared<State>();
  auto& t = st->tensors;
  t.reserve(8);
  GradProblem p;
  p.state = st;
  auto block = [](std::string name, TensorD& v, const TensorD& g) {
    return GradProblem::Block{std::move(name), v.data(), detail::to_vector(g)};
  };

  if (layer == "color_transform" || layer == "color_transform_per_sample") {
    const bool per_sample = layer == "color_transform_per_sample";
    t.push_back(detail::uniform_tensor({2, 3, 4, 4}, 0.0, 1.0, rng));
    t.push_back(per_sample ? TensorD::normal({2, 3, 3}, 0.5, rng) : TensorD::normal({3, 3}, 0.5, rng));
    t.push_back(TensorD::normal({2, 3, 4, 4}, 1.0, rng));
    p.loss = [st] { return detail::dot(color_transform_forward(st->tensors[0], st->tensors[1]), st->tensors[2]); };
    const auto g = color_transform_backward(t[0], t[1], t[2]);
    p.blocks = {block("x", t[0], g.dx), block("W", t[1], g.dw)};
  } else if (layer == "color_offset") {
    t.push_back(detail::uniform_tensor({2, 3, 4, 4}, 0.0, 1.0, rng));
    t.push_back(TensorD::normal({3}, 0.5, rng));
    t.push_back(TensorD::normal({2, 3, 4, 4}, 1.0, rng));
    p.loss = [st] { return detail::dot(channel_offset_forward(st->tensors[0], st->tensors[1]), st->tensors[2]); };
    p.blocks = {block("x", t[0], t[2]), block("b", t[1], channel_offset_backward(t[2]))};
  } else if (layer == "conv2d") {
    t.push_back(detail::uniform_tensor({2, 3, 9, 9}, 0.0, 1.0, rng));
    t.push_back(TensorD::normal({4, 3, 3, 3}, 0.2, rng));
    t.push_back(TensorD::normal({4}, 0.1, rng));
    t.push_back(TensorD::normal({2, 4, 5, 5}, 1.0, rng));
    p.loss = [st] {
      auto& v = st->tensors;
      return detail::dot(conv2d_forward(v[0], v[1], v[2], 2, 1), v[3]);
    };
    const auto g = conv2d_backward(t[0], t[1], t[3], 2, 1);
    p.blocks = {block("x", t[0], g.dx), block("weight", t[1], g.dweight), block("bias", t[2], g.dbias)};
  } else if (layer == "maxpool2") {
    // A random permutation of spread-out values: no two window entries are
    // within 10ε of each other.
    std::vector<std::size_t> order(2 * 3 * 6 * 6);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    TensorD x({2, 3, 6, 6});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(order[i]) - 1.0;
    t.push_back(std::move(x));
    t.push_back(TensorD::normal({2, 3, 3, 3}, 1.0, rng));
    p.loss = [st] { return detail::dot(maxpool2_forward(st->tensors[0]).y, st->tensors[1]); };
    p.pattern = [st] { return maxpool2_forward(st->tensors[0]).argmax; };
    const auto fwd = maxpool2_forward(t[0]);
    p.blocks = {block("x", t[0], maxpool2_backward<double>(t[0].shape(), fwd.argmax, t[1]))};
  } else if (layer == "avgpool") {
    t.push_back(detail::uniform_tensor({2, 3, 8, 8}, 0.0, 1.0, rng));
    t.push_back(TensorD::normal({2, 3, 2, 2}, 1.0, rng));
    p.loss = [st] { return detail::dot(avgpool_forward(st->tensors[0], 4), st->tensors[1]); };
    p.blocks = {block("x", t[0], avgpool_backward(t[0].shape(), t[1], 4))};
  } else if (layer == "relu") {
    t.push_back(detail::away_from_zero({2, 3, 5, 5}, rng));
    t.push_back(TensorD::normal({2, 3, 5, 5}, 1.0, rng));
    p.loss = [st] { return detail::dot(relu_forward(st->tensors[0]), st->tensors[1]); };
    p.pattern = [st] {
      std::vector<std::uint32_t> mask;
      for (const double v : st->tensors[0].data()) mask.push_back(v > 0 ? 1u : 0u);
      return mask;
    };
    p.blocks = {block("x", t[0], relu_backward(t[0], t[1]))};
  } else if (layer == "dense") {
    t.push_back(TensorD::normal({3, 7}, 1.0, rng));
    t.push_back(TensorD::normal({7, 5}, 0.3, rng));
    t.push_back(TensorD::normal({5}, 0.1, rng));
    t.push_back(TensorD::normal({3, 5}, 1.0, rng));
    p.loss = [st] {
      auto& v = st->tensors;
      return detail::dot(dense_forward(v[0], v[1], v[2]), v[3]);
    };
    const auto g = dense_backward(t[0], t[1], t[3]);
    p.blocks = {block("x", t[0], g.dx), block("weight", t[1], g.dweight), block("bias", t[2], g.dbias)};
  } else if (layer == "softmax_xent") {
    t.push_back(TensorD::normal({4, 10}, 2.0, rng));
    for (int s = 0; s < 4; ++s) st->labels.push_back(static_cast<int>(rng.uniform_index(10)));
    p.loss = [st] { return softmax_cross_entropy(st->tensors[0], st->labels).loss; };
    p.blocks = {block("logits", t[0], softmax_cross_entropy(t[0], st->labels).dlogits)};
  } else {
    throw InputError("unknown layer '" + std::string(layer) + "' for gradient check");
  }
  return p;
}

/// A full 64-bit network of the given variant on a random batch. Zero- or
/// identity-initialized front parameters are randomized so every parameter
/// has a non-trivial gradient.
inline GradProblem make_network_problem(Variant variant, std::size_t batch = 1, std::uint64_t seed = 3) {
  struct State {
    Model<double> model;
    TensorD x;
    std::vector<int> labels;
  };
  auto st = std::make_shared<State>();
  NetworkSpec spec = NetworkSpec::standard(variant);
  if (variant == Variant::cst_fixed) {
    spec.fixed_transform = ColorMatrix{{0.6, 0.3, 0.1, -0.2, 0.9, 0.3, 0.1, -0.4, 1.1}};
  }
  st->model = Model<double>::create(spec, seed);
  RngStream rng(seed, "gradcheck/network");
  if (auto* w = st->model.find("cst.W"); w && w->trainable) {
    for (std::size_t i = 0; i < 9; ++i) w->value[i] += 0.05 * rng.normal();
  }
  if (auto* w = st->model.find("predictor.fc2.weight")) {
    for (auto& v : w->value.data()) v = 0.05 * rng.normal();
  }
  if (auto* b = st->model.find("predictor.fc2.bias")) {
    for (auto& v : b->value.data()) v = 0.05 * rng.normal();
  }
  st->x = detail::uniform_tensor({batch, 3, spec.image_size, spec.image_size}, 0.0, 1.0, rng);
  for (std::size_t s = 0; s < batch; ++s) st->labels.push_back(static_cast<int>(rng.uniform_index(spec.classes)));

  ForwardTrace<double> trace;
  const auto logits = st->model.forward(st->x, &trace);
  const auto loss = softmax_cross_entropy(logits, st->labels);
  const auto dx = st->model.backward(trace, loss.dlogits, true);

  GradProblem p;
  p.state = st;
  for (auto& prm : st->model.parameters()) {
    if (!prm.trainable) continue;
    p.blocks.push_back({prm.name, prm.value.data(), detail::to_vector(prm.grad)});
  }
  p.blocks.push_back({"input", st->x.data(), detail::to_vector(*dx)});
  // Reported relative to the starting loss so the extended-precision digits survive the cast.
  const long double start = detail::xent_extended(logits, st->labels);
  p.loss = [st, start] {
    return static_cast<double>(detail::xent_extended(st->model.forward(st->x), st->labels) - start);
  };
  p.pattern = [st] {
    ForwardTrace<double> tr;
    st->model.forward(st->x, &tr);
    return tr.activation_pattern(st->model.spec());
  };
  return p;
}

inline GradCheckReport grad_check_layer(std::string_view layer, const GradCheckOptions& opt = {}) {
  auto problem = make_layer_problem(layer, opt.seed + 1000);
  return run_grad_check(problem, opt);
}

/// Batch 1 by default: every extra sample adds ReLU/pool units that can flip
/// under a color-matrix perturbation, and such probes get redrawn.
inline GradCheckReport grad_check_network(Variant variant, const GradCheckOptions& opt = {}, std::size_t batch = 1) {
  auto problem = make_network_problem(variant, batch, opt.seed + 2000);
  return run_grad_check(problem, opt);
}

/// Same network problem, probing only the trainable front transform
/// (cst.* and predictor.*), which uniform block sampling rarely reaches.
inline GradCheckReport grad_check_network_front(Variant variant, const GradCheckOptions& opt = {},
                                                std::size_t batch = 1) {
  auto problem = make_network_problem(variant, batch, opt.seed + 2000);
  std::erase_if(problem.blocks, [](const GradProblem::Block& b) {
    return !(b.name.starts_with("cst.") || b.name.starts_with("predictor."));
  });
  if (problem.blocks.empty()) throw InputError("variant " + std::string(to_string(variant)) + " has no trainable front");
  return run_grad_check(problem, opt);
}

}  // namespace cstnet
