#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cstnet/color_stats.hpp"
#include "cstnet/color_transform.hpp"
#include "cstnet/config.hpp"
#include "cstnet/data.hpp"
#include "cstnet/error.hpp"
#include "cstnet/layers.hpp"
#include "cstnet/network.hpp"
#include "cstnet/optim.hpp"

namespace cstnet {

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Index of the largest logit in each row; ties go to the lowest index.
template <class T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits) {
  require_rank(logits.shape(), 2, "argmax input");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  std::vector<int> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[s * k + j] > logits[s * k + best]) best = j;
    }
    out[s] = static_cast<int>(best);
  }
  return out;
}

/// Forward-only pass of `logits_fn` over `indices` in fixed chunks. Loss is
/// the mean per-sample cross-entropy, summed in index order.
template <class LogitsFn>
EvalResult evaluate_with(LogitsFn&& logits_fn, const Dataset& ds, std::span<const std::size_t> indices,
                         const std::optional<ChannelMean>& mean = std::nullopt, std::size_t chunk = 250) {
  if (indices.empty()) throw InputError("evaluate: no samples");
  EvalResult r;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const auto x = batch_images<float>(ds, part, mean);
    const auto labels = batch_labels(ds, part);
    const auto logits = logits_fn(x);
    const auto loss = softmax_cross_entropy(logits, labels);
    for (const double l : loss.per_sample) r.loss += l;
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  }
  r.count = indices.size();
  r.loss /= static_cast<double>(r.count);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

inline EvalResult evaluate(const Model<float>& model, const Dataset& ds, std::span<const std::size_t> indices,
                           const std::optional<ChannelMean>& mean = std::nullopt) {
  return evaluate_with([&](const Tensor& x) { return model.forward(x); }, ds, indices, mean);
}

/// The variant's standard network; reads the fixed matrix file for cst-fixed.
inline NetworkSpec network_spec_for(const TrainConfig& cfg) {
  NetworkSpec spec = NetworkSpec::standard(cfg.variant);
  spec.color_offset = cfg.color_offset;
  if (cfg.variant == Variant::cst_fixed) spec.fixed_transform = read_color_matrix(cfg.fixed_transform);
  return spec;
}

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  Model<float> model;
  Split split;
  std::optional<ChannelMean> mean;
};

/// Split, mean (if enabled) and model construction shared by training and
/// checkpoint evaluation.
struct RunSetup {
  Split split;
  std::optional<ChannelMean> mean;
};

inline RunSetup prepare_run(const TrainConfig& cfg, const Dataset& ds) {
  RunSetup setup{make_split(ds, cfg.n_train, cfg.n_test, cfg.seed), std::nullopt};
  if (cfg.subtract_mean) setup.mean = channel_stats(ds, setup.split.train).mean;
  return setup;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch momentum SGD for `cfg.epochs` epochs, evaluating both splits
/// after each epoch. Fully determined by (cfg, ds).
inline TrainResult train_model(const TrainConfig& cfg, const Dataset& ds, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  ds.validate();
  TrainResult result;
  RunSetup setup = prepare_run(cfg, ds);
  result.split = std::move(setup.split);
  result.mean = setup.mean;
  result.model = Model<float>::create(network_spec_for(cfg), cfg.seed);
  SgdMomentum<float> opt(result.model, cfg.lr, cfg.momentum);

  using Clock = std::chrono::steady_clock;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = Clock::now();
    const auto order = epoch_order(result.split.train, cfg.seed, epoch);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const auto idx = std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
      const auto x = batch_images<float>(ds, idx, result.mean);
      const auto labels = batch_labels(ds, idx);
      ForwardTrace<float> trace;
      const auto logits = result.model.forward(x, &trace);
      const auto loss = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.loss) || loss.loss > cfg.divergence_limit) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batch_index << ": loss " << loss.loss;
        throw DivergenceError(msg.str());
      }
      result.model.backward(trace, loss.dlogits);
      opt.step(result.model);
    }
    for (const auto& p : result.model.parameters()) {
      for (const float v : p.value.data()) {
        if (!std::isfinite(v)) {
          throw DivergenceError("parameter " + p.name + " became non-finite in epoch " + std::to_string(epoch));
        }
      }
    }
    const double seconds =
        cfg.record_wall_time ? std::chrono::duration<double>(Clock::now() - started).count() : 0.0;
    const auto train_eval = evaluate(result.model, ds, result.split.train, result.mean);
    result.metrics.push_back({epoch, "train", train_eval.loss, train_eval.accuracy, seconds});
    if (on_epoch) on_epoch(result.metrics.back());
    if (!result.split.test.empty()) {
      const auto test_eval = evaluate(result.model, ds, result.split.test, result.mean);
      result.metrics.push_back({epoch, "test", test_eval.loss, test_eval.accuracy, seconds});
      if (on_epoch) on_epoch(result.metrics.back());
    }
  }
  return result;
}

inline std::string format_metrics_csv(std::span<const EpochMetrics> rows) {
  std::string out = "epoch,split,loss,accuracy,seconds\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%s,%.6f,%.6f,%.6f\n", r.epoch, r.split.c_str(), r.loss, r.accuracy,
                  r.seconds);
    out += line;
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

/// Highest test accuracy and the first epoch whose test accuracy reaches
/// `threshold` (empty if never).
struct RunSummary {
  double best_test_accuracy = 0.0;
  std::optional<std::size_t> first_epoch_reaching;
};

inline RunSummary summarize(std::span<const EpochMetrics> rows, double threshold) {
  RunSummary s;
  for (const auto& r : rows) {
    if (r.split != "test") continue;
    s.best_test_accuracy = std::max(s.best_test_accuracy, r.accuracy);
    if (!s.first_epoch_reaching && r.accuracy >= threshold) s.first_epoch_reaching = r.epoch;
  }
  return s;
}

}  // namespace cstnet
