#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cstnet/checkpoint.hpp"
#include "cstnet/color_stats.hpp"
#include "cstnet/config.hpp"
#include "cstnet/data.hpp"
#include "cstnet/error.hpp"
#include "cstnet/gradcheck.hpp"
#include "cstnet/train.hpp"

namespace cstnet::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kRuntimeError = 2 };

inline constexpr double kGradTolerance = 1e-6;
inline constexpr double kSummaryThreshold = 0.45;

namespace detail {

namespace fs = std::filesystem;

// Flags that override individual TrainConfig keys.
class ConfigFlags {
 public:
  void attach(CLI::App& app, bool with_variant) {
    if (with_variant) add(app, "--variant", "variant", "baseline | cst-global | cst-predictor | cst-fixed");
    add(app, "--seed", "seed", "random seed");
    add(app, "--epochs", "epochs", "training epochs");
    add(app, "--batch-size", "batch_size", "mini-batch size");
    add(app, "--lr", "lr", "learning rate");
    add(app, "--momentum", "momentum", "SGD momentum");
    add(app, "--n-train", "n_train", "training images");
    add(app, "--n-test", "n_test", "test images");
    add(app, "--subtract-mean", "subtract_mean", "subtract the training-split channel mean (true/false)");
    add(app, "--color-offset", "color_offset", "add a learned per-channel offset (cst-global)");
    add(app, "--fixed-transform", "fixed_transform", "matrix file for cst-fixed");
    add(app, "--data", "data_dir", "directory holding data_batch_*.bin");
    add(app, "--record-wall-time", "record_wall_time", "write measured epoch seconds (true/false)");
    add(app, "--divergence-limit", "divergence_limit", "abort when a batch loss exceeds this");
    app.add_option("--config", config_path_, "key = value config file");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path_.empty()) cfg = load_config_file(config_path_);
    for (const auto& [key, entry] : values_) {
      if (entry.option->count() > 0) set_config_value(cfg, key, *entry.value);
    }
    return cfg;
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::shared_ptr<std::string> value;
  };

  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    values_[key] = {app.add_option(flag, *value, help), value};
  }

  std::map<std::string, Entry> values_;
  std::string config_path_;
};

inline Dataset load_for(const TrainConfig& cfg) {
  Dataset ds = load_cifar10_dir(cfg.data_dir, cfg.n_train + cfg.n_test);
  ds.validate();
  return ds;
}

inline std::string format_accuracy(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline TrainResult run_training(const TrainConfig& cfg, const Dataset& ds, const fs::path& out_dir, std::ostream& out) {
  fs::create_directories(out_dir);
  write_text_file((out_dir / "config.txt").string(),
                  format_config(cfg) + "# rng = " + std::string(RngStream::kAlgorithm) + "\n");
  out << "training " << to_string(cfg.variant) << " (seed " << cfg.seed << ", " << cfg.epochs << " epochs)\n";
  auto result = train_model(cfg, ds, [&](const EpochMetrics& m) {
    out << "  epoch " << m.epoch << ' ' << m.split << " loss " << format_accuracy(m.loss) << " accuracy "
        << format_accuracy(m.accuracy) << '\n';
  });
  write_text_file((out_dir / "metrics.csv").string(), format_metrics_csv(result.metrics));
  save_checkpoint(result.model, cfg, (out_dir / "model.ckpt").string());
  return result;
}

inline double final_test_accuracy(const TrainResult& r) {
  for (auto it = r.metrics.rbegin(); it != r.metrics.rend(); ++it) {
    if (it->split == "test") return it->accuracy;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

inline int cmd_train(const ConfigFlags& flags, const std::string& out_flag, std::ostream& out) {
  TrainConfig cfg = flags.resolve();
  if (!out_flag.empty()) cfg.out_dir = out_flag;
  const std::string& out_dir = cfg.out_dir;
  cfg.validate();
  const Dataset ds = load_for(cfg);  // before anything is written
  if (cfg.variant == Variant::cst_fixed) read_color_matrix(cfg.fixed_transform);
  const auto result = run_training(cfg, ds, out_dir, out);
  out << "final test accuracy " << format_accuracy(final_test_accuracy(result)) << '\n';
  return kOk;
}

inline int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split_name,
                    std::ostream& out) {
  if (split_name != "test" && split_name != "train") throw InputError("--split must be train or test");
  Checkpoint ck = load_checkpoint(checkpoint);
  TrainConfig cfg = ck.config;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  const Dataset ds = load_for(cfg);
  const RunSetup setup = prepare_run(cfg, ds);
  const auto& idx = split_name == "test" ? setup.split.test : setup.split.train;
  const EvalResult r = evaluate(ck.model, ds, idx, setup.mean);
  out << "variant " << to_string(cfg.variant) << " split " << split_name << " samples " << r.count << '\n';
  out << "loss " << format_accuracy(r.loss) << " accuracy " << format_accuracy(r.accuracy) << '\n';
  return kOk;
}

inline int cmd_gradcheck(const std::string& layer, const std::string& variant, const GradCheckOptions& opt,
                         double tolerance, std::ostream& out) {
  struct Item {
    std::string label;
    GradCheckReport report;
  };
  std::vector<Item> items;
  if (!layer.empty()) {
    items.push_back({"layer " + layer, grad_check_layer(layer, opt)});
  } else {
    auto network = [&](Variant v) {
      const std::string name(to_string(v));
      items.push_back({"network " + name, grad_check_network(v, opt)});
      if (v == Variant::cst_global || v == Variant::cst_predictor) {
        items.push_back({"network " + name + " front only", grad_check_network_front(v, opt)});
      }
    };
    if (!variant.empty()) {
      network(parse_variant(variant));
    } else {
      for (const auto& name : gradcheck_layer_names()) items.push_back({"layer " + name, grad_check_layer(name, opt)});
      for (const Variant v : {Variant::baseline, Variant::cst_global, Variant::cst_predictor, Variant::cst_fixed}) {
        network(v);
      }
    }
  }
  double worst = 0.0;
  bool incomplete = false;
  for (const auto& it : items) {
    out << std::left << std::setw(36) << it.label << " max rel error " << std::scientific << std::setprecision(3)
        << it.report.max_rel_error << std::defaultfloat << "  probes " << it.report.checked << "  reprobes "
        << it.report.reprobes << "  skipped " << it.report.skipped << '\n';
    if (!it.report.worst.empty()) out << "    worst " << it.report.worst << '\n';
    worst = std::max(worst, it.report.max_rel_error);
    incomplete = incomplete || it.report.checked == 0;
  }
  out << "max relative error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
      << " (tolerance " << tolerance << ")\n";
  if (worst >= tolerance || incomplete) {
    out << "gradient check FAILED\n";
    return kRuntimeError;
  }
  out << "gradient check passed\n";
  return kOk;
}

inline int cmd_fit_kl(const TrainConfig& cfg, const std::string& mode_name, const std::string& out_file,
                      std::ostream& out) {
  const KlMode mode = parse_kl_mode(mode_name);
  const Dataset ds = load_for(cfg);
  const Split split = make_split(ds, cfg.n_train, 0, cfg.seed);
  const ChannelStats before = channel_stats(ds, split.train);
  const ColorMatrix w = fit_kl_transform(before, mode);
  if (auto parent = fs::path(out_file).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_color_matrix(w, out_file);

  // Recompute statistics on transformed pixels.
  constexpr std::size_t plane = Dataset::kSide * Dataset::kSide;
  const std::uint8_t* base = ds.images.data();
  const ChannelStats after =
      cstnet::detail::pixel_stats(split.train.size() * plane, [&](std::size_t i, std::size_t c) {
        const std::size_t img = split.train[i / plane];
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          acc += w(c, k) * static_cast<double>(base[img * Dataset::kImageBytes + k * plane + i % plane]) / 255.0;
        }
        return acc;
      });

  out << std::setprecision(9);
  out << mode_name << " transform from " << split.train.size() << " images (" << before.pixels << " pixels)\n";
  for (std::size_t r = 0; r < 3; ++r) out << "  " << w(r, 0) << ' ' << w(r, 1) << ' ' << w(r, 2) << '\n';
  out << "covariance after transform:\n";
  double max_off = 0.0, max_diag_dev = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    out << "  " << after.cov(r, 0) << ' ' << after.cov(r, 1) << ' ' << after.cov(r, 2) << '\n';
    for (std::size_t c = 0; c < 3; ++c) {
      if (r == c) max_diag_dev = std::max(max_diag_dev, std::abs(after.cov(r, c) - 1.0));
      else max_off = std::max(max_off, std::abs(after.cov(r, c)));
    }
  }
  out << "max |off-diagonal| " << max_off;
  if (mode == KlMode::whitening) out << "  max |diagonal - 1| " << max_diag_dev;
  out << "\nwrote " << out_file << '\n';
  return kOk;
}

inline int cmd_export(const std::string& checkpoint, const std::string& data_dir, std::size_t count,
                      const std::string& out_dir, std::ostream& out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.config.variant == Variant::baseline) throw InputError("baseline checkpoints have no color transform");
  TrainConfig cfg = ck.config;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  const Dataset ds = load_for(cfg);
  const RunSetup setup = prepare_run(cfg, ds);
  if (count == 0 || count > setup.split.test.size()) {
    throw InputError("--n must be between 1 and the test split size (" + std::to_string(setup.split.test.size()) + ")");
  }
  fs::create_directories(out_dir);
  const std::span<const std::size_t> idx(setup.split.test.data(), count);
  const Tensor x = batch_images<float>(ds, idx, setup.mean);
  const Tensor raw = batch_images<float>(ds, idx);
  const Tensor w = ck.model.color_matrices(x);
  Tensor y = color_transform_forward(x, w);
  if (const auto* b = ck.model.find("cst.b")) y = channel_offset_forward(y, b->value);
  // Back to the display range when the network saw mean-subtracted input.
  if (setup.mean) {
    y = channel_offset_forward(y, Tensor({3}, {static_cast<float>((*setup.mean)[0]), static_cast<float>((*setup.mean)[1]),
                                               static_cast<float>((*setup.mean)[2])}));
  }

  std::ostringstream side;
  side << std::setprecision(9);
  side << "# variant " << to_string(cfg.variant) << (w.rank() == 2 ? " (one global matrix)" : " (one matrix per image)")
       << '\n'
       << (setup.mean ? "# training mean added back before display\n" : "")
       << "# display: values clamped to [0,1], scaled by 255 with round-half-up; min/max are before clamping\n"
       << "# index record label w00 w01 w02 w10 w11 w12 w20 w21 w22 min max\n";
  const std::size_t image_size = 3 * Dataset::kSide * Dataset::kSide;
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor orig({3, Dataset::kSide, Dataset::kSide},
                      std::vector<float>(raw.data().begin() + static_cast<std::ptrdiff_t>(i * image_size),
                                         raw.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * image_size)));
    const Tensor trans({3, Dataset::kSide, Dataset::kSide},
                       std::vector<float>(y.data().begin() + static_cast<std::ptrdiff_t>(i * image_size),
                                          y.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * image_size)));
    export_ppm(orig, (fs::path(out_dir) / ("original_" + std::to_string(i) + ".ppm")).string());
    export_ppm(trans, (fs::path(out_dir) / ("transformed_" + std::to_string(i) + ".ppm")).string());
    const auto [lo, hi] = std::minmax_element(trans.data().begin(), trans.data().end());
    const ColorMatrix m = ColorMatrix::from_tensor(w, w.rank() == 2 ? 0 : i);
    side << i << ' ' << idx[i] << ' ' << ds.labels[idx[i]];
    for (const double v : m.m) side << ' ' << v;
    side << ' ' << *lo << ' ' << *hi << '\n';
  }
  write_text_file((fs::path(out_dir) / "transforms.txt").string(), side.str());
  out << "wrote " << count << " image pairs and transforms.txt to " << out_dir << '\n';
  return kOk;
}

inline int cmd_compare(const ConfigFlags& flags, const std::string& out_flag, std::ostream& out) {
  TrainConfig cfg = flags.resolve();
  if (!out_flag.empty()) cfg.out_dir = out_flag;
  const std::string& out_dir = cfg.out_dir;
  cfg.variant = Variant::baseline;
  cfg.validate();
  const Dataset ds = load_for(cfg);

  std::string summary = "variant,best_test_acc,first_epoch_reaching_45pct\n";
  for (const Variant v : {Variant::baseline, Variant::cst_global}) {
    TrainConfig run = cfg;
    run.variant = v;
    const auto result = run_training(run, ds, fs::path(out_dir) / std::string(to_string(v)), out);
    const RunSummary s = summarize(result.metrics, kSummaryThreshold);
    summary += std::string(to_string(v)) + "," + format_accuracy(s.best_test_accuracy) + "," +
               (s.first_epoch_reaching ? std::to_string(*s.first_epoch_reaching) : std::string("NA")) + "\n";
  }
  write_text_file((fs::path(out_dir) / "summary.csv").string(), summary);
  out << summary;
  return kOk;
}

}  // namespace detail

/// Entry point shared by the executable and the tests. Exit codes: 0 on
/// success, 1 for input/config/file errors, 2 for numeric failures.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Learnable color-space transforms in front of a small CNN"};
  app.name("cstnet");
  app.require_subcommand(1);

  detail::ConfigFlags train_flags, compare_flags, fit_flags;
  std::string train_out, compare_out;
  auto* train = app.add_subcommand("train", "train one variant");
  train_flags.attach(*train, true);
  train->add_option("--out", train_out, "output directory (overrides out_dir)");

  std::string ck_path, data_dir, split_name = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "data directory (defaults to the one recorded in the checkpoint)");
  eval->add_option("--split", split_name, "train or test");

  std::string gc_layer, gc_variant;
  GradCheckOptions gc_opt;
  double gc_tol = kGradTolerance;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check at 64-bit");
  auto* layer_opt = gradcheck->add_option("--layer", gc_layer, "single layer to check");
  auto* variant_opt = gradcheck->add_option("--variant", gc_variant, "full network variant to check");
  layer_opt->excludes(variant_opt);
  gradcheck->add_option("--probes", gc_opt.probes, "coordinates to probe");
  gradcheck->add_option("--epsilon", gc_opt.epsilon, "central-difference step");
  gradcheck->add_option("--seed", gc_opt.seed, "probe seed");
  gradcheck->add_option("--tolerance", gc_tol, "maximum accepted relative error");

  std::string kl_mode, kl_out;
  auto* fit = app.add_subcommand("fit-kl", "fit a KL rotation or whitening matrix from channel statistics");
  fit_flags.attach(*fit, false);
  fit->add_option("--mode", kl_mode, "rotation or whitening")->required();
  fit->add_option("--out", kl_out, "matrix output file")->required();

  std::string ex_ck, ex_data, ex_out;
  std::size_t ex_n = 8;
  auto* exp = app.add_subcommand("export-transforms", "write original/transformed image pairs");
  exp->add_option("--checkpoint", ex_ck, "checkpoint file")->required();
  exp->add_option("--data", ex_data, "data directory");
  exp->add_option("--n", ex_n, "number of test images");
  exp->add_option("--out", ex_out, "output directory")->required();

  auto* compare = app.add_subcommand("compare", "train baseline and cst-global with one config");
  compare_flags.attach(*compare, false);
  compare->add_option("--out", compare_out, "output directory (overrides out_dir)");

  std::vector<const char*> argv{"cstnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*train) return detail::cmd_train(train_flags, train_out, out);
    if (*eval) return detail::cmd_eval(ck_path, data_dir, split_name, out);
    if (*gradcheck) return detail::cmd_gradcheck(gc_layer, gc_variant, gc_opt, gc_tol, out);
    if (*fit) {
      TrainConfig cfg = fit_flags.resolve();
      return detail::cmd_fit_kl(cfg, kl_mode, kl_out, out);
    }
    if (*exp) return detail::cmd_export(ex_ck, ex_data, ex_n, ex_out, out);
    if (*compare) return detail::cmd_compare(compare_flags, compare_out, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kInputError;
}

}  // namespace cstnet::cli
