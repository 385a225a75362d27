#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "cstnet/color_transform.hpp"
#include "cstnet/error.hpp"
#include "cstnet/layers.hpp"
#include "cstnet/rng.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// Which front transform sits before the shared trunk.
enum class Variant {
  baseline,       // no color layer
  cst_global,     // one learned 3×3 matrix, initialized to identity
  cst_predictor,  // per-image matrix produced by a small network
  cst_fixed,      // frozen matrix, e.g. a fitted KL or whitening transform
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::cst_global: return "cst-global";
    case Variant::cst_predictor: return "cst-predictor";
    case Variant::cst_fixed: return "cst-fixed";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (const Variant v : {Variant::baseline, Variant::cst_global, Variant::cst_predictor, Variant::cst_fixed}) {
    if (name == to_string(v)) return v;
  }
  throw InputError("unknown variant '" + std::string(name) +
                   "' (expected baseline, cst-global, cst-predictor or cst-fixed)");
}

struct ConvLayer {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t pad;
};
struct ReluLayer {};
struct MaxPoolLayer {};
struct AvgPoolLayer {
  std::size_t factor;
};
struct FlattenLayer {};
struct DenseLayer {
  std::size_t out_features;
  bool zero_init = false;
};

using LayerDesc = std::variant<ConvLayer, ReluLayer, MaxPoolLayer, AvgPoolLayer, FlattenLayer, DenseLayer>;

/// Geometry and initialization of a whole network. Every variant shares the
/// same trunk; only the front transform differs.
struct NetworkSpec {
  Variant variant = Variant::baseline;
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t classes = 10;
  std::vector<LayerDesc> trunk;
  std::vector<LayerDesc> predictor;
  bool color_offset = false;  // affine extension y = Wx + b, global variant only
  ColorMatrix fixed_transform = ColorMatrix::identity();
  double conv_init_std = 0.05;
  double dense_init_std = 0.01;

  /// Three 5×5/5×5/3×3 conv blocks with 2×2 max pooling, then a dense
  /// 1024→10 classifier. The predictor averages 4×4 blocks down to 8×8,
  /// then dense 192→32, ReLU, dense 32→9 with a zero-initialized last layer.
  static NetworkSpec standard(Variant variant) {
    NetworkSpec spec;
    spec.variant = variant;
    spec.trunk = {ConvLayer{32, 5, 2}, ReluLayer{}, MaxPoolLayer{}, ConvLayer{32, 5, 2}, ReluLayer{},
                  MaxPoolLayer{}, ConvLayer{64, 3, 1}, ReluLayer{},        MaxPoolLayer{}, FlattenLayer{},
                  DenseLayer{10}};
    if (variant == Variant::cst_predictor) {
      spec.predictor = {AvgPoolLayer{4}, FlattenLayer{}, DenseLayer{32}, ReluLayer{}, DenseLayer{9, true}};
    }
    return spec;
  }
};

template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
};

/// Forward-pass record consumed by backward.
template <class T>
struct LayerTrace {
  BasicTensor<T> input;
  std::vector<std::uint32_t> argmax;
};

template <class T>
struct ForwardTrace {
  BasicTensor<T> image;
  BasicTensor<T> color_matrix;  // (3,3) or (N,3,3); unused for baseline
  std::vector<LayerTrace<T>> predictor;
  std::vector<LayerTrace<T>> trunk;

  /// ReLU on/off states and pooling winners, in layer order. Two traces with
  /// equal patterns lie in the same smooth piece of the network function.
  std::vector<std::uint32_t> activation_pattern(const NetworkSpec& spec) const {
    std::vector<std::uint32_t> pattern;
    auto collect = [&](const std::vector<LayerDesc>& layers, const std::vector<LayerTrace<T>>& traces) {
      for (std::size_t i = 0; i < layers.size() && i < traces.size(); ++i) {
        if (std::holds_alternative<ReluLayer>(layers[i])) {
          for (const T v : traces[i].input.data()) pattern.push_back(v > T{} ? 1u : 0u);
        } else if (std::holds_alternative<MaxPoolLayer>(layers[i])) {
          pattern.insert(pattern.end(), traces[i].argmax.begin(), traces[i].argmax.end());
        }
      }
    };
    collect(spec.predictor, predictor);
    collect(spec.trunk, trunk);
    return pattern;
  }
};

namespace detail {

// Indices into the parameter list for one layer; -1 when absent.
struct ParamSlot {
  std::ptrdiff_t weight = -1;
  std::ptrdiff_t bias = -1;
};

}  // namespace detail

template <class T>
class Model {
 public:
  Model() = default;

  /// Builds the network and draws initial weights. Each parameter uses its
  /// own stream labelled by its name, so the trunk is identical across
  /// variants for the same seed.
  static Model create(const NetworkSpec& spec, std::uint64_t seed) {
    Model model;
    model.spec_ = spec;
    model.build(seed);
    return model;
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  Parameter<T>& param(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw InputError("model has no parameter '" + std::string(name) + "'");
  }
  const Parameter<T>& param(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw InputError("model has no parameter '" + std::string(name) + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{});
  }

  /// The matrix the color layer applies to `x`: (3,3) for global/fixed,
  /// (N,3,3) for the predictor. Baseline has none.
  BasicTensor<T> color_matrices(const BasicTensor<T>& x) const {
    ForwardTrace<T> trace;
    forward(x, &trace);
    if (spec_.variant == Variant::baseline) throw InputError("baseline model has no color transform");
    return trace.color_matrix;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, ForwardTrace<T>* trace = nullptr) const {
    require_rank(x.shape(), 4, "model input");
    if (x.extent(1) != spec_.channels || x.extent(2) != spec_.image_size || x.extent(3) != spec_.image_size) {
      throw ShapeError("model expects N×" + std::to_string(spec_.channels) + "×" + std::to_string(spec_.image_size) +
                       "×" + std::to_string(spec_.image_size) + " input, got " + x.shape().str());
    }
    BasicTensor<T> z;
    if (spec_.variant == Variant::baseline) {
      z = x;
    } else {
      BasicTensor<T> w;
      if (spec_.variant == Variant::cst_predictor) {
        BasicTensor<T> head = run_stack(spec_.predictor, predictor_slots_, x, trace ? &trace->predictor : nullptr);
        w = head.reshaped({x.extent(0), 3, 3});
        for (std::size_t s = 0; s < x.extent(0); ++s) {
          for (std::size_t d = 0; d < 3; ++d) w[s * 9 + d * 4] += T(1);
        }
      } else {
        w = param("cst.W").value;
      }
      z = color_transform_forward(x, w);
      if (spec_.color_offset) z = channel_offset_forward(z, param("cst.b").value);
      if (trace) trace->color_matrix = std::move(w);
    }
    if (trace) trace->image = x;
    return run_stack(spec_.trunk, trunk_slots_, std::move(z), trace ? &trace->trunk : nullptr);
  }

  /// Writes parameter gradients (replacing previous contents) for upstream
  /// gradient `dlogits`; returns dL/dx when `want_dx`.
  std::optional<BasicTensor<T>> backward(const ForwardTrace<T>& trace, const BasicTensor<T>& dlogits,
                                         bool want_dx = false) {
    zero_grad();
    const bool has_front = spec_.variant != Variant::baseline;
    BasicTensor<T> dz = backward_stack(spec_.trunk, trunk_slots_, trace.trunk, dlogits, has_front || want_dx);
    if (!has_front) {
      if (want_dx) return dz;
      return std::nullopt;
    }
    if (spec_.color_offset) add_into(param("cst.b").grad, channel_offset_backward(dz));
    auto ct = color_transform_backward(trace.image, trace.color_matrix, dz);
    BasicTensor<T> dx = std::move(ct.dx);
    if (spec_.variant == Variant::cst_global) {
      add_into(param("cst.W").grad, ct.dw);
    } else if (spec_.variant == Variant::cst_predictor) {
      BasicTensor<T> dhead = ct.dw.reshaped({trace.image.extent(0), 9});
      BasicTensor<T> dx_pred = backward_stack(spec_.predictor, predictor_slots_, trace.predictor, dhead, want_dx);
      if (want_dx) add_into(dx, dx_pred);
    }
    if (want_dx) return dx;
    return std::nullopt;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> out;
    out.spec_ = spec_;
    out.trunk_slots_ = trunk_slots_;
    out.predictor_slots_ = predictor_slots_;
    for (const auto& p : params_) {
      out.params_.push_back(Parameter<U>{p.name, p.value.template cast<U>(), p.grad.template cast<U>(), p.trainable});
    }
    return out;
  }

 private:
  template <class>
  friend class Model;

  using Slot = detail::ParamSlot;

  static void add_into(BasicTensor<T>& acc, const BasicTensor<T>& g) {
    if (acc.size() != g.size()) throw ShapeError("gradient size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
  }

  std::ptrdiff_t add_param(std::string name, BasicTensor<T> value, bool trainable = true) {
    BasicTensor<T> grad(value.shape());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), trainable});
    return static_cast<std::ptrdiff_t>(params_.size() - 1);
  }

  // Creates parameters for one layer stack and returns the per-layer slots.
  std::vector<Slot> build_stack(const std::vector<LayerDesc>& layers, const std::string& prefix,
                                std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed) {
    std::vector<Slot> slots(layers.size());
    std::size_t features = 0;
    std::size_t conv_index = 0, dense_index = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::visit(
          [&](const auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, ConvLayer>) {
              const std::string name = prefix + "conv" + std::to_string(++conv_index);
              RngStream rng(seed, name + ".weight");
              slots[i].weight = add_param(
                  name + ".weight",
                  BasicTensor<T>::normal({layer.out_channels, channels, layer.kernel, layer.kernel}, spec_.conv_init_std,
                                         rng));
              slots[i].bias = add_param(name + ".bias", BasicTensor<T>({layer.out_channels}));
              PatchGeometry g{layer.kernel, layer.kernel, 1, layer.pad};
              g.validate(height, width);
              channels = layer.out_channels;
              height = g.out_h(height);
              width = g.out_w(width);
            } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
              if (height % 2 || width % 2) throw ShapeError("max pool on odd extent in network spec");
              height /= 2;
              width /= 2;
            } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
              if (layer.factor == 0 || height % layer.factor || width % layer.factor) {
                throw ShapeError("average pool factor does not divide feature map in network spec");
              }
              height /= layer.factor;
              width /= layer.factor;
            } else if constexpr (std::is_same_v<L, FlattenLayer>) {
              features = channels * height * width;
            } else if constexpr (std::is_same_v<L, DenseLayer>) {
              if (features == 0) throw ShapeError("dense layer must follow a flatten layer");
              const std::string name = prefix + "fc" + std::to_string(++dense_index);
              RngStream rng(seed, name + ".weight");
              BasicTensor<T> w = layer.zero_init
                                     ? BasicTensor<T>({features, layer.out_features})
                                     : BasicTensor<T>::normal({features, layer.out_features}, spec_.dense_init_std, rng);
              slots[i].weight = add_param(name + ".weight", std::move(w));
              slots[i].bias = add_param(name + ".bias", BasicTensor<T>({layer.out_features}));
              features = layer.out_features;
            }
          },
          layers[i]);
    }
    output_features_ = features;
    return slots;
  }

  void build(std::uint64_t seed) {
    if (spec_.channels != 3) throw ShapeError("network input must have 3 color channels");
    if (spec_.variant == Variant::cst_global) {
      add_param("cst.W", ColorMatrix::identity().to_tensor<T>());
    } else if (spec_.variant == Variant::cst_fixed) {
      if (!spec_.fixed_transform.finite()) throw NumericError("fixed color transform has non-finite entries");
      add_param("cst.W", spec_.fixed_transform.to_tensor<T>(), false);
    }
    if (spec_.color_offset) {
      if (spec_.variant != Variant::cst_global) throw InputError("color offset is only supported for cst-global");
      add_param("cst.b", BasicTensor<T>({3}));
    }
    if (spec_.variant == Variant::cst_predictor) {
      predictor_slots_ = build_stack(spec_.predictor, "predictor.", spec_.channels, spec_.image_size,
                                     spec_.image_size, seed);
      if (output_features_ != 9) throw ShapeError("predictor must end in 9 outputs");
    }
    trunk_slots_ = build_stack(spec_.trunk, "", spec_.channels, spec_.image_size, spec_.image_size, seed);
    if (output_features_ != spec_.classes) throw ShapeError("trunk output width differs from class count");
  }

  BasicTensor<T> run_stack(const std::vector<LayerDesc>& layers, const std::vector<Slot>& slots, BasicTensor<T> x,
                           std::vector<LayerTrace<T>>* traces) const {
    if (traces) traces->assign(layers.size(), LayerTrace<T>{});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      BasicTensor<T> y = std::visit(
          [&](const auto& layer) -> BasicTensor<T> {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, ConvLayer>) {
              return conv2d_forward(x, weight(slots[i]), bias(slots[i]), 1, layer.pad);
            } else if constexpr (std::is_same_v<L, ReluLayer>) {
              return relu_forward(x);
            } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
              auto pooled = maxpool2_forward(x);
              if (traces) (*traces)[i].argmax = std::move(pooled.argmax);
              return std::move(pooled.y);
            } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
              return avgpool_forward(x, layer.factor);
            } else if constexpr (std::is_same_v<L, FlattenLayer>) {
              return x.reshaped({x.extent(0), x.size() / x.extent(0)});
            } else {
              return dense_forward(x, weight(slots[i]), bias(slots[i]));
            }
          },
          layers[i]);
      if (traces) (*traces)[i].input = std::move(x);
      x = std::move(y);
    }
    return x;
  }

  BasicTensor<T> backward_stack(const std::vector<LayerDesc>& layers, const std::vector<Slot>& slots,
                                const std::vector<LayerTrace<T>>& traces, BasicTensor<T> dy, bool want_dx) {
    if (traces.size() != layers.size()) throw InputError("forward trace does not match network");
    for (std::size_t i = layers.size(); i-- > 0;) {
      const BasicTensor<T>& x = traces[i].input;
      const bool need_dx = want_dx || i > 0;
      dy = std::visit(
          [&](const auto& layer) -> BasicTensor<T> {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, ConvLayer>) {
              auto g = conv2d_backward(x, weight(slots[i]), dy, 1, layer.pad, need_dx);
              add_into(params_[slots[i].weight].grad, g.dweight);
              add_into(params_[slots[i].bias].grad, g.dbias);
              return std::move(g.dx);
            } else if constexpr (std::is_same_v<L, ReluLayer>) {
              return relu_backward(x, dy);
            } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
              return maxpool2_backward<T>(x.shape(), traces[i].argmax, dy);
            } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
              return avgpool_backward(x.shape(), dy, layer.factor);
            } else if constexpr (std::is_same_v<L, FlattenLayer>) {
              return dy.reshaped(x.shape());
            } else {
              auto g = dense_backward(x, weight(slots[i]), dy);
              add_into(params_[slots[i].weight].grad, g.dweight);
              add_into(params_[slots[i].bias].grad, g.dbias);
              return std::move(g.dx);
            }
          },
          layers[i]);
    }
    return dy;
  }

  const BasicTensor<T>& weight(const Slot& s) const { return params_[static_cast<std::size_t>(s.weight)].value; }
  const BasicTensor<T>& bias(const Slot& s) const { return params_[static_cast<std::size_t>(s.bias)].value; }

  NetworkSpec spec_;
  std::vector<Parameter<T>> params_;
  std::vector<Slot> trunk_slots_;
  std::vector<Slot> predictor_slots_;
  std::size_t output_features_ = 0;
};

}  // namespace cstnet
