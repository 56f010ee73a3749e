#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gamseg/error.hpp"
#include "gamseg/matrix.hpp"
#include "gamseg/rng.hpp"
#include "gamseg/tensor.hpp"

namespace gamseg::nn {

/// CNN + BiLSTM + FC boundary detector. A zero filter count disables that
/// convolution (conv2 requires conv1); zero LSTM layers feed the FC layer
/// directly from the frame features.
struct Architecture {
  std::size_t n_features = 98;
  std::size_t conv1_filters = 32;
  std::size_t conv2_filters = 64;
  bool max_pool = false;
  std::size_t hidden = 128;
  std::size_t lstm_layers = 2;
  double dropout = 0.5;

  /// Small variant used for gradient checks and desk-scale training.
  static Architecture reduced() {
    Architecture a;
    a.conv1_filters = 2;
    a.conv2_filters = 4;
    a.hidden = 8;
    return a;
  }

  std::size_t conv_channels() const {
    if (conv2_filters > 0) return conv2_filters;
    if (conv1_filters > 0) return conv1_filters;
    return 1;
  }
  std::size_t frame_width() const {
    const std::size_t f = max_pool ? (n_features + 1) / 2 : n_features;
    return conv_channels() * f;
  }
  std::size_t output_width() const { return lstm_layers > 0 ? 2 * hidden : frame_width(); }
  /// Output frames for an input of `frames` frames.
  std::size_t output_frames(std::size_t frames) const {
    return max_pool ? (frames + 1) / 2 : frames;
  }

  void validate() const {
    if (n_features == 0) throw ConfigError("n_features must be positive");
    if (conv2_filters > 0 && conv1_filters == 0) throw ConfigError("conv2 requires conv1");
    if (max_pool && conv1_filters == 0) throw ConfigError("max_pool requires the conv stage");
    if (lstm_layers > 0 && hidden == 0) throw ConfigError("hidden must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }

  bool operator==(const Architecture&) const = default;
};

inline void to_json(nlohmann::json& j, const Architecture& a) {
  j = {{"n_features", a.n_features}, {"conv1_filters", a.conv1_filters},
       {"conv2_filters", a.conv2_filters}, {"max_pool", a.max_pool},
       {"hidden", a.hidden}, {"lstm_layers", a.lstm_layers},
       {"dropout", a.dropout}};
}

inline void from_json(const nlohmann::json& j, Architecture& a) {
  a.n_features = j.at("n_features").get<std::size_t>();
  a.conv1_filters = j.at("conv1_filters").get<std::size_t>();
  a.conv2_filters = j.at("conv2_filters").get<std::size_t>();
  a.max_pool = j.at("max_pool").get<bool>();
  a.hidden = j.at("hidden").get<std::size_t>();
  a.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  a.dropout = j.at("dropout").get<double>();
}

enum class Mode { Train, Eval };

template <typename T>
struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Seeds the dropout masks (train mode only).
  std::uint64_t dropout_seed = 0;
  Tape<T>* tape = nullptr;
  /// When set, receives one byte per ReLU unit (1 = active) followed by the
  /// winning slot of every pooling window. Used by the gradient checker to
  /// detect kink crossings.
  std::vector<std::uint8_t>* relu_pattern = nullptr;
};

template <typename T>
struct NamedParam {
  std::string name;
  TensorPtr<T> tensor;
};

template <typename T>
class Model {
 public:
  Model() : Model(Architecture{}, 0) {}

  explicit Model(const Architecture& arch, std::uint64_t seed = 0) : arch_(arch) {
    arch_.validate();
    build();
    init(seed);
  }

  Model(const Model& other) : arch_(other.arch_) {
    for (const auto& p : other.params_) {
      params_.push_back({p.name, std::make_shared<Tensor<T>>(*p.tensor)});
    }
  }
  Model& operator=(const Model& other) {
    if (this != &other) *this = Model(other);
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const Architecture& architecture() const noexcept { return arch_; }
  std::vector<NamedParam<T>>& params() noexcept { return params_; }
  const std::vector<NamedParam<T>>& params() const noexcept { return params_; }

  TensorPtr<T> param(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.tensor;
    }
    return nullptr;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor->numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  /// Xavier-uniform conv/FC weights with zero bias; LSTM weights and biases
  /// uniform in ±1/√hidden with the forget-gate bias shifted by +1.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&rng](Tensor<T>& t, double bound) {
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (auto& p : params_) {
      auto& t = *p.tensor;
      const bool is_bias = p.name.ends_with("bias");
      if (p.name.starts_with("conv")) {
        if (is_bias) {
          std::fill(t.data.begin(), t.data.end(), T{0});
        } else {
          const double fan_in = static_cast<double>(t.dim(1) * 9);
          const double fan_out = static_cast<double>(t.dim(0) * 9);
          fill(t, std::sqrt(6.0 / (fan_in + fan_out)));
        }
      } else if (p.name.starts_with("lstm")) {
        fill(t, 1.0 / std::sqrt(static_cast<double>(arch_.hidden)));
        if (is_bias) {
          for (std::size_t j = arch_.hidden; j < 2 * arch_.hidden; ++j) t.data[j] += T{1};
        }
      } else if (is_bias) {
        std::fill(t.data.begin(), t.data.end(), T{0});
      } else {
        fill(t, std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1))));
      }
    }
  }

  /// features: n_features × T (rows are feature dimensions). Returns logits of
  /// length output_frames(T).
  TensorPtr<T> forward(const Matrix& features, const ForwardOptions<T>& opt = {}) const {
    if (features.rows != arch_.n_features || features.cols == 0) {
      throw ShapeMismatch("model expects " + std::to_string(arch_.n_features) +
                          " feature rows, got " + std::to_string(features.rows) + "x" +
                          std::to_string(features.cols));
    }
    const std::size_t frames = features.cols;
    const std::size_t feats = features.rows;
    auto grid = make_tensor<T>({1, frames, feats});
    for (std::size_t f = 0; f < feats; ++f) {
      for (std::size_t t = 0; t < frames; ++t) {
        grid->data[t * feats + f] = static_cast<T>(features(f, t));
      }
    }
    return forward_grid(grid, opt);
  }

  /// Same as forward() on a [1, T, F] input tensor, so callers can take
  /// gradients with respect to the input.
  TensorPtr<T> forward_grid(const TensorPtr<T>& grid, const ForwardOptions<T>& opt = {}) const {
    Tape<T>* tape = opt.tape;
    if (opt.relu_pattern) opt.relu_pattern->clear();
    auto x = grid;
    auto record_relu = [&opt](const TensorPtr<T>& pre) {
      if (!opt.relu_pattern) return;
      for (T v : pre->data) opt.relu_pattern->push_back(v > T{0} ? 1 : 0);
    };
    // Winning position (0-3) of every 2×2 pooling window.
    auto record_pool = [&opt](const TensorPtr<T>& in) {
      if (!opt.relu_pattern) return;
      const std::size_t c = in->dim(0), h = in->dim(1), w = in->dim(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t r = 0; r < h; r += 2) {
          for (std::size_t q = 0; q < w; q += 2) {
            std::uint8_t best = 0;
            T best_v = in->data[(ch * h + r) * w + q];
            for (std::uint8_t d = 1; d < 4; ++d) {
              const std::size_t rr = r + d / 2, qq = q + d % 2;
              if (rr >= h || qq >= w) continue;
              const T v = in->data[(ch * h + rr) * w + qq];
              if (v > best_v) {
                best_v = v;
                best = d;
              }
            }
            opt.relu_pattern->push_back(best);
          }
        }
      }
    };
    if (arch_.conv1_filters > 0) {
      x = conv2d(tape, x, param("conv1.weight"), param("conv1.bias"));
      record_relu(x);
      x = relu(tape, x);
      if (arch_.conv2_filters > 0) {
        x = conv2d(tape, x, param("conv2.weight"), param("conv2.bias"));
        record_relu(x);
        x = relu(tape, x);
      }
      if (arch_.max_pool) {
        record_pool(x);
        x = max_pool2x2(tape, x);
      }
    }
    x = to_frames(tape, x);
    for (std::size_t layer = 0; layer < arch_.lstm_layers; ++layer) {
      if (layer > 0 && opt.mode == Mode::Train && arch_.dropout > 0.0) {
        x = dropout(tape, x, arch_.dropout, mix_seed(opt.dropout_seed, layer));
      }
      const std::string base = "lstm.l" + std::to_string(layer);
      auto fwd = lstm_layer(tape, x, lstm_params(base + ".fwd"), false);
      auto bwd = lstm_layer(tape, x, lstm_params(base + ".bwd"), true);
      x = concat_cols(tape, fwd, bwd);
    }
    auto logits = linear(tape, x, param("fc.weight"), param("fc.bias"));
    logits->shape = {logits->numel()};
    return logits;
  }

  /// Copy with every parameter converted to scalar type U.
  template <typename U>
  Model<U> cast() const {
    Model<U> out(arch_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params_[i].tensor->data;
      auto& dst = out.params()[i].tensor->data;
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

 private:
  void add(std::string name, std::vector<std::size_t> shape) {
    params_.push_back({std::move(name), make_tensor<T>(std::move(shape))});
  }

  LstmParams<T> lstm_params(const std::string& prefix) const {
    return {param(prefix + ".w_ih"), param(prefix + ".w_hh"), param(prefix + ".bias")};
  }

  void build() {
    if (arch_.conv1_filters > 0) {
      add("conv1.weight", {arch_.conv1_filters, 1, 3, 3});
      add("conv1.bias", {arch_.conv1_filters});
      if (arch_.conv2_filters > 0) {
        add("conv2.weight", {arch_.conv2_filters, arch_.conv1_filters, 3, 3});
        add("conv2.bias", {arch_.conv2_filters});
      }
    }
    std::size_t in = arch_.frame_width();
    for (std::size_t layer = 0; layer < arch_.lstm_layers; ++layer) {
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base = "lstm.l" + std::to_string(layer) + "." + dir;
        add(base + ".w_ih", {4 * arch_.hidden, in});
        add(base + ".w_hh", {4 * arch_.hidden, arch_.hidden});
        add(base + ".bias", {4 * arch_.hidden});
      }
      in = 2 * arch_.hidden;
    }
    add("fc.weight", {1, arch_.output_width()});
    add("fc.bias", {1});
  }

  Architecture arch_;
  std::vector<NamedParam<T>> params_;
};

/// Per-parameter Adam state.
template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Moments are kept in double.
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, const AdamConfig& cfg = {}) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor->numel(), 0.0);
      state.v[i].assign(params[i].tensor->numel(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = *params[i].tensor;
    if (t.grad.size() != t.data.size()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const double g = static_cast<double>(t.grad[k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      t.data[k] = static_cast<T>(static_cast<double>(t.data[k]) -
                                 cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

}  // namespace gamseg::nn
