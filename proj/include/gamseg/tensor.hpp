#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gamseg/error.hpp"
#include "gamseg/rng.hpp"

namespace gamseg::nn {

/// Dense row-major array with an optional gradient buffer of the same shape.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T{0})
      : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
  }

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Gradient buffer, allocated (zeroed) on first use.
  std::vector<T>& g() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
    return grad;
  }
  void zero_grad() { grad.assign(data.size(), T{0}); }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::size_t> shape, T fill = T{0}) {
  return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Records backward closures in execution order; backward() replays them in
/// reverse after seeding d(loss)/d(loss) = 1.
template <typename T>
class Tape {
 public:
  void record(const TensorPtr<T>& output, std::function<void()> backward_fn) {
    outputs_.push_back(output.get());
    steps_.push_back(std::move(backward_fn));
  }

  bool empty() const noexcept { return steps_.empty(); }
  std::size_t size() const noexcept { return steps_.size(); }

  void backward(const TensorPtr<T>& loss) {
    if (steps_.empty()) throw GraphNotBuilt("tape is empty; run a recording forward pass first");
    if (!loss || loss->numel() != 1) throw GraphNotBuilt("loss must be a scalar tensor");
    if (std::find(outputs_.begin(), outputs_.end(), loss.get()) == outputs_.end()) {
      throw GraphNotBuilt("loss was not produced on this tape");
    }
    loss->g()[0] += T{1};
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  void clear() {
    steps_.clear();
    outputs_.clear();
  }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<const Tensor<T>*> outputs_;
};

template <typename T>
inline T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

namespace kernels {

/// y[r, o] += Σ_i x[r, i] · w[o, i]
template <typename T>
void matmul_nt(const T* x, const T* w, T* y, std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * in;
    T* yr = y + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = w + o * in;
      T acc{0};
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] += acc;
    }
  }
}

/// dx[r, i] += Σ_o dy[r, o] · w[o, i]
template <typename T>
void matmul_nn(const T* dy, const T* w, T* dx, std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* dxr = dx + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T s = dy[r * out + o];
      if (s == T{0}) continue;
      const T* wo = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] += s * wo[i];
    }
  }
}

/// dw[o, i] += Σ_r dy[r, o] · x[r, i]
template <typename T>
void matmul_tn(const T* dy, const T* x, T* dw, std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T s = dy[r * out + o];
      if (s == T{0}) continue;
      T* dwo = dw + o * in;
      for (std::size_t i = 0; i < in; ++i) dwo[i] += s * xr[i];
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Ops. Every op takes an optional tape; with nullptr nothing is recorded.
// ---------------------------------------------------------------------------

/// 3×3 cross-correlation, stride 1, zero padding 1: [C_in, H, W] → [C_out, H, W].
template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
  if (x->shape.size() != 3 || w->shape.size() != 4 || w->dim(2) != 3 || w->dim(3) != 3 ||
      w->dim(1) != x->dim(0) || b->numel() != w->dim(0)) {
    throw ShapeMismatch("conv2d input " + shape_string(x->shape) + ", weight " +
                        shape_string(w->shape) + ", bias " + shape_string(b->shape));
  }
  const std::size_t cin = x->dim(0);
  const std::size_t h = x->dim(1);
  const std::size_t wd = x->dim(2);
  const std::size_t cout = w->dim(0);
  auto y = make_tensor<T>({cout, h, wd});
  const std::size_t plane = h * wd;

  // Visits every (output row, input row, column range) for kernel tap (ky, kx).
  auto for_tap = [h, wd](std::size_t ky, std::size_t kx, auto&& body) {
    const std::size_t r0 = ky == 0 ? 1 : 0;
    const std::size_t r1 = ky == 2 ? h - 1 : h;
    const std::size_t c0 = kx == 0 ? 1 : 0;
    const std::size_t c1 = kx == 2 ? wd - 1 : wd;
    for (std::size_t r = r0; r < r1; ++r) body(r, r + ky - 1, c0, c1, static_cast<std::ptrdiff_t>(kx) - 1);
  };

  for (std::size_t o = 0; o < cout; ++o) {
    T* yo = y->data.data() + o * plane;
    std::fill(yo, yo + plane, b->data[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const T* xi = x->data.data() + i * plane;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const T s = w->data[((o * cin + i) * 3 + ky) * 3 + kx];
          for_tap(ky, kx, [&](std::size_t r, std::size_t rs, std::size_t c0, std::size_t c1,
                              std::ptrdiff_t dc) {
            T* yr = yo + r * wd;
            const T* xr = xi + rs * wd;
            for (std::size_t c = c0; c < c1; ++c) yr[c] += s * xr[c + dc];
          });
        }
      }
    }
  }

  if (tape) {
    tape->record(y, [x, w, b, y, cin, cout, plane, wd, for_tap]() {
      auto& dx = x->g();
      auto& dw = w->g();
      auto& db = b->g();
      const auto& dy = y->grad;
      for (std::size_t o = 0; o < cout; ++o) {
        const T* dyo = dy.data() + o * plane;
        db[o] += std::accumulate(dyo, dyo + plane, T{0});
        for (std::size_t i = 0; i < cin; ++i) {
          const T* xi = x->data.data() + i * plane;
          T* dxi = dx.data() + i * plane;
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
              const T s = w->data[widx];
              T acc{0};
              for_tap(ky, kx, [&](std::size_t r, std::size_t rs, std::size_t c0, std::size_t c1,
                                  std::ptrdiff_t dc) {
                const T* dyr = dyo + r * wd;
                const T* xr = xi + rs * wd;
                T* dxr = dxi + rs * wd;
                for (std::size_t c = c0; c < c1; ++c) {
                  acc += dyr[c] * xr[c + dc];
                  dxr[c + dc] += s * dyr[c];
                }
              });
              dw[widx] += acc;
            }
          }
        }
      }
    });
    y->g();
  }
  return y;
}

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto y = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->numel(); ++i) y->data[i] = x->data[i] > T{0} ? x->data[i] : T{0};
  if (tape) {
    tape->record(y, [x, y]() {
      auto& dx = x->g();
      for (std::size_t i = 0; i < x->numel(); ++i) {
        if (x->data[i] > T{0}) dx[i] += y->grad[i];
      }
    });
    y->g();
  }
  return y;
}

/// 2×2 max pooling with stride 2 and ceil mode: [C, H, W] → [C, ⌈H/2⌉, ⌈W/2⌉].
template <typename T>
TensorPtr<T> max_pool2x2(Tape<T>* tape, const TensorPtr<T>& x) {
  if (x->shape.size() != 3) throw ShapeMismatch("max_pool2x2 expects [C, H, W]");
  const std::size_t c = x->dim(0);
  const std::size_t h = x->dim(1);
  const std::size_t w = x->dim(2);
  const std::size_t ho = (h + 1) / 2;
  const std::size_t wo = (w + 1) / 2;
  auto y = make_tensor<T>({c, ho, wo});
  std::vector<std::size_t> argmax(y->numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < ho; ++r) {
      for (std::size_t q = 0; q < wo; ++q) {
        std::size_t best = (ch * h + 2 * r) * w + 2 * q;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dq = 0; dq < 2; ++dq) {
            if (2 * r + dr >= h || 2 * q + dq >= w) continue;
            const std::size_t idx = (ch * h + 2 * r + dr) * w + 2 * q + dq;
            if (x->data[idx] > x->data[best]) best = idx;
          }
        }
        const std::size_t out = (ch * ho + r) * wo + q;
        y->data[out] = x->data[best];
        argmax[out] = best;
      }
    }
  }
  if (tape) {
    tape->record(y, [x, y, argmax = std::move(argmax)]() {
      auto& dx = x->g();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += y->grad[i];
    });
    y->g();
  }
  return y;
}

/// [C, T, F] → [T, C·F], frame t holding channel-major features.
template <typename T>
TensorPtr<T> to_frames(Tape<T>* tape, const TensorPtr<T>& x) {
  if (x->shape.size() != 3) throw ShapeMismatch("to_frames expects [C, T, F]");
  const std::size_t c = x->dim(0);
  const std::size_t t = x->dim(1);
  const std::size_t f = x->dim(2);
  auto y = make_tensor<T>({t, c * f});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      std::copy_n(x->data.data() + (ch * t + tt) * f, f, y->data.data() + tt * c * f + ch * f);
    }
  }
  if (tape) {
    tape->record(y, [x, y, c, t, f]() {
      auto& dx = x->g();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t tt = 0; tt < t; ++tt) {
          const T* src = y->grad.data() + tt * c * f + ch * f;
          T* dst = dx.data() + (ch * t + tt) * f;
          for (std::size_t i = 0; i < f; ++i) dst[i] += src[i];
        }
      }
    });
    y->g();
  }
  return y;
}

/// Fully connected layer on rows: [N, I] × W[O, I]ᵀ + b[O] → [N, O].
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
  if (x->shape.size() != 2 || w->shape.size() != 2 || w->dim(1) != x->dim(1) ||
      b->numel() != w->dim(0)) {
    throw ShapeMismatch("linear input " + shape_string(x->shape) + ", weight " +
                        shape_string(w->shape));
  }
  const std::size_t n = x->dim(0);
  const std::size_t in = x->dim(1);
  const std::size_t out = w->dim(0);
  auto y = make_tensor<T>({n, out});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(b->data.data(), out, y->data.data() + r * out);
  kernels::matmul_nt(x->data.data(), w->data.data(), y->data.data(), n, in, out);
  if (tape) {
    tape->record(y, [x, w, b, y, n, in, out]() {
      kernels::matmul_nn(y->grad.data(), w->data.data(), x->g().data(), n, in, out);
      kernels::matmul_tn(y->grad.data(), x->data.data(), w->g().data(), n, in, out);
      auto& db = b->g();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) db[o] += y->grad[r * out + o];
      }
    });
    y->g();
  }
  return y;
}

/// Parameters of one LSTM direction. Gate order in the 4H rows: i, f, g, o.
template <typename T>
struct LstmParams {
  TensorPtr<T> w_ih;  // [4H, I]
  TensorPtr<T> w_hh;  // [4H, H]
  TensorPtr<T> bias;  // [4H]

  std::size_t hidden() const { return w_hh->dim(1); }
  std::size_t input() const { return w_ih->dim(1); }
};

/// One LSTM step:
///   i = σ(a_i), f = σ(a_f), g = tanh(a_g), o = σ(a_o), a = W_ih x + W_hh h + b
///   c' = f ⊙ c + i ⊙ g,  h' = o ⊙ tanh(c')
template <typename T>
std::pair<std::vector<T>, std::vector<T>> lstm_cell_step(std::span<const T> x,
                                                         std::span<const T> h_prev,
                                                         std::span<const T> c_prev,
                                                         const LstmParams<T>& p) {
  const std::size_t hsz = p.w_hh->dim(1);
  if (p.w_ih->shape.size() != 2 || p.w_ih->dim(0) != 4 * hsz || p.w_hh->dim(0) != 4 * hsz ||
      p.bias->numel() != 4 * hsz || x.size() != p.w_ih->dim(1) || h_prev.size() != hsz ||
      c_prev.size() != hsz) {
    throw ShapeMismatch("lstm_cell_step: inconsistent dimensions");
  }
  std::vector<T> a(p.bias->data);
  kernels::matmul_nt(x.data(), p.w_ih->data.data(), a.data(), 1, x.size(), 4 * hsz);
  kernels::matmul_nt(h_prev.data(), p.w_hh->data.data(), a.data(), 1, hsz, 4 * hsz);
  std::vector<T> h(hsz);
  std::vector<T> c(hsz);
  for (std::size_t j = 0; j < hsz; ++j) {
    const T ig = sigmoid(a[j]);
    const T fg = sigmoid(a[hsz + j]);
    const T gg = std::tanh(a[2 * hsz + j]);
    const T og = sigmoid(a[3 * hsz + j]);
    c[j] = fg * c_prev[j] + ig * gg;
    h[j] = og * std::tanh(c[j]);
  }
  return {std::move(h), std::move(c)};
}

/// Runs one LSTM direction over [T, I] from zero state; returns [T, H].
/// With `reverse` the sequence is consumed from the last frame backwards and
/// the output row t still corresponds to input frame t.
template <typename T>
TensorPtr<T> lstm_layer(Tape<T>* tape, const TensorPtr<T>& x, const LstmParams<T>& p,
                        bool reverse) {
  const std::size_t hsz = p.hidden();
  const std::size_t g4 = 4 * hsz;
  if (x->shape.size() != 2 || x->dim(1) != p.input() || p.w_ih->dim(0) != g4 ||
      p.w_hh->dim(0) != g4 || p.bias->numel() != g4) {
    throw ShapeMismatch("lstm_layer input " + shape_string(x->shape) + ", w_ih " +
                        shape_string(p.w_ih->shape));
  }
  const std::size_t steps = x->dim(0);
  const std::size_t in = x->dim(1);
  auto y = make_tensor<T>({steps, hsz});

  // Pre-activations from the input, for all steps at once.
  std::vector<T> gates(steps * g4);
  for (std::size_t t = 0; t < steps; ++t) std::copy_n(p.bias->data.data(), g4, gates.data() + t * g4);
  kernels::matmul_nt(x->data.data(), p.w_ih->data.data(), gates.data(), steps, in, g4);

  std::vector<T> cells(steps * hsz);
  std::vector<T> zero(hsz, T{0});
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    const T* h_prev = k == 0 ? zero.data() : y->data.data() + (reverse ? t + 1 : t - 1) * hsz;
    const T* c_prev = k == 0 ? zero.data() : cells.data() + (reverse ? t + 1 : t - 1) * hsz;
    T* a = gates.data() + t * g4;
    kernels::matmul_nt(h_prev, p.w_hh->data.data(), a, 1, hsz, g4);
    for (std::size_t j = 0; j < hsz; ++j) {
      a[j] = sigmoid(a[j]);
      a[hsz + j] = sigmoid(a[hsz + j]);
      a[2 * hsz + j] = std::tanh(a[2 * hsz + j]);
      a[3 * hsz + j] = sigmoid(a[3 * hsz + j]);
      const T c = a[hsz + j] * c_prev[j] + a[j] * a[2 * hsz + j];
      cells[t * hsz + j] = c;
      y->data[t * hsz + j] = a[3 * hsz + j] * std::tanh(c);
    }
  }

  if (tape) {
    // `gates` now holds activated gate values.
    tape->record(y, [x, p, y, reverse, steps, in, hsz, g4, gates = std::move(gates),
                     cells = std::move(cells)]() {
      std::vector<T> d_pre(steps * g4, T{0});
      std::vector<T> dh_next(hsz, T{0});
      std::vector<T> dc_next(hsz, T{0});
      std::vector<T> zero(hsz, T{0});
      auto& dw_hh = p.w_hh->g();
      for (std::size_t k = steps; k-- > 0;) {
        const std::size_t t = reverse ? steps - 1 - k : k;
        const bool first = k == 0;
        const std::size_t prev = reverse ? t + 1 : t - 1;
        const T* c_prev = first ? zero.data() : cells.data() + prev * hsz;
        const T* h_prev = first ? zero.data() : y->data.data() + prev * hsz;
        const T* a = gates.data() + t * g4;
        T* da = d_pre.data() + t * g4;
        for (std::size_t j = 0; j < hsz; ++j) {
          const T ig = a[j];
          const T fg = a[hsz + j];
          const T gg = a[2 * hsz + j];
          const T og = a[3 * hsz + j];
          const T tc = std::tanh(cells[t * hsz + j]);
          const T dh = y->grad[t * hsz + j] + dh_next[j];
          const T dc = dh * og * (T{1} - tc * tc) + dc_next[j];
          da[j] = dc * gg * ig * (T{1} - ig);
          da[hsz + j] = dc * c_prev[j] * fg * (T{1} - fg);
          da[2 * hsz + j] = dc * ig * (T{1} - gg * gg);
          da[3 * hsz + j] = dh * tc * og * (T{1} - og);
          dc_next[j] = dc * fg;
        }
        std::fill(dh_next.begin(), dh_next.end(), T{0});
        kernels::matmul_nn(da, p.w_hh->data.data(), dh_next.data(), 1, hsz, g4);
        kernels::matmul_tn(da, h_prev, dw_hh.data(), 1, hsz, g4);
      }
      kernels::matmul_nn(d_pre.data(), p.w_ih->data.data(), x->g().data(), steps, in, g4);
      kernels::matmul_tn(d_pre.data(), x->data.data(), p.w_ih->g().data(), steps, in, g4);
      auto& db = p.bias->g();
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < g4; ++j) db[j] += d_pre[t * g4 + j];
      }
    });
    y->g();
  }
  return y;
}

/// Column concatenation of two [N, A] and [N, B] tensors.
template <typename T>
TensorPtr<T> concat_cols(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->dim(0) != b->dim(0)) {
    throw ShapeMismatch("concat_cols " + shape_string(a->shape) + " vs " + shape_string(b->shape));
  }
  const std::size_t n = a->dim(0);
  const std::size_t ca = a->dim(1);
  const std::size_t cb = b->dim(1);
  auto y = make_tensor<T>({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a->data.data() + r * ca, ca, y->data.data() + r * (ca + cb));
    std::copy_n(b->data.data() + r * cb, cb, y->data.data() + r * (ca + cb) + ca);
  }
  if (tape) {
    tape->record(y, [a, b, y, n, ca, cb]() {
      auto& da = a->g();
      auto& dbv = b->g();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < ca; ++i) da[r * ca + i] += y->grad[r * (ca + cb) + i];
        for (std::size_t i = 0; i < cb; ++i) dbv[r * cb + i] += y->grad[r * (ca + cb) + ca + i];
      }
    });
    y->g();
  }
  return y;
}

/// Inverted dropout: zeroes each element with probability p and scales the
/// survivors by 1/(1−p). The mask is a pure function of `seed`.
template <typename T>
TensorPtr<T> dropout(Tape<T>* tape, const TensorPtr<T>& x, double p, std::uint64_t seed) {
  auto y = make_tensor<T>(x->shape);
  if (p <= 0.0) {
    y->data = x->data;
    if (tape) {
      tape->record(y, [x, y]() {
        auto& dx = x->g();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += y->grad[i];
      });
      y->g();
    }
    return y;
  }
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x->numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? T{0} : scale;
    y->data[i] = x->data[i] * mask[i];
  }
  if (tape) {
    tape->record(y, [x, y, mask = std::move(mask)]() {
      auto& dx = x->g();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += y->grad[i] * mask[i];
    });
    y->g();
  }
  return y;
}

/// Sum of all elements → scalar.
template <typename T>
TensorPtr<T> sum(Tape<T>* tape, const TensorPtr<T>& x) {
  auto y = make_tensor<T>({1});
  y->data[0] = std::accumulate(x->data.begin(), x->data.end(), T{0});
  if (tape) {
    tape->record(y, [x, y]() {
      auto& dx = x->g();
      for (auto& v : dx) v += y->grad[0];
    });
    y->g();
  }
  return y;
}

/// Per-element weighted BCE with logits in the stable form
///   (1 − y)·x + (1 + (w − 1)·y)·softplus(−x),
/// which equals −[w·y·log σ(x) + (1 − y)·log(1 − σ(x))].
inline double weighted_bce_term(double x, double y, double pos_weight) {
  const double softplus_neg = std::log1p(std::exp(-std::abs(x))) + std::max(-x, 0.0);
  return (1.0 - y) * x + (1.0 + (pos_weight - 1.0) * y) * softplus_neg;
}

/// Mean weighted BCE over frames whose mask is nonzero (all frames when the
/// mask is empty). Accumulates in double.
template <typename T>
TensorPtr<T> weighted_bce_with_logits(Tape<T>* tape, const TensorPtr<T>& logits,
                                      std::span<const float> targets, double pos_weight,
                                      std::span<const float> mask = {}) {
  const std::size_t n = logits->numel();
  if (targets.size() != n || (!mask.empty() && mask.size() != n)) {
    throw LengthMismatch(std::to_string(n) + " logits, " + std::to_string(targets.size()) +
                         " targets, " + std::to_string(mask.size()) + " mask");
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && mask[i] == 0.0F) continue;
    total += weighted_bce_term(static_cast<double>(logits->data[i]), targets[i], pos_weight);
    ++count;
  }
  auto loss = make_tensor<T>({1});
  loss->data[0] = count ? static_cast<T>(total / static_cast<double>(count)) : T{0};
  if (tape) {
    std::vector<float> tgt(targets.begin(), targets.end());
    std::vector<float> msk(mask.begin(), mask.end());
    tape->record(loss, [logits, loss, tgt = std::move(tgt), msk = std::move(msk), pos_weight,
                        count]() {
      if (count == 0) return;
      auto& dx = logits->g();
      const double scale = static_cast<double>(loss->grad[0]) / static_cast<double>(count);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!msk.empty() && msk[i] == 0.0F) continue;
        const double x = static_cast<double>(logits->data[i]);
        const double y = tgt[i];
        const double grad = (1.0 - y) - (1.0 + (pos_weight - 1.0) * y) * sigmoid(-x);
        dx[i] += static_cast<T>(grad * scale);
      }
    });
    loss->g();
  }
  return loss;
}

}  // namespace gamseg::nn
