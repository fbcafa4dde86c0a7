#include "segan/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <numeric>

namespace segan {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t batch, in_c, height, width, out_c, kernel, out_h, out_w;
  int stride, padding;

  std::size_t rows() const { return in_c * kernel * kernel; }
  std::size_t plane() const { return out_h * out_w; }
};

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t out, std::size_t in, int stride, int padding, std::size_t k,
                        std::size_t& lo, std::size_t& hi) {
  const long off = static_cast<long>(k) - padding;
  long first = off >= 0 ? 0 : (-off + stride - 1) / stride;
  long last = (static_cast<long>(in) - 1 - off);
  last = last < 0 ? -1 : last / stride;
  lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(out)));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(out)));
}

// One sample. cols[(c*k + kh)*k + kw][oh*out_w + ow] = x[c, oh*s - p + kh, ow*s - p + kw]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* src_plane = x + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.out_h, g.height, g.stride, g.padding, kh, oh_lo, oh_hi);
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.out_w, g.width, g.stride, g.padding, kw, ow_lo, ow_hi);
        T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * plane;
        std::fill_n(row, oh_lo * g.out_w, T{0});
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          T* dst = row + oh * g.out_w;
          const T* src = src_plane + (oh * g.stride + kh - g.padding) * g.width + kw - g.padding;
          std::fill_n(dst, ow_lo, T{0});
          if (g.stride == 1) {
            std::copy(src + ow_lo, src + ow_hi, dst + ow_lo);
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + ow_hi, dst + g.out_w, T{0});
        }
        std::fill(row + oh_hi * g.out_w, row + plane, T{0});
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t plane = g.plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* dst_plane = dx + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.out_h, g.height, g.stride, g.padding, kh, oh_lo, oh_hi);
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.out_w, g.width, g.stride, g.padding, kw, ow_lo, ow_hi);
        const T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * plane;
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const T* src = row + oh * g.out_w;
          T* dst = dst_plane + (oh * g.stride + kh - g.padding) * g.width + kw - g.padding;
          if (g.stride == 1) {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += src[ow];
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

// Per-thread scratch for one sample's column matrix; grows, never shrinks.
template <typename T>
T* scratch(std::size_t n) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < n) buffer.resize(n);
  return buffer.data();
}

template <typename T>
Var<T> bind(Graph<T>& g, Tensor<T>& t, bool trainable) {
  return trainable ? g.param(t) : g.frozen(t);
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(std::size_t in, std::size_t out, int kernel, int stride, int padding,
                        std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.02);
  const auto k = static_cast<std::size_t>(kernel);
  std::vector<T> w(out * in * k * k);
  for (T& v : w) v = static_cast<T>(normal(rng));
  ConvParams<T> p;
  p.weights = Tensor<T>({out, in, k, k}, std::move(w), true);
  p.bias = Tensor<T>::zeros({out}, true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

template <typename T>
BatchNormParams<T> make_batch_norm(std::size_t channels) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::filled({channels}, T{1}, true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::filled({channels}, T{1});
  return p;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weights, Var<T> bias, int stride, int padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  if (xs.size() != 4) throw ShapeError("conv2d: input must be 4-D, got " + shape_string(xs));
  if (ws.size() != 4 || ws[2] != ws[3]) {
    throw ShapeError("conv2d: weights must be [out, in, k, k], got " + shape_string(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weights expect " +
                     std::to_string(ws[1]));
  }
  if (bias.shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias must be [out]");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  const long span_h = static_cast<long>(xs[2]) + 2 * padding - static_cast<long>(ws[2]);
  const long span_w = static_cast<long>(xs[3]) + 2 * padding - static_cast<long>(ws[2]);
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(ws[2]) + " larger than padded input " +
                     shape_string(xs));
  }
  const ConvGeometry geo{xs[0],
                         xs[1],
                         xs[2],
                         xs[3],
                         ws[0],
                         ws[2],
                         static_cast<std::size_t>(span_h / stride + 1),
                         static_cast<std::size_t>(span_w / stride + 1),
                         stride,
                         padding};

  const std::size_t plane = geo.plane(), rows = geo.rows();
  const std::size_t in_stride = geo.in_c * geo.height * geo.width, out_stride = geo.out_c * plane;
  Tensor<T> out = Tensor<T>::zeros({geo.batch, geo.out_c, geo.out_h, geo.out_w});
  {
    T* cols = scratch<T>(rows * plane);
    const T* xs_data = x.value().data().data();
    ConstMatrixMap<T> w(weights.value().data().data(), geo.out_c, rows);
    std::span<const T> b = bias.value().data();
    for (std::size_t n = 0; n < geo.batch; ++n) {
      im2col(xs_data + n * in_stride, geo, cols);
      MatrixMap<T> y(out.data().data() + n * out_stride, geo.out_c, plane);
      y.noalias() = w * ConstMatrixMap<T>(cols, rows, plane);
      for (std::size_t oc = 0; oc < geo.out_c; ++oc) y.row(oc).array() += b[oc];
    }
  }

  return x.graph->record(
      std::move(out), {x, weights, bias},
      [x, weights, bias, geo, plane, rows, in_stride, out_stride](Graph<T>& g,
                                                                   std::span<const T> dy) {
        if (auto db = g.grad_of(bias); !db.empty()) {
          for (std::size_t n = 0; n < geo.batch; ++n) {
            for (std::size_t oc = 0; oc < geo.out_c; ++oc) {
              const T* d = dy.data() + n * out_stride + oc * plane;
              db[oc] += std::accumulate(d, d + plane, T{0});
            }
          }
        }
        auto dw = g.grad_of(weights);
        auto dx = g.grad_of(x);
        if (dw.empty() && dx.empty()) return;
        T* cols = scratch<T>(rows * plane);
        const T* xs_data = x.value().data().data();
        ConstMatrixMap<T> w(weights.value().data().data(), geo.out_c, rows);
        for (std::size_t n = 0; n < geo.batch; ++n) {
          ConstMatrixMap<T> dyn(dy.data() + n * out_stride, geo.out_c, plane);
          if (!dw.empty()) {
            im2col(xs_data + n * in_stride, geo, cols);
            MatrixMap<T>(dw.data(), geo.out_c, rows).noalias() +=
                dyn * ConstMatrixMap<T>(cols, rows, plane).transpose();
          }
          if (!dx.empty()) {
            MatrixMap<T>(cols, rows, plane).noalias() = w.transpose() * dyn;
            col2im(cols, geo, dx.data() + n * in_stride);
          }
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, ConvParams<T>& p, bool trainable) {
  Graph<T>& g = *x.graph;
  return conv2d(x, bind(g, p.weights, trainable), bind(g, p.bias, trainable), p.stride, p.padding);
}

template <typename T>
Var<T> resize2x(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("resize2x: input must be 4-D, got " + shape_string(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out = Tensor<T>::zeros({s[0], s[1], 2 * h, 2 * w});
  std::span<const T> src = x.value().data();
  std::span<T> dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      const T* row = src.data() + (p * h + i / 2) * w;
      T* o = dst.data() + (p * 2 * h + i) * 2 * w;
      for (std::size_t j = 0; j < 2 * w; ++j) o[j] = row[j / 2];
    }
  }
  return x.graph->record(std::move(out), {x}, [x, planes, h, w](Graph<T>& g, std::span<const T> dy) {
    auto dx = g.grad_of(x);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < 2 * h; ++i) {
        const T* row = dy.data() + (p * 2 * h + i) * 2 * w;
        T* o = dx.data() + (p * h + i / 2) * w;
        for (std::size_t j = 0; j < 2 * w; ++j) o[j / 2] += row[j];
      }
    }
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v >= T{0} ? v : slope * v;
  return x.graph->record(std::move(out), {x}, [x, slope](Graph<T>& g, std::span<const T> dy) {
    std::span<const T> in = x.value().data();
    auto dx = g.grad_of(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += in[i] >= T{0} ? dy[i] : slope * dy[i];
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) {
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
  const std::size_t id = x.graph->size();
  return x.graph->record(std::move(out), {x}, [x, id](Graph<T>& g, std::span<const T> dy) {
    std::span<const T> y = g.value(Var<T>{&g, id}).data();
    auto dx = g.grad_of(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, BatchNormParams<T>& p, bool trainable, bool update_running_stats) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("batch_norm: input must be 4-D, got " + shape_string(s));
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  if (channels != p.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(channels) +
                     " channels, parameters have " + std::to_string(p.channels()));
  }
  const std::size_t count = batch * plane;
  Graph<T>& graph = *x.graph;
  Var<T> gamma = bind(graph, p.gamma, trainable);
  Var<T> beta = bind(graph, p.beta, trainable);
  std::span<const T> in = x.value().data();

  // Per-channel scale and shift applied to x: xhat = (x - mean) * inv_std.
  auto mean = std::make_shared<std::vector<T>>(channels);
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  const bool train = p.mode == BnMode::train;
  if (train) {
    if (count < 2) throw ShapeError("batch_norm: train mode needs batch*H*W >= 2");
    for (std::size_t c = 0; c < channels; ++c) {
      T sum{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += src[i];
      }
      const T mu = sum / static_cast<T>(count);
      T sq{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const T var = sq / static_cast<T>(count);
      (*mean)[c] = mu;
      (*inv_std)[c] = T{1} / std::sqrt(var + p.eps);
      if (update_running_stats) {
        const T unbiased = sq / static_cast<T>(count - 1);
        p.running_mean[c] = (T{1} - p.momentum) * p.running_mean[c] + p.momentum * mu;
        p.running_var[c] = (T{1} - p.momentum) * p.running_var[c] + p.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      (*mean)[c] = p.running_mean[c];
      (*inv_std)[c] = T{1} / std::sqrt(p.running_var[c] + p.eps);
    }
  }

  Tensor<T> out = Tensor<T>::zeros(s);
  std::span<T> o = out.data();
  std::span<const T> ga = gamma.value().data();
  std::span<const T> be = beta.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (n * channels + c) * plane;
      const T mu = (*mean)[c], is = (*inv_std)[c];
      for (std::size_t i = 0; i < plane; ++i) o[off + i] = ga[c] * (in[off + i] - mu) * is + be[c];
    }
  }

  return graph.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, inv_std, train, batch, channels, plane, count](
          Graph<T>& g, std::span<const T> dy) {
        std::span<const T> in = x.value().data();
        std::span<const T> ga = gamma.value().data();
        auto dx = g.grad_of(x);
        auto dgamma = g.grad_of(gamma);
        auto dbeta = g.grad_of(beta);
        for (std::size_t c = 0; c < channels; ++c) {
          const T mu = (*mean)[c], is = (*inv_std)[c];
          T sum_dy{0}, sum_dy_xhat{0};
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * (in[off + i] - mu) * is;
            }
          }
          if (!dgamma.empty()) dgamma[c] += sum_dy_xhat;
          if (!dbeta.empty()) dbeta[c] += sum_dy;
          if (dx.empty()) continue;
          const T m = static_cast<T>(count);
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                const T xhat = (in[off + i] - mu) * is;
                dx[off + i] += ga[c] * is * (dy[off + i] - sum_dy / m - xhat * sum_dy_xhat / m);
              } else {
                dx[off + i] += ga[c] * is * dy[off + i];
              }
            }
          }
        }
      });
}

template <typename T>
void rmsprop_step(std::span<Tensor<T>* const> params, OptimState<T>& state, Direction dir) {
  if (state.accumulators.empty()) {
    for (Tensor<T>* p : params) state.accumulators.emplace_back(p->numel(), T{0});
  }
  if (state.accumulators.size() != params.size()) {
    throw Error("rmsprop_step: optimizer state tracks " +
                std::to_string(state.accumulators.size()) + " tensors, got " +
                std::to_string(params.size()));
  }
  const T sign = static_cast<T>(static_cast<int>(dir));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    if (!p.requires_grad()) throw Error("rmsprop_step: parameter has no gradient buffer");
    std::vector<T>& v = state.accumulators[k];
    if (v.size() != p.numel()) throw Error("rmsprop_step: accumulator shape mismatch");
    std::span<T> theta = p.data();
    std::span<const T> grad = std::as_const(p).grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = state.decay * v[i] + (T{1} - state.decay) * grad[i] * grad[i];
      theta[i] += sign * state.learning_rate * grad[i] / (std::sqrt(v[i]) + state.eps);
    }
  }
}

template <typename T>
void clip_weights(std::span<Tensor<T>* const> params, T c) {
  if (!(c > T{0})) throw Error("clip_weights: clip value must be positive");
  for (Tensor<T>* p : params) {
    for (T& v : p->data()) v = std::clamp(v, -c, c);
  }
}

template <typename T>
T max_abs(std::span<Tensor<T>* const> params) {
  T m{0};
  for (const Tensor<T>* p : params) {
    for (T v : p->data()) m = std::max(m, std::abs(v));
  }
  return m;
}

#define SEGAN_INSTANTIATE(T)                                                                  \
  template ConvParams<T> make_conv(std::size_t, std::size_t, int, int, int, std::mt19937_64&); \
  template BatchNormParams<T> make_batch_norm(std::size_t);                                   \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                   \
  template Var<T> conv2d(Var<T>, ConvParams<T>&, bool);                                       \
  template Var<T> resize2x(Var<T>);                                                           \
  template Var<T> leaky_relu(Var<T>, T);                                                      \
  template Var<T> sigmoid(Var<T>);                                                            \
  template Var<T> batch_norm(Var<T>, BatchNormParams<T>&, bool, bool);                        \
  template void rmsprop_step(std::span<Tensor<T>* const>, OptimState<T>&, Direction);         \
  template void clip_weights(std::span<Tensor<T>* const>, T);                                 \
  template T max_abs(std::span<Tensor<T>* const>);

SEGAN_INSTANTIATE(float)
SEGAN_INSTANTIATE(double)

}  // namespace segan
