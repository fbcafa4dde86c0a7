#include "segan/graph.hpp"

#include <cmath>
#include <sstream>

namespace segan {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

}  // namespace

template <typename T>
Graph<T>::Graph() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

template <typename T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::frozen(const Tensor<T>& value) {
  Node node;
  node.ref = &value;
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::param(Tensor<T>& value) {
  Node node;
  node.ref = &value;
  if (value.requires_grad()) {
    node.sink = &value;
    node.needs_grad = true;
  }
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> out, std::vector<Var<T>> inputs, BackwardFn backward) {
  if (check_finite_) {
    for (T v : out.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite value produced by op");
    }
  }
  Node node;
  node.owned = std::move(out);
  node.inputs.reserve(inputs.size());
  for (const Var<T>& in : inputs) {
    if (in.graph != this) throw Error("op input belongs to a different graph");
    node.inputs.push_back(in.id);
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  const Node& node = nodes_.at(v.id);
  return node.ref ? *node.ref : node.owned;
}

template <typename T>
std::span<T> Graph<T>::grad_of(Var<T> v) {
  Node& node = nodes_.at(v.id);
  if (!node.needs_grad) return {};
  if (node.grad.empty()) node.grad.assign(value(v).numel(), T{0});
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_string(value(loss).shape()));
  }
  if (!nodes_[loss.id].needs_grad) return;
  grad_of(loss)[0] = T{1};
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.sink) {
      std::span<T> dst = node.sink->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Shape& as = av.shape();
  const Shape& bs = bv.shape();
  const bool same = as == bs;
  const bool broadcast = !same && as.size() == 4 && bs.size() == 4 && bs[1] == 1 &&
                         as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3];
  if (!same && !broadcast) {
    throw ShapeError("hadamard: incompatible shapes " + shape_string(as) + " and " +
                     shape_string(bs));
  }
  Tensor<T> out = Tensor<T>::zeros(as);
  std::span<T> o = out.data();
  std::span<const T> x = av.data();
  std::span<const T> m = bv.data();
  if (same) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * m[i];
    return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::span<const T> dy) {
      std::span<const T> x = a.value().data();
      std::span<const T> m = b.value().data();
      if (auto da = g.grad_of(a); !da.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * m[i];
      }
      if (auto db = g.grad_of(b); !db.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * x[i];
      }
    });
  }
  const std::size_t batch = as[0], channels = as[1], plane = as[2] * as[3];
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t xo = (n * channels + c) * plane, mo = n * plane;
      for (std::size_t p = 0; p < plane; ++p) o[xo + p] = x[xo + p] * m[mo + p];
    }
  }
  return a.graph->record(
      std::move(out), {a, b},
      [a, b, batch, channels, plane](Graph<T>& g, std::span<const T> dy) {
        std::span<const T> x = a.value().data();
        std::span<const T> m = b.value().data();
        auto da = g.grad_of(a);
        auto db = g.grad_of(b);
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t xo = (n * channels + c) * plane, mo = n * plane;
            if (!da.empty()) {
              for (std::size_t p = 0; p < plane; ++p) da[xo + p] += dy[xo + p] * m[mo + p];
            }
            if (!db.empty()) {
              for (std::size_t p = 0; p < plane; ++p) db[mo + p] += dy[xo + p] * x[xo + p];
            }
          }
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  std::span<T> o = out.data();
  std::span<const T> y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::span<const T> dy) {
    for (Var<T> v : {a, b}) {
      if (auto d = g.grad_of(v); !d.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= factor;
  return a.graph->record(std::move(out), {a}, [a, factor](Graph<T>& g, std::span<const T> dy) {
    auto d = g.grad_of(a);
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  if (first.size() != 4) throw ShapeError("concat_channels: inputs must be 4-D");
  std::size_t channels = 0;
  for (const Var<T>& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + shape_string(first) + " vs " +
                       shape_string(s));
    }
    channels += s[1];
  }
  const std::size_t batch = first[0], plane = first[2] * first[3];
  Tensor<T> out = Tensor<T>::zeros({batch, channels, first[2], first[3]});
  std::span<T> o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var<T>& p : parts) {
    const std::size_t c = p.shape()[1];
    std::span<const T> src = p.value().data();
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy_n(src.begin() + n * c * plane, c * plane,
                  o.begin() + (n * channels + offset) * plane);
    }
    offsets.push_back(offset);
    offset += c;
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].graph->record(
      std::move(out), inputs,
      [inputs, offsets, batch, channels, plane](Graph<T>& g, std::span<const T> dy) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          auto d = g.grad_of(inputs[k]);
          if (d.empty()) continue;
          const std::size_t c = inputs[k].shape()[1];
          for (std::size_t n = 0; n < batch; ++n) {
            const T* src = dy.data() + (n * channels + offsets[k]) * plane;
            T* dst = d.data() + n * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t first, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("slice_channels: input must be 4-D");
  if (count == 0 || first + count > s[1]) {
    throw ShapeError("slice_channels: channels [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " + shape_string(s));
  }
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  Tensor<T> out = Tensor<T>::zeros({batch, count, s[2], s[3]});
  std::span<const T> src = x.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(src.begin() + (n * channels + first) * plane, count * plane,
                out.data().begin() + n * count * plane);
  }
  return x.graph->record(
      std::move(out), {x},
      [x, first, count, batch, channels, plane](Graph<T>& g, std::span<const T> dy) {
        auto d = g.grad_of(x);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = dy.data() + n * count * plane;
          T* dst = d.data() + (n * channels + first) * plane;
          for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
      });
}

template <typename T>
Var<T> mean_abs(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs");
  std::span<const T> x = a.value().data();
  std::span<const T> y = b.value().data();
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(x[i] - y[i]);
  const T inv = T{1} / static_cast<T>(x.size());
  return a.graph->record(Tensor<T>::scalar(total * inv), {a, b},
                         [a, b, inv](Graph<T>& g, std::span<const T> dy) {
                           std::span<const T> x = a.value().data();
                           std::span<const T> y = b.value().data();
                           auto da = g.grad_of(a);
                           auto db = g.grad_of(b);
                           const T step = dy[0] * inv;
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             const T diff = x[i] - y[i];
                             const T s = diff > T{0} ? step : (diff < T{0} ? -step : T{0});
                             if (!da.empty()) da[i] += s;
                             if (!db.empty()) db[i] -= s;
                           }
                         });
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> scalars) {
  if (scalars.empty()) throw ShapeError("mean_of: empty list");
  T total{0};
  for (const Var<T>& s : scalars) {
    if (s.value().numel() != 1) throw ShapeError("mean_of: inputs must be scalars");
    total += s.value().item();
  }
  const T inv = T{1} / static_cast<T>(scalars.size());
  std::vector<Var<T>> inputs(scalars.begin(), scalars.end());
  return scalars[0].graph->record(Tensor<T>::scalar(total * inv), inputs,
                                  [inputs, inv](Graph<T>& g, std::span<const T> dy) {
                                    for (const Var<T>& s : inputs) {
                                      if (auto d = g.grad_of(s); !d.empty()) d[0] += dy[0] * inv;
                                    }
                                  });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  T total{0};
  for (T v : a.value().data()) total += v;
  return a.graph->record(Tensor<T>::scalar(total), {a}, [a](Graph<T>& g, std::span<const T> dy) {
    for (T& d : g.grad_of(a)) d += dy[0];
  });
}

template <typename T>
Var<T> dot_const(Var<T> a, const Tensor<T>& weights) {
  require_same_shape(a.shape(), weights.shape(), "dot_const");
  std::span<const T> x = a.value().data();
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  return a.graph->record(Tensor<T>::scalar(total), {a},
                         [a, w = weights](Graph<T>& g, std::span<const T> dy) {
                           auto d = g.grad_of(a);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[0] * w[i];
                         });
}

#define SEGAN_INSTANTIATE(T)                                                      \
  template class Graph<T>;                                                        \
  template Var<T> hadamard(Var<T>, Var<T>);                                       \
  template Var<T> add(Var<T>, Var<T>);                                            \
  template Var<T> scale(Var<T>, T);                                               \
  template Var<T> concat_channels(std::span<const Var<T>>);                       \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);               \
  template Var<T> mean_abs(Var<T>, Var<T>);                                       \
  template Var<T> mean_of(std::span<const Var<T>>);                               \
  template Var<T> sum_all(Var<T>);                                                \
  template Var<T> dot_const(Var<T>, const Tensor<T>&);

SEGAN_INSTANTIATE(float)
SEGAN_INSTANTIATE(double)

}  // namespace segan
