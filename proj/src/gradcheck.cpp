#include "segan/gradcheck.hpp"

#include <cmath>
#include <map>
#include <random>

#include "segan/loss.hpp"

namespace segan {

template <typename T>
double finite_diff_check(const ScalarFn<T>& fn, Tensor<T>& x, double eps) {
  if (!(eps > 0.0)) throw Error("finite_diff_check: eps must be positive");
  if (!x.requires_grad()) x.set_requires_grad(true);
  x.zero_grad();
  {
    Graph<T> g;
    Var<T> loss = fn(g);
    g.backward(loss);
  }
  const std::vector<T> analytic(x.grad().begin(), x.grad().end());

  auto evaluate = [&fn]() {
    Graph<T> g;
    return static_cast<double>(fn(g).value().item());
  };
  const T step = static_cast<T>(eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T saved = x[i];
    x[i] = saved + step;
    const double plus = evaluate();
    x[i] = saved - step;
    const double minus = evaluate();
    x[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  std::copy(analytic.begin(), analytic.end(), x.grad().begin());
  return worst;
}

template double finite_diff_check(const ScalarFn<float>&, Tensor<float>&, double);
template double finite_diff_check(const ScalarFn<double>&, Tensor<double>&, double);

namespace {

using D = double;
constexpr double kEps = 1e-6;

class SuiteBuilder {
 public:
  SuiteBuilder(unsigned seed, double tolerance) : rng_(seed), tolerance_(tolerance) {}

  Tensor<D> random(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<D> v(numel(shape));
    for (D& x : v) x = u(rng_);
    return Tensor<D>(std::move(shape), std::move(v), true);
  }

  /// Random projection so that every output coordinate carries a distinct weight.
  Var<D> project(Var<D> y) {
    auto it = projections_.find(y.shape());
    if (it == projections_.end()) {
      Tensor<D> w = random(y.shape());
      w.set_requires_grad(false);
      it = projections_.emplace(y.shape(), std::move(w)).first;
    }
    return dot_const(y, it->second);
  }

  void check(const std::string& name, const ScalarFn<D>& fn, Tensor<D>& x) {
    const double err = finite_diff_check(fn, x, kEps);
    results_.push_back({name, err, err < tolerance_});
  }

  std::vector<GradCheckResult> take() { return std::move(results_); }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double tolerance_;
  std::map<Shape, Tensor<D>> projections_;
  std::vector<GradCheckResult> results_;
};

NetSpec tiny_segmentor(int in_channels, int classes) {
  NetSpec spec = NetSpec::segmentor(in_channels, classes, 3);
  spec.down_blocks = 2;
  spec.up_blocks = 2;
  return spec;
}

NetSpec tiny_critic(int in_channels) {
  NetSpec spec = NetSpec::critic(in_channels, 3);
  spec.down_blocks = 2;
  return spec;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(unsigned seed, double tolerance) {
  SuiteBuilder s(seed, tolerance);

  {
    Tensor<D> a = s.random({2, 3, 3, 3});
    Tensor<D> b = s.random({2, 3, 3, 3});
    Tensor<D> m = s.random({2, 1, 3, 3}, 0.0, 1.0);
    auto same = [&](Graph<D>& g) { return s.project(hadamard(g.param(a), g.param(b))); };
    s.check("hadamard/a", same, a);
    s.check("hadamard/b", same, b);
    auto bcast = [&](Graph<D>& g) { return s.project(hadamard(g.param(a), g.param(m))); };
    s.check("hadamard_broadcast/x", bcast, a);
    s.check("hadamard_broadcast/mask", bcast, m);
  }
  {
    Tensor<D> a = s.random({2, 2, 3, 3});
    Tensor<D> b = s.random({2, 1, 3, 3});
    auto fn = [&](Graph<D>& g) {
      Var<D> c = concat_channels(std::vector<Var<D>>{g.param(a), g.param(b)});
      return s.project(slice_channels(c, 1, 2));
    };
    s.check("concat_slice/a", fn, a);
    s.check("concat_slice/b", fn, b);
  }
  {
    Tensor<D> a = s.random({1, 2, 3, 3});
    Tensor<D> b = s.random({1, 2, 3, 3});
    auto fn = [&](Graph<D>& g) { return mean_abs(g.param(a), g.param(b)); };
    s.check("mean_abs/a", fn, a);
    s.check("mean_abs/b", fn, b);
  }
  for (auto [kernel, stride] : {std::pair{4, 2}, std::pair{3, 1}}) {
    const std::string tag = "conv2d_k" + std::to_string(kernel) + "s" + std::to_string(stride);
    Tensor<D> x = s.random({2, 2, 6, 6});
    ConvParams<D> p = make_conv<D>(2, 3, kernel, stride, 1, s.rng());
    for (D& w : p.weights.data()) w *= 20.0;
    p.bias = s.random({3});
    auto fn = [&](Graph<D>& g) { return s.project(conv2d(g.param(x), p)); };
    s.check(tag + "/input", fn, x);
    s.check(tag + "/weights", fn, p.weights);
    s.check(tag + "/bias", fn, p.bias);
  }
  {
    Tensor<D> x = s.random({2, 2, 3, 3});
    s.check("resize2x", [&](Graph<D>& g) { return s.project(resize2x(g.param(x))); }, x);
    s.check("leaky_relu", [&](Graph<D>& g) { return s.project(leaky_relu(g.param(x))); }, x);
    s.check("sigmoid", [&](Graph<D>& g) { return s.project(sigmoid(g.param(x))); }, x);
  }
  {
    Tensor<D> x = s.random({2, 3, 4, 4}, -2.0, 3.0);
    BatchNormParams<D> p = make_batch_norm<D>(3);
    p.gamma = s.random({3}, 0.5, 1.5);
    p.beta = s.random({3});
    auto fn = [&](Graph<D>& g) { return s.project(batch_norm(g.param(x), p, true, false)); };
    s.check("batch_norm_train/input", fn, x);
    s.check("batch_norm_train/gamma", fn, p.gamma);
    s.check("batch_norm_train/beta", fn, p.beta);
    BatchNormParams<D> e = p;
    e.mode = BnMode::eval;
    e.running_mean = s.random({3});
    e.running_var = s.random({3}, 0.5, 2.0);
    e.running_mean.set_requires_grad(false);
    e.running_var.set_requires_grad(false);
    auto fe = [&](Graph<D>& g) { return s.project(batch_norm(g.param(x), e, true, false)); };
    s.check("batch_norm_eval/input", fe, x);
    s.check("batch_norm_eval/gamma", fe, e.gamma);
  }
  {
    Tensor<D> pred = s.random({2, 2, 3, 3}, 0.05, 0.95);
    std::vector<D> labels(pred.numel());
    std::bernoulli_distribution coin(0.5);
    for (D& v : labels) v = coin(s.rng()) ? 1.0 : 0.0;
    const Tensor<D> gt({2, 2, 3, 3}, labels);
    s.check("pixelwise_bce/pred",
            [&](Graph<D>& g) { return pixelwise_baseline_loss(g.param(pred), g.frozen(gt)); }, pred);
  }
  {
    NetParams<D> critic = build_critic<D>(tiny_critic(3), seed + 1);
    for (Tensor<D>* p : critic.parameters()) {
      for (D& v : p->data()) v += 0.3 * (std::uniform_real_distribution<double>(-1, 1)(s.rng()));
    }
    Tensor<D> x = s.random({2, 3, 4, 4});
    auto fn = [&](Graph<D>& g) {
      ForwardOptions opts;
      opts.update_running_stats = false;
      std::vector<Var<D>> f = critic_features(critic, g.param(x), opts);
      std::vector<Var<D>> parts;
      for (std::size_t i = 1; i < f.size(); ++i) parts.push_back(s.project(f[i]));
      return mean_of(parts);
    };
    s.check("critic_features/input", fn, x);
    s.check("critic_features/block0_weights", fn, critic.down[0].conv.weights);
  }
  {
    NetParams<D> seg = build_segmentor<D>(tiny_segmentor(2, 2), seed + 2);
    for (Tensor<D>* p : seg.parameters()) {
      for (D& v : p->data()) v += 0.3 * (std::uniform_real_distribution<double>(-1, 1)(s.rng()));
    }
    Tensor<D> x = s.random({2, 2, 4, 4});
    auto fn = [&](Graph<D>& g) {
      ForwardOptions opts;
      opts.update_running_stats = false;
      return s.project(segmentor_forward(seg, g.param(x), opts));
    };
    s.check("segmentor/input", fn, x);
    s.check("segmentor/head_weights", fn, seg.head->weights);
    s.check("segmentor/down0_weights", fn, seg.down[0].conv.weights);
  }
  {
    // Full adversarial pipeline: segmentor -> mask -> critic -> multi-scale L1.
    const int classes = 2;
    NetParams<D> seg = build_segmentor<D>(tiny_segmentor(3, classes), seed + 3);
    std::vector<NetParams<D>> critics;
    for (int k = 0; k < classes; ++k) critics.push_back(build_critic<D>(tiny_critic(3), seed + 4 + k));
    for (auto* net : {&seg, &critics[0], &critics[1]}) {
      for (Tensor<D>* p : net->parameters()) {
        for (D& v : p->data()) v += 0.3 * (std::uniform_real_distribution<double>(-1, 1)(s.rng()));
      }
    }
    Tensor<D> x = s.random({2, 3, 4, 4}, 0.0, 1.0);
    x.set_requires_grad(false);
    std::vector<D> labels(2 * classes * 16);
    std::bernoulli_distribution coin(0.5);
    for (D& v : labels) v = coin(s.rng()) ? 1.0 : 0.0;
    const Tensor<D> gt({2, static_cast<std::size_t>(classes), 4, 4}, labels);
    const LossConfig cfg = LossConfig::for_variant(LossVariant::multiscale, 2);
    auto fn = [&](Graph<D>& g) {
      ForwardOptions opts;
      opts.update_running_stats = false;
      Var<D> xv = g.frozen(x);
      Var<D> pred = segmentor_forward(seg, xv, opts);
      Var<D> truth = g.frozen(gt);
      std::vector<Var<D>> losses;
      for (int k = 0; k < classes; ++k) {
        losses.push_back(multiscale_l1(critics[k], xv, slice_channels(pred, k, 1),
                                       slice_channels(truth, k, 1), cfg, opts));
      }
      return average_multi_critic_loss(losses);
    };
    for (NamedTensor<D>& t : seg.named_tensors()) {
      if (t.tensor->requires_grad()) s.check("pipeline/segmentor." + t.name, fn, *t.tensor);
    }
    s.check("pipeline/critic0.down1.conv.weight", fn, critics[0].down[1].conv.weights);
    s.check("pipeline/critic1.down0.conv.weight", fn, critics[1].down[0].conv.weights);
  }
  return s.take();
}

}  // namespace segan
