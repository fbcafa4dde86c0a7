#include "segan/models.hpp"

namespace segan {

NetSpec NetSpec::segmentor(int in_channels, int classes, int base_feature_maps) {
  NetSpec spec;
  spec.kind = NetKind::segmentor;
  spec.in_channels = in_channels;
  spec.out_channels = classes;
  spec.down_blocks = 4;
  spec.up_blocks = 4;
  spec.base_feature_maps = base_feature_maps;
  return spec;
}

NetSpec NetSpec::critic(int in_channels, int base_feature_maps) {
  NetSpec spec;
  spec.kind = NetKind::critic;
  spec.in_channels = in_channels;
  spec.out_channels = 0;
  spec.down_blocks = 3;
  spec.up_blocks = 0;
  spec.base_feature_maps = base_feature_maps;
  return spec;
}

std::vector<int> NetSpec::schedule() const {
  if (!feature_map_schedule.empty()) return feature_map_schedule;
  std::vector<int> out;
  int maps = base_feature_maps;
  for (int i = 0; i < down_blocks; ++i, maps *= 2) out.push_back(maps);
  return out;
}

void NetSpec::validate() const {
  if (in_channels < 1) throw ShapeError("net spec: in_channels must be >= 1");
  if (down_blocks < 1) throw ShapeError("net spec: down_blocks must be >= 1");
  if (base_feature_maps < 1) throw ShapeError("net spec: base_feature_maps must be >= 1");
  if (!feature_map_schedule.empty() &&
      feature_map_schedule.size() != static_cast<std::size_t>(down_blocks)) {
    throw ShapeError("net spec: feature_map_schedule has " +
                     std::to_string(feature_map_schedule.size()) + " entries for " +
                     std::to_string(down_blocks) + " down blocks");
  }
  for (int maps : schedule()) {
    if (maps < 1) throw ShapeError("net spec: feature map counts must be >= 1");
  }
  if (kind == NetKind::segmentor) {
    if (out_channels < 1) throw ShapeError("net spec: segmentor needs out_channels >= 1");
    if (up_blocks != down_blocks) {
      throw ShapeError("net spec: segmentor needs up_blocks == down_blocks for skip connections");
    }
  } else if (up_blocks != 0) {
    throw ShapeError("net spec: critic has no up blocks");
  }
}

template <typename T>
std::vector<Tensor<T>*> NetParams<T>::parameters() {
  std::vector<Tensor<T>*> out;
  auto add_block = [&out](ConvBlock<T>& b) {
    out.push_back(&b.conv.weights);
    out.push_back(&b.conv.bias);
    if (b.bn) {
      out.push_back(&b.bn->gamma);
      out.push_back(&b.bn->beta);
    }
  };
  for (auto& b : down) add_block(b);
  for (auto& b : up) add_block(b);
  if (head) {
    out.push_back(&head->weights);
    out.push_back(&head->bias);
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> NetParams<T>::named_tensors() {
  std::vector<NamedTensor<T>> out;
  auto add_block = [&out](const std::string& prefix, ConvBlock<T>& b) {
    out.push_back({prefix + ".conv.weight", "weight", &b.conv.weights});
    out.push_back({prefix + ".conv.bias", "bias", &b.conv.bias});
    if (b.bn) {
      out.push_back({prefix + ".bn.gamma", "bn_gamma", &b.bn->gamma});
      out.push_back({prefix + ".bn.beta", "bn_beta", &b.bn->beta});
      out.push_back({prefix + ".bn.running_mean", "bn_running_mean", &b.bn->running_mean});
      out.push_back({prefix + ".bn.running_var", "bn_running_var", &b.bn->running_var});
    }
  };
  for (std::size_t i = 0; i < down.size(); ++i) add_block("down" + std::to_string(i), down[i]);
  for (std::size_t i = 0; i < up.size(); ++i) add_block("up" + std::to_string(i), up[i]);
  if (head) {
    out.push_back({"head.conv.weight", "weight", &head->weights});
    out.push_back({"head.conv.bias", "bias", &head->bias});
  }
  return out;
}

template <typename T>
void NetParams<T>::set_bn_mode(BnMode mode) {
  for (auto* blocks : {&down, &up}) {
    for (auto& b : *blocks) {
      if (b.bn) b.bn->mode = mode;
    }
  }
}

template <typename T>
void NetParams<T>::zero_grad() {
  for (Tensor<T>* p : parameters()) p->zero_grad();
}

template <typename T>
NetParams<T> init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  NetParams<T> net;
  net.spec = spec;
  const std::vector<int> maps = spec.schedule();
  auto size = [](int v) { return static_cast<std::size_t>(v); };

  int in = spec.in_channels;
  for (int i = 0; i < spec.down_blocks; ++i) {
    ConvBlock<T> block{make_conv<T>(size(in), size(maps[i]), 4, 2, 1, rng), std::nullopt};
    if (i > 0) block.bn = make_batch_norm<T>(size(maps[i]));
    net.down.push_back(std::move(block));
    in = maps[i];
  }
  if (spec.kind == NetKind::segmentor) {
    const int depth = spec.down_blocks;
    for (int j = 0; j < spec.up_blocks; ++j) {
      const int out = j + 2 <= depth ? maps[depth - 2 - j] : maps[0];
      const int skip = j == 0 ? 0 : maps[depth - 1 - j];
      net.up.push_back({make_conv<T>(size(in + skip), size(out), 3, 1, 1, rng),
                        make_batch_norm<T>(size(out))});
      in = out;
    }
    net.head = make_conv<T>(size(in), size(spec.out_channels), 3, 1, 1, rng);
  }
  return net;
}

template <typename T>
NetParams<T> build_segmentor(const NetSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetKind::segmentor) throw ShapeError("build_segmentor: spec is not a segmentor");
  return init_params<T>(spec, seed);
}

template <typename T>
NetParams<T> build_critic(const NetSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetKind::critic) throw ShapeError("build_critic: spec is not a critic");
  return init_params<T>(spec, seed);
}

namespace {

template <typename T>
Var<T> run_block(ConvBlock<T>& block, Var<T> x, const ForwardOptions& opts) {
  Var<T> y = conv2d(x, block.conv, opts.trainable);
  if (block.bn) y = batch_norm(y, *block.bn, opts.trainable, opts.update_running_stats);
  return leaky_relu(y);
}

template <typename T>
void check_input(const NetParams<T>& params, const Shape& s, const char* who) {
  if (s.size() != 4) throw ShapeError(std::string(who) + ": input must be 4-D");
  if (s[1] != static_cast<std::size_t>(params.spec.in_channels)) {
    throw ShapeError(std::string(who) + ": input has " + std::to_string(s[1]) +
                     " channels, network expects " + std::to_string(params.spec.in_channels));
  }
  const std::size_t factor = std::size_t{1} << params.spec.down_blocks;
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ShapeError(std::string(who) + ": spatial size " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]) + " is not divisible by " + std::to_string(factor));
  }
}

}  // namespace

template <typename T>
Var<T> segmentor_forward(NetParams<T>& params, Var<T> x, const ForwardOptions& opts) {
  if (params.spec.kind != NetKind::segmentor || !params.head) {
    throw ShapeError("segmentor_forward: parameters are not a segmentor");
  }
  check_input(params, x.shape(), "segmentor_forward");
  std::vector<Var<T>> encoded;
  Var<T> h = x;
  for (auto& block : params.down) {
    h = run_block(block, h, opts);
    encoded.push_back(h);
  }
  const std::size_t depth = params.down.size();
  for (std::size_t j = 0; j < params.up.size(); ++j) {
    if (j > 0) {
      const std::size_t k = depth - 1 - j;
      Var<T> skip = encoded[k];
      if (opts.ablate_skip == static_cast<int>(k)) {
        skip = x.graph->constant(Tensor<T>::zeros(skip.shape()));
      }
      h = concat_channels(std::vector<Var<T>>{h, skip});
    }
    h = run_block(params.up[j], resize2x(h), opts);
  }
  return sigmoid(conv2d(h, *params.head, opts.trainable));
}

template <typename T>
std::vector<Var<T>> critic_features(NetParams<T>& params, Var<T> x_masked,
                                    const ForwardOptions& opts, int max_layer) {
  if (params.spec.kind != NetKind::critic) {
    throw ShapeError("critic_features: parameters are not a critic");
  }
  check_input(params, x_masked.shape(), "critic_features");
  const int depth = static_cast<int>(params.down.size());
  const int last = max_layer < 0 ? depth : std::min(max_layer, depth);
  std::vector<Var<T>> features{x_masked};
  Var<T> h = x_masked;
  for (int i = 0; i < last; ++i) {
    h = run_block(params.down[i], h, opts);
    features.push_back(h);
  }
  return features;
}

#define SEGAN_INSTANTIATE(T)                                                             \
  template struct NetParams<T>;                                                          \
  template NetParams<T> init_params(const NetSpec&, std::uint64_t);                      \
  template NetParams<T> build_segmentor(const NetSpec&, std::uint64_t);                  \
  template NetParams<T> build_critic(const NetSpec&, std::uint64_t);                     \
  template Var<T> segmentor_forward(NetParams<T>&, Var<T>, const ForwardOptions&);       \
  template std::vector<Var<T>> critic_features(NetParams<T>&, Var<T>, const ForwardOptions&, \
                                               int);

SEGAN_INSTANTIATE(float)
SEGAN_INSTANTIATE(double)

}  // namespace segan
