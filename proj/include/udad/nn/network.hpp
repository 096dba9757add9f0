#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udad/nn/autodiff.hpp"
#include "udad/nn/ops.hpp"
#include "udad/rng.hpp"

namespace udad::nn {

enum class net_role { generator, discriminator };

/// Shape descriptor of a U-shaped generator or an encoder-shaped discriminator.
///
/// Encoder level i (0-based) is a stride-2 3x3x3 convolution to
/// base_width * 2^i channels followed by ReLU. A generator mirrors it with
/// nearest-neighbour upsampling, concatenation of the matching encoder
/// output (the raw input at full resolution), a 3x3x3 convolution and ReLU,
/// then a 1x1x1 head without activation. A discriminator averages the last
/// encoder level globally and applies a linear head to one scalar.
struct architecture {
  net_role role = net_role::generator;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t depth = 2;
  std::size_t base_width = 8;

  std::size_t level_width(std::size_t level) const { return base_width << level; }
  void validate() const;
  bool operator==(const architecture&) const = default;
};

std::string to_string(net_role role);
net_role role_from_string(const std::string& s);

struct param_block {
  std::string name;
  shape_t shape;
};

/// Parameter blocks in layer order implied by the descriptor.
std::vector<param_block> layout(const architecture& arch);
std::size_t expected_parameter_count(const architecture& arch);

template <class T>
struct basic_network {
  architecture arch;
  std::vector<basic_var<T>> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }

  /// Deep copy into another scalar type.
  template <class U>
  basic_network<U> cast() const {
    basic_network<U> out;
    out.arch = arch;
    for (const auto& p : params) out.params.push_back(basic_var<U>::parameter(p.value().template cast<U>(), p.label()));
    return out;
  }

  basic_network clone() const { return cast<T>(); }
};

using network = basic_network<float>;

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases. Each block
/// draws from its own stream derived from `seed` and the block index.
template <class T>
basic_network<T> build_network(const architecture& arch, std::uint64_t seed) {
  arch.validate();
  basic_network<T> net;
  net.arch = arch;
  const auto blocks = layout(arch);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    basic_tensor<T> values(blocks[b].shape);
    if (blocks[b].shape.size() > 1) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < blocks[b].shape.size(); ++i) fan_in *= blocks[b].shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      rng gen(seed, 0x1000 + b);
      for (auto& v : values.values()) v = static_cast<T>(gen.uniform(-bound, bound));
    }
    net.params.push_back(basic_var<T>::parameter(std::move(values), blocks[b].name));
  }
  return net;
}

inline network build_generator(std::size_t in_ch, std::size_t out_ch, std::size_t depth, std::size_t base_width,
                               std::uint64_t seed) {
  return build_network<float>({net_role::generator, in_ch, out_ch, depth, base_width}, seed);
}

inline network build_discriminator(std::size_t in_ch, std::size_t depth, std::size_t base_width, std::uint64_t seed) {
  return build_network<float>({net_role::discriminator, in_ch, 1, depth, base_width}, seed);
}

template <class T>
struct generator_output {
  basic_var<T> output;
  /// Post-activation output of every encoder level, shallowest first.
  std::vector<basic_var<T>> features;
};

namespace detail {
inline void check_spatial(const architecture& arch, const shape_t& s) {
  if (s.size() != 5) throw shape_error("network input must be (N,C,W,H,D), got " + shape_string(s));
  if (s[1] != arch.in_channels)
    throw shape_error("network expects " + std::to_string(arch.in_channels) + " input channels, got " +
                      std::to_string(s[1]));
  const std::size_t div = std::size_t{1} << arch.depth;
  for (int a = 2; a < 5; ++a)
    if (s[a] % div != 0 || s[a] == 0)
      throw shape_error("spatial dims " + shape_string(s) + " are not divisible by 2^depth = " + std::to_string(div));
}
}  // namespace detail

template <class T>
std::vector<basic_var<T>> encode(const basic_network<T>& net, const basic_var<T>& x) {
  detail::check_spatial(net.arch, x.shape());
  std::vector<basic_var<T>> features;
  basic_var<T> h = x;
  for (std::size_t level = 0; level < net.arch.depth; ++level) {
    h = relu(conv3d(h, net.params[2 * level], net.params[2 * level + 1], 2, 1));
    features.push_back(h);
  }
  return features;
}

template <class T>
generator_output<T> forward_generator(const basic_network<T>& net, const basic_var<T>& x) {
  if (net.arch.role != net_role::generator) throw validation_error("forward_generator: network is not a generator");
  generator_output<T> out;
  out.features = encode(net, x);
  const std::size_t depth = net.arch.depth;
  basic_var<T> h = out.features.back();
  std::size_t p = 2 * depth;
  for (std::size_t level = depth; level-- > 0;) {
    const basic_var<T>& skip = level == 0 ? x : out.features[level - 1];
    h = relu(conv3d(concat(upsample2(h), skip), net.params[p], net.params[p + 1], 1, 1));
    p += 2;
  }
  out.output = conv3d(h, net.params[p], net.params[p + 1], 1, 0);
  return out;
}

/// One scalar per sample: (N, 1).
template <class T>
basic_var<T> forward_discriminator(const basic_network<T>& net, const basic_var<T>& x) {
  if (net.arch.role != net_role::discriminator)
    throw validation_error("forward_discriminator: network is not a discriminator");
  const auto features = encode(net, x);
  const std::size_t p = 2 * net.arch.depth;
  return linear(global_avg_pool(features.back()), net.params[p], net.params[p + 1]);
}

struct adam_config {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct adam_state {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam over the gradients currently held by `params`
/// (a missing gradient counts as zero). Throws poison_error naming the
/// first parameter block with a non-finite gradient; nothing is updated
/// in that case.
void adam_step(std::vector<var>& params, adam_state& state, const adam_config& cfg);

/// "UDADNN1", u32 LE descriptor length, JSON descriptor, then every
/// parameter block as LE float32 in layer order.
std::vector<std::uint8_t> encode_network(const network& net);
network decode_network(std::span<const std::uint8_t> bytes);
void save_network(const network& net, const std::filesystem::path& path);
network load_network(const std::filesystem::path& path);

}  // namespace udad::nn
