#include "udad/nn/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace udad::nn {

void architecture::validate() const {
  if (depth < 2) throw validation_error("network depth must be >= 2");
  if (in_channels == 0 || base_width == 0) throw validation_error("network channel counts must be positive");
  if (role == net_role::generator && out_channels == 0) throw validation_error("generator needs output channels");
  if (role == net_role::discriminator && out_channels != 1)
    throw validation_error("discriminator output must be a single scalar");
}

std::string to_string(net_role role) { return role == net_role::generator ? "generator" : "discriminator"; }

net_role role_from_string(const std::string& s) {
  if (s == "generator") return net_role::generator;
  if (s == "discriminator") return net_role::discriminator;
  throw validation_error("unknown network role '" + s + "'");
}

std::vector<param_block> layout(const architecture& arch) {
  std::vector<param_block> blocks;
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    blocks.push_back({name + ".weight", {out, in, k, k, k}});
    blocks.push_back({name + ".bias", {out}});
  };
  for (std::size_t level = 0; level < arch.depth; ++level)
    conv("enc" + std::to_string(level), level == 0 ? arch.in_channels : arch.level_width(level - 1),
         arch.level_width(level), 3);
  if (arch.role == net_role::discriminator) {
    blocks.push_back({"head.weight", {1, arch.level_width(arch.depth - 1)}});
    blocks.push_back({"head.bias", {1}});
    return blocks;
  }
  std::size_t current = arch.level_width(arch.depth - 1);
  for (std::size_t level = arch.depth; level-- > 0;) {
    const std::size_t skip = level == 0 ? arch.in_channels : arch.level_width(level - 1);
    const std::size_t out = level == 0 ? arch.base_width : arch.level_width(level - 1);
    conv("dec" + std::to_string(level), current + skip, out, 3);
    current = out;
  }
  conv("head", current, arch.out_channels, 1);
  return blocks;
}

std::size_t expected_parameter_count(const architecture& arch) {
  std::size_t n = 0;
  for (const auto& b : layout(arch)) n += shape_size(b.shape);
  return n;
}

void adam_step(std::vector<var>& params, adam_state& state, const adam_config& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value().size(), 0.0);
      state.v[i].assign(params[i].value().size(), 0.0);
    }
  }
  for (const auto& p : params) {
    for (float g : p.grad().values())
      if (!std::isfinite(g)) throw poison_error("adam_step: non-finite gradient in parameter block '" + p.label() + "'");
    if (!p.grad().empty() && p.grad().size() != p.value().size())
      throw shape_error("adam_step: gradient shape mismatch for '" + p.label() + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = p.grad();
    auto& w = p.mutable_value();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double step = cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
      w[j] = static_cast<float>(static_cast<double>(w[j]) - step);
    }
  }
}

namespace {

constexpr char net_magic[] = {'U', 'D', 'A', 'D', 'N', 'N', '1'};
constexpr std::size_t net_magic_size = sizeof(net_magic);

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

std::vector<std::uint8_t> encode_network(const network& net) {
  nlohmann::ordered_json desc;
  desc["role"] = to_string(net.arch.role);
  desc["in_channels"] = net.arch.in_channels;
  desc["out_channels"] = net.arch.out_channels;
  desc["depth"] = net.arch.depth;
  desc["base_width"] = net.arch.base_width;
  auto blocks = nlohmann::ordered_json::array();
  for (const auto& p : net.params) blocks.push_back({{"name", p.label()}, {"shape", p.value().shape()}});
  desc["blocks"] = blocks;
  desc["dtype"] = "f32le";
  const std::string text = desc.dump();

  std::vector<std::uint8_t> out(std::begin(net_magic), std::end(net_magic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : net.params)
    for (float f : p.value().values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

network decode_network(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < net_magic_size + 4) throw format_error(format_errc::truncated, "network file truncated");
  for (std::size_t i = 0; i < net_magic_size; ++i)
    if (bytes[i] != static_cast<std::uint8_t>(net_magic[i]))
      throw format_error(format_errc::magic_mismatch, "not a UDADNN1 network file");
  const std::size_t len = get_u32(bytes.data() + net_magic_size);
  const std::size_t at = net_magic_size + 4 + len;
  if (bytes.size() < at) throw format_error(format_errc::truncated, "network descriptor truncated");

  network net;
  std::vector<param_block> declared;
  try {
    const auto desc = nlohmann::json::parse(bytes.begin() + net_magic_size + 4, bytes.begin() + static_cast<std::ptrdiff_t>(at));
    net.arch.role = role_from_string(desc.at("role").get<std::string>());
    net.arch.in_channels = desc.at("in_channels").get<std::size_t>();
    net.arch.out_channels = desc.at("out_channels").get<std::size_t>();
    net.arch.depth = desc.at("depth").get<std::size_t>();
    net.arch.base_width = desc.at("base_width").get<std::size_t>();
    for (const auto& b : desc.at("blocks"))
      declared.push_back({b.at("name").get<std::string>(), b.at("shape").get<shape_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw format_error(format_errc::bad_header, std::string("network descriptor: ") + e.what());
  } catch (const validation_error& e) {
    throw format_error(format_errc::bad_header, std::string("network descriptor: ") + e.what());
  }
  net.arch.validate();
  const auto expected = layout(net.arch);
  if (expected.size() != declared.size())
    throw format_error(format_errc::bad_header, "network descriptor block list does not match its architecture");
  std::size_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != declared[i].name || expected[i].shape != declared[i].shape)
      throw format_error(format_errc::bad_header, "network block '" + declared[i].name + "' disagrees with architecture");
    total += shape_size(expected[i].shape);
  }
  if (bytes.size() - at != 4 * total) {
    if (bytes.size() - at < 4 * total)
      throw format_error(format_errc::truncated, "network parameter payload truncated");
    throw format_error(format_errc::size_mismatch, "network parameter payload larger than declared");
  }
  const std::uint8_t* p = bytes.data() + at;
  for (const auto& b : expected) {
    tensor t(b.shape);
    for (auto& v : t.values()) {
      v = std::bit_cast<float>(get_u32(p));
      p += 4;
    }
    net.params.push_back(var::parameter(std::move(t), b.name));
  }
  return net;
}

void save_network(const network& net, const std::filesystem::path& path) {
  const auto bytes = encode_network(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(format_errc::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(format_errc::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_network(bytes);
}

}  // namespace udad::nn
