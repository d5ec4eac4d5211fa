#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "onet/model.hpp"
#include "onet/optim.hpp"

namespace onet {

// Checkpoint layout: magic "ONET", version u32 LE, metadata-length u64 LE,
// UTF-8 key=value metadata block (model config, arch, precision, registry
// listing with shapes), then per registry entry in order the raw
// little-endian element arrays weights, bias, m(weights), m(bias),
// v(weights), v(bias), and finally the step count t as u64 LE.

inline constexpr char kCheckpointMagic[4] = {'O', 'N', 'E', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string precision;  // "float" or "double"
  std::string arch;       // "onet" or "unet"
  ModelConfig cfg;
};

namespace detail {

template <typename V>
void write_le(std::ostream& os, V v) {
  // Little-endian host assumed; raw write.
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_le(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    fail(std::string("checkpoint: truncated while reading ") + what);
  }
  return v;
}

template <typename T>
void write_array(std::ostream& os, const Tensor<T>& t) {
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
void read_array(std::istream& is, Tensor<T>& t, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(T)))) {
    fail("checkpoint: truncated while reading " + what);
  }
}

template <typename T>
std::string registry_listing(const LayerGraph<T>& g) {
  std::ostringstream os;
  for (int p : g.param_nodes) {
    const auto& n = g.nodes[static_cast<std::size_t>(p)];
    os << "param=" << n.id << " w=" << n.spec.weights.shape().str()
       << " b=" << n.spec.bias.shape().str() << "\n";
  }
  return os.str();
}

inline std::string meta_text(const CheckpointMeta& m,
                             const std::string& registry) {
  std::ostringstream os;
  os << "precision=" << m.precision << "\n"
     << "arch=" << m.arch << "\n"
     << "input_size=" << m.cfg.input_size << "\n"
     << "base_channels=" << m.cfg.base_channels << "\n"
     << "depth=" << m.cfg.depth << "\n"
     << "kernel_bottom=" << m.cfg.kernel_bottom << "\n"
     << "kernel_up=" << m.cfg.kernel_up << "\n"
     << "head_kernel=" << m.cfg.head_kernel << "\n"
     << registry;
  return os.str();
}

inline std::string read_meta_block(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) fail("checkpoint: truncated while reading magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    fail("checkpoint: bad magic");
  }
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    fail("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_le<std::uint64_t>(is, "metadata length");
  std::string meta(static_cast<std::size_t>(len), '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(len))) {
    fail("checkpoint: truncated while reading metadata");
  }
  return meta;
}

inline std::map<std::string, std::string> parse_meta_keys(
    const std::string& meta) {
  std::map<std::string, std::string> kv;
  std::istringstream is(meta);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    if (key == "param") continue;
    kv[key] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

template <typename T>
void checkpoint_save(const std::string& path, const LayerGraph<T>& g,
                     const AdamState<T>& st, const CheckpointMeta& meta) {
  if (st.moments.size() != g.param_nodes.size()) {
    fail("checkpoint_save: optimizer state misaligned with registry");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("checkpoint_save: cannot open '" + path + "'");

  os.write(kCheckpointMagic, 4);
  detail::write_le(os, kCheckpointVersion);
  const std::string text =
      detail::meta_text(meta, detail::registry_listing(g));
  detail::write_le(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));

  for (std::size_t i = 0; i < g.param_nodes.size(); ++i) {
    const auto& spec =
        g.nodes[static_cast<std::size_t>(g.param_nodes[i])].spec;
    detail::write_array(os, spec.weights);
    detail::write_array(os, spec.bias);
    detail::write_array(os, st.moments[i].m_w);
    detail::write_array(os, st.moments[i].m_b);
    detail::write_array(os, st.moments[i].v_w);
    detail::write_array(os, st.moments[i].v_b);
  }
  detail::write_le(os, static_cast<std::uint64_t>(st.t));
  if (!os) fail("checkpoint_save: write failed for '" + path + "'");
}

// Reads only the header; used to pick precision/architecture before building
// the graph to load into.
inline CheckpointMeta checkpoint_peek(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("checkpoint: cannot open '" + path + "'");
  const auto kv = detail::parse_meta_keys(detail::read_meta_block(is));
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) fail("checkpoint: metadata missing key '" + k + "'");
    return it->second;
  };
  CheckpointMeta m;
  m.precision = get("precision");
  m.arch = get("arch");
  m.cfg.input_size = std::stoll(get("input_size"));
  m.cfg.base_channels = std::stoll(get("base_channels"));
  m.cfg.depth = std::stoll(get("depth"));
  m.cfg.kernel_bottom = std::stoll(get("kernel_bottom"));
  m.cfg.kernel_up = std::stoll(get("kernel_up"));
  m.cfg.head_kernel = std::stoll(get("head_kernel"));
  return m;
}

// Loads parameters and optimizer state into an already-built graph; the
// stored registry listing must match the graph's exactly.
template <typename T>
CheckpointMeta checkpoint_load(const std::string& path, LayerGraph<T>& g,
                               AdamState<T>& st) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("checkpoint: cannot open '" + path + "'");
  const std::string meta_block = detail::read_meta_block(is);
  const CheckpointMeta meta = checkpoint_peek(path);
  const std::string want_precision =
      sizeof(T) == sizeof(double) ? "double" : "float";
  if (meta.precision != want_precision) {
    fail("checkpoint: registry mismatch: stored precision '" + meta.precision +
         "', loading as '" + want_precision + "'");
  }

  // The stored listing must equal the target graph's listing verbatim.
  const std::string want_registry = detail::registry_listing(g);
  const auto pos = meta_block.find("param=");
  const std::string have_registry =
      pos == std::string::npos ? std::string() : meta_block.substr(pos);
  if (have_registry != want_registry) {
    fail("checkpoint: registry mismatch between file and target graph");
  }

  if (st.moments.size() != g.param_nodes.size()) st = init_adam<T>(g, st.hyper);
  for (std::size_t i = 0; i < g.param_nodes.size(); ++i) {
    auto& spec = g.nodes[static_cast<std::size_t>(g.param_nodes[i])].spec;
    const std::string id = g.nodes[static_cast<std::size_t>(g.param_nodes[i])].id;
    detail::read_array(is, spec.weights, id + ".weights");
    detail::read_array(is, spec.bias, id + ".bias");
    detail::read_array(is, st.moments[i].m_w, id + ".m_w");
    detail::read_array(is, st.moments[i].m_b, id + ".m_b");
    detail::read_array(is, st.moments[i].v_w, id + ".v_w");
    detail::read_array(is, st.moments[i].v_b, id + ".v_b");
  }
  st.t = detail::read_le<std::uint64_t>(is, "step count");
  return meta;
}

}  // namespace onet
