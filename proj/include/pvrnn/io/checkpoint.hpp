#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/params.hpp"
#include "pvrnn/io/hash.hpp"
#include "pvrnn/io/run_config.hpp"
#include "pvrnn/observer/observer_net.hpp"
#include "pvrnn/train/adam.hpp"

namespace pvrnn {

/// Binary container for named tensors and text blobs.
///
/// Layout, all integers little-endian:
///   "PVRNNCKP"  u32 version  u32 kind  u64 config_hash  u32 entry_count
///   entries:    u8 type (0 tensor, 1 text)  u32 name_len  name
///               tensor: u64 rows  u64 cols  rows*cols f64 (column-major)
///               text:   u64 len  bytes
///   trailer:    u64 FNV-1a of every preceding byte
class TensorArchive {
 public:
  static constexpr char kMagic[8] = {'P', 'V', 'R', 'N', 'N', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  enum class Kind : std::uint32_t { model = 1, observer = 2 };

  struct Entry {
    std::string name;
    bool is_text = false;
    Mat tensor;
    std::string text;
  };

  TensorArchive(Kind kind, std::uint64_t config_hash) : kind_(kind), config_hash_(config_hash) {}

  Kind kind() const { return kind_; }
  std::uint64_t config_hash() const { return config_hash_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void add_tensor(std::string name, const Mat& t) { entries_.push_back({std::move(name), false, t, {}}); }
  void add_vector(std::string name, const Vec& v) { add_tensor(std::move(name), Mat(v)); }
  void add_text(std::string name, std::string text) { entries_.push_back({std::move(name), true, {}, std::move(text)}); }

  const Entry& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw FormatError("checkpoint entry missing: " + name);
  }

  const std::string& text(const std::string& name) const {
    const auto& e = get(name);
    if (!e.is_text) throw FormatError("checkpoint entry is not text: " + name);
    return e.text;
  }

  /// Copies a stored tensor into `out`, which must already have its shape.
  template <class Dense>
  void read_into(const std::string& name, Dense& out) const {
    const auto& e = get(name);
    if (e.is_text) throw FormatError("checkpoint entry is not a tensor: " + name);
    if (e.tensor.size() != out.size() || (out.size() > 0 && e.tensor.rows() != out.rows()))
      throw FormatError("checkpoint tensor has wrong shape: " + name);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = e.tensor.data()[i];
  }

  std::string serialize() const {
    std::string b(kMagic, sizeof(kMagic));
    put_u32(b, kVersion);
    put_u32(b, static_cast<std::uint32_t>(kind_));
    put_u64(b, config_hash_);
    put_u32(b, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      b.push_back(e.is_text ? 1 : 0);
      put_u32(b, static_cast<std::uint32_t>(e.name.size()));
      b += e.name;
      if (e.is_text) {
        put_u64(b, e.text.size());
        b += e.text;
      } else {
        put_u64(b, static_cast<std::uint64_t>(e.tensor.rows()));
        put_u64(b, static_cast<std::uint64_t>(e.tensor.cols()));
        for (Eigen::Index i = 0; i < e.tensor.size(); ++i) put_u64(b, std::bit_cast<std::uint64_t>(e.tensor.data()[i]));
      }
    }
    Fnv1a h;
    h.text(b);
    put_u64(b, h.value());
    return b;
  }

  static TensorArchive parse(const std::string& b) {
    Reader r{b, 0};
    if (b.size() < sizeof(kMagic) + 8 || std::memcmp(b.data(), kMagic, sizeof(kMagic)) != 0)
      throw FormatError("not a checkpoint file (bad magic)");
    r.pos = sizeof(kMagic);
    const auto version = r.u32();
    if (version != kVersion)
      throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kVersion) + ")");
    const auto kind = static_cast<Kind>(r.u32());
    TensorArchive a(kind, r.u64());
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      const auto type = r.u8();
      if (type > 1) throw FormatError("corrupt checkpoint: unknown entry type");
      e.is_text = type == 1;
      e.name = r.bytes(r.u32());
      if (e.is_text) {
        e.text = r.bytes(r.u64());
      } else {
        const auto rows = r.u64();
        const auto cols = r.u64();
        if (cols != 0 && rows > (b.size() / 8) / cols) throw FormatError("corrupt checkpoint: truncated tensor");
        e.tensor.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index j = 0; j < e.tensor.size(); ++j) e.tensor.data()[j] = std::bit_cast<double>(r.u64());
      }
      a.entries_.push_back(std::move(e));
    }
    const std::size_t body = r.pos;
    const auto stored = r.u64();
    if (r.pos != b.size()) throw FormatError("corrupt checkpoint: trailing bytes");
    Fnv1a h;
    h.text(std::string_view(b).substr(0, body));
    if (h.value() != stored) throw FormatError("corrupt checkpoint: checksum mismatch");
    return a;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    const auto b = serialize();
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!out) throw FormatError("write failed: " + path);
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return parse(ss.str());
    } catch (const FormatError& e) {
      throw FormatError(path + ": " + e.what());
    }
  }

 private:
  struct Reader {
    const std::string& b;
    std::size_t pos;

    void need(std::size_t n) const {
      if (b.size() < pos || b.size() - pos < n) throw FormatError("corrupt checkpoint: truncated file");
    }
    std::uint8_t u8() {
      need(1);
      return static_cast<std::uint8_t>(b[pos++]);
    }
    std::uint64_t le(int n) {
      need(static_cast<std::size_t>(n));
      std::uint64_t v = 0;
      for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[pos + i])) << (8 * i);
      pos += static_cast<std::size_t>(n);
      return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::string bytes(std::uint64_t n) {
      need(static_cast<std::size_t>(n));
      std::string s = b.substr(pos, static_cast<std::size_t>(n));
      pos += static_cast<std::size_t>(n);
      return s;
    }
  };

  static void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  Kind kind_;
  std::uint64_t config_hash_;
  std::vector<Entry> entries_;
};

/// Trained network plus everything needed to resume training.
struct ModelCheckpoint {
  NetworkConfig network;
  std::vector<std::string> labels;
  NetworkParams params;
  std::vector<AdaptiveWindow> windows;
  AdamState param_adam;
  std::vector<AdamState> window_adam;
  int epochs_done = 0;
};

namespace detail {

inline void pack_adam(TensorArchive& a, const std::string& prefix, const AdamState& s) {
  const auto& m = s.first_moments();
  const auto& v = s.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    a.add_vector(prefix + ".m" + std::to_string(i), Eigen::Map<const Vec>(m[i].data(), static_cast<Eigen::Index>(m[i].size())));
    a.add_vector(prefix + ".v" + std::to_string(i), Eigen::Map<const Vec>(v[i].data(), static_cast<Eigen::Index>(v[i].size())));
  }
}

inline nlohmann::json adam_meta(const AdamState& s) {
  const auto& st = s.settings();
  return {{"steps", s.step_count()},
          {"tensors", s.first_moments().size()},
          {"alpha", st.alpha},
          {"beta1", st.beta1},
          {"beta2", st.beta2},
          {"epsilon", st.epsilon}};
}

inline AdamState unpack_adam(const TensorArchive& a, const std::string& prefix, const nlohmann::json& meta) {
  AdamSettings st;
  st.alpha = meta.at("alpha").get<double>();
  st.beta1 = meta.at("beta1").get<double>();
  st.beta2 = meta.at("beta2").get<double>();
  st.epsilon = meta.at("epsilon").get<double>();
  AdamState s(st);
  s.set_step_count(meta.at("steps").get<std::uint64_t>());
  const auto n = meta.at("tensors").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = a.get(prefix + ".m" + std::to_string(i)).tensor;
    const auto& v = a.get(prefix + ".v" + std::to_string(i)).tensor;
    s.first_moments().emplace_back(m.data(), m.data() + m.size());
    s.second_moments().emplace_back(v.data(), v.data() + v.size());
  }
  return s;
}

}  // namespace detail

inline TensorArchive pack_model(const ModelCheckpoint& c) {
  TensorArchive a(TensorArchive::Kind::model, network_hash(c.network));
  nlohmann::json meta = {{"network", network_to_json(c.network)},
                         {"seed", c.network.seed},
                         {"labels", c.labels},
                         {"epochs_done", c.epochs_done},
                         {"adam_params", detail::adam_meta(c.param_adam)}};
  nlohmann::json lengths = nlohmann::json::array();
  nlohmann::json wadam = nlohmann::json::array();
  for (const auto& w : c.windows) lengths.push_back(w.length());
  for (const auto& s : c.window_adam) wadam.push_back(detail::adam_meta(s));
  meta["window_lengths"] = lengths;
  meta["adam_windows"] = wadam;
  a.add_text("meta", meta.dump());

  visit_tensors(c.params, [&](const std::string& name, const auto& t) { a.add_tensor(name, t); });
  for (std::size_t s = 0; s < c.windows.size(); ++s)
    visit_adaptation(c.windows[s], [&](const std::string& name, const Vec& t) {
      a.add_vector("seq" + std::to_string(s) + "." + name, t);
    });
  detail::pack_adam(a, "adam.params", c.param_adam);
  for (std::size_t s = 0; s < c.window_adam.size(); ++s)
    detail::pack_adam(a, "adam.seq" + std::to_string(s), c.window_adam[s]);
  return a;
}

inline ModelCheckpoint unpack_model(const TensorArchive& a) {
  if (a.kind() != TensorArchive::Kind::model) throw FormatError("checkpoint does not hold a model");
  ModelCheckpoint c;
  try {
    const auto meta = nlohmann::json::parse(a.text("meta"));
    read_network(meta.at("network"), c.network);
    c.network.seed = meta.at("seed").get<std::uint64_t>();
    c.network.validate();
    c.labels = meta.at("labels").get<std::vector<std::string>>();
    c.epochs_done = meta.at("epochs_done").get<int>();
    c.params = zero_params(c.network);
    visit_tensors(c.params, [&](const std::string& name, auto& t) { a.read_into(name, t); });
    const auto lengths = meta.at("window_lengths").get<std::vector<int>>();
    for (std::size_t s = 0; s < lengths.size(); ++s) {
      auto w = AdaptiveWindow::zeros(c.network, lengths[s]);
      visit_adaptation(w, [&](const std::string& name, Vec& t) { a.read_into("seq" + std::to_string(s) + "." + name, t); });
      c.windows.push_back(std::move(w));
    }
    c.param_adam = detail::unpack_adam(a, "adam.params", meta.at("adam_params"));
    const auto& wadam = meta.at("adam_windows");
    for (std::size_t s = 0; s < wadam.size(); ++s)
      c.window_adam.push_back(detail::unpack_adam(a, "adam.seq" + std::to_string(s), wadam[s]));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid network: ") + e.what());
  }
  if (a.config_hash() != network_hash(c.network)) throw FormatError("checkpoint config hash does not match its network");
  if (c.labels.size() != c.windows.size()) throw FormatError("checkpoint label count does not match its windows");
  return c;
}

inline void save_model(const ModelCheckpoint& c, const std::string& path) { pack_model(c).save(path); }
inline ModelCheckpoint load_model(const std::string& path) { return unpack_model(TensorArchive::load(path)); }

struct ObserverCheckpoint {
  ObserverNet net;
  std::vector<std::string> labels;
  std::uint64_t model_hash = 0;  // params hash of the model whose rollouts trained it
};

inline TensorArchive pack_observer(const ObserverCheckpoint& c) {
  TensorArchive a(TensorArchive::Kind::observer, c.model_hash);
  nlohmann::json meta = {{"sizes", c.net.sizes}, {"labels", c.labels}};
  a.add_text("meta", meta.dump());
  visit_observer(c.net, [&](const std::string& name, const auto& t) { a.add_tensor(name, t); });
  return a;
}

inline ObserverCheckpoint unpack_observer(const TensorArchive& a) {
  if (a.kind() != TensorArchive::Kind::observer) throw FormatError("checkpoint does not hold an observer");
  ObserverCheckpoint c;
  c.model_hash = a.config_hash();
  try {
    const auto meta = nlohmann::json::parse(a.text("meta"));
    c.labels = meta.at("labels").get<std::vector<std::string>>();
    c.net = init_observer(meta.at("sizes").get<std::vector<int>>(), 0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt observer metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("observer checkpoint: ") + e.what());
  }
  visit_observer(c.net, [&](const std::string& name, auto& t) { a.read_into(name, t); });
  return c;
}

inline void save_observer(const ObserverCheckpoint& c, const std::string& path) { pack_observer(c).save(path); }
inline ObserverCheckpoint load_observer(const std::string& path) { return unpack_observer(TensorArchive::load(path)); }

}  // namespace pvrnn
