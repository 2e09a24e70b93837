#pragma once

#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

#include "gelp/core/binary_io.hpp"
#include "gelp/nn/config.hpp"

namespace gelp::nn {

/// Named parameter tensors of one network, in a fixed order. Buffers
/// (non-trainable entries such as input normalization statistics) live in
/// the same table.
template <class T>
class Weights {
 public:
  struct Entry {
    std::string name;
    ad::Tensor<T> tensor;
    bool trainable = true;
  };

  void add(const std::string& name, ad::Tensor<T> tensor, bool trainable = true) {
    require(!index_.count(name), "duplicate weight name " + name);
    if (trainable && tensor.is_leaf()) tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(tensor), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const ad::Tensor<T>& operator[](const std::string& name) const { return entry(name).tensor; }
  ad::Tensor<T>& operator[](const std::string& name) {
    return const_cast<ad::Tensor<T>&>(std::as_const(*this).entry(name).tensor);
  }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("missing weight " + name);
    return entries_[it->second];
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<ad::Tensor<T>> trainable() const {
    std::vector<ad::Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.size();
    return n;
  }

  /// Deep copy in another precision.
  template <class U>
  Weights<U> cast() const {
    Weights<U> out;
    for (const auto& e : entries_) {
      std::vector<U> v(e.tensor.data().begin(), e.tensor.data().end());
      out.add(e.name, ad::Tensor<U>(e.tensor.shape(), std::move(v)), e.trainable);
    }
    return out;
  }

  Weights clone() const { return cast<T>(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct WeightSpec {
  std::string name;
  ad::Shape shape;
  std::size_t fan_in = 0;
  bool trainable = true;
};

/// Every tensor a network with this config owns. Convolution kernels are
/// (width, in, out); biases and buffers are (1, 1, channels). The last layer
/// has no residual output projection because nothing consumes it.
inline std::vector<WeightSpec> weight_specs(const NetConfig& cfg) {
  cfg.validate();
  const std::size_t r = cfg.residual_channels, w = cfg.filter_width, c = cfg.conditioning_channels;
  std::vector<WeightSpec> specs;
  if (cfg.normalize_input) {
    specs.push_back({"norm.mean", {1, 1, cfg.input_channels}, 0, false});
    specs.push_back({"norm.std", {1, 1, cfg.input_channels}, 0, false});
  }
  specs.push_back({"input.w", {1, cfg.input_channels, r}, cfg.input_channels});
  specs.push_back({"input.b", {1, 1, r}, cfg.input_channels});
  for (std::size_t i = 0; i < cfg.num_layers(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    for (const char* gate : {"f", "g"}) {
      specs.push_back({p + "w" + gate, {w, r, r}, w * r});
      specs.push_back({p + "b" + gate, {1, 1, r}, w * r});
      if (c > 0) specs.push_back({p + "v" + gate, {1, c, r}, c});
    }
    if (cfg.use_residual && i + 1 < cfg.num_layers()) {
      specs.push_back({p + "wo", {1, r, r}, r});
      specs.push_back({p + "bo", {1, 1, r}, r});
    }
  }
  const std::size_t concat = cfg.num_layers() * r;
  specs.push_back({"post.w1", {1, concat, cfg.skip_channels}, concat});
  specs.push_back({"post.b1", {1, 1, cfg.skip_channels}, concat});
  specs.push_back({"post.w2", {1, cfg.skip_channels, cfg.output_channels}, cfg.skip_channels});
  specs.push_back({"post.b2", {1, 1, cfg.output_channels}, cfg.skip_channels});
  return specs;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; buffers
/// start as mean 0, std 1.
template <class T>
Weights<T> init_weights(const NetConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Weights<T> weights;
  for (const auto& s : weight_specs(cfg)) {
    std::vector<T> v(ad::numel(s.shape));
    if (s.trainable) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& x : v) x = static_cast<T>(u(rng));
    } else {
      std::fill(v.begin(), v.end(), s.name == "norm.std" ? T(1) : T(0));
    }
    weights.add(s.name, ad::Tensor<T>(s.shape, std::move(v)), s.trainable);
  }
  return weights;
}

/// Throws naming the first tensor that is missing or has the wrong shape.
template <class T>
void check_weights(const Weights<T>& weights, const NetConfig& cfg, const std::string& label = "") {
  const auto specs = weight_specs(cfg);
  for (const auto& s : specs) {
    if (!weights.contains(s.name)) throw FormatError(label + "missing tensor " + s.name);
    const auto& got = weights[s.name].shape();
    if (got != s.shape)
      throw FormatError(label + "tensor " + s.name + " has shape " + ad::to_string(got) + " but the config expects " +
                        ad::to_string(s.shape));
  }
  if (weights.size() != specs.size()) {
    for (const auto& e : weights.entries()) {
      bool known = false;
      for (const auto& s : specs) known = known || s.name == e.name;
      if (!known) throw FormatError(label + "unexpected tensor " + e.name);
    }
  }
}

// ---------------------------------------------------------------------------
// GELPW archives: "GELPW", u32 version, u32 tensor count; per tensor u16 name
// length, name, u8 ndim, u32 dims, payload (f32 in version 1, f64 in version
// 2); then tagged chunks (4-byte tag, u32 length, bytes) until end of file.

inline constexpr std::uint32_t kWeightsF32 = 1;
inline constexpr std::uint32_t kWeightsF64 = 2;

struct StoredTensor {
  std::string name;
  ad::Shape shape{};
  std::vector<double> values;
};

struct WeightArchive {
  std::uint32_t version = kWeightsF32;
  std::vector<StoredTensor> tensors;
  std::map<std::string, std::string> chunks;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline void write_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  require(archive.version == kWeightsF32 || archive.version == kWeightsF64, "unsupported GELPW version");
  io::atomic_write(path, [&](std::ostream& out) {
    out.write("GELPW", 5);
    io::write_le<std::uint32_t>(out, archive.version);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(archive.tensors.size()));
    for (const auto& t : archive.tensors) {
      require(t.name.size() < 65536, "tensor name too long");
      io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      io::write_le<std::uint8_t>(out, 3);
      for (auto d : t.shape) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      require(t.values.size() == ad::numel(t.shape), "tensor " + t.name + " payload does not match its shape");
      for (double v : t.values) {
        if (archive.version == kWeightsF64)
          io::write_le<double>(out, v);
        else
          io::write_le<float>(out, static_cast<float>(v));
      }
    }
    for (const auto& [tag, body] : archive.chunks) {
      require(tag.size() == 4, "chunk tags are four characters");
      out.write(tag.data(), 4);
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(body.size()));
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
    }
  });
}

inline WeightArchive read_archive(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  try {
    io::expect_magic(in, "GELPW");
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": not a GELPW weight file (" + e.what() + ")");
  }
  WeightArchive archive;
  archive.version = io::read_le<std::uint32_t>(in, "version");
  if (archive.version != kWeightsF32 && archive.version != kWeightsF64)
    throw FormatError(path.string() + ": unsupported GELPW version " + std::to_string(archive.version));
  const auto count = io::read_le<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name.resize(io::read_le<std::uint16_t>(in, "name length"));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    if (!in) throw FormatError(path.string() + ": truncated tensor name");
    const auto ndim = io::read_le<std::uint8_t>(in, "rank");
    if (ndim != 3) throw FormatError(path.string() + ": tensor " + t.name + " has unsupported rank " + std::to_string(ndim));
    for (auto& d : t.shape) d = io::read_le<std::uint32_t>(in, "dimension");
    const std::size_t n = ad::numel(t.shape);
    if (n > (std::size_t{1} << 31)) throw FormatError(path.string() + ": tensor " + t.name + " is implausibly large");
    t.values.resize(n);
    for (auto& v : t.values)
      v = archive.version == kWeightsF64 ? io::read_le<double>(in, "payload")
                                         : static_cast<double>(io::read_le<float>(in, "payload"));
    archive.tensors.push_back(std::move(t));
  }
  while (true) {
    char tag[4];
    in.read(tag, 4);
    if (in.gcount() == 0) break;
    if (in.gcount() != 4) throw FormatError(path.string() + ": truncated chunk header");
    const auto len = io::read_le<std::uint32_t>(in, "chunk length");
    std::string body(len, '\0');
    in.read(body.data(), len);
    if (!in) throw FormatError(path.string() + ": truncated chunk " + std::string(tag, 4));
    archive.chunks[std::string(tag, 4)] = std::move(body);
  }
  return archive;
}

template <class T>
void append_weights(WeightArchive& archive, const Weights<T>& weights, const std::string& prefix = "") {
  for (const auto& e : weights.entries())
    archive.tensors.push_back({prefix + e.name, e.tensor.shape(), {e.tensor.data().begin(), e.tensor.data().end()}});
}

/// Extracts the tensors of one network (names under `prefix`) and checks
/// them against the config.
template <class T>
Weights<T> extract_weights(const WeightArchive& archive, const NetConfig& cfg, const std::string& prefix = "") {
  Weights<T> weights;
  for (const auto& s : weight_specs(cfg)) {
    const auto* t = archive.find(prefix + s.name);
    if (!t) throw FormatError("weight file is missing tensor " + prefix + s.name);
    if (t->shape != s.shape)
      throw FormatError("tensor " + prefix + s.name + " has shape " + ad::to_string(t->shape) +
                        " but the config expects " + ad::to_string(s.shape));
    weights.add(s.name, ad::Tensor<T>(t->shape, std::vector<T>(t->values.begin(), t->values.end())), s.trainable);
  }
  return weights;
}

/// Single-network weight file with its config in a CONF chunk.
template <class T>
void save_weights(const std::filesystem::path& path, const NetConfig& cfg, const Weights<T>& weights) {
  check_weights(weights, cfg);
  WeightArchive archive;
  archive.version = std::is_same_v<T, double> ? kWeightsF64 : kWeightsF32;
  append_weights(archive, weights);
  archive.chunks["CONF"] = to_text(cfg);
  write_archive(path, archive);
}

template <class T>
std::pair<NetConfig, Weights<T>> load_weights(const std::filesystem::path& path) {
  const auto archive = read_archive(path);
  auto conf = archive.chunks.find("CONF");
  if (conf == archive.chunks.end()) throw FormatError(path.string() + ": weight file has no CONF chunk");
  const auto cfg = net_config_from_text(conf->second);
  return {cfg, extract_weights<T>(archive, cfg)};
}

}  // namespace gelp::nn
