#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/autodiff.hpp"
#include "tcrl/core.hpp"

namespace tcrl {

using ad::Matrix;

template <class S>
struct Parameter {
  Matrix<S> value;
  Matrix<S> grad;  // empty until written by backward
  Matrix<S> adam_m;
  Matrix<S> adam_v;
  std::int64_t adam_t = 0;

  bool has_grad() const { return grad.size() != 0; }
};

/// Named learnable tensors with their Adam state. Paths are dotted,
/// e.g. "encoder.layer0.weight"; iteration order is lexicographic.
template <class S>
class ParamSet {
 public:
  Parameter<S>& add(const std::string& path, Matrix<S> init) {
    if (entries_.count(path)) throw ConfigError("duplicate parameter path: " + path);
    Parameter<S> p;
    p.adam_m = Matrix<S>::Zero(init.rows(), init.cols());
    p.adam_v = Matrix<S>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    return entries_.emplace(path, std::move(p)).first->second;
  }

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }

  Parameter<S>& at(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ConfigError("missing parameter: " + path);
    return it->second;
  }
  const Parameter<S>& at(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ConfigError("missing parameter: " + path);
    return it->second;
  }

  std::map<std::string, Parameter<S>>& entries() { return entries_; }
  const std::map<std::string, Parameter<S>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : entries_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void clear_grads() {
    for (auto& [_, p] : entries_) p.grad.resize(0, 0);
  }

 private:
  std::map<std::string, Parameter<S>> entries_;
};

inline bool has_any_prefix(const std::string& path, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return path.starts_with(p); });
}

/// Leaf on `tape` holding a copy of the parameter; repeated binds of the same
/// path reuse the leaf so gradients from every use accumulate.
template <class S>
ad::Var<S> bind_param(ad::Tape<S>& tape, ParamSet<S>& params, const std::string& path) {
  if (auto id = tape.find_binding(&params, path)) return tape.var(*id);
  ad::Var<S> v = tape.variable(params.at(path).value);
  tape.add_binding(&params, path, v.id());
  return v;
}

/// Copies tape gradients into every parameter: bound and reached parameters
/// get their accumulated gradient, all others an explicit zero.
template <class S>
void write_grads(const ad::Tape<S>& tape, ParamSet<S>& params) {
  for (auto& [path, p] : params.entries()) {
    auto id = tape.find_binding(&params, path);
    if (id && tape.grad(*id).size() != 0) {
      p.grad = tape.grad(*id);
    } else {
      p.grad = Matrix<S>::Zero(p.value.rows(), p.value.cols());
    }
  }
}

template <class S>
void backward(ad::Tape<S>& tape, const ad::Var<S>& loss, ParamSet<S>& params) {
  tape.backward(loss);
  write_grads(tape, params);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam on every parameter whose path starts with one of
/// `prefixes`. Consumes the gradients it uses.
template <class S>
void adam_step(ParamSet<S>& params, double lr, const std::vector<std::string>& prefixes, const AdamConfig& cfg = {}) {
  if (!(lr > 0)) throw ConfigError("adam_step: learning rate must be positive");
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2), eps = static_cast<S>(cfg.eps);
  for (auto& [path, p] : params.entries()) {
    if (!has_any_prefix(path, prefixes)) continue;
    if (!p.has_grad()) throw InternalError("adam_step: parameter '" + path + "' has no gradient");
    p.adam_t += 1;
    p.adam_m = b1 * p.adam_m + (S(1) - b1) * p.grad;
    p.adam_v = b2 * p.adam_v + (S(1) - b2) * p.grad.cwiseAbs2();
    const S c1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(p.adam_t)));
    const S c2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(p.adam_t)));
    const S step = static_cast<S>(lr);
    p.value.array() -= step * (p.adam_m.array() / c1) / ((p.adam_v.array() / c2).sqrt() + eps);
    p.grad.resize(0, 0);
  }
}

/// target <- (1 - tau) * target + tau * online for every parameter under
/// `online_prefix`, matched by suffix under `target_prefix`.
template <class S>
void ema_update(ParamSet<S>& params, const std::string& target_prefix, const std::string& online_prefix, double tau) {
  if (tau < 0.0 || tau > 1.0) throw ConfigError("ema_update: tau must lie in [0, 1]");
  const S t = static_cast<S>(tau);
  for (auto& [path, p] : params.entries()) {
    if (!path.starts_with(online_prefix)) continue;
    const std::string target = target_prefix + path.substr(online_prefix.size());
    auto& q = params.at(target);
    if (q.value.rows() != p.value.rows() || q.value.cols() != p.value.cols()) {
      throw ConfigError("ema_update: shape mismatch between " + path + " and " + target);
    }
    q.value = (S(1) - t) * q.value + t * p.value;
  }
}

/// Copies every parameter under `from_prefix` to the same suffix under
/// `to_prefix`, creating the destination entries (fresh Adam state).
template <class S>
void clone_params(ParamSet<S>& params, const std::string& from_prefix, const std::string& to_prefix) {
  std::vector<std::pair<std::string, Matrix<S>>> copies;
  for (const auto& [path, p] : params.entries()) {
    if (path.starts_with(from_prefix)) copies.emplace_back(to_prefix + path.substr(from_prefix.size()), p.value);
  }
  for (auto& [path, v] : copies) params.add(path, std::move(v));
}

template <class S>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<S, float>) {
    return "f32";
  } else if constexpr (std::is_same_v<S, double>) {
    return "f64";
  } else if constexpr (std::is_same_v<S, std::int64_t>) {
    return "i64";
  } else {
    static_assert(sizeof(S) == 0, "unsupported dtype");
  }
}

/// Binary container: magic, little-endian u64 header length, JSON header
/// {format_version, entries: [{path, shape, dtype, offset, nbytes}], meta},
/// then the concatenated little-endian arrays.
class Archive {
 public:
  static constexpr int kFormatVersion = 1;
  static constexpr char kMagic[8] = {'T', 'C', 'R', 'L', 'A', 'R', 'C', 'H'};

  nlohmann::json meta = nlohmann::json::object();

  template <class S>
  void put(const std::string& path, const Matrix<S>& m) {
    put_raw<S>(path, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
               std::span<const S>(m.data(), static_cast<std::size_t>(m.size())));
  }

  template <class S>
  void put_vector(const std::string& path, std::span<const S> v) {
    put_raw<S>(path, {v.size()}, v);
  }

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }

  std::vector<std::size_t> shape(const std::string& path) const { return entry(path).shape; }

  template <class S>
  Matrix<S> get(const std::string& path) const {
    const Entry& e = entry(path);
    check_dtype<S>(path, e);
    const std::size_t rows = e.shape.size() == 2 ? e.shape[0] : 1;
    const std::size_t cols = e.shape.size() == 2 ? e.shape[1] : (e.shape.empty() ? 0 : e.shape[0]);
    Matrix<S> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (e.bytes.size() != rows * cols * sizeof(S)) throw ConfigError("archive entry size mismatch: " + path);
    decode(e.bytes, std::span<S>(m.data(), rows * cols));
    return m;
  }

  template <class S>
  std::vector<S> get_vector(const std::string& path) const {
    const Entry& e = entry(path);
    check_dtype<S>(path, e);
    std::vector<S> v(e.bytes.size() / sizeof(S));
    decode(e.bytes, std::span<S>(v.data(), v.size()));
    return v;
  }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    for (const auto& [p, _] : entries_) out.push_back(p);
    return out;
  }

  void save(const std::filesystem::path& file) const {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["meta"] = meta;
    nlohmann::json list = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [path, e] : entries_) {
      list.push_back({{"path", path}, {"shape", e.shape}, {"dtype", e.dtype}, {"offset", offset}, {"nbytes", e.bytes.size()}});
      offset += e.bytes.size();
    }
    header["entries"] = list;
    const std::string text = header.dump();
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + file.string());
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, e] : entries_) os.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    if (!os) throw ConfigError("write failed: " + file.string());
  }

  static Archive load(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + file.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ConfigError("not a tcrl archive: " + file.string());
    const std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw ConfigError("truncated archive header: " + file.string());
    const auto header = nlohmann::json::parse(text);
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw ConfigError("archive format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kFormatVersion) + ")");
    }
    Archive ar;
    ar.meta = header.at("meta");
    std::vector<char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    for (const auto& item : header.at("entries")) {
      Entry e;
      e.shape = item.at("shape").get<std::vector<std::size_t>>();
      e.dtype = item.at("dtype").get<std::string>();
      const auto off = item.at("offset").get<std::uint64_t>();
      const auto n = item.at("nbytes").get<std::uint64_t>();
      if (off + n > blob.size()) throw ConfigError("truncated archive data: " + file.string());
      e.bytes.resize(n);
      std::memcpy(e.bytes.data(), blob.data() + off, n);
      ar.entries_.emplace(item.at("path").get<std::string>(), std::move(e));
    }
    return ar;
  }

 private:
  struct Entry {
    std::vector<std::size_t> shape;
    std::string dtype;
    std::vector<unsigned char> bytes;  // little-endian
  };

  const Entry& entry(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ConfigError("archive has no entry '" + path + "'");
    return it->second;
  }

  template <class S>
  static void check_dtype(const std::string& path, const Entry& e) {
    if (e.dtype != dtype_name<S>()) {
      throw ConfigError("archive entry '" + path + "' has dtype " + e.dtype + ", expected " + dtype_name<S>());
    }
  }

  template <class S>
  void put_raw(const std::string& path, std::vector<std::size_t> shape, std::span<const S> data) {
    Entry e;
    e.shape = std::move(shape);
    e.dtype = dtype_name<S>();
    e.bytes.resize(data.size() * sizeof(S));
    std::memcpy(e.bytes.data(), data.data(), e.bytes.size());
    if constexpr (std::endian::native == std::endian::big) swap_bytes(e.bytes, sizeof(S));
    entries_[path] = std::move(e);
  }

  template <class S>
  static void decode(const std::vector<unsigned char>& bytes, std::span<S> out) {
    std::vector<unsigned char> tmp = bytes;
    if constexpr (std::endian::native == std::endian::big) swap_bytes(tmp, sizeof(S));
    std::memcpy(out.data(), tmp.data(), out.size() * sizeof(S));
  }

  static void swap_bytes(std::vector<unsigned char>& bytes, std::size_t width) {
    for (std::size_t i = 0; i + width <= bytes.size(); i += width) std::reverse(bytes.begin() + i, bytes.begin() + i + width);
  }

  static void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }

  static std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ConfigError("truncated archive");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

template <class S>
void save_params(Archive& ar, const ParamSet<S>& params, const std::string& prefix = "params/") {
  nlohmann::json steps = nlohmann::json::object();
  for (const auto& [path, p] : params.entries()) {
    ar.put(prefix + path, p.value);
    ar.put(prefix + path + "#adam_m", p.adam_m);
    ar.put(prefix + path + "#adam_v", p.adam_v);
    steps[path] = p.adam_t;
  }
  ar.meta[prefix + "adam_t"] = steps;
}

/// Rebuilds a ParamSet stored by save_params.
template <class S>
ParamSet<S> load_params(const Archive& ar, const std::string& prefix = "params/") {
  ParamSet<S> params;
  const auto& steps = ar.meta.at(prefix + "adam_t");
  for (const auto& [path, t] : steps.items()) {
    auto& p = params.add(path, ar.get<S>(prefix + path));
    p.adam_m = ar.get<S>(prefix + path + "#adam_m");
    p.adam_v = ar.get<S>(prefix + path + "#adam_v");
    p.adam_t = t.template get<std::int64_t>();
  }
  return params;
}

/// Throws a dimension error unless `loaded` has exactly the paths and shapes
/// of `expected`.
template <class S>
void require_same_layout(const ParamSet<S>& expected, const ParamSet<S>& loaded) {
  for (const auto& [path, p] : expected.entries()) {
    if (!loaded.contains(path)) throw ConfigError("checkpoint is missing parameter " + path);
    const auto& q = loaded.at(path);
    if (q.value.rows() != p.value.rows() || q.value.cols() != p.value.cols()) {
      throw ConfigError("dimension mismatch for " + path + ": checkpoint " + std::to_string(q.value.rows()) + "x" +
                        std::to_string(q.value.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                        std::to_string(p.value.cols()));
    }
  }
  if (loaded.size() != expected.size()) throw ConfigError("checkpoint has unexpected extra parameters");
}

}  // namespace tcrl
