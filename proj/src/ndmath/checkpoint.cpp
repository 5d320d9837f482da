#include "jebgfn/ndmath/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace jebgfn::nd {

namespace {

constexpr char kMagic[8] = {'J', 'E', 'B', 'G', 'F', 'N', 'C', 'K'};

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) fail("string length out of range");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  void raw(double* dst, std::size_t n) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(double)));
    check();
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + what);
  }

 private:
  void check() const {
    if (!is_) fail("truncated file");
  }
  std::ifstream& is_;
  std::string path_;
};

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::out_of_range("checkpoint has no array '" + name + "'");
}

const std::string& Checkpoint::string(const std::string& key) const {
  auto it = strings.find(key);
  if (it == strings.end()) throw std::out_of_range("checkpoint has no entry '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  Writer w(os);
  os.write(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  w.pod<std::uint64_t>(ckpt.strings.size());
  for (const auto& [k, v] : ckpt.strings) {
    w.str(k);
    w.str(v);
  }
  w.pod<std::uint64_t>(ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    if (numel(a.shape) != a.values.size())
      throw std::invalid_argument("checkpoint array '" + a.name + "' has inconsistent shape");
    w.str(a.name);
    w.pod<std::uint64_t>(a.shape.size());
    for (std::size_t d : a.shape) w.pod<std::uint64_t>(d);
    os.write(reinterpret_cast<const char*>(a.values.data()),
             static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  const auto n_strings = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_strings; ++i) {
    std::string k = r.str();
    ckpt.strings[k] = r.str();
  }
  const auto n_arrays = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = r.str();
    const auto rank = r.pod<std::uint64_t>();
    if (rank > 8) r.fail("rank out of range for '" + a.name + "'");
    for (std::uint64_t d = 0; d < rank; ++d) a.shape.push_back(r.pod<std::uint64_t>());
    const std::size_t n = numel(a.shape);
    if (n > (1ull << 31)) r.fail("array too large: '" + a.name + "'");
    a.values.resize(n);
    r.raw(a.values.data(), n);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void export_params(const ParamSet& params, const std::string& prefix, Checkpoint& ckpt) {
  for (const auto& [name, t] : params)
    ckpt.arrays.push_back({prefix + name, t.shape(), {t.values().begin(), t.values().end()}});
}

void import_params(ParamSet& params, const std::string& prefix, const Checkpoint& ckpt) {
  for (auto& [name, t] : params) {
    const NamedArray& a = ckpt.array(prefix + name);
    if (a.shape != t.shape())
      throw std::invalid_argument("checkpoint shape mismatch for '" + prefix + name + "': " +
                                  shape_string(a.shape) + " vs " + shape_string(t.shape()));
    std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
  }
}

void export_adam(const ParamSet& params, const AdamState& state, const std::string& prefix,
                 Checkpoint& ckpt) {
  const AdamConfig& c = state.config;
  ckpt.arrays.push_back({prefix + "config", {6},
                         {c.lr, c.beta1, c.beta2, c.eps, c.weight_decay, static_cast<double>(state.t)}});
  std::size_t p = 0;
  for (const auto& [name, t] : params) {
    ckpt.arrays.push_back({prefix + "m/" + name, t.shape(), state.m.at(p)});
    ckpt.arrays.push_back({prefix + "v/" + name, t.shape(), state.v.at(p)});
    ++p;
  }
}

AdamState import_adam(const ParamSet& params, const std::string& prefix, const Checkpoint& ckpt) {
  const auto& cfg = ckpt.array(prefix + "config").values;
  if (cfg.size() != 6) throw std::runtime_error("checkpoint: malformed Adam config");
  AdamState s;
  s.config = AdamConfig{cfg[0], cfg[1], cfg[2], cfg[3], cfg[4]};
  s.t = static_cast<std::uint64_t>(cfg[5]);
  for (const auto& [name, t] : params) {
    const auto& m = ckpt.array(prefix + "m/" + name);
    const auto& v = ckpt.array(prefix + "v/" + name);
    if (m.values.size() != t.size() || v.values.size() != t.size())
      throw std::runtime_error("checkpoint: Adam moment size mismatch for '" + name + "'");
    s.m.push_back(m.values);
    s.v.push_back(v.values);
  }
  return s;
}

}  // namespace jebgfn::nd
