#pragma once

// Binary checkpoint container.
//
// Layout (little-endian host order):
//   8 bytes  magic "JEBGFNCK"
//   u32      format version
//   u64      string entry count, then per entry: u64 len + key, u64 len + value
//   u64      array count, then per array: u64 len + name, u64 rank, u64 dims[rank],
//            f64 values[prod(dims)]
//
// Doubles are written bit-for-bit, so save/load round-trips exactly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jebgfn/ndmath/adam.hpp"
#include "jebgfn/ndmath/nn.hpp"

namespace jebgfn::nd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  std::map<std::string, std::string> strings;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  const std::string& string(const std::string& key) const;
  bool has_string(const std::string& key) const { return strings.count(key) != 0; }
  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter as "<prefix><name>".
void export_params(const ParamSet& params, const std::string& prefix, Checkpoint& ckpt);
/// Overwrites parameter values from "<prefix><name>" arrays; shapes must match.
void import_params(ParamSet& params, const std::string& prefix, const Checkpoint& ckpt);

void export_adam(const ParamSet& params, const AdamState& state, const std::string& prefix,
                 Checkpoint& ckpt);
AdamState import_adam(const ParamSet& params, const std::string& prefix, const Checkpoint& ckpt);

}  // namespace jebgfn::nd
