#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "volnet/model.hpp"
#include "volnet/optim.hpp"

namespace volnet {

// Named-tensor archive. Reserved prefixes: "model." for parameters and BN
// running stats, "opt." for Adam moments, "meta." for scalar bookkeeping.
struct Checkpoint {
  std::map<std::string, Tensor<float>> tensors;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  const Tensor<float>& get(const std::string& name) const;

  void put_meta(const std::string& key, double value);
  double meta(const std::string& key) const;
  double meta_or(const std::string& key, double fallback) const;
};

// VNCK: magic, u32 version, u64 tensor count, then per tensor u32 name
// length + name, u32 rank, u64 dims, f32 little-endian data. Bit-exact
// round trip.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void pack_model(Checkpoint& ckpt, Model<float>& model);
void unpack_model(Model<float>& model, const Checkpoint& ckpt);

void pack_adam(Checkpoint& ckpt, const AdamState<float>& state);
void unpack_adam(AdamState<float>& state, const Checkpoint& ckpt);

}  // namespace volnet
