#include "volnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "volnet/wire.hpp"

namespace volnet {

namespace {

using wire::get_u32;
using wire::get_u64;
using wire::put_u32;
using wire::put_u64;

constexpr char kMagic[4] = {'V', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxDim = std::uint64_t(1) << 31;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw DataError(path.string() + ": " + what);
}

}  // namespace

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint has no tensor named " + name);
  return it->second;
}

void Checkpoint::put_meta(const std::string& key, double value) {
  tensors["meta." + key] = Tensor<float>::scalar(static_cast<float>(value));
}

double Checkpoint::meta(const std::string& key) const { return get("meta." + key).at_flat(0); }

double Checkpoint::meta_or(const std::string& key, double fallback) const {
  return has("meta." + key) ? meta(key) : fallback;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
    for (index_t d : tensor.shape()) put_u64(buf, static_cast<std::uint64_t>(d));
    const float* p = tensor.data();
    for (index_t i = 0; i < tensor.size(); ++i) put_u32(buf, std::bit_cast<std::uint32_t>(p[i]));
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(path, "write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open checkpoint");
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  std::size_t n = raw.size(), off = 0;
  auto need = [&](std::size_t bytes, const char* what) {
    if (off + bytes > n) fail(path, std::string("truncated checkpoint while reading ") + what);
  };
  need(16, "header");
  if (std::memcmp(p, kMagic, 4) != 0) fail(path, "bad magic, not a VNCK checkpoint");
  if (get_u32(p + 4) != kVersion) fail(path, "unsupported checkpoint version");
  const std::uint64_t count = get_u64(p + 8);
  off = 16;
  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < count; ++i) {
    need(4, "name length");
    const std::uint32_t name_len = get_u32(p + off);
    off += 4;
    need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(p + off), name_len);
    off += name_len;
    need(4, "rank");
    const std::uint32_t rank = get_u32(p + off);
    off += 4;
    if (rank > 8) fail(path, "tensor " + name + " has implausible rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      need(8, "dims");
      const std::uint64_t d = get_u64(p + off);
      off += 8;
      if (d == 0 || d > kMaxDim || numel > kMaxDim / d) fail(path, "tensor " + name + " dims overflow");
      numel *= d;
      shape.push_back(static_cast<index_t>(d));
    }
    need(numel * 4, "tensor data");
    Tensor<float> t(shape);
    float* dst = t.mutable_data();
    for (std::uint64_t j = 0; j < numel; ++j) dst[j] = std::bit_cast<float>(get_u32(p + off + j * 4));
    off += numel * 4;
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second) fail(path, "duplicate tensor name");
  }
  if (off != n) fail(path, "trailing bytes after last tensor");
  return ckpt;
}

void pack_model(Checkpoint& ckpt, Model<float>& model) {
  model.visit([&ckpt](const std::string& name, Tensor<float>& t, bool) { ckpt.tensors["model." + name] = t.clone(); });
}

void unpack_model(Model<float>& model, const Checkpoint& ckpt) {
  model.visit([&ckpt](const std::string& name, Tensor<float>& t, bool) {
    const Tensor<float>& stored = ckpt.get("model." + name);
    if (stored.shape() != t.shape()) {
      throw DataError("checkpoint tensor model." + name + " has shape " + shape_str(stored.shape()) +
                      ", model expects " + shape_str(t.shape()));
    }
    t = stored.clone();
  });
}

void pack_adam(Checkpoint& ckpt, const AdamState<float>& state) {
  ckpt.tensors["opt.t"] = Tensor<float>::scalar(static_cast<float>(state.t));
  for (const auto& [name, m] : state.m) ckpt.tensors["opt.m." + name] = m.clone();
  for (const auto& [name, v] : state.v) ckpt.tensors["opt.v." + name] = v.clone();
}

void unpack_adam(AdamState<float>& state, const Checkpoint& ckpt) {
  state = AdamState<float>{};
  if (!ckpt.has("opt.t")) return;  // checkpoint without optimizer state
  state.t = static_cast<index_t>(ckpt.get("opt.t").at_flat(0));
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.rfind("opt.m.", 0) == 0) state.m.emplace(name.substr(6), tensor.clone());
    else if (name.rfind("opt.v.", 0) == 0) state.v.emplace(name.substr(6), tensor.clone());
  }
}

}  // namespace volnet
