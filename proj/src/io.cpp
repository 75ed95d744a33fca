#include "volnet/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "volnet/errors.hpp"
#include "volnet/wire.hpp"

namespace volnet {

namespace {

using wire::get_u32;
using wire::get_u64;
using wire::put_u32;
using wire::put_u64;

constexpr char kMagic[4] = {'V', 'O', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr index_t kMaxVoxels = index_t(1) << 31;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw DataError(path.string() + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Tensor<float> read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open volume file");
  unsigned char header[4 + 4 + 24];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(header))) fail(path, "truncated VOLF header");
  if (std::memcmp(header, kMagic, 4) != 0) fail(path, "bad magic, not a VOLF file");
  const std::uint32_t version = get_u32(header + 4);
  if (version != kVersion) fail(path, "unsupported VOLF version " + std::to_string(version));
  const std::uint64_t d = get_u64(header + 8), h = get_u64(header + 16), w = get_u64(header + 24);
  if (d == 0 || h == 0 || w == 0) fail(path, "zero dimension in VOLF header");
  if (d > std::uint64_t(kMaxVoxels) || h > std::uint64_t(kMaxVoxels) || w > std::uint64_t(kMaxVoxels) ||
      d * h > std::uint64_t(kMaxVoxels) / w) {
    fail(path, "VOLF dimensions overflow: " + std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w));
  }
  const index_t count = static_cast<index_t>(d * h * w);
  Tensor<float> voxels(Shape{static_cast<index_t>(d), static_cast<index_t>(h), static_cast<index_t>(w)});
  std::vector<unsigned char> raw(static_cast<std::size_t>(count) * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    fail(path, "truncated VOLF payload: header promises " + std::to_string(count) + " voxels");
  }
  float* out = voxels.mutable_data();
  for (index_t i = 0; i < count; ++i) {
    out[i] = std::bit_cast<float>(get_u32(raw.data() + static_cast<std::size_t>(i) * 4));
  }
  return voxels;
}

void write_volume(const std::filesystem::path& path, const Tensor<float>& voxels) {
  if (voxels.rank() != 3) throw ShapeError("write_volume expects [D,H,W], got " + shape_str(voxels.shape()));
  std::string buf;
  buf.reserve(32 + static_cast<std::size_t>(voxels.size()) * 4);
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  for (int axis = 0; axis < 3; ++axis) put_u64(buf, static_cast<std::uint64_t>(voxels.shape()[axis]));
  const float* p = voxels.data();
  for (index_t i = 0; i < voxels.size(); ++i) put_u32(buf, std::bit_cast<std::uint32_t>(p[i]));
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(path, "write failed");
}

std::vector<ManifestRow> Manifest::split(const std::string& tag) const {
  std::vector<ManifestRow> out;
  for (const auto& row : rows) {
    if (row.split == tag) out.push_back(row);
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open manifest");
  Manifest manifest;
  manifest.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  if (!std::getline(in, line)) fail(path, "empty manifest");
  if (trim(line) != "id,path,label,split") fail(path, "manifest header must be 'id,path,label,split'");
  std::set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    ManifestRow row;
    std::string label, extra;
    if (!std::getline(ss, row.id, ',') || !std::getline(ss, row.path, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, row.split)) {
      fail(path, "line " + std::to_string(lineno) + ": expected id,path,label,split");
    }
    row.id = trim(row.id);
    row.path = trim(row.path);
    label = trim(label);
    row.split = trim(row.split);
    if (label != "0" && label != "1") fail(path, "line " + std::to_string(lineno) + ": label must be 0 or 1");
    row.label = label == "1" ? 1 : 0;
    if (row.split != "train" && row.split != "val") {
      fail(path, "line " + std::to_string(lineno) + ": split must be train or val");
    }
    if (!seen.insert(row.id).second) fail(path, "duplicate record id '" + row.id + "'");
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out << "id,path,label,split\n";
  for (const auto& row : rows) {
    out << row.id << ',' << row.path << ',' << row.label << ',' << row.split << '\n';
  }
  if (!out) fail(path, "write failed");
}

VolumeRecord load_record(const Manifest& manifest, const ManifestRow& row) {
  VolumeRecord rec;
  rec.id = row.id;
  rec.label = row.label;
  rec.path = manifest.resolve(row).string();
  try {
    rec.voxels = read_volume(rec.path);
  } catch (const DataError& e) {
    throw DataError("record " + row.id + ": " + e.what());
  }
  return rec;
}

}  // namespace volnet
