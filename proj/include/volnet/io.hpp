#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "volnet/tensor.hpp"

namespace volnet {

struct VolumeRecord {
  std::string id;
  int label = 0;  // 0 = negative, 1 = positive
  std::string path;
  Tensor<float> voxels;  // [D, H, W]
};

struct ManifestRow {
  std::string id;
  std::string path;  // relative to the manifest's directory
  int label = 0;
  std::string split;  // train | val
};

struct Manifest {
  std::filesystem::path root;  // directory manifest paths resolve against
  std::vector<ManifestRow> rows;

  std::vector<ManifestRow> split(const std::string& tag) const;
  std::filesystem::path resolve(const ManifestRow& row) const { return root / row.path; }
};

// VOLF: magic "VOLF", u32 version=1, u64 D,H,W, then D·H·W f32 voxels,
// everything little-endian, slices outermost.
Tensor<float> read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Tensor<float>& voxels);

// CSV with header id,path,label,split
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

VolumeRecord load_record(const Manifest& manifest, const ManifestRow& row);

}  // namespace volnet
