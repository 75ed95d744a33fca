#pragma once

#include <filesystem>
#include <vector>

#include "volnet/io.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

// Synthetic chest-volume stand-in: a noisy lung ellipsoid; positives carry
// 1-4 bright spherical lesions strictly inside the lung. Lesion intensities
// sit far above the background range, so a max-voxel threshold separates the
// classes by construction.
struct PhantomSpec {
  index_t depth = 60, height = 128, width = 128;
  float lung_intensity = 0.3f;
  float noise = 0.1f;            // uniform in [-noise, noise]
  index_t min_lesions = 1, max_lesions = 4;
  float lesion_lo = 1.0f, lesion_hi = 1.8f;
  std::uint64_t seed = 0;
  index_t train_per_class = 100, val_per_class = 30;

  void validate() const;
  index_t per_class() const { return train_per_class + val_per_class; }
};

// Deterministic per (spec.seed, index): record `index` of both classes share
// the same background stream, so a positive differs from its negative twin
// only at lesion voxels.
Tensor<float> make_phantom_volume(const PhantomSpec& spec, index_t index, bool positive);

// voxel inside the lung ellipsoid? (exposed for tests)
bool inside_lung(const PhantomSpec& spec, index_t z, index_t y, index_t x);

// Writes <id>.volf files plus manifest.csv under out_dir; returns the rows.
std::vector<ManifestRow> generate_phantoms(const PhantomSpec& spec, const std::filesystem::path& out_dir);

}  // namespace volnet
