#pragma once

#include <optional>
#include <string>
#include <vector>

#include "volnet/io.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

struct PipelineDims {
  index_t depth = 50;
  index_t height = 112;
  index_t width = 112;

  static PipelineDims canonical() { return {50, 112, 112}; }
  static PipelineDims tiny() { return {16, 32, 32}; }
};

struct ClampRange {
  float lo = 0;
  float hi = 0;

  bool enabled() const { return lo < hi; }
};

// Center 50-slice window: slices [s, s+target) with s = floor((D-target)/2);
// volumes shallower than the target are padded by edge replication.
Tensor<float> center_window(const Tensor<float>& voxels, index_t target = 50);

// Per-slice bilinear resize with half-pixel sample centers; depth untouched.
Tensor<float> resize_slices(const Tensor<float>& voxels, index_t out_h = 112, index_t out_w = 112);

// Per-volume z-score: (x - mean) / (std + 1e-6)
Tensor<float> normalize(const Tensor<float>& voxels);

Tensor<float> clamp_volume(const Tensor<float>& voxels, ClampRange range);

// window -> resize -> (clamp) -> normalize; output is always exactly dims
Tensor<float> preprocess(const Tensor<float>& raw, const PipelineDims& dims, ClampRange clamp = {});

struct Batch {
  Tensor<float> volumes;  // [n, 1, depth, height, width]
  Tensor<float> labels;   // [n], values 0/1
  std::vector<std::string> ids;

  index_t size() const { return labels.size(); }
};

// Lazily materialized batches over one epoch: a seeded permutation of the
// records (permutation seed = seed ^ epoch), fixed-size batches with the
// final partial batch emitted. Any worker count produces identical batches.
class BatchStream {
 public:
  BatchStream(const Manifest& manifest, std::vector<ManifestRow> records, index_t batch_size, std::uint64_t seed,
              index_t epoch, const PipelineDims& dims, ClampRange clamp = {}, int workers = 0);

  index_t num_batches() const;
  index_t num_records() const { return static_cast<index_t>(records_.size()); }
  Batch batch(index_t i) const;

 private:
  const Manifest* manifest_;
  std::vector<ManifestRow> records_;
  std::vector<std::size_t> order_;
  index_t batch_size_;
  PipelineDims dims_;
  ClampRange clamp_;
  int workers_;
};

}  // namespace volnet
