#include "volnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <thread>

#include "volnet/errors.hpp"
#include "volnet/rng.hpp"

namespace volnet {

Tensor<float> center_window(const Tensor<float>& voxels, index_t target) {
  if (voxels.rank() != 3) throw ShapeError("center_window expects [D,H,W], got " + shape_str(voxels.shape()));
  if (target < 1) throw Error("center_window: target must be >= 1");
  const index_t d = voxels.shape()[0], h = voxels.shape()[1], w = voxels.shape()[2];
  const index_t slice = h * w;
  Tensor<float> out(Shape{target, h, w});
  float* dst = out.mutable_data();
  const float* src = voxels.data();
  if (d >= target) {
    const index_t start = (d - target) / 2;
    std::memcpy(dst, src + start * slice, static_cast<std::size_t>(target * slice) * sizeof(float));
  } else {
    const index_t pad_front = (target - d) / 2;
    for (index_t i = 0; i < target; ++i) {
      const index_t j = std::clamp<index_t>(i - pad_front, 0, d - 1);
      std::memcpy(dst + i * slice, src + j * slice, static_cast<std::size_t>(slice) * sizeof(float));
    }
  }
  return out;
}

namespace {

// half-pixel sample positions: src = (dst + 0.5) * in/out - 0.5, clamped
struct Taps {
  std::vector<index_t> lo, hi;
  std::vector<float> frac;
};

Taps make_taps(index_t in, index_t out) {
  Taps taps;
  taps.lo.resize(static_cast<std::size_t>(out));
  taps.hi.resize(static_cast<std::size_t>(out));
  taps.frac.resize(static_cast<std::size_t>(out));
  const double step = static_cast<double>(in) / static_cast<double>(out);
  for (index_t i = 0; i < out; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * step - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
    const index_t lo = static_cast<index_t>(pos);
    taps.lo[static_cast<std::size_t>(i)] = lo;
    taps.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, in - 1);
    taps.frac[static_cast<std::size_t>(i)] = static_cast<float>(pos - static_cast<double>(lo));
  }
  return taps;
}

}  // namespace

Tensor<float> resize_slices(const Tensor<float>& voxels, index_t out_h, index_t out_w) {
  if (voxels.rank() != 3) throw ShapeError("resize_slices expects [D,H,W], got " + shape_str(voxels.shape()));
  if (out_h < 1 || out_w < 1) throw Error("resize_slices: output dims must be >= 1");
  const index_t d = voxels.shape()[0], h = voxels.shape()[1], w = voxels.shape()[2];
  const Taps ty = make_taps(h, out_h);
  const Taps tx = make_taps(w, out_w);
  Tensor<float> out(Shape{d, out_h, out_w});
  float* dst = out.mutable_data();
  const float* src = voxels.data();
  for (index_t z = 0; z < d; ++z) {
    const float* plane = src + z * h * w;
    float* row = dst + z * out_h * out_w;
    for (index_t y = 0; y < out_h; ++y) {
      const float* r0 = plane + ty.lo[static_cast<std::size_t>(y)] * w;
      const float* r1 = plane + ty.hi[static_cast<std::size_t>(y)] * w;
      const float fy = ty.frac[static_cast<std::size_t>(y)];
      for (index_t x = 0; x < out_w; ++x) {
        const index_t x0 = tx.lo[static_cast<std::size_t>(x)], x1 = tx.hi[static_cast<std::size_t>(x)];
        const float fx = tx.frac[static_cast<std::size_t>(x)];
        const float top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const float bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        row[y * out_w + x] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

Tensor<float> normalize(const Tensor<float>& voxels) {
  const index_t n = voxels.size();
  const float* src = voxels.data();
  double sum = 0, sq = 0;
  for (index_t i = 0; i < n; ++i) {
    sum += src[i];
    sq += static_cast<double>(src[i]) * src[i];
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const float inv = static_cast<float>(1.0 / (std::sqrt(var) + 1e-6));
  const float m = static_cast<float>(mean);
  Tensor<float> out(voxels.shape());
  float* dst = out.mutable_data();
  for (index_t i = 0; i < n; ++i) dst[i] = (src[i] - m) * inv;
  return out;
}

Tensor<float> clamp_volume(const Tensor<float>& voxels, ClampRange range) {
  if (!range.enabled()) return voxels;
  Tensor<float> out(voxels.shape());
  const float* src = voxels.data();
  float* dst = out.mutable_data();
  for (index_t i = 0; i < voxels.size(); ++i) dst[i] = std::clamp(src[i], range.lo, range.hi);
  return out;
}

Tensor<float> preprocess(const Tensor<float>& raw, const PipelineDims& dims, ClampRange clamp) {
  Tensor<float> v = center_window(raw, dims.depth);
  v = resize_slices(v, dims.height, dims.width);
  v = clamp_volume(v, clamp);
  return normalize(v);
}

BatchStream::BatchStream(const Manifest& manifest, std::vector<ManifestRow> records, index_t batch_size,
                         std::uint64_t seed, index_t epoch, const PipelineDims& dims, ClampRange clamp, int workers)
    : manifest_(&manifest),
      records_(std::move(records)),
      batch_size_(batch_size),
      dims_(dims),
      clamp_(clamp),
      workers_(workers) {
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  if (records_.empty()) throw DataError("batch stream over an empty record set");
  order_ = shuffled_indices(records_.size(), seed ^ static_cast<std::uint64_t>(epoch));
}

index_t BatchStream::num_batches() const {
  return (static_cast<index_t>(records_.size()) + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::batch(index_t i) const {
  if (i < 0 || i >= num_batches()) throw Error("batch index out of range");
  const index_t begin = i * batch_size_;
  const index_t end = std::min(begin + batch_size_, static_cast<index_t>(records_.size()));
  const index_t n = end - begin;
  Batch out;
  out.volumes = Tensor<float>(Shape{n, 1, dims_.depth, dims_.height, dims_.width});
  out.labels = Tensor<float>(Shape{n});
  out.ids.resize(static_cast<std::size_t>(n));
  const index_t voxels = dims_.depth * dims_.height * dims_.width;

  std::exception_ptr failure;
  std::mutex failure_mu;
  auto prepare = [&](index_t lo, index_t hi) {
    for (index_t r = lo; r < hi; ++r) {
      try {
        const ManifestRow& row = records_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin + r)])];
        VolumeRecord rec = load_record(*manifest_, row);
        Tensor<float> v = preprocess(rec.voxels, dims_, clamp_);
        std::memcpy(out.volumes.mutable_data() + r * voxels, v.data(),
                    static_cast<std::size_t>(voxels) * sizeof(float));
        out.labels.mutable_data()[r] = static_cast<float>(row.label);
        out.ids[static_cast<std::size_t>(r)] = row.id;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const index_t nthreads = std::clamp<index_t>(workers_, 1, n);
  if (nthreads <= 1) {
    prepare(0, n);
  } else {
    std::vector<std::thread> pool;
    const index_t chunk = (n + nthreads - 1) / nthreads;
    for (index_t t = 0; t < nthreads; ++t) {
      const index_t lo = t * chunk, hi = std::min(lo + chunk, n);
      if (lo < hi) pool.emplace_back(prepare, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace volnet
