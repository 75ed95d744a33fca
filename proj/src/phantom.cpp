#include "volnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "volnet/errors.hpp"
#include "volnet/rng.hpp"

namespace volnet {

namespace {

struct Ellipsoid {
  double cz, cy, cx;  // center
  double az, ay, ax;  // semi-axes
};

Ellipsoid lung_of(const PhantomSpec& spec) {
  return {0.5 * static_cast<double>(spec.depth - 1),  0.5 * static_cast<double>(spec.height - 1),
          0.5 * static_cast<double>(spec.width - 1),  0.35 * static_cast<double>(spec.depth),
          0.35 * static_cast<double>(spec.height),    0.35 * static_cast<double>(spec.width)};
}

double ellipsoid_dist2(const Ellipsoid& e, double z, double y, double x) {
  const double dz = (z - e.cz) / e.az, dy = (y - e.cy) / e.ay, dx = (x - e.cx) / e.ax;
  return dz * dz + dy * dy + dx * dx;
}

std::string padded_id(const char* cls, index_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04lld", cls, static_cast<long long>(i));
  return buf;
}

}  // namespace

void PhantomSpec::validate() const {
  if (depth < 8 || height < 8 || width < 8) throw ConfigError("phantom dims must be >= 8");
  if (noise < 0) throw ConfigError("phantom noise must be >= 0");
  if (min_lesions < 1 || max_lesions < min_lesions) throw ConfigError("phantom lesion count range invalid");
  if (!(lesion_lo <= lesion_hi)) throw ConfigError("phantom lesion intensity range invalid");
  if (!(lesion_lo - noise > lung_intensity + noise)) {
    throw ConfigError("phantom lesion intensity must clear the background range");
  }
  if (per_class() < 1) throw ConfigError("phantom per-class count must be >= 1");
}

bool inside_lung(const PhantomSpec& spec, index_t z, index_t y, index_t x) {
  return ellipsoid_dist2(lung_of(spec), static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)) <= 1.0;
}

Tensor<float> make_phantom_volume(const PhantomSpec& spec, index_t index, bool positive) {
  spec.validate();
  const Ellipsoid lung = lung_of(spec);
  Tensor<float> vol(Shape{spec.depth, spec.height, spec.width});
  float* v = vol.mutable_data();

  // background stream: shared between the classes for a given index
  Rng base(derive_seed(spec.seed, static_cast<std::uint64_t>(index), 0));
  index_t p = 0;
  for (index_t z = 0; z < spec.depth; ++z) {
    for (index_t y = 0; y < spec.height; ++y) {
      for (index_t x = 0; x < spec.width; ++x, ++p) {
        const float body = inside_lung(spec, z, y, x) ? spec.lung_intensity : 0.0f;
        v[p] = body + spec.noise * static_cast<float>(2.0 * unit_double(base()) - 1.0);
      }
    }
  }
  if (!positive) return vol;

  Rng lesions(derive_seed(spec.seed, static_cast<std::uint64_t>(index), 1));
  const index_t count =
      spec.min_lesions + static_cast<index_t>(rand_index(lesions, static_cast<std::uint64_t>(spec.max_lesions -
                                                                                             spec.min_lesions + 1)));
  const double s_min = 0.35 * static_cast<double>(std::min({spec.depth, spec.height, spec.width}));
  for (index_t l = 0; l < count; ++l) {
    // center: rejection-sampled unit-ball point, kept at <= 0.6 of the lung
    // axes so the whole sphere stays inside the mask
    double uz, uy, ux;
    do {
      uz = 2.0 * unit_double(lesions()) - 1.0;
      uy = 2.0 * unit_double(lesions()) - 1.0;
      ux = 2.0 * unit_double(lesions()) - 1.0;
    } while (uz * uz + uy * uy + ux * ux > 1.0);
    const double cz = lung.cz + uz * lung.az * 0.6;
    const double cy = lung.cy + uy * lung.ay * 0.6;
    const double cx = lung.cx + ux * lung.ax * 0.6;
    const double radius = s_min * (0.15 + 0.20 * unit_double(lesions()));
    const float intensity =
        spec.lesion_lo + (spec.lesion_hi - spec.lesion_lo) * static_cast<float>(unit_double(lesions()));
    const index_t z0 = std::max<index_t>(0, static_cast<index_t>(std::floor(cz - radius)));
    const index_t z1 = std::min<index_t>(spec.depth - 1, static_cast<index_t>(std::ceil(cz + radius)));
    const index_t y0 = std::max<index_t>(0, static_cast<index_t>(std::floor(cy - radius)));
    const index_t y1 = std::min<index_t>(spec.height - 1, static_cast<index_t>(std::ceil(cy + radius)));
    const index_t x0 = std::max<index_t>(0, static_cast<index_t>(std::floor(cx - radius)));
    const index_t x1 = std::min<index_t>(spec.width - 1, static_cast<index_t>(std::ceil(cx + radius)));
    for (index_t z = z0; z <= z1; ++z) {
      for (index_t y = y0; y <= y1; ++y) {
        for (index_t x = x0; x <= x1; ++x) {
          const double dz = static_cast<double>(z) - cz;
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          if (dz * dz + dy * dy + dx * dx <= radius * radius) {
            float& voxel = v[(z * spec.height + y) * spec.width + x];
            voxel = std::max(voxel, intensity);
          }
        }
      }
    }
  }
  return vol;
}

std::vector<ManifestRow> generate_phantoms(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestRow> rows;
  for (index_t i = 0; i < spec.per_class(); ++i) {
    const std::string split = i < spec.train_per_class ? "train" : "val";
    for (int label = 0; label <= 1; ++label) {
      ManifestRow row;
      row.id = padded_id(label == 1 ? "pos" : "neg", i);
      row.path = row.id + ".volf";
      row.label = label;
      row.split = split;
      write_volume(out_dir / row.path, make_phantom_volume(spec, i, label == 1));
      rows.push_back(std::move(row));
    }
  }
  write_manifest(out_dir / "manifest.csv", rows);
  return rows;
}

}  // namespace volnet
