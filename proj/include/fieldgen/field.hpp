#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fieldgen/moltypes.hpp"
#include "fieldgen/vec3.hpp"

namespace fieldgen {

// Cubic voxel grid geometry. extent must be an integer multiple of resolution.
struct GridSpec {
    double extent = 16.0;
    double resolution = 0.25;
    int channels = kElementCount;

    int side() const;
    void validate() const;
};

// Per-channel density values in [0,1], channel-major row-major layout.
// origin is the world position of the (0,0,0) voxel center.
struct DensityGrid {
    GridSpec spec;
    Vec3 origin;
    std::vector<double> values;

    std::size_t index(int c, int i, int j, int k) const {
        int s = spec.side();
        return ((static_cast<std::size_t>(c) * s + i) * s + j) * s + k;
    }
    double at(int c, int i, int j, int k) const { return values[index(c, i, j, k)]; }
    double& at(int c, int i, int j, int k) { return values[index(c, i, j, k)]; }
    Vec3 voxel_center(int i, int j, int k) const {
        return origin + Vec3{i * spec.resolution, j * spec.resolution, k * spec.resolution};
    }
};

using Channels = std::array<double, kElementCount>;

// Smooth per-element occupancy of the molecule at point x.
// Channel a: 1 - prod_i (1 - exp(-(|x - x_i| / (0.93 r))^2)) over atoms of element a.
Channels occupancy(const Molecule& m, const Vec3& x, double radius = 1.0);

// Occupancy at every voxel center. Atoms outside the box (less one voxel of
// margin) trigger a warning but still contribute density.
DensityGrid voxelize(const Molecule& m, const GridSpec& spec, const Vec3& origin);

// Origin that centers the grid box on `center` (voxel centers offset half a cell).
Vec3 centered_origin(const GridSpec& spec, const Vec3& center = {});

// Training-time augmentation: center on the binder bounding box, then rotate,
// then translate, with binder and target sharing one frame throughout.
Complex augment(const Complex& cx, uint64_t seed, double max_translation = 1.0);

// Raw dump: 32-byte header then channel-major little-endian float32 values.
void write_grid_file(const std::string& path, const DensityGrid& g);
DensityGrid read_grid_file(const std::string& path);

}  // namespace fieldgen
