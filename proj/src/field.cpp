#include "fieldgen/field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fieldgen/errors.hpp"
#include "fieldgen/rng.hpp"

namespace fieldgen {

int GridSpec::side() const {
    double s = extent / resolution;
    return static_cast<int>(std::lround(s));
}

void GridSpec::validate() const {
    if (extent <= 0 || resolution <= 0) throw ConfigError("grid extent and resolution must be positive");
    double s = extent / resolution;
    if (std::abs(s - std::lround(s)) > 1e-9 || std::lround(s) < 1)
        throw ConfigError("grid extent must be an integer multiple of resolution");
    if (channels != 4 && channels != kElementCount)
        throw ConfigError("grid channels must be 4 or " + std::to_string(kElementCount));
}

Channels occupancy(const Molecule& m, const Vec3& x, double radius) {
    const double inv = 1.0 / (0.93 * radius);
    Channels miss;
    miss.fill(1.0);  // running product of (1 - per-atom density)
    for (const auto& a : m.atoms) {
        double d = distance(x, a.position) * inv;
        miss[static_cast<int>(a.element)] *= 1.0 - std::exp(-d * d);
    }
    Channels v;
    for (int c = 0; c < kElementCount; ++c) v[c] = 1.0 - miss[c];
    return v;
}

DensityGrid voxelize(const Molecule& m, const GridSpec& spec, const Vec3& origin) {
    spec.validate();
    const int s = spec.side();
    DensityGrid g;
    g.spec = spec;
    g.origin = origin;
    g.values.assign(static_cast<std::size_t>(spec.channels) * s * s * s, 0.0);

    // The box spans voxel centers +- half a cell; require one voxel of margin.
    Vec3 lo = origin - Vec3{spec.resolution, spec.resolution, spec.resolution} * 0.5;
    int outside = 0;
    for (const auto& a : m.atoms) {
        Vec3 rel = a.position - lo;
        bool in = true;
        for (int d = 0; d < 3; ++d)
            in = in && rel[d] >= spec.resolution && rel[d] <= spec.extent - spec.resolution;
        if (!in) ++outside;
    }
    if (outside > 0)
        warn("voxelize: " + std::to_string(outside) + " of " + std::to_string(m.size()) +
             " atoms outside the grid box; density clipped at the boundary");

    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
            for (int k = 0; k < s; ++k) {
                Channels v = occupancy(m, g.voxel_center(i, j, k));
                for (int c = 0; c < spec.channels; ++c) g.at(c, i, j, k) = v[c];
            }
    return g;
}

Vec3 centered_origin(const GridSpec& spec, const Vec3& center) {
    double half = 0.5 * (spec.extent - spec.resolution);
    return center - Vec3{half, half, half};
}

Complex augment(const Complex& cx, uint64_t seed, double max_translation) {
    Rng rng = Rng::derive(seed, 0xa06);
    RigidTransform t = random_rigid_transform(rng, max_translation);

    Vec3 center = cx.binder.bbox_center();
    Complex out;
    out.modality = cx.modality;
    out.binder = cx.binder;
    out.target = cx.target;
    for (Molecule* m : {&out.binder, &out.target})
        for (auto& a : m->atoms) a.position = t.rotation.apply(a.position - center) + t.translation;
    return out;
}

// --- raw dump -----------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'F', 'G', 'R', 'I', 'D', '0', '1', '\0'};

template <typename T>
void put(std::string& buf, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
}

template <typename T>
T take(std::ifstream& f, const std::string& path) {
    T v;
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated grid file " + path);
    return v;
}
}  // namespace

void write_grid_file(const std::string& path, const DensityGrid& g) {
    std::string buf;
    buf.append(kMagic, 8);
    put<uint32_t>(buf, static_cast<uint32_t>(g.spec.side()));
    put<uint32_t>(buf, static_cast<uint32_t>(g.spec.channels));
    put<float>(buf, static_cast<float>(g.spec.resolution));
    put<float>(buf, static_cast<float>(g.origin.x));
    put<float>(buf, static_cast<float>(g.origin.y));
    put<float>(buf, static_cast<float>(g.origin.z));
    for (double v : g.values) put<float>(buf, static_cast<float>(v));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed for " + path);
}

DensityGrid read_grid_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("bad grid magic in " + path);
    uint32_t side = take<uint32_t>(f, path);
    uint32_t channels = take<uint32_t>(f, path);
    float resolution = take<float>(f, path);
    Vec3 origin{take<float>(f, path), take<float>(f, path), take<float>(f, path)};

    DensityGrid g;
    g.spec.resolution = resolution;
    g.spec.extent = resolution * side;
    g.spec.channels = static_cast<int>(channels);
    g.origin = origin;
    std::size_t n = static_cast<std::size_t>(channels) * side * side * side;
    g.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.values[i] = take<float>(f, path);
    return g;
}

}  // namespace fieldgen
