#include "fieldgen/recovery.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "fieldgen/errors.hpp"

namespace fieldgen {

std::vector<Peak> detect_peaks(const DensityGrid& grid, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ConfigError("detect_peaks: threshold must lie in (0,1)");
    const int s = grid.spec.side();
    if (grid.spec.channels < 1 ||
        grid.values.size() != static_cast<std::size_t>(grid.spec.channels) * s * s * s)
        throw ConfigError("detect_peaks: grid values do not match its spec");

    std::vector<Peak> out;
    for (int c = 0; c < grid.spec.channels; ++c) {
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < s; ++j)
                for (int k = 0; k < s; ++k) {
                    const double v = grid.at(c, i, j, k);
                    if (v < threshold) continue;
                    const std::int64_t lin = (static_cast<std::int64_t>(i) * s + j) * s + k;
                    bool peak = true;
                    for (int di = -1; di <= 1 && peak; ++di)
                        for (int dj = -1; dj <= 1 && peak; ++dj)
                            for (int dk = -1; dk <= 1 && peak; ++dk) {
                                if (di == 0 && dj == 0 && dk == 0) continue;
                                const int ni = i + di, nj = j + dj, nk = k + dk;
                                if (ni < 0 || nj < 0 || nk < 0 || ni >= s || nj >= s || nk >= s)
                                    continue;
                                const double u = grid.at(c, ni, nj, nk);
                                if (u > v) {
                                    peak = false;
                                } else if (u == v) {
                                    const std::int64_t nlin =
                                        (static_cast<std::int64_t>(ni) * s + nj) * s + nk;
                                    if (nlin < lin) peak = false;
                                }
                            }
                    if (peak)
                        out.push_back(
                            {grid.voxel_center(i, j, k), static_cast<Element>(c), v});
                }
    }
    return out;
}

Molecule to_molecule(const std::vector<Peak>& peaks, double merge_dist, int* merged_out) {
    if (peaks.empty()) throw ConfigError("to_molecule: empty peak set");

    std::vector<int> order(peaks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return peaks[static_cast<std::size_t>(a)].value >
               peaks[static_cast<std::size_t>(b)].value;
    });

    Molecule m;
    int merged = 0;
    for (int idx : order) {
        const Peak& p = peaks[static_cast<std::size_t>(idx)];
        bool absorbed = false;
        for (const Atom& a : m.atoms)
            if (distance(a.position, p.position) < merge_dist) {
                absorbed = true;
                break;
            }
        if (absorbed)
            ++merged;
        else
            m.atoms.push_back({p.channel, p.position});
    }
    if (merged_out) *merged_out = merged;
    return m;
}

double covalent_radius(Element e) {
    switch (e) {
        case Element::C: return 0.76;
        case Element::O: return 0.66;
        case Element::N: return 0.71;
        case Element::S: return 1.05;
        case Element::F: return 0.57;
        case Element::Cl: return 1.02;
        case Element::P: return 1.07;
        case Element::Br: return 1.20;
    }
    throw ConfigError("covalent_radius: unknown element");
}

BondSet infer_bonds(const Molecule& m) {
    BondSet out;
    const int n = m.size();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = distance(m.atoms[i].position, m.atoms[j].position);
            if (d < 0.8) {
                out.unreasonable.emplace_back(i, j);
                continue;
            }
            const Element ei = m.atoms[i].element, ej = m.atoms[j].element;
            double cutoff = 1.3 * (covalent_radius(ei) + covalent_radius(ej));
            const bool oo = ei == Element::O && ej == Element::O;
            const bool nn = ei == Element::N && ej == Element::N;
            if (oo || nn) cutoff = std::min(cutoff, 1.5);
            if (d <= cutoff) out.bonds.emplace_back(i, j);
        }
    return out;
}

std::string recovery_csv(const std::vector<RecoveryRow>& rows) {
    std::ostringstream os;
    os << "name,peaks,atoms,merged,bonds,unreasonable\n";
    for (const auto& r : rows)
        os << r.name << ',' << r.peaks << ',' << r.atoms << ',' << r.merged << ',' << r.bonds
           << ',' << r.unreasonable << '\n';
    return os.str();
}

}  // namespace fieldgen
