#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fieldgen/field.hpp"
#include "fieldgen/moltypes.hpp"
#include "fieldgen/neural_field.hpp"
#include "fieldgen/vec3.hpp"

namespace fieldgen {

// A local density maximum on one element channel.
struct Peak {
    Vec3 position;
    Element channel = Element::C;
    double value = 0.0;  // density in [0,1], >= the detection threshold
};

// Single-order bonds as atom-index pairs, i < j, no duplicates.
// `unreasonable` lists pairs closer than the 0.8 A physical floor.
struct BondSet {
    std::vector<std::pair<int, int>> bonds;
    std::vector<std::pair<int, int>> unreasonable;
};

// Voxels that are >= threshold and equal to their sliding 3^3 max. On a
// plateau of exactly equal values only the lowest-linear-index voxel counts,
// so a tie cluster yields at most one peak. Output order: channel-major, then
// ascending linear index.
std::vector<Peak> detect_peaks(const DensityGrid& grid, double threshold = 0.3);

// Fixed-count gradient ascent with backtracking: a step of the current length
// along the gradient direction is taken only if density does not decrease,
// otherwise the length halves. Refined value >= detected value always.
// Field: double(const Vec3& x, int channel, Vec3* grad_out).
template <typename Field>
std::vector<Peak> refine_peaks_on(Field&& field, std::vector<Peak> peaks, int steps = 50,
                                  double step0 = 0.05) {
    for (auto& p : peaks) {
        const int ch = static_cast<int>(p.channel);
        Vec3 grad;
        double f = field(p.position, ch, &grad);
        double step = step0;
        for (int t = 0; t < steps; ++t) {
            double gn = grad.norm();
            if (!(gn > 0.0)) break;  // stationary point (or non-finite): stop
            Vec3 cand = p.position + grad * (step / gn);
            Vec3 cand_grad;
            double fc = field(cand, ch, &cand_grad);
            if (fc >= f) {
                p.position = cand;
                f = fc;
                grad = cand_grad;
            } else {
                step *= 0.5;
            }
        }
        p.value = f;
    }
    return peaks;
}

// Ascent on the decoded field of one channel. decode_point is const and
// buffer-free, so peaks could be refined concurrently; counts are small
// enough here that the loop stays serial.
template <typename T>
std::vector<Peak> refine_peaks(const MfnDecoder<T>& dec, const LatentGrid<T>& grid,
                               std::vector<Peak> peaks, int steps = 50, double step0 = 0.05) {
    auto field = [&](const Vec3& x, int channel, Vec3* g) {
        Tensor<T> jac;
        auto y = decode_at(dec, grid, x, g ? &jac : nullptr);
        if (g)
            *g = Vec3{static_cast<double>(jac.data[3 * channel + 0]),
                      static_cast<double>(jac.data[3 * channel + 1]),
                      static_cast<double>(jac.data[3 * channel + 2])};
        return static_cast<double>(y[static_cast<std::size_t>(channel)]);
    };
    return refine_peaks_on(field, std::move(peaks), steps, step0);
}

// One atom per surviving peak. Peaks closer than merge_dist collapse into the
// higher-valued one (ties: earlier peak wins). Throws on an empty peak set.
Molecule to_molecule(const std::vector<Peak>& peaks, double merge_dist = 0.8,
                     int* merged_out = nullptr);

// Single-bond covalent radius, Angstrom.
double covalent_radius(Element e);

// Bond (i,j) iff 0.8 <= d <= 1.3 * (r_i + r_j); O-O and N-N additionally
// require d <= 1.5. Pairs under 0.8 A are flagged unreasonable, never bonded.
BondSet infer_bonds(const Molecule& m);

// Per-sample recovery bookkeeping for the CSV report.
struct RecoveryRow {
    std::string name;
    int peaks = 0;         // detected
    int atoms = 0;         // after merging
    int merged = 0;        // peaks absorbed by a stronger neighbor
    int bonds = 0;
    int unreasonable = 0;  // sub-0.8 A pairs
};

std::string recovery_csv(const std::vector<RecoveryRow>& rows);

struct RecoveryOptions {
    double render_resolution = 0.25;  // Angstrom
    double threshold = 0.3;
    int refine_steps = 50;
    double refine_step0 = 0.05;
    double merge_dist = 0.8;
};

struct Recovered {
    Molecule molecule;  // empty when no voxel clears the threshold
    BondSet bonds;
    RecoveryRow row;
};

// render -> detect -> refine -> merge -> bonds over the latent's own frame.
template <typename T>
Recovered recover_molecule(MfnDecoder<T>& dec, const LatentGrid<T>& z,
                           const RecoveryOptions& opt = {}, const std::string& name = "") {
    GridSpec spec;
    spec.extent = z.frame.extent;
    spec.resolution = opt.render_resolution;
    spec.channels = dec.cfg.out_channels;
    Vec3 center = z.frame.lo + Vec3{0.5, 0.5, 0.5} * z.frame.extent;

    Recovered out;
    out.row.name = name;
    DensityGrid g = render(dec, z, spec, centered_origin(spec, center));
    auto peaks = detect_peaks(g, opt.threshold);
    out.row.peaks = static_cast<int>(peaks.size());
    if (peaks.empty()) return out;

    peaks = refine_peaks(dec, z, std::move(peaks), opt.refine_steps, opt.refine_step0);
    out.molecule = to_molecule(peaks, opt.merge_dist, &out.row.merged);
    out.row.atoms = out.molecule.size();
    out.bonds = infer_bonds(out.molecule);
    out.row.bonds = static_cast<int>(out.bonds.bonds.size());
    out.row.unreasonable = static_cast<int>(out.bonds.unreasonable.size());
    return out;
}

}  // namespace fieldgen
