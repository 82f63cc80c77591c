#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fieldgen/vec3.hpp"

namespace fieldgen {

// The 8 supported element types, in channel order.
enum class Element : int {
    C = 0,
    O = 1,
    N = 2,
    S = 3,
    F = 4,
    Cl = 5,
    P = 6,
    Br = 7,
};

inline constexpr int kElementCount = 8;
inline constexpr int kTargetChannelCount = 4;  // target grids carry C, O, N, S only

const char* element_symbol(Element e);
std::optional<Element> element_from_symbol(std::string_view s);

struct Atom {
    Element element = Element::C;
    Vec3 position;  // Angstrom
};

struct Molecule {
    std::vector<Atom> atoms;

    int size() const { return static_cast<int>(atoms.size()); }
    Vec3 centroid() const;
    // Center of the tightest axis-aligned bounding box.
    Vec3 bbox_center() const;
};

// Validation is advisory: a molecule below the distance floor is suspicious
// (the generator must never produce one) but still representable.
struct MoleculeValidity {
    bool finite = true;
    bool min_distance_ok = true;  // all pairs >= 0.8 A
    bool non_empty = true;
    bool ok() const { return finite && min_distance_ok && non_empty; }
};

MoleculeValidity validate_molecule(const Molecule& m, double min_dist = 0.8);

struct Complex {
    Molecule binder;
    Molecule target;
    int modality = 0;
};

void validate_complex(const Complex& cx, int modality_count);

struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    // rotation orthonormal with det +1, both within 1e-9
    bool valid() const;
};

// --- text formats ---------------------------------------------------------
//
// .mol.txt   one atom per line: `ELEMENT x y z`, `#` comments allowed
// .cplx.txt  sections [MODALITY] k / [BINDER] / [TARGET], molecule lines below

Molecule parse_molecule(const std::string& text);
std::string write_molecule(const Molecule& m);

Complex parse_complex(const std::string& text);
std::string write_complex(const Complex& cx);

Molecule read_molecule_file(const std::string& path);
void write_molecule_file(const std::string& path, const Molecule& m);
Complex read_complex_file(const std::string& path);
void write_complex_file(const std::string& path, const Complex& cx);

// --- transforms -----------------------------------------------------------

Molecule apply_transform(const Molecule& m, const RigidTransform& t);

// Rotation from three Euler angles uniform in [0, 2*pi) (Rz*Ry*Rx), plus a
// per-axis uniform translation in [-max_translation, max_translation].
RigidTransform random_rigid_transform(uint64_t seed, double max_translation);
RigidTransform random_rigid_transform(class Rng& rng, double max_translation);

// --- toy complex generator -------------------------------------------------
//
// Deterministic stand-in for the real datasets. Three binder families:
//   0  open chain, consecutive atoms `step` apart
//   1  closed ring
//   2  branched tree (at least one atom with 3+ neighbors)
// Non-adjacent atoms are kept > 1.9 A apart so the neighbor graph at that
// threshold recovers the intended topology.

struct ToyConfig {
    int modality = 0;
    int modality_count = 3;
    int min_atoms = 8;
    int max_atoms = 12;
    double radius = 6.0;      // binder bounding radius, Angstrom
    double step = 1.5;        // bond length
    double min_dist = 1.1;    // binder minimum interatomic distance
    double clearance = 1.95;  // floor for non-bonded pairs (> 1.9 graph threshold)
    std::string elements = "CNO";   // binder element choices
    int target_min_atoms = 5;
    int target_max_atoms = 20;
    double target_gap_min = 2.0;  // binder-surface to target-surface distance
    double target_gap_max = 4.0;
};

Complex gen_toy_complex(uint64_t seed, const ToyConfig& cfg);

// --- neighbor-graph helpers (used by toy generation and family tests) ------

std::vector<std::pair<int, int>> neighbor_graph(const Molecule& m, double threshold);
bool is_single_cycle(const Molecule& m, double threshold = 1.9);
bool is_single_chain(const Molecule& m, double threshold = 1.9);

}  // namespace fieldgen
