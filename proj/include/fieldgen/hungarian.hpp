#pragma once

#include <vector>

#include "fieldgen/moltypes.hpp"

namespace fieldgen {

// Minimum-cost assignment of n rows to m columns (n <= m) by shortest
// augmenting paths with dual potentials, O(n^2 m). cost is row-major [n, m].
// Returns the matched column per row.
std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n, int m);

struct MatchResult {
    double rmsd = 0.0;          // over matched pairs; 0 when nothing matched
    int matched = 0;            // min(|a|, |b|)
    int element_mismatches = 0;  // matched pairs whose elements differ
};

// Pair atoms of `a` with atoms of `b` minimizing squared distance; an element
// change costs a penalty far above any in-box distance, so cross-element
// pairs occur only when counts force them.
MatchResult match_molecules(const Molecule& a, const Molecule& b);

}  // namespace fieldgen
