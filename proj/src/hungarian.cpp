#include "fieldgen/hungarian.hpp"

#include <cmath>
#include <limits>

#include "fieldgen/errors.hpp"

namespace fieldgen {

std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n, int m) {
    if (n < 0 || m < 0 || n > m) throw ConfigError("min_cost_assignment: need 0 <= rows <= cols");
    if (cost.size() != static_cast<std::size_t>(n) * m)
        throw ConfigError("min_cost_assignment: cost matrix size mismatch");
    const double inf = std::numeric_limits<double>::infinity();

    // Column m is a virtual start column; p[j] == n means column j is free.
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(m) + 1, n);
    std::vector<int> way(static_cast<std::size_t>(m) + 1, m);

    for (int i = 0; i < n; ++i) {
        p[m] = i;
        int j0 = m;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 0; j < m; ++j) {
                if (used[j]) continue;
                double cur = cost[static_cast<std::size_t>(i0) * m + j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != n);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != m);
    }

    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 0; j < m; ++j)
        if (p[j] != n) row_to_col[p[j]] = j;
    return row_to_col;
}

MatchResult match_molecules(const Molecule& a, const Molecule& b) {
    MatchResult out;
    const int na = a.size(), nb = b.size();
    if (na == 0 || nb == 0) return out;

    const Molecule& rows = na <= nb ? a : b;
    const Molecule& cols = na <= nb ? b : a;
    const int n = rows.size(), m = cols.size();

    const double mismatch_penalty = 1e6;  // >> any squared distance inside a desk box
    std::vector<double> cost(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double c = (rows.atoms[i].position - cols.atoms[j].position).norm2();
            if (rows.atoms[i].element != cols.atoms[j].element) c += mismatch_penalty;
            cost[static_cast<std::size_t>(i) * m + j] = c;
        }

    auto assign = min_cost_assignment(cost, n, m);
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
        int j = assign[i];
        sq += (rows.atoms[i].position - cols.atoms[j].position).norm2();
        if (rows.atoms[i].element != cols.atoms[j].element) ++out.element_mismatches;
    }
    out.matched = n;
    out.rmsd = std::sqrt(sq / n);
    return out;
}

}  // namespace fieldgen
