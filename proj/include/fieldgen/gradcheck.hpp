#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fieldgen/optim.hpp"
#include "fieldgen/rng.hpp"

namespace fieldgen {

struct GradCheckOptions {
    double eps = 1e-5;
    // 0 = check every component; otherwise a deterministic random subset per tensor
    int max_components_per_tensor = 0;
    std::uint64_t seed = 0;
    // components where both sides are below this are counted as agreeing;
    // for losses of order one, central differences carry ~1e-11 of roundoff,
    // which swamps the relative error of genuinely tiny gradients
    double abs_floor = 1e-7;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// f() must deterministically run forward+backward, accumulating gradients into
// ps (starting from the zeroed buffers this function provides) and return the
// scalar loss. Gradients from perturbed re-evaluations are discarded.
template <typename F>
GradCheckReport grad_check_report(ParamStore<double>& ps, F&& f, GradCheckOptions opt = {}) {
    ps.zero_grad();
    (void)f();
    // snapshot analytic gradients; perturbed evaluations overwrite the buffers
    std::vector<std::vector<double>> analytic;
    auto params = ps.all();
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad.data);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param<double>* p = params[pi];
        std::vector<std::int64_t> indices;
        std::int64_t n = p->value.numel();
        if (opt.max_components_per_tensor > 0 && n > opt.max_components_per_tensor) {
            Rng rng = Rng::derive(opt.seed, 0x96ad, pi);
            for (int i = 0; i < opt.max_components_per_tensor; ++i)
                indices.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<int>(n))));
            std::sort(indices.begin(), indices.end());
            indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
        } else {
            indices.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
        }
        for (std::int64_t idx : indices) {
            double saved = p->value.data[static_cast<std::size_t>(idx)];
            p->value.data[static_cast<std::size_t>(idx)] = saved + opt.eps;
            ps.zero_grad();
            double up = f();
            p->value.data[static_cast<std::size_t>(idx)] = saved - opt.eps;
            ps.zero_grad();
            double down = f();
            p->value.data[static_cast<std::size_t>(idx)] = saved;

            double fd = (up - down) / (2.0 * opt.eps);
            double an = analytic[pi][static_cast<std::size_t>(idx)];
            if (std::max(std::abs(an), std::abs(fd)) < opt.abs_floor) continue;
            double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-12});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p->name;
                report.worst_index = idx;
                report.analytic = an;
                report.numeric = fd;
            }
        }
    }
    // restore analytic gradients so callers can inspect them
    ps.zero_grad();
    (void)f();
    return report;
}

template <typename F>
double grad_check(ParamStore<double>& ps, F&& f, GradCheckOptions opt = {}) {
    return grad_check_report(ps, std::forward<F>(f), opt).max_rel_err;
}

}  // namespace fieldgen
