#include <cmath>
#include <vector>

#include "doctest.h"
#include "fieldgen/gradcheck.hpp"
#include "fieldgen/neural_field.hpp"
#include "fieldgen/optim.hpp"

using namespace fieldgen;

TEST_CASE("latent frame round trips and aligns with grid voxels") {
    GridSpec spec;
    spec.extent = 16.0;
    spec.resolution = 2.0;
    spec.channels = 8;
    Vec3 origin = centered_origin(spec);
    LatentFrame f = LatentFrame::for_grid(spec, origin);
    CHECK(f.lo.x == doctest::Approx(-8.0).epsilon(1e-12));
    CHECK(f.extent == doctest::Approx(16.0));

    Rng rng = Rng::derive(11, 0x1f);
    for (int i = 0; i < 100; ++i) {
        Vec3 w{rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)};
        Vec3 back = f.to_world(f.to_norm(w));
        CHECK(std::abs(back.x - w.x) < 1e-12);
        CHECK(std::abs(back.y - w.y) < 1e-12);
        CHECK(std::abs(back.z - w.z) < 1e-12);
    }

    // with side == grid side, voxel center i lands in latent cell i
    const int s = spec.side();
    LatentGrid<double> g(4, s, f);
    for (int i = 0; i < s; ++i) {
        Vec3 w = origin + Vec3{i * spec.resolution, 0.0, 0.0};
        auto cell = lookup_cell3(g, f.to_norm(w));
        CHECK(cell[0] == i);
    }
}

TEST_CASE("nearest-neighbor lookup uses half-open cells, upper cell owns +1") {
    // side 2: cells split at 0; the boundary belongs to the upper cell
    CHECK(lookup_cell(2, -1.0) == 0);
    CHECK(lookup_cell(2, -0.1) == 0);
    CHECK(lookup_cell(2, 0.0) == 1);
    CHECK(lookup_cell(2, 0.1) == 1);
    CHECK(lookup_cell(2, 1.0) == 1);  // clamped
    CHECK(lookup_cell(2, -1.5) == 0);
    CHECK(lookup_cell(2, 1.5) == 1);

    LatentGrid<double> g(3, 2);
    auto c0 = lookup_cell3(g, {0.0, 0.0, 0.0});
    CHECK(c0 == std::array<int, 3>{1, 1, 1});
    auto c1 = lookup_cell3(g, {-0.1, -0.1, -0.1});
    CHECK(c1 == std::array<int, 3>{0, 0, 0});

    // modulation is piecewise constant within a cell
    Rng rng = Rng::derive(3, 0x2a);
    for (auto& v : g.values.data) v = rng.normal();
    auto za = lookup_modulation(g, {0.2, 0.3, 0.4});
    auto zb = lookup_modulation(g, {0.7, 0.8, 0.9});
    CHECK(za == zb);
    auto zc = lookup_modulation(g, {-0.2, 0.3, 0.4});
    CHECK(za != zc);
    // channel layout: value for channel ch of cell (1,1,1)
    CHECK(za[0] == g.values.data[0 * 8 + 7]);
    CHECK(za[1] == g.values.data[1 * 8 + 7]);
}

TEST_CASE("batched gather matches single-point lookup and scatter adjoint") {
    Rng rng = Rng::derive(5, 0x77);
    LatentGrid<double> g(6, 4);
    for (auto& v : g.values.data) v = rng.normal();

    const int n = 64;
    Tensor<double> xn({n, 3});
    for (auto& v : xn.data) v = rng.uniform(-1.0, 1.0);

    Tensor<double> zx;
    std::vector<std::int64_t> cells;
    gather_modulation(g, xn, zx, cells);
    for (int i = 0; i < n; ++i) {
        Vec3 p{xn.data[3 * i], xn.data[3 * i + 1], xn.data[3 * i + 2]};
        auto z = lookup_modulation(g, p);
        for (int c = 0; c < 6; ++c)
            CHECK(zx.data[static_cast<std::size_t>(i) * 6 + c] == z[static_cast<std::size_t>(c)]);
    }

    // adjoint identity: <scatter(dzx), v> == <dzx, gather-pattern of v>
    Tensor<double> dzx({n, 6});
    for (auto& v : dzx.data) v = rng.normal();
    Tensor<double> dvals({6, 4, 4, 4});
    scatter_modulation_grad(dzx, cells, dvals);
    Tensor<double> vvals({6, 4, 4, 4});
    for (auto& v : vvals.data) v = rng.normal();
    double lhs = as_vector(dvals).dot(as_vector(vvals));
    double rhs = 0.0;
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 6; ++c)
            rhs += dzx.data[static_cast<std::size_t>(i) * 6 + c] *
                   vvals.data[static_cast<std::size_t>(c) * 64 + cells[static_cast<std::size_t>(i)]];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

namespace {

template <typename T>
MfnDecoder<T> make_decoder(ParamStore<T>& ps, MfnConfig cfg, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0xdec0de);
    return MfnDecoder<T>(ps, cfg, rng);
}

}  // namespace

TEST_CASE("decoder with zeroed parameters outputs 0.5 and has zero spatial gradient") {
    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 16;
    cfg.latent_channels = 4;
    cfg.out_channels = 8;
    ParamStore<double> ps;
    MfnDecoder<double> dec = make_decoder(ps, cfg, 1);
    for (auto* p : ps.all()) p->value.zero();

    LatentGrid<double> g(cfg.latent_channels, 4);
    Rng rng = Rng::derive(9, 0x5);
    for (auto& v : g.values.data) v = rng.normal();

    Tensor<double> jac;
    auto y = decode_at(dec, g, {1.25, -3.5, 0.75}, &jac);
    for (int c = 0; c < 8; ++c) {
        CHECK(y[static_cast<std::size_t>(c)] == doctest::Approx(0.5).epsilon(1e-15));
        for (int d = 0; d < 3; ++d) CHECK(jac.data[static_cast<std::size_t>(3 * c + d)] == 0.0);
    }

    // a bare head bias shifts the constant output through the sigmoid
    ps.at("head.b").value.fill(-10.0);
    auto y2 = decode_at(dec, g, {0.0, 0.0, 0.0});
    double expect = 1.0 / (1.0 + std::exp(10.0));
    for (int c = 0; c < 8; ++c)
        CHECK(y2[static_cast<std::size_t>(c)] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("decoder output stays in [0,1]") {
    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 32;
    cfg.latent_channels = 8;
    ParamStore<double> ps;
    MfnDecoder<double> dec = make_decoder(ps, cfg, 2);
    // inflate weights to push logits to extremes
    for (auto* p : ps.all())
        for (auto& v : p->value.data) v *= 20.0;

    LatentGrid<double> g(cfg.latent_channels, 4);
    Rng rng = Rng::derive(10, 0x5);
    for (auto& v : g.values.data) v = rng.normal() * 5.0;

    Tensor<double> xn({200, 3}), zx;
    for (auto& v : xn.data) v = rng.uniform(-1.0, 1.0);
    std::vector<std::int64_t> cells;
    gather_modulation(g, xn, zx, cells);
    Tensor<double> y = dec.forward(xn, zx);
    for (double v : y.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("decoder backward matches finite differences for params and modulation") {
    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 8;
    cfg.latent_channels = 4;
    cfg.out_channels = 3;
    cfg.freq_scale = 4.0;
    ParamStore<double> ps;
    MfnDecoder<double> dec = make_decoder(ps, cfg, 3);

    const int n = 7;
    Rng rng = Rng::derive(4, 0x99);
    Tensor<double> xn({n, 3});
    for (auto& v : xn.data) v = rng.uniform(-1.0, 1.0);
    // treat the modulation rows as parameters so the same check covers dzx
    Param<double>& zparam = ps.create("zx", {n, cfg.latent_channels});
    for (auto& v : zparam.value.data) v = rng.normal();
    Tensor<double> wts({n, cfg.out_channels});
    for (auto& v : wts.data) v = rng.normal();

    auto loss = [&]() {
        Tensor<double> y = dec.forward(xn, zparam.value);
        double l = as_vector(y).dot(as_vector(wts));
        Tensor<double> dzx;
        dec.backward(wts, dzx);
        as_vector(zparam.grad) += as_vector(dzx);
        return l;
    };

    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.max_components_per_tensor = 20;
    opt.seed = 123;
    auto report = grad_check_report(ps, loss, opt);
    INFO("worst " << report.worst_param << "[" << report.worst_index
                  << "] analytic " << report.analytic << " numeric " << report.numeric);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("analytic spatial jacobian matches finite differences") {
    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 24;
    cfg.latent_channels = 6;
    cfg.out_channels = 8;
    cfg.freq_scale = 6.0;
    ParamStore<double> ps;
    MfnDecoder<double> dec = make_decoder(ps, cfg, 7);

    LatentGrid<double> g(cfg.latent_channels, 4);
    Rng rng = Rng::derive(8, 0x31);
    for (auto& v : g.values.data) v = rng.normal();

    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        // keep clear of cell boundaries so the modulation is locally constant
        Vec3 w{rng.uniform(-7.0, 7.0), rng.uniform(-7.0, 7.0), rng.uniform(-7.0, 7.0)};
        Tensor<double> jac;
        auto y0 = decode_at(dec, g, w, &jac);
        (void)y0;
        for (int d = 0; d < 3; ++d) {
            Vec3 wp = w, wm = w;
            (d == 0 ? wp.x : d == 1 ? wp.y : wp.z) += h;
            (d == 0 ? wm.x : d == 1 ? wm.y : wm.z) -= h;
            auto yp = decode_at(dec, g, wp);
            auto ym = decode_at(dec, g, wm);
            for (int c = 0; c < cfg.out_channels; ++c) {
                double fd = (yp[static_cast<std::size_t>(c)] - ym[static_cast<std::size_t>(c)]) /
                            (2 * h);
                double an = jac.data[static_cast<std::size_t>(3 * c + d)];
                double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
                CHECK(rel < 1e-4);
            }
        }
    }
}

TEST_CASE("render equals pointwise decode at every voxel") {
    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 32;
    cfg.latent_channels = 8;
    cfg.out_channels = 8;
    ParamStore<double> ps;
    MfnDecoder<double> dec = make_decoder(ps, cfg, 21);

    GridSpec spec;
    spec.extent = 16.0;
    spec.resolution = 2.0;
    spec.channels = 8;
    Vec3 origin = centered_origin(spec);
    LatentGrid<double> g(cfg.latent_channels, 4, LatentFrame::for_grid(spec, origin));
    Rng rng = Rng::derive(22, 0x8);
    for (auto& v : g.values.data) v = rng.normal();

    DensityGrid r = render(dec, g, spec, origin);
    const int s = spec.side();
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
            for (int k = 0; k < s; ++k) {
                auto y = decode_at(dec, g, r.voxel_center(i, j, k));
                for (int c = 0; c < 8; ++c)
                    CHECK(std::abs(r.at(c, i, j, k) - y[static_cast<std::size_t>(c)]) < 1e-12);
            }
}

TEST_CASE("decoder and learnable latent overfit a small molecule") {
    Molecule m;
    m.atoms = {{Element::C, {0.0, 0.0, 0.0}},
               {Element::N, {1.4, 0.2, -0.3}},
               {Element::O, {-0.9, 1.1, 0.5}}};

    MfnConfig cfg;
    cfg.depth = 3;
    cfg.width = 64;
    cfg.latent_channels = 8;
    cfg.out_channels = 8;
    cfg.freq_scale = 8.0;

    using T = float;
    ParamStore<T> ps;
    MfnDecoder<T> dec = make_decoder(ps, cfg, 31);
    Param<T>& latent = ps.create("latent", {cfg.latent_channels, 4, 4, 4});

    LatentFrame frame;  // default: 16 A box centered at the origin
    LatentGrid<T> grid(cfg.latent_channels, 4, frame);

    Rng rng = Rng::derive(32, 0xf17);
    auto sample_coords = [&](int n, Tensor<T>& xn, Tensor<T>& target) {
        xn = Tensor<T>({n, 3});
        target = Tensor<T>({n, cfg.out_channels});
        for (int i = 0; i < n; ++i) {
            Vec3 w;
            if (i % 2 == 0) {
                const Atom& a = m.atoms[rng.uniform_int(static_cast<int>(m.atoms.size()))];
                w = a.position + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.8;
            } else {
                w = {rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)};
            }
            w.x = std::clamp(w.x, -8.0, 8.0);
            w.y = std::clamp(w.y, -8.0, 8.0);
            w.z = std::clamp(w.z, -8.0, 8.0);
            Vec3 nrm = frame.to_norm(w);
            xn.data[3 * i + 0] = static_cast<T>(nrm.x);
            xn.data[3 * i + 1] = static_cast<T>(nrm.y);
            xn.data[3 * i + 2] = static_cast<T>(nrm.z);
            Channels occ = occupancy(m, w);
            for (int c = 0; c < cfg.out_channels; ++c)
                target.data[static_cast<std::size_t>(i) * cfg.out_channels + c] =
                    static_cast<T>(occ[static_cast<std::size_t>(c)]);
        }
    };

    Adam<T> opt({static_cast<T>(3e-3), 0.9f, 0.999f, 1e-8f});
    const int batch = 512;
    for (int step = 0; step < 1500; ++step) {
        Tensor<T> xn, target;
        sample_coords(batch, xn, target);
        grid.values = latent.value;
        Tensor<T> zx;
        std::vector<std::int64_t> cells;
        gather_modulation(grid, xn, zx, cells);

        ps.zero_grad();
        Tensor<T> y = dec.forward(xn, zx);
        Tensor<T> dy({batch, cfg.out_channels});
        T inv = T(1) / static_cast<T>(y.numel());
        for (std::size_t i = 0; i < y.data.size(); ++i)
            dy.data[i] = T(2) * (y.data[i] - target.data[i]) * inv;
        Tensor<T> dzx;
        dec.backward(dy, dzx);
        scatter_modulation_grad(dzx, cells, latent.grad);
        opt.step(ps);
    }

    grid.values = latent.value;
    Tensor<T> xn, target;
    sample_coords(4096, xn, target);
    Tensor<T> zx;
    std::vector<std::int64_t> cells;
    gather_modulation(grid, xn, zx, cells);
    Tensor<T> y = dec.forward(xn, zx);
    double mse = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        double d = static_cast<double>(y.data[i]) - static_cast<double>(target.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(y.numel());
    INFO("held-out mse " << mse);
    CHECK(mse < 1e-4);
}
