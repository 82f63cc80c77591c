#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fieldgen/field.hpp"
#include "fieldgen/layers.hpp"
#include "fieldgen/moltypes.hpp"
#include "fieldgen/tensor.hpp"

namespace fieldgen {

// World box covered by a latent grid, mapped to normalized coords [-1,1]^3.
struct LatentFrame {
    Vec3 lo{-8.0, -8.0, -8.0};
    double extent = 16.0;

    Vec3 to_norm(const Vec3& world) const {
        double s = 2.0 / extent;
        return {(world.x - lo.x) * s - 1.0, (world.y - lo.y) * s - 1.0,
                (world.z - lo.z) * s - 1.0};
    }
    Vec3 to_world(const Vec3& norm) const {
        double s = extent / 2.0;
        return {(norm.x + 1.0) * s + lo.x, (norm.y + 1.0) * s + lo.y, (norm.z + 1.0) * s + lo.z};
    }
    static LatentFrame for_grid(const GridSpec& spec, const Vec3& grid_origin) {
        LatentFrame f;
        f.lo = grid_origin - Vec3{spec.resolution, spec.resolution, spec.resolution} * 0.5;
        f.extent = spec.extent;
        return f;
    }
};

template <typename T>
struct LatentGrid {
    LatentFrame frame;
    Tensor<T> values;  // [C, L, L, L]

    LatentGrid() = default;
    LatentGrid(int channels, int side, LatentFrame f = {})
        : frame(f), values({channels, side, side, side}) {}

    int channels() const { return values.shape.empty() ? 0 : values.shape[0]; }
    int side() const { return values.shape.size() < 2 ? 0 : values.shape[1]; }

    template <typename U>
    LatentGrid<U> cast() const {
        LatentGrid<U> out;
        out.frame = frame;
        out.values = values.template cast<U>();
        return out;
    }
};

// Half-open cells: cell i owns [edge_i, edge_{i+1}); the upper cell owns +1.
inline int lookup_cell(int side, double coord_norm) {
    int i = static_cast<int>(std::floor((coord_norm + 1.0) * 0.5 * side));
    if (i < 0) i = 0;
    if (i >= side) i = side - 1;
    return i;
}

template <typename T>
std::array<int, 3> lookup_cell3(const LatentGrid<T>& g, const Vec3& x_norm) {
    int l = g.side();
    return {lookup_cell(l, x_norm.x), lookup_cell(l, x_norm.y), lookup_cell(l, x_norm.z)};
}

// Nearest-neighbor modulation vector for one normalized coordinate.
template <typename T>
std::vector<T> lookup_modulation(const LatentGrid<T>& g, const Vec3& x_norm) {
    auto [ix, iy, iz] = lookup_cell3(g, x_norm);
    int l = g.side(), c = g.channels();
    std::vector<T> out(static_cast<std::size_t>(c));
    std::int64_t cell = (static_cast<std::int64_t>(ix) * l + iy) * l + iz;
    std::int64_t stride = static_cast<std::int64_t>(l) * l * l;
    for (int ch = 0; ch < c; ++ch) out[ch] = g.values.data[ch * stride + cell];
    return out;
}

// Batched gather: xn is [N,3] normalized coords; fills zx [N,C] and the flat
// spatial cell index per row (for the scatter in the backward pass).
template <typename T>
void gather_modulation(const LatentGrid<T>& g, const Tensor<T>& xn, Tensor<T>& zx,
                       std::vector<std::int64_t>& cells) {
    const int n = xn.shape[0];
    const int c = g.channels(), l = g.side();
    const std::int64_t stride = static_cast<std::int64_t>(l) * l * l;
    zx = Tensor<T>({n, c});
    cells.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int ix = lookup_cell(l, xn.data[3 * i + 0]);
        int iy = lookup_cell(l, xn.data[3 * i + 1]);
        int iz = lookup_cell(l, xn.data[3 * i + 2]);
        std::int64_t cell = (static_cast<std::int64_t>(ix) * l + iy) * l + iz;
        cells[static_cast<std::size_t>(i)] = cell;
        for (int ch = 0; ch < c; ++ch) zx.data[static_cast<std::size_t>(i) * c + ch] =
            g.values.data[ch * stride + cell];
    }
}

template <typename T>
void scatter_modulation_grad(const Tensor<T>& dzx, const std::vector<std::int64_t>& cells,
                             Tensor<T>& dvalues) {
    const int c = dvalues.shape[0];
    const int l = dvalues.shape[1];
    const std::int64_t stride = static_cast<std::int64_t>(l) * l * l;
    const int n = dzx.shape[0];
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
            dvalues.data[ch * stride + cells[static_cast<std::size_t>(i)]] +=
                dzx.data[static_cast<std::size_t>(i) * c + ch];
}

struct MfnConfig {
    int depth = 3;  // number of Gabor filter layers
    int width = 128;
    int latent_channels = 16;
    int out_channels = kElementCount;
    double freq_scale = 15.0;  // per-layer frequency std, normalized units
};

// Gabor filter bank: g_w(x) = exp(-gamma_w |x - mu_w|^2) * sin(omega_w.x + phi_w),
// gamma kept positive through softplus of a raw parameter.
template <typename T>
struct GaborLayer {
    Param<T>*omega = nullptr, *phi = nullptr, *mu = nullptr, *gamma_raw = nullptr;
    int width = 0;
    Tensor<T> sin_c, cos_c, env_c, r2_c;  // [N, W] caches
    Tensor<T> xn_c;                       // [N, 3]

    GaborLayer() = default;
    GaborLayer(ParamStore<T>& ps, const std::string& name, int width_, double freq_scale, Rng& rng)
        : width(width_) {
        omega = &ps.create_gaussian(name + ".omega", {width, 3}, rng, static_cast<T>(freq_scale));
        phi = &ps.create(name + ".phi", {width});
        for (auto& v : phi->value.data) v = static_cast<T>(rng.uniform(0.0, 6.283185307179586));
        mu = &ps.create(name + ".mu", {width, 3});
        for (auto& v : mu->value.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        gamma_raw = &ps.create(name + ".gamma_raw", {width});
        for (auto& v : gamma_raw->value.data) v = static_cast<T>(rng.normal() * 0.25 + 1.0);
    }

    static T softplus(T x) { return x > T(20) ? x : std::log1p(std::exp(x)); }

    Tensor<T> forward(const Tensor<T>& xn) {
        const int n = xn.shape[0];
        xn_c = xn;
        sin_c = Tensor<T>({n, width});
        cos_c = Tensor<T>({n, width});
        env_c = Tensor<T>({n, width});
        r2_c = Tensor<T>({n, width});

        // phase = xn * omega^T + phi
        Tensor<T> phase({n, width});
        as_matrix(phase, n, width).noalias() =
            as_matrix(xn, n, 3) * as_matrix(omega->value, width, 3).transpose();
        as_matrix(phase, n, width).rowwise() += ConstVecMap<T>(phi->value.ptr(), width).transpose();

        Tensor<T> g({n, width});
        for (int i = 0; i < n; ++i) {
            const T* x = xn.ptr() + 3 * i;
            for (int w = 0; w < width; ++w) {
                const T* m = mu->value.ptr() + 3 * w;
                T dx = x[0] - m[0], dy = x[1] - m[1], dz = x[2] - m[2];
                T r2 = dx * dx + dy * dy + dz * dz;
                T gam = softplus(gamma_raw->value.data[w]);
                std::size_t idx = static_cast<std::size_t>(i) * width + w;
                r2_c.data[idx] = r2;
                env_c.data[idx] = std::exp(-gam * r2);
                sin_c.data[idx] = std::sin(phase.data[idx]);
                cos_c.data[idx] = std::cos(phase.data[idx]);
                g.data[idx] = env_c.data[idx] * sin_c.data[idx];
            }
        }
        return g;
    }

    void backward(const Tensor<T>& dg) {
        const int n = dg.shape[0];
        Tensor<T> a({n, width}), b({n, width});
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = dg.data[i] * env_c.data[i] * cos_c.data[i];  // d phase
            b.data[i] = dg.data[i] * env_c.data[i] * sin_c.data[i];  // d envelope-log
        }
        // omega, phi through the phase
        as_matrix(omega->grad, width, 3).noalias() +=
            as_matrix(a, n, width).transpose() * as_matrix(xn_c, n, 3);
        // scalar column sum: Eigen's vectorized reduction order depends on
        // buffer alignment, which would break bit-exact reruns
        for (int w = 0; w < width; ++w) {
            T acc = T(0);
            for (int i = 0; i < n; ++i)
                acc += a.data[static_cast<std::size_t>(i) * width + w];
            phi->grad.data[static_cast<std::size_t>(w)] += acc;
        }

        // gamma_raw and mu through the envelope
        for (int w = 0; w < width; ++w) {
            T gam_raw = gamma_raw->value.data[w];
            T gam = softplus(gam_raw);
            T dgam = T(0);
            T dmu0 = T(0), dmu1 = T(0), dmu2 = T(0);
            const T* m = mu->value.ptr() + 3 * w;
            for (int i = 0; i < n; ++i) {
                std::size_t idx = static_cast<std::size_t>(i) * width + w;
                T bv = b.data[idx];
                dgam -= bv * r2_c.data[idx];
                const T* x = xn_c.ptr() + 3 * i;
                dmu0 += bv * T(2) * gam * (x[0] - m[0]);
                dmu1 += bv * T(2) * gam * (x[1] - m[1]);
                dmu2 += bv * T(2) * gam * (x[2] - m[2]);
            }
            T sig = T(1) / (T(1) + std::exp(-gam_raw));
            gamma_raw->grad.data[w] += dgam * sig;
            mu->grad.data[3 * w + 0] += dmu0;
            mu->grad.data[3 * w + 1] += dmu1;
            mu->grad.data[3 * w + 2] += dmu2;
        }
    }

    // value and per-axis derivative at a single point, no caches touched
    void point(const T* x, T* g_out, T* dgdx_out /* [W,3] or null */) const {
        for (int w = 0; w < width; ++w) {
            const T* om = omega->value.ptr() + 3 * w;
            const T* m = mu->value.ptr() + 3 * w;
            T dx = x[0] - m[0], dy = x[1] - m[1], dz = x[2] - m[2];
            T r2 = dx * dx + dy * dy + dz * dz;
            T gam = softplus(gamma_raw->value.data[w]);
            T env = std::exp(-gam * r2);
            T phase = om[0] * x[0] + om[1] * x[1] + om[2] * x[2] + phi->value.data[w];
            T s = std::sin(phase), c = std::cos(phase);
            g_out[w] = env * s;
            if (dgdx_out) {
                T diff[3] = {dx, dy, dz};
                for (int d = 0; d < 3; ++d)
                    dgdx_out[3 * w + d] = env * (c * om[d] - T(2) * gam * diff[d] * s);
            }
        }
    }
};

// Multiplicative filter network with per-layer FiLM modulation from a latent
// vector: h1 = g1(x); h_{l+1} = ((1 + s_l(z)) .* (W_l h_l + b_l) + t_l(z)) .* g_{l+1}(x);
// y = sigmoid(head(h_depth)).
template <typename T>
struct MfnDecoder {
    MfnConfig cfg;
    std::vector<GaborLayer<T>> gabor;
    std::vector<LinearLayer<T>> hidden;
    std::vector<LinearLayer<T>> film_scale, film_shift;
    LinearLayer<T> head;

    // forward caches (batch path)
    std::vector<Tensor<T>> h_c, lin_c, gf_c, a_c, g_c;
    Tensor<T> y_c, zx_c;

    MfnDecoder() = default;
    MfnDecoder(ParamStore<T>& ps, const MfnConfig& config, Rng& rng) : cfg(config) {
        for (int l = 0; l < cfg.depth; ++l)
            gabor.emplace_back(ps, "gabor" + std::to_string(l), cfg.width, cfg.freq_scale, rng);
        for (int l = 0; l + 1 < cfg.depth; ++l) {
            hidden.emplace_back(ps, "hidden" + std::to_string(l), cfg.width, cfg.width, rng);
            film_scale.emplace_back(ps, "film_scale" + std::to_string(l), cfg.latent_channels,
                                    cfg.width, rng, 0.05);
            film_shift.emplace_back(ps, "film_shift" + std::to_string(l), cfg.latent_channels,
                                    cfg.width, rng, 0.05);
        }
        head = LinearLayer<T>(ps, "head", cfg.width, cfg.out_channels, rng);
    }

    // xn [N,3] normalized coords, zx [N,C] per-coordinate modulation vectors
    Tensor<T> forward(const Tensor<T>& xn, const Tensor<T>& zx) {
        const int n = xn.shape[0];
        zx_c = zx;
        h_c.assign(static_cast<std::size_t>(cfg.depth), {});
        lin_c.assign(hidden.size(), {});
        gf_c.assign(hidden.size(), {});
        a_c.assign(hidden.size(), {});
        g_c.assign(static_cast<std::size_t>(cfg.depth), {});

        g_c[0] = gabor[0].forward(xn);
        h_c[0] = g_c[0];
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            lin_c[l] = hidden[l].forward(h_c[l]);
            gf_c[l] = film_scale[l].forward(zx);
            Tensor<T> shift = film_shift[l].forward(zx);
            a_c[l] = Tensor<T>({n, cfg.width});
            for (std::size_t i = 0; i < a_c[l].data.size(); ++i)
                a_c[l].data[i] =
                    (T(1) + gf_c[l].data[i]) * lin_c[l].data[i] + shift.data[i];
            g_c[l + 1] = gabor[l + 1].forward(xn);
            h_c[l + 1] = Tensor<T>({n, cfg.width});
            for (std::size_t i = 0; i < h_c[l + 1].data.size(); ++i)
                h_c[l + 1].data[i] = a_c[l].data[i] * g_c[l + 1].data[i];
        }
        Tensor<T> logits = head.forward(h_c[static_cast<std::size_t>(cfg.depth - 1)]);
        y_c = ops::sigmoid(logits);
        return y_c;
    }

    // dy [N,out]; returns nothing, accumulates parameter grads and dzx [N,C]
    void backward(const Tensor<T>& dy, Tensor<T>& dzx) {
        const int n = dy.shape[0];
        dzx = Tensor<T>({n, cfg.latent_channels});
        Tensor<T> dlogits = ops::sigmoid_backward(dy, y_c);
        Tensor<T> dh = head.backward(dlogits);

        for (int l = static_cast<int>(hidden.size()) - 1; l >= 0; --l) {
            auto& gl = g_c[static_cast<std::size_t>(l + 1)];
            auto& al = a_c[static_cast<std::size_t>(l)];
            Tensor<T> dg({n, cfg.width}), da({n, cfg.width});
            for (std::size_t i = 0; i < dg.data.size(); ++i) {
                dg.data[i] = dh.data[i] * al.data[i];
                da.data[i] = dh.data[i] * gl.data[i];
            }
            gabor[static_cast<std::size_t>(l + 1)].backward(dg);

            Tensor<T> dgf({n, cfg.width}), dlin({n, cfg.width});
            auto& linl = lin_c[static_cast<std::size_t>(l)];
            auto& gfl = gf_c[static_cast<std::size_t>(l)];
            for (std::size_t i = 0; i < da.data.size(); ++i) {
                dgf.data[i] = da.data[i] * linl.data[i];
                dlin.data[i] = da.data[i] * (T(1) + gfl.data[i]);
            }
            Tensor<T> dz1 = film_scale[static_cast<std::size_t>(l)].backward(dgf);
            Tensor<T> dz2 = film_shift[static_cast<std::size_t>(l)].backward(da);
            as_vector(dzx) += as_vector(dz1);
            as_vector(dzx) += as_vector(dz2);
            dh = hidden[static_cast<std::size_t>(l)].backward(dlin);
        }
        gabor[0].backward(dh);
    }

    // Single-point decode with optional analytic Jacobian w.r.t. x_norm.
    // z_x is held fixed (it is patch-constant around the point).
    void decode_point(const T* x_norm, const T* zx, T* out,
                      T* jac /* [out_channels,3] or null */) const {
        const int w = cfg.width;
        std::vector<T> g(static_cast<std::size_t>(w)), dg(static_cast<std::size_t>(3 * w));
        std::vector<T> h(static_cast<std::size_t>(w)), dh(static_cast<std::size_t>(3 * w), T(0));
        gabor[0].point(x_norm, g.data(), jac ? dg.data() : nullptr);
        h = g;
        if (jac)
            for (int i = 0; i < w; ++i)
                for (int d = 0; d < 3; ++d) dh[3 * i + d] = dg[3 * i + d];

        std::vector<T> lin(static_cast<std::size_t>(w)), dlin(static_cast<std::size_t>(3 * w));
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            const auto& wl = hidden[l].w->value;
            const auto& bl = hidden[l].b->value;
            for (int o = 0; o < w; ++o) {
                T acc = bl.data[o];
                const T* row = wl.ptr() + static_cast<std::size_t>(o) * w;
                for (int i = 0; i < w; ++i) acc += row[i] * h[i];
                lin[o] = acc;
                if (jac)
                    for (int d = 0; d < 3; ++d) {
                        T acc_d = T(0);
                        for (int i = 0; i < w; ++i) acc_d += row[i] * dh[3 * i + d];
                        dlin[3 * o + d] = acc_d;
                    }
            }
            // FiLM from zx
            const auto& ws = film_scale[l].w->value;
            const auto& bs = film_scale[l].b->value;
            const auto& wt = film_shift[l].w->value;
            const auto& bt = film_shift[l].b->value;
            const int c = cfg.latent_channels;
            gabor[l + 1].point(x_norm, g.data(), jac ? dg.data() : nullptr);
            for (int o = 0; o < w; ++o) {
                T s = bs.data[o], t = bt.data[o];
                const T* srow = ws.ptr() + static_cast<std::size_t>(o) * c;
                const T* trow = wt.ptr() + static_cast<std::size_t>(o) * c;
                for (int i = 0; i < c; ++i) {
                    s += srow[i] * zx[i];
                    t += trow[i] * zx[i];
                }
                T a = (T(1) + s) * lin[o] + t;
                h[o] = a * g[o];
                if (jac)
                    for (int d = 0; d < 3; ++d)
                        dh[3 * o + d] =
                            (T(1) + s) * dlin[3 * o + d] * g[o] + a * dg[3 * o + d];
            }
        }
        const auto& hw = head.w->value;
        const auto& hb = head.b->value;
        for (int o = 0; o < cfg.out_channels; ++o) {
            T acc = hb.data[o];
            const T* row = hw.ptr() + static_cast<std::size_t>(o) * w;
            for (int i = 0; i < w; ++i) acc += row[i] * h[i];
            T y = T(1) / (T(1) + std::exp(-acc));
            out[o] = y;
            if (jac)
                for (int d = 0; d < 3; ++d) {
                    T acc_d = T(0);
                    for (int i = 0; i < w; ++i) acc_d += row[i] * dh[3 * i + d];
                    jac[3 * o + d] = y * (T(1) - y) * acc_d;
                }
        }
    }
};

// decode at one world position through the latent grid
template <typename T>
std::vector<T> decode_at(const MfnDecoder<T>& dec, const LatentGrid<T>& grid, const Vec3& world,
                         Tensor<T>* jac_world = nullptr) {
    Vec3 xn = grid.frame.to_norm(world);
    std::vector<T> zx = lookup_modulation(grid, xn);
    T x[3] = {static_cast<T>(xn.x), static_cast<T>(xn.y), static_cast<T>(xn.z)};
    std::vector<T> out(static_cast<std::size_t>(dec.cfg.out_channels));
    if (jac_world) {
        *jac_world = Tensor<T>({dec.cfg.out_channels, 3});
        dec.decode_point(x, zx.data(), out.data(), jac_world->ptr());
        // chain rule from normalized to world coordinates
        T scale = static_cast<T>(2.0 / grid.frame.extent);
        for (auto& v : jac_world->data) v *= scale;
    } else {
        dec.decode_point(x, zx.data(), out.data(), nullptr);
    }
    return out;
}

template <typename T>
Tensor<T> grid_to_tensor(const DensityGrid& g) {
    const int s = g.spec.side();
    Tensor<T> out({g.spec.channels, s, s, s});
    for (std::size_t i = 0; i < g.values.size(); ++i) out.data[i] = static_cast<T>(g.values[i]);
    return out;
}

// Decode at every voxel center of `spec` placed at `origin`.
template <typename T>
DensityGrid render(MfnDecoder<T>& dec, const LatentGrid<T>& grid, const GridSpec& spec,
                   const Vec3& origin) {
    spec.validate();
    const int s = spec.side();
    DensityGrid out;
    out.spec = spec;
    out.origin = origin;
    out.values.assign(static_cast<std::size_t>(spec.channels) * s * s * s, 0.0);

    const int chunk = 8192;
    std::vector<std::int64_t> flat;  // voxel linear index per row
    flat.reserve(chunk);
    Tensor<T> xn({chunk, 3});
    Tensor<T> zx;
    std::vector<std::int64_t> cells;

    std::int64_t v = 0;
    const std::int64_t total = static_cast<std::int64_t>(s) * s * s;
    while (v < total) {
        int n = static_cast<int>(std::min<std::int64_t>(chunk, total - v));
        xn.shape = {n, 3};
        xn.data.resize(static_cast<std::size_t>(n) * 3);
        flat.clear();
        for (int r = 0; r < n; ++r) {
            std::int64_t lin = v + r;
            int i = static_cast<int>(lin / (s * s));
            int j = static_cast<int>((lin / s) % s);
            int k = static_cast<int>(lin % s);
            Vec3 world = origin + Vec3{i * spec.resolution, j * spec.resolution,
                                       k * spec.resolution};
            Vec3 norm = grid.frame.to_norm(world);
            xn.data[3 * r + 0] = static_cast<T>(norm.x);
            xn.data[3 * r + 1] = static_cast<T>(norm.y);
            xn.data[3 * r + 2] = static_cast<T>(norm.z);
            flat.push_back(lin);
        }
        gather_modulation(grid, xn, zx, cells);
        Tensor<T> y = dec.forward(xn, zx);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < spec.channels; ++c)
                out.values[static_cast<std::size_t>(c) * total + flat[static_cast<std::size_t>(r)]] =
                    static_cast<double>(y.data[static_cast<std::size_t>(r) * dec.cfg.out_channels + c]);
        v += n;
    }
    return out;
}

}  // namespace fieldgen
