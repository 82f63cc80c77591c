#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fieldgen/checkpoint.hpp"
#include "fieldgen/neural_field.hpp"

namespace fieldgen {

struct EncoderConfig {
    int in_channels = kElementCount;
    int stem_width = 32;
    std::vector<int> widths = {32, 64};
    std::vector<int> pool = {0, 0};  // 1 = 2x max-pool after that block
    int latent_channels = 16;

    int latent_side(int input_side) const {
        int s = input_side;
        for (int p : pool)
            if (p) s /= 2;
        return s;
    }
};

inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 4.0;

// CNN posterior encoder: stem conv + SiLU, residual blocks (optionally
// pooled), and two conv heads for the per-cell mean and log-std. The log-std
// is clamped to [-8, 4] so sigma stays in a sane range.
template <typename T>
struct Encoder {
    EncoderConfig cfg;
    Conv3dLayer<T> stem;
    std::vector<ResBlock<T>> blocks;
    Conv3dLayer<T> mu_head, ls_head;

    Tensor<T> stem_out;                               // pre-activation
    std::vector<std::vector<std::int64_t>> pool_arg;  // per pooled block
    std::vector<std::vector<int>> pool_in_shape;
    Tensor<T> ls_mask;

    Encoder() = default;
    Encoder(ParamStore<T>& ps, const EncoderConfig& config, Rng& rng) : cfg(config) {
        if (cfg.pool.size() != cfg.widths.size())
            throw ConfigError("encoder pool flags must match block count");
        stem = Conv3dLayer<T>(ps, "stem", {cfg.in_channels, cfg.stem_width, 3, 1, 1}, rng);
        int c = cfg.stem_width;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            blocks.emplace_back(ps, "block" + std::to_string(i), c, cfg.widths[i], rng);
            c = cfg.widths[i];
        }
        mu_head = Conv3dLayer<T>(ps, "mu_head", {c, cfg.latent_channels, 3, 1, 1}, rng);
        ls_head = Conv3dLayer<T>(ps, "ls_head", {c, cfg.latent_channels, 3, 1, 1}, rng);
    }

    // x is [in_channels, S, S, S]; returns (mu, log_std) as [C, L, L, L]
    std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x) {
        if (x.shape[0] != cfg.in_channels)
            throw ConfigError("encoder input has " + std::to_string(x.shape[0]) +
                              " channels, config expects " + std::to_string(cfg.in_channels));
        stem_out = stem.forward(x);
        Tensor<T> h = ops::silu(stem_out);
        pool_arg.assign(blocks.size(), {});
        pool_in_shape.assign(blocks.size(), {});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            h = blocks[i].forward(h);
            if (cfg.pool[i]) {
                pool_in_shape[i] = h.shape;
                h = ops::maxpool3d(h, 2, pool_arg[i]);
            }
        }
        Tensor<T> mu = mu_head.forward(h);
        Tensor<T> ls = ls_head.forward(h);
        ls_mask = Tensor<T>(ls.shape);
        for (std::size_t i = 0; i < ls.data.size(); ++i) {
            if (ls.data[i] < static_cast<T>(kLogStdMin)) {
                ls.data[i] = static_cast<T>(kLogStdMin);
            } else if (ls.data[i] > static_cast<T>(kLogStdMax)) {
                ls.data[i] = static_cast<T>(kLogStdMax);
            } else {
                ls_mask.data[i] = T(1);
            }
        }
        return {std::move(mu), std::move(ls)};
    }

    void backward(const Tensor<T>& dmu, const Tensor<T>& dls) {
        Tensor<T> dls_raw(dls.shape);
        for (std::size_t i = 0; i < dls.data.size(); ++i)
            dls_raw.data[i] = dls.data[i] * ls_mask.data[i];
        Tensor<T> dh = mu_head.backward(dmu);
        Tensor<T> dh2 = ls_head.backward(dls_raw);
        as_vector(dh) += as_vector(dh2);
        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
            auto iu = static_cast<std::size_t>(i);
            if (cfg.pool[iu]) dh = ops::maxpool3d_backward(dh, pool_arg[iu], pool_in_shape[iu]);
            dh = blocks[iu].backward(dh);
        }
        Tensor<T> dstem = ops::silu_backward(dh, stem_out);
        stem.backward(dstem);
    }
};

// KL(N(mu, diag(sigma^2)) || N(0, I)) summed over all components.
template <typename T>
double kl_term(const Tensor<T>& mu, const Tensor<T>& sigma) {
    if (!mu.same_shape(sigma)) throw ConfigError("kl_term shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.data.size(); ++i) {
        double m = static_cast<double>(mu.data[i]);
        double s = static_cast<double>(sigma.data[i]);
        acc += m * m + s * s - 1.0 - 2.0 * std::log(s);
    }
    return 0.5 * acc;
}

// z = mu + sigma .* eps with eps ~ N(0, I) from a seeded stream.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& sigma, std::uint64_t seed,
                         Tensor<T>* eps_out = nullptr) {
    if (!mu.same_shape(sigma)) throw ConfigError("reparameterize shape mismatch");
    Rng rng = Rng::derive(seed, 0x2e9a);
    Tensor<T> z(mu.shape);
    if (eps_out) *eps_out = Tensor<T>(mu.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        T e = static_cast<T>(rng.normal());
        if (eps_out) eps_out->data[i] = e;
        z.data[i] = mu.data[i] + sigma.data[i] * e;
    }
    return z;
}

struct CoordSampleConfig {
    double near_fraction = 0.5;
    double near_radius = 1.5;  // Angstrom, around uniformly chosen atoms
    double extent = 16.0;      // uniform samples cover this box
    Vec3 center{};
};

// Monte Carlo coordinates for the reconstruction integral: a fraction near
// atom centers (uniform in a ball, clamped into the box), the rest uniform.
inline std::vector<Vec3> sample_field_coords(const Molecule& m, int count,
                                             const CoordSampleConfig& cfg, Rng& rng) {
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(count));
    const double half = cfg.extent / 2.0;
    const Vec3 lo = cfg.center - Vec3{half, half, half};
    int near = m.atoms.empty() ? 0
                               : static_cast<int>(std::lround(cfg.near_fraction * count));
    for (int i = 0; i < count; ++i) {
        Vec3 p;
        if (i < near) {
            const Atom& a = m.atoms[rng.uniform_int(static_cast<int>(m.atoms.size()))];
            Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
            double n = dir.norm();
            if (n < 1e-12) dir = {1.0, 0.0, 0.0}, n = 1.0;
            double r = cfg.near_radius * std::cbrt(rng.uniform_pos());
            p = a.position + dir * (r / n);
            p.x = std::clamp(p.x, lo.x, lo.x + cfg.extent);
            p.y = std::clamp(p.y, lo.y, lo.y + cfg.extent);
            p.z = std::clamp(p.z, lo.z, lo.z + cfg.extent);
        } else {
            p = {lo.x + rng.uniform_pos() * cfg.extent, lo.y + rng.uniform_pos() * cfg.extent,
                 lo.z + rng.uniform_pos() * cfg.extent};
        }
        out.push_back(p);
    }
    return out;
}

using FieldFn = std::function<Channels(const Vec3&)>;

// Monte Carlo estimate of the mean squared field error, seeded coordinates.
inline double recon_loss_fn(const FieldFn& predict, const Molecule& binder, int count,
                            const CoordSampleConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0x5ec0);
    std::vector<Vec3> coords = sample_field_coords(binder, count, cfg, rng);
    double acc = 0.0;
    for (const Vec3& p : coords) {
        Channels pred = predict(p);
        Channels truth = occupancy(binder, p);
        for (std::size_t c = 0; c < pred.size(); ++c) {
            double d = pred[c] - truth[c];
            acc += d * d;
        }
    }
    return acc / (static_cast<double>(count) * static_cast<double>(kElementCount));
}

template <typename T>
double recon_loss(const MfnDecoder<T>& dec, const LatentGrid<T>& z, const Molecule& binder,
                  int count, const CoordSampleConfig& cfg, std::uint64_t seed) {
    return recon_loss_fn(
        [&](const Vec3& p) {
            auto y = decode_at(dec, z, p);
            Channels ch{};
            for (std::size_t c = 0; c < ch.size() && c < y.size(); ++c) ch[c] = y[c];
            return ch;
        },
        binder, count, cfg, seed);
}

// Spatial latent codec: posterior encoder plus neural-field decoder, each with
// its own parameter store so they can be stepped and checkpointed separately.
template <typename T>
struct Codec {
    EncoderConfig enc_cfg;
    MfnConfig dec_cfg;
    GridSpec input_spec{16.0, 2.0, kElementCount};
    ParamStore<T> enc_ps, dec_ps;
    Encoder<T> encoder;
    MfnDecoder<T> decoder;

    Codec(const EncoderConfig& ec, const MfnConfig& dc, const GridSpec& in_spec,
          std::uint64_t seed)
        : enc_cfg(ec), dec_cfg(dc), input_spec(in_spec) {
        if (ec.latent_channels != dc.latent_channels)
            throw ConfigError("encoder and decoder disagree on latent channels");
        input_spec.validate();
        Rng erng = Rng::derive(seed, 0xe2c);
        encoder = Encoder<T>(enc_ps, enc_cfg, erng);
        Rng drng = Rng::derive(seed, 0xdec);
        decoder = MfnDecoder<T>(dec_ps, dec_cfg, drng);
    }
    Codec(const Codec&) = delete;
    Codec& operator=(const Codec&) = delete;

    int latent_side() const { return enc_cfg.latent_side(input_spec.side()); }
    LatentFrame frame() const {
        return LatentFrame::for_grid(input_spec, centered_origin(input_spec));
    }

    // deterministic posterior parameters for a binder in the standard box
    std::pair<LatentGrid<T>, LatentGrid<T>> encode(const Molecule& binder) {
        DensityGrid g = voxelize(binder, input_spec, centered_origin(input_spec));
        Tensor<T> x = grid_to_tensor<T>(g);
        auto [mu, ls] = encoder.forward(x);
        LatentGrid<T> mg(enc_cfg.latent_channels, latent_side(), frame());
        mg.values = std::move(mu);
        mg.values.shape = {enc_cfg.latent_channels, latent_side(), latent_side(), latent_side()};
        LatentGrid<T> sg(enc_cfg.latent_channels, latent_side(), frame());
        sg.values = std::move(ls);
        for (auto& v : sg.values.data) v = std::exp(v);
        sg.values.shape = mg.values.shape;
        return {std::move(mg), std::move(sg)};
    }

    void save(const std::string& path, std::map<std::string, std::string> extra_meta = {}) const {
        Checkpoint ck;
        save_params(ck, enc_ps, "encoder/");
        save_params(ck, dec_ps, "decoder/");
        ck.meta = std::move(extra_meta);
        ck.meta["codec.latent_channels"] = std::to_string(enc_cfg.latent_channels);
        ck.meta["codec.latent_side"] = std::to_string(latent_side());
        ck.meta["codec.depth"] = std::to_string(dec_cfg.depth);
        ck.meta["codec.width"] = std::to_string(dec_cfg.width);
        ck.save(path);
    }
    void load(const Checkpoint& ck) {
        load_params(ck, enc_ps, "encoder/");
        load_params(ck, dec_ps, "decoder/");
    }
};

struct VaeConfig {
    double beta = 1e-5;
    int coords_per_step = 4096;  // split across the batch
    CoordSampleConfig coord;
    int batch = 16;
    int epochs = 10;
    AdamConfig adam;
    bool augment = true;
    double aug_translation = 1.0;
    std::uint64_t seed = 0;
    bool resume = false;
};

struct VaeItemStats {
    double recon = 0.0;
    double kl = 0.0;
};

// Forward and backward for one molecule: encode, reparameterize, decode at
// sampled coordinates against the analytic field, and push gradients of
// grad_scale * (recon + beta * kl) into both parameter stores.
template <typename T>
VaeItemStats vae_item_loss(Codec<T>& codec, const Molecule& binder, const VaeConfig& cfg,
                           int coords, std::uint64_t eps_seed, std::uint64_t coord_seed,
                           double grad_scale) {
    DensityGrid g = voxelize(binder, codec.input_spec, centered_origin(codec.input_spec));
    Tensor<T> x = grid_to_tensor<T>(g);
    auto [mu, ls] = codec.encoder.forward(x);

    Tensor<T> sigma(ls.shape);
    for (std::size_t i = 0; i < ls.data.size(); ++i) sigma.data[i] = std::exp(ls.data[i]);
    Tensor<T> eps;
    Tensor<T> z = reparameterize(mu, sigma, eps_seed, &eps);

    const int side = codec.latent_side();
    LatentGrid<T> zg(codec.enc_cfg.latent_channels, side, codec.frame());
    zg.values.data = z.data;

    Rng crng = Rng::derive(coord_seed, 0x5ec0);
    std::vector<Vec3> pts = sample_field_coords(binder, coords, cfg.coord, crng);
    Tensor<T> xn({coords, 3}), target({coords, codec.dec_cfg.out_channels});
    for (int i = 0; i < coords; ++i) {
        Vec3 nrm = zg.frame.to_norm(pts[static_cast<std::size_t>(i)]);
        xn.data[3 * i + 0] = static_cast<T>(nrm.x);
        xn.data[3 * i + 1] = static_cast<T>(nrm.y);
        xn.data[3 * i + 2] = static_cast<T>(nrm.z);
        Channels truth = occupancy(binder, pts[static_cast<std::size_t>(i)]);
        for (int c = 0; c < codec.dec_cfg.out_channels; ++c)
            target.data[static_cast<std::size_t>(i) * codec.dec_cfg.out_channels + c] =
                static_cast<T>(truth[static_cast<std::size_t>(c)]);
    }

    Tensor<T> zx;
    std::vector<std::int64_t> cells;
    gather_modulation(zg, xn, zx, cells);
    Tensor<T> y = codec.decoder.forward(xn, zx);

    double recon = 0.0;
    Tensor<T> dy(y.shape);
    const double inv = 1.0 / static_cast<double>(y.numel());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        double d = static_cast<double>(y.data[i]) - static_cast<double>(target.data[i]);
        recon += d * d * inv;
        dy.data[i] = static_cast<T>(2.0 * d * inv * grad_scale);
    }

    Tensor<T> dzx;
    codec.decoder.backward(dy, dzx);
    Tensor<T> dz({codec.enc_cfg.latent_channels, side, side, side});
    scatter_modulation_grad(dzx, cells, dz);

    double kl = kl_term(mu, sigma);
    Tensor<T> dmu(mu.shape), dls(ls.shape);
    const T bk = static_cast<T>(cfg.beta * grad_scale);
    for (std::size_t i = 0; i < mu.data.size(); ++i) {
        T s = sigma.data[i];
        dmu.data[i] = dz.data[i] + bk * mu.data[i];
        dls.data[i] = dz.data[i] * eps.data[i] * s + bk * (s * s - T(1));
    }
    codec.encoder.backward(dmu, dls);
    return {recon, kl};
}

struct TrainAeResult {
    double final_recon = 0.0;
    double final_kl = 0.0;
    std::int64_t steps = 0;
};

// Train the codec on the binders of a complex dataset. Writes per-epoch
// checkpoints and a CSV step log into out_dir when it is non-empty; appends
// the per-step total loss to loss_trace when given.
TrainAeResult train_autoencoder(Codec<float>& codec, const std::vector<Complex>& dataset,
                                const VaeConfig& cfg, const std::string& out_dir,
                                std::vector<double>* loss_trace = nullptr);

}  // namespace fieldgen
