#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fieldgen/vae.hpp"

namespace fieldgen {

// Log-normal noise-level distribution for training.
struct NoiseSchedule {
    double p_mean = 1.2;
    double p_std = 0.8;
};

inline double sample_sigma(const NoiseSchedule& s, std::uint64_t seed) {
    if (s.p_std <= 0.0) throw ConfigError("noise schedule requires p_std > 0");
    Rng rng = Rng::derive(seed, 0x519);
    return std::exp(s.p_mean + s.p_std * rng.normal());
}

// Per-channel standardization over the spatial cells of a [C, ...] map, with
// a variance floor so degenerate (constant) channels stay finite.
template <typename T>
Tensor<T> standardize_channels(const Tensor<T>& x, Tensor<T>& inv_std_out) {
    const int c = x.shape[0];
    const std::int64_t n = x.numel() / c;
    Tensor<T> y(x.shape);
    inv_std_out = Tensor<T>({c});
    for (int ch = 0; ch < c; ++ch) {
        const T* src = x.ptr() + ch * n;
        double m = 0.0;
        for (std::int64_t i = 0; i < n; ++i) m += src[i];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            double d = src[i] - m;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double s = std::sqrt(var + 1e-6);
        inv_std_out.data[ch] = static_cast<T>(1.0 / s);
        T* dst = y.ptr() + ch * n;
        for (std::int64_t i = 0; i < n; ++i)
            dst[i] = static_cast<T>((src[i] - m) / s);
    }
    return y;
}

template <typename T>
Tensor<T> standardize_channels_backward(const Tensor<T>& dy, const Tensor<T>& y,
                                        const Tensor<T>& inv_std) {
    const int c = y.shape[0];
    const std::int64_t n = y.numel() / c;
    Tensor<T> dx(y.shape);
    for (int ch = 0; ch < c; ++ch) {
        const T* dyp = dy.ptr() + ch * n;
        const T* yp = y.ptr() + ch * n;
        double mean_dy = 0.0, mean_dyy = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            mean_dy += dyp[i];
            mean_dyy += dyp[i] * static_cast<double>(yp[i]);
        }
        mean_dy /= static_cast<double>(n);
        mean_dyy /= static_cast<double>(n);
        T* dxp = dx.ptr() + ch * n;
        for (std::int64_t i = 0; i < n; ++i)
            dxp[i] = static_cast<T>((dyp[i] - mean_dy - yp[i] * mean_dyy) * inv_std.data[ch]);
    }
    return dx;
}

struct TargetEncConfig {
    int in_channels = kTargetChannelCount;
    int width = 32;
    int latent_channels = 16;
};

// Feature extractor for the conditioning grid: stem, strided downsample,
// residual block, projection, then per-channel standardization.
template <typename T>
struct TargetEncoder {
    TargetEncConfig cfg;
    Conv3dLayer<T> conv1, down, proj;
    ResBlock<T> res;
    Tensor<T> h1_c, std_y, inv_std;

    TargetEncoder() = default;
    TargetEncoder(ParamStore<T>& ps, const TargetEncConfig& config, Rng& rng) : cfg(config) {
        conv1 = Conv3dLayer<T>(ps, "tenc.conv1", {cfg.in_channels, cfg.width, 3, 1, 1}, rng);
        down = Conv3dLayer<T>(ps, "tenc.down", {cfg.width, cfg.width, 3, 2, 1}, rng);
        res = ResBlock<T>(ps, "tenc.res", cfg.width, cfg.width, rng);
        proj = Conv3dLayer<T>(ps, "tenc.proj", {cfg.width, cfg.latent_channels, 3, 1, 1}, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        h1_c = conv1.forward(x);
        Tensor<T> h = ops::silu(h1_c);
        h = down.forward(h);
        h = res.forward(h);
        h = proj.forward(h);
        std_y = standardize_channels(h, inv_std);
        return std_y;
    }

    void backward(const Tensor<T>& dz) {
        Tensor<T> dh = standardize_channels_backward(dz, std_y, inv_std);
        dh = proj.backward(dh);
        dh = res.backward(dh);
        dh = down.backward(dh);
        Tensor<T> da = ops::silu_backward(dh, h1_c);
        conv1.backward(da);
    }
};

struct UnetConfig {
    int latent_channels = 16;
    int base = 64;
    int deep = 128;
    int emb_dim = 128;
    int modalities = 3;  // embedding table gets one extra "dropped" row
};

// Two-resolution U-Net conditioned through FiLM on a shared embedding built
// from the noise level and the modality token.
template <typename T>
struct Unet {
    UnetConfig cfg;
    Conv3dLayer<T> stem, down, up_conv, head;
    ResBlockFiLM<T> e1, e2, mid, d1;
    Attention<T> attn;
    LinearLayer<T> emb1, emb2;
    EmbeddingTable<T> modality;

    Tensor<T> b1_c, emb_c, cond_c, skip_c;
    std::vector<int> mid_shape;
    std::int64_t up_numel = 0;

    Unet() = default;
    Unet(ParamStore<T>& ps, const UnetConfig& config, Rng& rng) : cfg(config) {
        const int in_c = 2 * cfg.latent_channels;
        stem = Conv3dLayer<T>(ps, "unet.stem", {in_c, cfg.base, 3, 1, 1}, rng);
        e1 = ResBlockFiLM<T>(ps, "unet.e1", cfg.base, cfg.base, cfg.emb_dim, rng);
        down = Conv3dLayer<T>(ps, "unet.down", {cfg.base, cfg.deep, 3, 2, 1}, rng);
        e2 = ResBlockFiLM<T>(ps, "unet.e2", cfg.deep, cfg.deep, cfg.emb_dim, rng);
        attn = Attention<T>(ps, "unet.attn", cfg.deep, rng);
        mid = ResBlockFiLM<T>(ps, "unet.mid", cfg.deep, cfg.deep, cfg.emb_dim, rng);
        up_conv = Conv3dLayer<T>(ps, "unet.up", {cfg.deep, cfg.base, 3, 1, 1}, rng);
        d1 = ResBlockFiLM<T>(ps, "unet.d1", 2 * cfg.base, cfg.base, cfg.emb_dim, rng);
        head = Conv3dLayer<T>(ps, "unet.head", {cfg.base, cfg.latent_channels, 3, 1, 1}, rng,
                              /*zero_init=*/true);
        emb1 = LinearLayer<T>(ps, "unet.emb1", 1, cfg.emb_dim, rng);
        emb2 = LinearLayer<T>(ps, "unet.emb2", cfg.emb_dim, cfg.emb_dim, rng);
        modality = EmbeddingTable<T>(ps, "unet.modality", cfg.modalities + 1, cfg.emb_dim, rng);
    }

    // x is [2C, S, S, S]; t is the quarter-log noise level; row indexes the
    // modality table (cfg.modalities = the dropped-conditioning row).
    Tensor<T> forward(const Tensor<T>& x, double t, int row) {
        Tensor<T> tin({1, 1});
        tin.data[0] = static_cast<T>(t);
        b1_c = emb1.forward(tin);
        Tensor<T> a1 = ops::silu(b1_c);
        Tensor<T> b2 = emb2.forward(a1);
        Tensor<T> mrow = modality.forward(row);
        emb_c = b2;
        as_vector(emb_c) += as_vector(mrow);
        cond_c = ops::silu(emb_c);

        Tensor<T> h = stem.forward(x);
        skip_c = e1.forward(h, cond_c);
        h = down.forward(skip_c);
        h = e2.forward(h, cond_c);
        h = attn.forward(h);
        h = mid.forward(h, cond_c);
        mid_shape = h.shape;
        h = ops::upsample_nearest2(h);
        h = up_conv.forward(h);
        up_numel = h.numel();
        h = ops::concat_channels(h, skip_c);
        h = d1.forward(h, cond_c);
        return head.forward(h);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dcond({1, cfg.emb_dim});
        Tensor<T> dh = head.backward(dy);
        dh = d1.backward(dh, dcond);
        Tensor<T> dup(skip_c.shape), dskip(skip_c.shape);
        ops::split_channels_backward(dh, up_numel, dup, dskip);
        dup = up_conv.backward(dup);
        dup = ops::upsample_nearest2_backward(dup, mid_shape);
        dup = mid.backward(dup, dcond);
        dup = attn.backward(dup);
        dup = e2.backward(dup, dcond);
        dup = down.backward(dup);
        as_vector(dskip) += as_vector(dup);
        Tensor<T> dstem = e1.backward(dskip, dcond);
        Tensor<T> dx = stem.backward(dstem);

        Tensor<T> demb = ops::silu_backward(dcond, emb_c);
        modality.backward(demb);
        Tensor<T> da1 = emb2.backward(demb);
        Tensor<T> db1 = ops::silu_backward(da1, b1_c);
        emb1.backward(db1);
        return dx;
    }
};

// Dataset-level per-channel moments used to whiten latents for the denoiser.
template <typename T>
struct LatentStats {
    Tensor<T> mean, std;  // [C]
};

template <typename T>
LatentStats<T> compute_latent_stats(const std::vector<Tensor<T>>& latents) {
    if (latents.empty()) throw ConfigError("compute_latent_stats: empty latent set");
    const int c = latents[0].shape[0];
    const std::int64_t per = latents[0].numel() / c;
    LatentStats<T> st;
    st.mean = Tensor<T>({c});
    st.std = Tensor<T>({c});
    for (int ch = 0; ch < c; ++ch) {
        double m = 0.0, m2 = 0.0;
        std::int64_t n = 0;
        for (const Tensor<T>& z : latents) {
            const T* p = z.ptr() + ch * per;
            for (std::int64_t i = 0; i < per; ++i) {
                m += p[i];
                m2 += static_cast<double>(p[i]) * p[i];
                ++n;
            }
        }
        m /= static_cast<double>(n);
        double var = m2 / static_cast<double>(n) - m * m;
        if (var <= 0.0)
            throw NumericalError("latent channel " + std::to_string(ch) +
                                 " has zero variance; cannot normalize");
        st.mean.data[ch] = static_cast<T>(m);
        st.std.data[ch] = static_cast<T>(std::sqrt(var));
    }
    return st;
}

template <typename T>
Tensor<T> normalize_latent(const Tensor<T>& z, const LatentStats<T>& st) {
    const int c = z.shape[0];
    const std::int64_t per = z.numel() / c;
    Tensor<T> out(z.shape);
    for (int ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < per; ++i)
            out.data[ch * per + i] = (z.data[ch * per + i] - st.mean.data[ch]) / st.std.data[ch];
    return out;
}

template <typename T>
Tensor<T> denormalize_latent(const Tensor<T>& z, const LatentStats<T>& st) {
    const int c = z.shape[0];
    const std::int64_t per = z.numel() / c;
    Tensor<T> out(z.shape);
    for (int ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < per; ++i)
            out.data[ch * per + i] = z.data[ch * per + i] * st.std.data[ch] + st.mean.data[ch];
    return out;
}

// Denoiser with everything trained jointly: U-Net, target encoder, modality
// table, and the per-noise-level uncertainty head u(sigma).
template <typename T>
struct DenoiserBundle {
    UnetConfig cfg;
    TargetEncConfig tcfg;
    ParamStore<T> ps;
    Unet<T> unet;
    TargetEncoder<T> tenc;
    LinearLayer<T> u1, u2;
    LatentStats<T> stats;

    Tensor<T> u_h_c;

    DenoiserBundle(const UnetConfig& uc, const TargetEncConfig& tc, std::uint64_t seed)
        : cfg(uc), tcfg(tc) {
        if (tc.latent_channels != uc.latent_channels)
            throw ConfigError("target encoder and U-Net disagree on latent channels");
        Rng rng = Rng::derive(seed, 0xd4e);
        unet = Unet<T>(ps, cfg, rng);
        tenc = TargetEncoder<T>(ps, tcfg, rng);
        u1 = LinearLayer<T>(ps, "usig.l1", 1, 64, rng);
        u2 = LinearLayer<T>(ps, "usig.l2", 64, 1, rng, 0.0);
        stats.mean = Tensor<T>({uc.latent_channels});
        stats.std = Tensor<T>({uc.latent_channels});
        stats.std.fill(T(1));
    }
    DenoiserBundle(const DenoiserBundle&) = delete;
    DenoiserBundle& operator=(const DenoiserBundle&) = delete;

    double u_forward(double t) {
        Tensor<T> tin({1, 1});
        tin.data[0] = static_cast<T>(t);
        u_h_c = u1.forward(tin);
        Tensor<T> a = ops::silu(u_h_c);
        Tensor<T> out = u2.forward(a);
        return static_cast<double>(out.data[0]);
    }
    void u_backward(double du) {
        Tensor<T> dout({1, 1});
        dout.data[0] = static_cast<T>(du);
        Tensor<T> da = u2.backward(dout);
        Tensor<T> dh = ops::silu_backward(da, u_h_c);
        u1.backward(dh);
    }

    void save(Checkpoint& ck, const ParamStore<T>* ema = nullptr) const {
        save_params(ck, ps, "denoiser/");
        if (ema) save_params(ck, *ema, "ema/");
        ck.tensors["stats/mean"] = stats.mean.template cast<double>();
        ck.tensors["stats/std"] = stats.std.template cast<double>();
        ck.meta["denoiser.latent_channels"] = std::to_string(cfg.latent_channels);
        ck.meta["denoiser.modalities"] = std::to_string(cfg.modalities);
    }
    void load(const Checkpoint& ck, bool use_ema) {
        load_params(ck, ps, use_ema && ck.tensors.count("ema/unet.stem.w") ? "ema/" : "denoiser/");
        stats.mean = ck.tensors.at("stats/mean").template cast<T>();
        stats.std = ck.tensors.at("stats/std").template cast<T>();
    }
};

// Conditioning features for a voxelized target, in the grid's own frame.
template <typename T>
LatentGrid<T> encode_target(DenoiserBundle<T>& bundle, const DensityGrid& target_grid) {
    if (target_grid.spec.channels != bundle.tcfg.in_channels)
        throw ConfigError("encode_target: grid channels do not match the encoder");
    LatentGrid<T> out;
    out.frame = LatentFrame::for_grid(target_grid.spec, target_grid.origin);
    out.values = bundle.tenc.forward(grid_to_tensor<T>(target_grid));
    return out;
}

// zhat = y/(sigma^2+1) + sigma/sqrt(sigma^2+1) * U, the skip/scale form the
// network is trained under.
template <typename T>
Tensor<T> precondition_combine(const Tensor<T>& y, const Tensor<T>& u, double sigma) {
    if (!y.same_shape(u)) throw ConfigError("precondition_combine shape mismatch");
    const double s2 = sigma * sigma;
    const T cy = static_cast<T>(1.0 / (s2 + 1.0));
    const T cu = static_cast<T>(sigma / std::sqrt(s2 + 1.0));
    Tensor<T> out(y.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = cy * y.data[i] + cu * u.data[i];
    return out;
}

// Full learned denoiser in normalized latent space. z_tar may be empty for
// dropped conditioning (a zero feature map is used).
template <typename T>
Tensor<T> precondition_denoise(DenoiserBundle<T>& bundle, const Tensor<T>& y,
                               const Tensor<T>& z_tar, double sigma, int row) {
    if (!all_finite(y)) throw NumericalError("non-finite denoiser input");
    if (sigma <= 0.0) throw ConfigError("precondition_denoise requires sigma > 0");
    const T cin = static_cast<T>(1.0 / std::sqrt(sigma * sigma + 1.0));
    Tensor<T> scaled(y.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) scaled.data[i] = y.data[i] * cin;
    Tensor<T> zt = z_tar.numel() ? z_tar : Tensor<T>(y.shape);
    Tensor<T> x = ops::concat_channels(scaled, zt);
    Tensor<T> u = bundle.unet.forward(x, 0.25 * std::log(sigma), row);
    return precondition_combine(y, u, sigma);
}

// mean over items of ((s^2+1)/s^2) * exp(-u) * L + u
inline double denoise_objective(const std::vector<double>& l_sigma,
                                const std::vector<double>& u_vals,
                                const std::vector<double>& sigmas) {
    if (l_sigma.size() != u_vals.size() || l_sigma.size() != sigmas.size() || l_sigma.empty())
        throw ConfigError("denoise_objective: mismatched batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < l_sigma.size(); ++i) {
        double s2 = sigmas[i] * sigmas[i];
        acc += ((s2 + 1.0) / s2) * std::exp(-u_vals[i]) * l_sigma[i] + u_vals[i];
    }
    return acc / static_cast<double>(l_sigma.size());
}

template <typename T>
struct DenoiseBatchItem {
    Tensor<T> z;       // normalized latent [C, L, L, L]
    Tensor<T> target;  // raw conditioning grid tensor [4, S, S, S]; empty = dropped
    int modality = 0;
    bool dropped = false;
};

// Forward-only objective over a batch: per-item noise from (seed, index).
template <typename T>
double denoise_loss(DenoiserBundle<T>& bundle, const std::vector<DenoiseBatchItem<T>>& items,
                    const std::vector<double>& sigmas, std::uint64_t seed) {
    std::vector<double> ls, us, sg;
    for (std::size_t b = 0; b < items.size(); ++b) {
        const auto& item = items[b];
        double sigma = sigmas[b];
        Rng erng = Rng::derive(seed, 0xe1, b);
        Tensor<T> y(item.z.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i)
            y.data[i] = item.z.data[i] + static_cast<T>(sigma * erng.normal());
        Tensor<T> zt;
        if (!item.dropped && item.target.numel()) zt = bundle.tenc.forward(item.target);
        int row = item.dropped ? bundle.cfg.modalities : item.modality;
        Tensor<T> zhat = precondition_denoise(bundle, y, zt, sigma, row);
        double l = 0.0;
        for (std::size_t i = 0; i < zhat.data.size(); ++i) {
            double d = static_cast<double>(zhat.data[i]) - static_cast<double>(item.z.data[i]);
            l += d * d;
        }
        ls.push_back(l);
        us.push_back(bundle.u_forward(0.25 * std::log(sigma)));
        sg.push_back(sigma);
    }
    return denoise_objective(ls, us, sg);
}

// One training step's gradient accumulation (no optimizer step): returns the
// objective. Noise levels and perturbations derive from step_seed and the
// item index, so a run is reproducible for any batch schedule.
template <typename T>
double denoiser_train_step(DenoiserBundle<T>& bundle,
                           const std::vector<DenoiseBatchItem<T>>& items,
                           const NoiseSchedule& schedule, std::uint64_t step_seed) {
    const double g = 1.0 / static_cast<double>(items.size());
    std::vector<double> ls, us, sg;
    for (std::size_t b = 0; b < items.size(); ++b) {
        const auto& item = items[b];
        const double sigma = sample_sigma(schedule, Rng::derive(step_seed, 0x51, b).u64());
        const double s2 = sigma * sigma;
        Rng erng = Rng::derive(step_seed, 0xe1, b);
        Tensor<T> y(item.z.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i)
            y.data[i] = item.z.data[i] + static_cast<T>(sigma * erng.normal());

        Tensor<T> zt;
        const bool conditioned = !item.dropped && item.target.numel();
        if (conditioned) zt = bundle.tenc.forward(item.target);
        const int row = item.dropped ? bundle.cfg.modalities : item.modality;

        const T cin = static_cast<T>(1.0 / std::sqrt(s2 + 1.0));
        Tensor<T> scaled(y.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) scaled.data[i] = y.data[i] * cin;
        Tensor<T> x = ops::concat_channels(scaled, zt.numel() ? zt : Tensor<T>(y.shape));
        Tensor<T> u_out = bundle.unet.forward(x, 0.25 * std::log(sigma), row);
        Tensor<T> zhat = precondition_combine(y, u_out, sigma);

        double l = 0.0;
        for (std::size_t i = 0; i < zhat.data.size(); ++i) {
            double d = static_cast<double>(zhat.data[i]) - static_cast<double>(item.z.data[i]);
            l += d * d;
        }
        const double uval = bundle.u_forward(0.25 * std::log(sigma));
        const double w = (s2 + 1.0) / s2;
        const double wexp = w * std::exp(-uval);

        // d(objective)/d(zhat) and the chain back through the combine scale
        const double cu = sigma / std::sqrt(s2 + 1.0);
        Tensor<T> du(zhat.shape);
        for (std::size_t i = 0; i < zhat.data.size(); ++i) {
            double d = static_cast<double>(zhat.data[i]) - static_cast<double>(item.z.data[i]);
            du.data[i] = static_cast<T>(g * wexp * 2.0 * d * cu);
        }
        Tensor<T> dx = bundle.unet.backward(du);
        if (conditioned) {
            Tensor<T> dscaled(y.shape), dzt(y.shape);
            ops::split_channels_backward(dx, scaled.numel(), dscaled, dzt);
            bundle.tenc.backward(dzt);
        }
        bundle.u_backward(g * (1.0 - wexp * l));

        ls.push_back(l);
        us.push_back(uval);
        sg.push_back(sigma);
    }
    return denoise_objective(ls, us, sg);
}

inline bool conditioning_dropped(std::uint64_t seed, std::int64_t step, int item, double rate) {
    return Rng::derive(seed, 0xd0, static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(item))
               .uniform_pos() < rate;
}

struct DenoiserTrainConfig {
    int batch = 16;
    int steps = 4000;
    AdamConfig adam{3e-4, 0.9, 0.999, 1e-8};
    double dropout = 0.1;
    NoiseSchedule schedule;
    EmaProfile ema;
    bool augment = true;
    double aug_translation = 1.0;
    GridSpec target_spec{16.0, 1.0, kTargetChannelCount};
    std::uint64_t seed = 0;
    bool resume = false;
};

struct TrainDenoiserResult {
    double final_loss = 0.0;
    std::int64_t steps = 0;
};

// Train against a codec: binders are encoded (reparameterized) on the fly with
// augmentation, targets voxelized around their own centers. Normalization
// statistics come from the dataset's posterior means before the first step.
TrainDenoiserResult train_denoiser(DenoiserBundle<float>& bundle, Ema<float>& ema,
                                   Codec<float>& codec, const std::vector<Complex>& dataset,
                                   const DenoiserTrainConfig& cfg, const std::string& out_dir,
                                   std::vector<double>* loss_trace = nullptr);

}  // namespace fieldgen
