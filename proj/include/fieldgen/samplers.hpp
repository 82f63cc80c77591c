#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fieldgen/denoiser.hpp"

namespace fieldgen {

// A denoiser evaluable at any (y, sigma): either the learned bundle with fixed
// conditioning, or an analytic posterior mean used as a test oracle.
struct ScoreSource {
    std::function<Tensor<double>(const Tensor<double>&, double)> denoise;
};

// s = (zhat - y) / sigma^2, the denoiser-to-score identity.
inline Tensor<double> score(const ScoreSource& source, const Tensor<double>& y, double sigma) {
    if (sigma <= 0.0) throw ConfigError("score requires sigma > 0");
    Tensor<double> zhat = source.denoise(y, sigma);
    if (!zhat.same_shape(y)) throw ConfigError("score: denoiser changed the shape");
    if (!all_finite(zhat)) throw NumericalError("non-finite denoiser output in score");
    Tensor<double> s(y.shape);
    const double inv = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < s.data.size(); ++i)
        s.data[i] = (zhat.data[i] - y.data[i]) * inv;
    return s;
}

inline ScoreSource learned_score_source(DenoiserBundle<double>& bundle, Tensor<double> z_tar,
                                        int row) {
    return {[&bundle, z_tar = std::move(z_tar), row](const Tensor<double>& y, double sigma) {
        return precondition_denoise(bundle, y, z_tar, sigma, row);
    }};
}

// Posterior mean for z ~ N(mu, prior_var I): (prior_var y + sigma^2 mu) / (prior_var + sigma^2).
inline ScoreSource gaussian_score_source(Tensor<double> mu, double prior_var = 1.0) {
    return {[mu = std::move(mu), prior_var](const Tensor<double>& y, double sigma) {
        Tensor<double> out(y.shape);
        const double s2 = sigma * sigma;
        const double denom = prior_var + s2;
        for (std::size_t i = 0; i < y.data.size(); ++i)
            out.data[i] = (prior_var * y.data[i] + s2 * mu.data[i]) / denom;
        return out;
    }};
}

inline ScoreSource point_score_source(Tensor<double> z0) {
    return {[z0 = std::move(z0)](const Tensor<double>& y, double) {
        (void)y;
        return z0;
    }};
}

// Two symmetric unit-variance modes at +/- mode*1; posterior mean is the
// responsibility-weighted blend of the per-mode Gaussian posteriors.
inline ScoreSource mixture_score_source(double mode) {
    return {[mode](const Tensor<double>& y, double sigma) {
        const double s2 = sigma * sigma;
        const double var = 1.0 + s2;
        double dplus = 0.0, dminus = 0.0;
        for (double v : y.data) {
            dplus += (v - mode) * (v - mode);
            dminus += (v + mode) * (v + mode);
        }
        const double delta = (dminus - dplus) / (2.0 * var);
        const double wplus = 1.0 / (1.0 + std::exp(-delta));
        Tensor<double> out(y.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            double pplus = (y.data[i] + s2 * mode) / var;
            double pminus = (y.data[i] - s2 * mode) / var;
            out.data[i] = wplus * pplus + (1.0 - wplus) * pminus;
        }
        return out;
    }};
}

struct SamplerConfig {
    // diffusion
    int n_steps = 128;
    double sigma_min = 0.01;
    double sigma_max = 10.0;
    double rho = 7.0;
    double s_churn = 30.0;
    double s_min = 5.0;
    double s_max = 7.0;
    double s_noise = 1.003;
    double temperature = 0.5;
    // walk-jump
    double wjs_sigma = 7.0;
    int wjs_m = 16;
    int wjs_steps = 50;
    double gamma = 1.0;
    double delta = 3.5;
    double wjs_noise_scale = 1.0;  // 0 turns the walk into deterministic dynamics

    void validate() const {
        if (n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
        if (!(sigma_min < sigma_max)) throw ConfigError("sampler: need sigma_min < sigma_max");
        if (sigma_min <= 0.0) throw ConfigError("sampler: sigma_min must be positive");
        if (temperature <= 0.0 || temperature > 1.0)
            throw ConfigError("sampler: temperature must lie in (0, 1]");
        if (wjs_m < 1) throw ConfigError("sampler: wjs_m must be >= 1");
        if (wjs_steps < 1) throw ConfigError("sampler: wjs_steps must be >= 1");
        if (gamma <= 0.0) throw ConfigError("sampler: gamma must be > 0");
        if (delta <= 0.0) throw ConfigError("sampler: delta must be > 0");
        if (wjs_sigma <= 0.0) throw ConfigError("sampler: wjs_sigma must be > 0");
    }
};

// sigma_i = (smax^(1/rho) + (i/(N-1))(smin^(1/rho) - smax^(1/rho)))^rho, i < N;
// sigma_N = 0. Endpoints are pinned exactly rather than round-tripped through pow.
inline std::vector<double> edm_sigma_schedule(int n, double sigma_min, double sigma_max,
                                              double rho) {
    if (n < 1) throw ConfigError("edm_sigma_schedule: n must be >= 1");
    std::vector<double> sigmas(static_cast<std::size_t>(n) + 1, 0.0);
    sigmas[0] = sigma_max;
    if (n > 1) {
        const double a = std::pow(sigma_max, 1.0 / rho);
        const double b = std::pow(sigma_min, 1.0 / rho);
        for (int i = 1; i + 1 < n; ++i)
            sigmas[static_cast<std::size_t>(i)] =
                std::pow(a + (static_cast<double>(i) / (n - 1)) * (b - a), rho);
        sigmas[static_cast<std::size_t>(n) - 1] = sigma_min;
    }
    sigmas[static_cast<std::size_t>(n)] = 0.0;
    return sigmas;
}

// Stochastic sampler: churned Euler steps along dy/dsigma = -sigma * s(y, sigma)
// with a 2nd-order Heun correction except onto sigma = 0. The temperature
// scales every noise injection (the initial draw and the churn noise).
//
// RNG streams: initial draw (seed, 0xed30); churn at step i (seed, 0xed31, i).
inline Tensor<double> edm_sample(const ScoreSource& source, const SamplerConfig& cfg,
                                 const std::vector<int>& shape, std::uint64_t seed) {
    cfg.validate();
    const std::vector<double> sigmas =
        edm_sigma_schedule(cfg.n_steps, cfg.sigma_min, cfg.sigma_max, cfg.rho);

    Tensor<double> y(shape);
    Rng init = Rng::derive(seed, 0xed30);
    for (auto& v : y.data) v = sigmas[0] * cfg.temperature * init.normal();

    for (int i = 0; i < cfg.n_steps; ++i) {
        const double sigma = sigmas[static_cast<std::size_t>(i)];
        const double sigma_next = sigmas[static_cast<std::size_t>(i) + 1];

        double sigma_hat = sigma;
        if (cfg.s_churn > 0.0 && sigma >= cfg.s_min && sigma <= cfg.s_max) {
            const double gamma_c =
                std::min(cfg.s_churn / cfg.n_steps, std::sqrt(2.0) - 1.0);
            sigma_hat = sigma * (1.0 + gamma_c);
            const double amp =
                std::sqrt(sigma_hat * sigma_hat - sigma * sigma) * cfg.s_noise * cfg.temperature;
            Rng churn = Rng::derive(seed, 0xed31, static_cast<std::uint64_t>(i));
            for (auto& v : y.data) v += amp * churn.normal();
        }

        Tensor<double> s = score(source, y, sigma_hat);
        const double h = sigma_next - sigma_hat;
        if (sigma_next > 0.0) {
            Tensor<double> y_euler(shape);
            for (std::size_t k = 0; k < y.data.size(); ++k)
                y_euler.data[k] = y.data[k] + h * (-sigma_hat * s.data[k]);
            Tensor<double> s2 = score(source, y_euler, sigma_next);
            for (std::size_t k = 0; k < y.data.size(); ++k)
                y.data[k] += h * 0.5 * (-sigma_hat * s.data[k] - sigma_next * s2.data[k]);
        } else {
            for (std::size_t k = 0; k < y.data.size(); ++k)
                y.data[k] += h * (-sigma_hat * s.data[k]);
        }
        if (!all_finite(y))
            throw NumericalError("non-finite sampler state at step " + std::to_string(i) + " of " +
                                 std::to_string(cfg.n_steps) + " (sigma " +
                                 std::to_string(sigma_hat) + ")");
    }
    return y;
}

using ForceFn = std::function<Tensor<double>(const Tensor<double>&)>;

// Underdamped Langevin (unit mass, unit temperature), B-A-O-A-B splitting with
// the exact Ornstein-Uhlenbeck O-step. Velocity starts at rest. When given,
// `trajectory` receives the position after every step.
inline Tensor<double> baoab_walk(const ForceFn& force, const SamplerConfig& cfg,
                                 std::uint64_t seed, Tensor<double> y,
                                 std::vector<Tensor<double>>* trajectory = nullptr) {
    cfg.validate();
    const double half = 0.5 * cfg.delta;
    const double c1 = std::exp(-cfg.gamma * cfg.delta);
    const double c2 = std::sqrt(1.0 - c1 * c1) * cfg.wjs_noise_scale;
    Rng rng = Rng::derive(seed, 0xba0);

    Tensor<double> v(y.shape);
    Tensor<double> f = force(y);
    for (int step = 0; step < cfg.wjs_steps; ++step) {
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            v.data[i] += half * f.data[i];
            y.data[i] += half * v.data[i];
            v.data[i] = c1 * v.data[i] + c2 * rng.normal();
            y.data[i] += half * v.data[i];
        }
        f = force(y);
        for (std::size_t i = 0; i < y.data.size(); ++i) v.data[i] += half * f.data[i];
        if (!all_finite(y) || !all_finite(v))
            throw NumericalError("non-finite walk state at step " + std::to_string(step) + " of " +
                                 std::to_string(cfg.wjs_steps));
        if (trajectory) trajectory->push_back(y);
    }
    return y;
}

inline Tensor<double> wjs_walk(const ScoreSource& source, double sigma, const SamplerConfig& cfg,
                               std::uint64_t seed, const Tensor<double>& y_init,
                               std::vector<Tensor<double>>* trajectory = nullptr) {
    return baoab_walk([&](const Tensor<double>& y) { return score(source, y, sigma); }, cfg, seed,
                      y_init, trajectory);
}

// Single-step denoising from the noisy point; no randomness.
inline Tensor<double> wjs_jump(const ScoreSource& source, const Tensor<double>& y, double sigma) {
    if (sigma <= 0.0) throw ConfigError("wjs_jump requires sigma > 0");
    Tensor<double> zhat = source.denoise(y, sigma);
    if (!all_finite(zhat)) throw NumericalError("non-finite denoiser output in jump");
    return zhat;
}

// Sequential multi-measurement walk-jump. Measurement k walks y_k under the
// conditional score (1/k) s(mean, sigma/sqrt(k)) + (mean - y_k)/sigma^2 with
// mean the running average over y_1..y_k, warm-starting y_k at y_{k-1}; the
// final jump denoises the mean at sigma/sqrt(m).
//
// RNG streams: y_1 init (seed, 0x33a1); walk for measurement k (seed, 0x3a1, k).
inline Tensor<double> wjs_m_sample(const ScoreSource& source, const SamplerConfig& cfg,
                                   const std::vector<int>& shape, std::uint64_t seed,
                                   std::vector<Tensor<double>>* measurements = nullptr) {
    cfg.validate();
    const double sigma = cfg.wjs_sigma;
    const double inv_s2 = 1.0 / (sigma * sigma);

    Tensor<double> y(shape);
    Rng init = Rng::derive(seed, 0x33a1);
    const double init_std = std::sqrt(sigma * sigma + 1.0);
    for (auto& v : y.data) v = init_std * init.normal();

    Tensor<double> sum(shape);
    for (int k = 1; k <= cfg.wjs_m; ++k) {
        const double kd = static_cast<double>(k);
        const double sigma_k = sigma / std::sqrt(kd);
        ForceFn force = [&](const Tensor<double>& yk) {
            Tensor<double> mean(yk.shape);
            for (std::size_t i = 0; i < yk.data.size(); ++i)
                mean.data[i] = (sum.data[i] + yk.data[i]) / kd;
            Tensor<double> s = score(source, mean, sigma_k);
            for (std::size_t i = 0; i < s.data.size(); ++i)
                s.data[i] = s.data[i] / kd + (mean.data[i] - yk.data[i]) * inv_s2;
            return s;
        };
        y = baoab_walk(force, cfg, Rng::derive(seed, 0x3a1, static_cast<std::uint64_t>(k)).u64(),
                       y);
        for (std::size_t i = 0; i < y.data.size(); ++i) sum.data[i] += y.data[i];
        if (measurements) measurements->push_back(y);
    }

    Tensor<double> mean(shape);
    for (std::size_t i = 0; i < mean.data.size(); ++i)
        mean.data[i] = sum.data[i] / static_cast<double>(cfg.wjs_m);
    return wjs_jump(source, mean, sigma / std::sqrt(static_cast<double>(cfg.wjs_m)));
}

// Per-chain conditioning rotation: chain 0 keeps the input frame; other chains
// rotate the target about its bounding-box center. unrotate() maps recovered
// coordinates back into the chain-0 frame.
struct ChainFrame {
    Mat3 rotation;
    Vec3 center;
    Molecule target;
};

ChainFrame rotate_condition_per_chain(const Molecule& target, int chain_index,
                                      std::uint64_t seed);

inline Vec3 unrotate(const ChainFrame& frame, const Vec3& x) {
    return frame.rotation.transpose().apply(x - frame.center) + frame.center;
}

// Runs fn(chain) for chain in [0, chains) across at most `threads` workers.
// fn must be safe to call concurrently for distinct chains.
std::vector<Tensor<double>> run_chains(int chains, int threads,
                                       const std::function<Tensor<double>(int)>& fn);

void write_sampler_manifest(const std::string& path, const SamplerConfig& cfg,
                            const std::string& mode, std::uint64_t seed, int chains,
                            const std::vector<Mat3>& rotations, double wall_s);

}  // namespace fieldgen
