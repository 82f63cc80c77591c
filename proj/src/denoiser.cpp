#include "fieldgen/denoiser.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace fieldgen {

namespace {

void fisher_yates(std::vector<int>& order, Rng& rng) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
        int j = rng.uniform_int(i + 1);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
}

}  // namespace

TrainDenoiserResult train_denoiser(DenoiserBundle<float>& bundle, Ema<float>& ema,
                                   Codec<float>& codec, const std::vector<Complex>& dataset,
                                   const DenoiserTrainConfig& cfg, const std::string& out_dir,
                                   std::vector<double>* loss_trace) {
    if (dataset.empty()) throw ConfigError("train_denoiser: empty dataset");
    if (cfg.batch < 1) throw ConfigError("train_denoiser: batch must be >= 1");
    if (codec.enc_cfg.latent_channels != bundle.cfg.latent_channels)
        throw ConfigError("train_denoiser: codec and denoiser latent channels differ");
    const int n = static_cast<int>(dataset.size());
    const int spe = (n + cfg.batch - 1) / cfg.batch;

    // Whitening statistics from the deterministic posterior means of the
    // un-augmented dataset.
    {
        std::vector<Tensor<float>> mus;
        mus.reserve(dataset.size());
        for (const Complex& cx : dataset) mus.push_back(codec.encode(cx.binder).first.values);
        bundle.stats = compute_latent_stats(mus);
    }

    Adam<float> opt(cfg.adam);
    std::int64_t start_step = 0;
    const std::string latest =
        out_dir.empty() ? std::string() : out_dir + "/denoiser_latest.ckpt";
    if (cfg.resume && !latest.empty() && std::filesystem::exists(latest)) {
        Checkpoint ck = Checkpoint::load(latest);
        load_params(ck, bundle.ps, "denoiser/");
        load_params(ck, ema.store(), "ema/");
        ema.set_steps(std::stoll(ck.meta.at("ema.steps")));
        load_adam(ck, opt, "opt/");
        start_step = std::stoll(ck.meta.at("train.step"));
        bundle.stats.mean = ck.tensors.at("stats/mean").cast<float>();
        bundle.stats.std = ck.tensors.at("stats/std").cast<float>();
    } else {
        ema.init_from(bundle.ps);
    }

    std::FILE* log = nullptr;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::string log_path = out_dir + "/train_denoiser.csv";
        log = std::fopen(log_path.c_str(), start_step > 0 ? "a" : "w");
        if (!log) throw IoError("cannot open " + log_path);
        if (start_step == 0) std::fprintf(log, "step,loss,wall_s\n");
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(static_cast<std::size_t>(n));
    int shuffled_epoch = -1;
    TrainDenoiserResult result;

    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const int epoch = static_cast<int>(step / spe);
        if (epoch != shuffled_epoch) {
            for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
            Rng srng = Rng::derive(cfg.seed, 0x0e1, static_cast<std::uint64_t>(epoch));
            fisher_yates(order, srng);
            shuffled_epoch = epoch;
        }

        std::vector<DenoiseBatchItem<float>> items;
        items.reserve(static_cast<std::size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const std::int64_t in_epoch = (step % spe) * cfg.batch + b;
            Complex cx = dataset[static_cast<std::size_t>(
                order[static_cast<std::size_t>(in_epoch % n)])];
            if (cfg.augment) {
                std::uint64_t aseed = Rng::derive(cfg.seed, 0xa09, static_cast<std::uint64_t>(step),
                                                  static_cast<std::uint64_t>(b))
                                          .u64();
                cx = augment(cx, aseed, cfg.aug_translation);
            }
            auto [mu, sg] = codec.encode(cx.binder);
            std::uint64_t eseed = Rng::derive(cfg.seed, 0xe95, static_cast<std::uint64_t>(step),
                                              static_cast<std::uint64_t>(b))
                                      .u64();
            Tensor<float> z = reparameterize(mu.values, sg.values, eseed);
            DenoiseBatchItem<float> item;
            item.z = normalize_latent(z, bundle.stats);
            item.modality = cx.modality;
            item.dropped = conditioning_dropped(cfg.seed, step, b, cfg.dropout);
            if (!item.dropped) {
                DensityGrid tg = voxelize(cx.target, cfg.target_spec,
                                          centered_origin(cfg.target_spec,
                                                          cx.target.bbox_center()));
                item.target = grid_to_tensor<float>(tg);
            }
            items.push_back(std::move(item));
        }

        bundle.ps.zero_grad();
        const std::uint64_t step_seed =
            Rng::derive(cfg.seed, 0x57e, static_cast<std::uint64_t>(step)).u64();
        const double loss = denoiser_train_step(bundle, items, cfg.schedule, step_seed);
        if (!std::isfinite(loss))
            throw NumericalError("non-finite denoiser loss at step " + std::to_string(step));
        opt.step(bundle.ps);
        ema.update(bundle.ps);

        if (loss_trace) loss_trace->push_back(loss);
        if (log) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::fprintf(log, "%" PRId64 ",%.8g,%.3f\n", step, loss, wall);
            std::fflush(log);
        }
        result.final_loss = loss;
        result.steps = step + 1;

        const bool last = step + 1 == cfg.steps;
        if (!out_dir.empty() && ((step + 1) % spe == 0 || last)) {
            Checkpoint ck;
            bundle.save(ck, &ema.store());
            save_adam(ck, opt, "opt/");
            ck.meta["train.step"] = std::to_string(step + 1);
            ck.meta["train.epoch"] = std::to_string(epoch + 1);
            ck.meta["ema.steps"] = std::to_string(ema.steps());
            char name[64];
            std::snprintf(name, sizeof(name), "/denoiser_epoch_%04d.ckpt", epoch + 1);
            ck.save(out_dir + name);
            ck.save(latest);
        }
    }
    if (log) std::fclose(log);
    return result;
}

}  // namespace fieldgen
