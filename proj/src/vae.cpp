#include "fieldgen/vae.hpp"

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

TrainAeResult train_autoencoder(Codec<float>& codec, const std::vector<Complex>& dataset,
                                const VaeConfig& cfg, const std::string& out_dir,
                                std::vector<double>* loss_trace) {
    if (dataset.empty()) throw ConfigError("train_autoencoder: empty dataset");
    if (cfg.batch < 1) throw ConfigError("train_autoencoder: batch must be >= 1");
    const int n = static_cast<int>(dataset.size());
    const int spe = (n + cfg.batch - 1) / cfg.batch;  // steps per epoch
    const std::int64_t total_steps = static_cast<std::int64_t>(spe) * cfg.epochs;
    const int coords_per_item = std::max(1, cfg.coords_per_step / cfg.batch);

    Adam<float> enc_opt(cfg.adam), dec_opt(cfg.adam);
    std::int64_t start_step = 0;
    const std::string latest =
        out_dir.empty() ? std::string() : out_dir + "/codec_latest.ckpt";
    if (cfg.resume && !latest.empty() && std::filesystem::exists(latest)) {
        Checkpoint ck = Checkpoint::load(latest);
        codec.load(ck);
        load_adam(ck, enc_opt, "opt_enc/");
        load_adam(ck, dec_opt, "opt_dec/");
        start_step = std::stoll(ck.meta.at("train.step"));
    }

    std::FILE* log = nullptr;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::string log_path = out_dir + "/train_ae.csv";
        log = std::fopen(log_path.c_str(), start_step > 0 ? "a" : "w");
        if (!log) throw IoError("cannot open " + log_path);
        if (start_step == 0) std::fprintf(log, "step,recon,kl,total,wall_s\n");
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(static_cast<std::size_t>(n));
    int shuffled_epoch = -1;
    TrainAeResult result;

    for (std::int64_t step = start_step; step < total_steps; ++step) {
        const int epoch = static_cast<int>(step / spe);
        if (epoch != shuffled_epoch) {
            for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
            Rng srng = Rng::derive(cfg.seed, 0x0e1, static_cast<std::uint64_t>(epoch));
            fisher_yates(order, srng);
            shuffled_epoch = epoch;
        }

        codec.enc_ps.zero_grad();
        codec.dec_ps.zero_grad();
        double recon = 0.0, kl = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const std::int64_t in_epoch = (step % spe) * cfg.batch + b;
            const Complex& cx = dataset[static_cast<std::size_t>(
                order[static_cast<std::size_t>(in_epoch % n)])];
            Molecule binder = cx.binder;
            if (cfg.augment) {
                std::uint64_t aseed = Rng::derive(cfg.seed, 0xa09, static_cast<std::uint64_t>(step),
                                                  static_cast<std::uint64_t>(b))
                                          .u64();
                binder = augment(cx, aseed, cfg.aug_translation).binder;
            }
            std::uint64_t eseed = Rng::derive(cfg.seed, 0xe95, static_cast<std::uint64_t>(step),
                                              static_cast<std::uint64_t>(b))
                                      .u64();
            std::uint64_t cseed = Rng::derive(cfg.seed, 0xc0a, static_cast<std::uint64_t>(step),
                                              static_cast<std::uint64_t>(b))
                                      .u64();
            VaeItemStats st = vae_item_loss(codec, binder, cfg, coords_per_item, eseed, cseed,
                                            1.0 / cfg.batch);
            recon += st.recon / cfg.batch;
            kl += st.kl / cfg.batch;
        }
        const double total = recon + cfg.beta * kl;
        if (!std::isfinite(total))
            throw NumericalError("non-finite autoencoder loss at step " + std::to_string(step) +
                                 " (recon " + std::to_string(recon) + ", kl " +
                                 std::to_string(kl) + ")");
        enc_opt.step(codec.enc_ps);
        dec_opt.step(codec.dec_ps);

        if (loss_trace) loss_trace->push_back(total);
        if (log) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::fprintf(log, "%" PRId64 ",%.8g,%.8g,%.8g,%.3f\n", step, recon, kl, total, wall);
            std::fflush(log);
        }
        result.final_recon = recon;
        result.final_kl = kl;
        result.steps = step + 1;

        if (!out_dir.empty() && (step + 1) % spe == 0) {
            Checkpoint ck;
            save_params(ck, codec.enc_ps, "encoder/");
            save_params(ck, codec.dec_ps, "decoder/");
            save_adam(ck, enc_opt, "opt_enc/");
            save_adam(ck, dec_opt, "opt_dec/");
            ck.meta["train.step"] = std::to_string(step + 1);
            ck.meta["train.epoch"] = std::to_string(epoch + 1);
            char name[64];
            std::snprintf(name, sizeof(name), "/codec_epoch_%04d.ckpt", epoch + 1);
            ck.save(out_dir + name);
            ck.save(latest);
        }
    }
    if (log) std::fclose(log);
    return result;
}

}  // namespace fieldgen
