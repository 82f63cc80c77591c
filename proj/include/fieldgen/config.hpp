#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fieldgen/denoiser.hpp"
#include "fieldgen/field.hpp"
#include "fieldgen/moltypes.hpp"
#include "fieldgen/recovery.hpp"
#include "fieldgen/samplers.hpp"
#include "fieldgen/vae.hpp"

namespace fieldgen {

// Flat `key=value` text: one pair per line, `#` comments, blank lines
// allowed. Duplicate keys are rejected as configuration mistakes.
struct ConfigMap {
    std::vector<std::pair<std::string, std::string>> entries;  // file order

    static ConfigMap parse(const std::string& text);
    static ConfigMap parse_file(const std::string& path);
};

// Shortest decimal form that round-trips the exact double.
std::string format_number(double v);

// Typed key bindings over the fields of a config struct. apply() rejects any
// key that was never bound, naming it; resolved() serializes every bound key
// with its current value in declaration order.
class ConfigSchema {
  public:
    void bind(const std::string& key, double* v);
    void bind(const std::string& key, int* v);
    void bind(const std::string& key, bool* v);
    void bind(const std::string& key, std::uint64_t* v);
    void bind(const std::string& key, std::string* v);
    void bind(const std::string& key, std::vector<int>* v);  // comma-separated

    void apply(const ConfigMap& m);
    std::string resolved() const;

  private:
    struct Entry {
        std::string key;
        std::function<void(const std::string&)> set;
        std::function<std::string()> get;
    };
    void add(const std::string& key, Entry e);
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Every tunable of the pipeline in one flat struct. Defaults are the desk
// configuration; a config file overrides by key.
struct RunConfig {
    std::uint64_t seed = 0;
    int threads = 0;  // 0: FIELDGEN_THREADS if set, else hardware concurrency

    // toy dataset generation
    int data_count = 256;
    int data_modality_count = 3;
    int data_min_atoms = 8;
    int data_max_atoms = 12;
    std::string data_elements = "CNO";
    double data_radius = 6.0;
    double data_step = 1.5;
    double data_min_dist = 1.1;
    double data_clearance = 1.95;
    int data_target_min_atoms = 5;
    int data_target_max_atoms = 20;
    double data_target_gap_min = 2.0;
    double data_target_gap_max = 4.0;

    // artifact locations consumed by the commands
    std::string path_dataset;
    std::string path_codec;
    std::string path_denoiser;
    std::string path_target;
    std::string path_samples;
    std::string path_reference;

    // binder grid fed to the posterior encoder
    double field_extent = 16.0;
    double field_resolution = 2.0;

    // codec
    int codec_latent_channels = 16;
    int codec_stem_width = 32;
    std::vector<int> codec_widths{32, 64};
    std::vector<int> codec_pool{0, 0};
    int mfn_depth = 3;
    int mfn_width = 128;
    double mfn_freq_scale = 15.0;

    // codec training
    double vae_beta = 1e-5;
    int vae_batch = 16;
    int vae_epochs = 10;
    int vae_coords_per_step = 4096;
    double vae_lr = 1e-3;
    bool vae_augment = true;
    double vae_aug_translation = 1.0;
    bool vae_resume = false;

    // conditioning grid and denoiser
    double target_extent = 16.0;
    double target_resolution = 1.0;
    int unet_base = 64;
    int unet_deep = 128;
    int unet_emb_dim = 128;
    int tenc_width = 32;
    int denoiser_batch = 16;
    int denoiser_steps = 4000;
    double denoiser_lr = 3e-4;
    double denoiser_dropout = 0.1;
    double denoiser_p_mean = 1.2;
    double denoiser_p_std = 0.8;
    bool denoiser_augment = true;
    double denoiser_aug_translation = 1.0;
    bool denoiser_resume = false;

    // sampling
    std::string sample_mode = "edm";       // edm | wjs
    std::string sample_source = "learned";  // learned | gaussian | point | mixture
    double sample_source_mean = 3.0;        // gaussian mean / point value / mixture mode
    double sample_source_var = 1.0;         // gaussian prior variance
    int sample_dim = 8;                     // latent dimension for analytic sources
    int sample_chains = 8;
    int sample_modality = -1;  // -1: take the modality recorded in the target file
    bool sample_rotate = true;
    bool sample_save_latents = true;
    int sample_n_steps = 128;
    double sample_sigma_min = 0.01;
    double sample_sigma_max = 10.0;
    double sample_rho = 7.0;
    double sample_s_churn = 30.0;
    double sample_s_min = 5.0;
    double sample_s_max = 7.0;
    double sample_s_noise = 1.003;
    double sample_temperature = 0.5;
    double sample_wjs_sigma = 7.0;
    int sample_wjs_m = 16;
    int sample_wjs_steps = 50;
    double sample_gamma = 1.0;
    double sample_delta = 3.5;
    double sample_noise_scale = 1.0;

    // recovery
    double recover_resolution = 0.25;
    double recover_threshold = 0.3;
    int recover_steps = 50;
    double recover_step0 = 0.05;
    double recover_merge_dist = 0.8;

    // evaluation
    std::string eval_oracle = "none";  // none | gaussian
    double eval_oracle_mean = 3.0;
    double eval_oracle_var = 1.0;

    // The schema holds pointers into this instance; keep it alive while used.
    ConfigSchema schema();
    void apply(const ConfigMap& m) { schema().apply(m); }
    void apply_file(const std::string& path) { apply(ConfigMap::parse_file(path)); }
    std::string resolved() { return schema().resolved(); }

    // module-config builders
    ToyConfig toy_config(int modality) const;
    GridSpec field_spec() const;   // binder occupancy grid (encoder input)
    GridSpec target_spec() const;  // conditioning grid
    EncoderConfig encoder_config() const;
    MfnConfig mfn_config() const;
    VaeConfig vae_config() const;
    UnetConfig unet_config() const;
    TargetEncConfig tenc_config() const;
    DenoiserTrainConfig denoiser_config() const;
    SamplerConfig sampler_config() const;
    RecoveryOptions recovery_options() const;
    // requested workers capped by FIELDGEN_THREADS when that is set
    int resolve_threads() const;
};

}  // namespace fieldgen
