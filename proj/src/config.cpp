#include "fieldgen/config.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "fieldgen/errors.hpp"

namespace fieldgen {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: '" + v + "'");
    }
}

long long parse_ll(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: '" + v + "'");
    }
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text) {
    ConfigMap m;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        for (const auto& e : m.entries)
            if (e.first == key)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": duplicate key " + key);
        m.entries.emplace_back(std::move(key), std::move(value));
    }
    return m;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void ConfigSchema::add(const std::string& key, Entry e) {
    if (index_.count(key)) throw ConfigError("schema key bound twice: " + key);
    index_[key] = entries_.size();
    entries_.push_back(std::move(e));
}

void ConfigSchema::bind(const std::string& key, double* v) {
    add(key, {key, [key, v](const std::string& s) { *v = parse_double(key, s); },
              [v] { return format_number(*v); }});
}

void ConfigSchema::bind(const std::string& key, int* v) {
    add(key, {key,
              [key, v](const std::string& s) {
                  long long x = parse_ll(key, s);
                  if (x < INT_MIN || x > INT_MAX)
                      throw ConfigError("config key " + key + ": out of range");
                  *v = static_cast<int>(x);
              },
              [v] { return std::to_string(*v); }});
}

void ConfigSchema::bind(const std::string& key, bool* v) {
    add(key, {key,
              [key, v](const std::string& s) {
                  if (s == "1" || s == "true")
                      *v = true;
                  else if (s == "0" || s == "false")
                      *v = false;
                  else
                      throw ConfigError("config key " + key + ": expected 0/1/true/false");
              },
              [v] { return std::string(*v ? "1" : "0"); }});
}

void ConfigSchema::bind(const std::string& key, std::uint64_t* v) {
    add(key, {key,
              [key, v](const std::string& s) {
                  try {
                      // stoull wraps negatives silently; reject them up front
                      if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
                      std::size_t used = 0;
                      *v = std::stoull(s, &used);
                      if (used != s.size()) throw std::invalid_argument(s);
                  } catch (const std::exception&) {
                      throw ConfigError("config key " + key + ": not an unsigned integer: '" +
                                        s + "'");
                  }
              },
              [v] { return std::to_string(*v); }});
}

void ConfigSchema::bind(const std::string& key, std::string* v) {
    add(key, {key, [v](const std::string& s) { *v = s; }, [v] { return *v; }});
}

void ConfigSchema::bind(const std::string& key, std::vector<int>* v) {
    add(key, {key,
              [key, v](const std::string& s) {
                  std::vector<int> out;
                  std::string item;
                  std::istringstream is(s);
                  while (std::getline(is, item, ','))
                      out.push_back(static_cast<int>(parse_ll(key, trim(item))));
                  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
                  *v = std::move(out);
              },
              [v] {
                  std::string s;
                  for (std::size_t i = 0; i < v->size(); ++i) {
                      if (i) s += ',';
                      s += std::to_string((*v)[i]);
                  }
                  return s;
              }});
}

void ConfigSchema::apply(const ConfigMap& m) {
    for (const auto& [key, value] : m.entries) {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("unknown config key: " + key);
        entries_[it->second].set(value);
    }
}

std::string ConfigSchema::resolved() const {
    std::string out;
    for (const auto& e : entries_) {
        out += e.key;
        out += '=';
        out += e.get();
        out += '\n';
    }
    return out;
}

ConfigSchema RunConfig::schema() {
    ConfigSchema s;
    s.bind("seed", &seed);
    s.bind("threads", &threads);

    s.bind("data.count", &data_count);
    s.bind("data.modality_count", &data_modality_count);
    s.bind("data.min_atoms", &data_min_atoms);
    s.bind("data.max_atoms", &data_max_atoms);
    s.bind("data.elements", &data_elements);
    s.bind("data.radius", &data_radius);
    s.bind("data.step", &data_step);
    s.bind("data.min_dist", &data_min_dist);
    s.bind("data.clearance", &data_clearance);
    s.bind("data.target_min_atoms", &data_target_min_atoms);
    s.bind("data.target_max_atoms", &data_target_max_atoms);
    s.bind("data.target_gap_min", &data_target_gap_min);
    s.bind("data.target_gap_max", &data_target_gap_max);

    s.bind("paths.dataset", &path_dataset);
    s.bind("paths.codec", &path_codec);
    s.bind("paths.denoiser", &path_denoiser);
    s.bind("paths.target", &path_target);
    s.bind("paths.samples", &path_samples);
    s.bind("paths.reference", &path_reference);

    s.bind("field.extent", &field_extent);
    s.bind("field.resolution", &field_resolution);

    s.bind("codec.latent_channels", &codec_latent_channels);
    s.bind("codec.stem_width", &codec_stem_width);
    s.bind("codec.widths", &codec_widths);
    s.bind("codec.pool", &codec_pool);
    s.bind("mfn.depth", &mfn_depth);
    s.bind("mfn.width", &mfn_width);
    s.bind("mfn.freq_scale", &mfn_freq_scale);

    s.bind("vae.beta", &vae_beta);
    s.bind("vae.batch", &vae_batch);
    s.bind("vae.epochs", &vae_epochs);
    s.bind("vae.coords_per_step", &vae_coords_per_step);
    s.bind("vae.lr", &vae_lr);
    s.bind("vae.augment", &vae_augment);
    s.bind("vae.aug_translation", &vae_aug_translation);
    s.bind("vae.resume", &vae_resume);

    s.bind("target.extent", &target_extent);
    s.bind("target.resolution", &target_resolution);
    s.bind("unet.base", &unet_base);
    s.bind("unet.deep", &unet_deep);
    s.bind("unet.emb_dim", &unet_emb_dim);
    s.bind("tenc.width", &tenc_width);
    s.bind("denoiser.batch", &denoiser_batch);
    s.bind("denoiser.steps", &denoiser_steps);
    s.bind("denoiser.lr", &denoiser_lr);
    s.bind("denoiser.dropout", &denoiser_dropout);
    s.bind("denoiser.p_mean", &denoiser_p_mean);
    s.bind("denoiser.p_std", &denoiser_p_std);
    s.bind("denoiser.augment", &denoiser_augment);
    s.bind("denoiser.aug_translation", &denoiser_aug_translation);
    s.bind("denoiser.resume", &denoiser_resume);

    s.bind("sample.mode", &sample_mode);
    s.bind("sample.source", &sample_source);
    s.bind("sample.source_mean", &sample_source_mean);
    s.bind("sample.source_var", &sample_source_var);
    s.bind("sample.dim", &sample_dim);
    s.bind("sample.chains", &sample_chains);
    s.bind("sample.modality", &sample_modality);
    s.bind("sample.rotate", &sample_rotate);
    s.bind("sample.save_latents", &sample_save_latents);
    s.bind("sample.n_steps", &sample_n_steps);
    s.bind("sample.sigma_min", &sample_sigma_min);
    s.bind("sample.sigma_max", &sample_sigma_max);
    s.bind("sample.rho", &sample_rho);
    s.bind("sample.s_churn", &sample_s_churn);
    s.bind("sample.s_min", &sample_s_min);
    s.bind("sample.s_max", &sample_s_max);
    s.bind("sample.s_noise", &sample_s_noise);
    s.bind("sample.temperature", &sample_temperature);
    s.bind("sample.wjs_sigma", &sample_wjs_sigma);
    s.bind("sample.wjs_m", &sample_wjs_m);
    s.bind("sample.wjs_steps", &sample_wjs_steps);
    s.bind("sample.gamma", &sample_gamma);
    s.bind("sample.delta", &sample_delta);
    s.bind("sample.noise_scale", &sample_noise_scale);

    s.bind("recover.resolution", &recover_resolution);
    s.bind("recover.threshold", &recover_threshold);
    s.bind("recover.steps", &recover_steps);
    s.bind("recover.step0", &recover_step0);
    s.bind("recover.merge_dist", &recover_merge_dist);

    s.bind("eval.oracle", &eval_oracle);
    s.bind("eval.oracle_mean", &eval_oracle_mean);
    s.bind("eval.oracle_var", &eval_oracle_var);
    return s;
}

ToyConfig RunConfig::toy_config(int modality) const {
    ToyConfig t;
    t.modality = modality;
    t.modality_count = data_modality_count;
    t.min_atoms = data_min_atoms;
    t.max_atoms = data_max_atoms;
    t.radius = data_radius;
    t.step = data_step;
    t.min_dist = data_min_dist;
    t.clearance = data_clearance;
    t.elements = data_elements;
    t.target_min_atoms = data_target_min_atoms;
    t.target_max_atoms = data_target_max_atoms;
    t.target_gap_min = data_target_gap_min;
    t.target_gap_max = data_target_gap_max;
    return t;
}

GridSpec RunConfig::field_spec() const {
    return GridSpec{field_extent, field_resolution, kElementCount};
}

GridSpec RunConfig::target_spec() const {
    return GridSpec{target_extent, target_resolution, kTargetChannelCount};
}

EncoderConfig RunConfig::encoder_config() const {
    EncoderConfig e;
    e.in_channels = kElementCount;
    e.stem_width = codec_stem_width;
    e.widths = codec_widths;
    e.pool = codec_pool;
    e.latent_channels = codec_latent_channels;
    if (e.pool.size() != e.widths.size())
        throw ConfigError("codec.pool must have one entry per codec.widths block");
    return e;
}

MfnConfig RunConfig::mfn_config() const {
    MfnConfig m;
    m.depth = mfn_depth;
    m.width = mfn_width;
    m.latent_channels = codec_latent_channels;
    m.out_channels = kElementCount;
    m.freq_scale = mfn_freq_scale;
    return m;
}

VaeConfig RunConfig::vae_config() const {
    VaeConfig v;
    v.beta = vae_beta;
    v.coords_per_step = vae_coords_per_step;
    v.coord.extent = field_extent;
    v.batch = vae_batch;
    v.epochs = vae_epochs;
    v.adam.lr = vae_lr;
    v.augment = vae_augment;
    v.aug_translation = vae_aug_translation;
    v.seed = seed;
    v.resume = vae_resume;
    return v;
}

UnetConfig RunConfig::unet_config() const {
    UnetConfig u;
    u.latent_channels = codec_latent_channels;
    u.base = unet_base;
    u.deep = unet_deep;
    u.emb_dim = unet_emb_dim;
    u.modalities = data_modality_count;
    return u;
}

TargetEncConfig RunConfig::tenc_config() const {
    TargetEncConfig t;
    t.in_channels = kTargetChannelCount;
    t.width = tenc_width;
    t.latent_channels = codec_latent_channels;
    return t;
}

DenoiserTrainConfig RunConfig::denoiser_config() const {
    DenoiserTrainConfig d;
    d.batch = denoiser_batch;
    d.steps = denoiser_steps;
    d.adam.lr = denoiser_lr;
    d.dropout = denoiser_dropout;
    d.schedule.p_mean = denoiser_p_mean;
    d.schedule.p_std = denoiser_p_std;
    d.augment = denoiser_augment;
    d.aug_translation = denoiser_aug_translation;
    d.target_spec = target_spec();
    d.seed = seed;
    d.resume = denoiser_resume;
    return d;
}

SamplerConfig RunConfig::sampler_config() const {
    SamplerConfig c;
    c.n_steps = sample_n_steps;
    c.sigma_min = sample_sigma_min;
    c.sigma_max = sample_sigma_max;
    c.rho = sample_rho;
    c.s_churn = sample_s_churn;
    c.s_min = sample_s_min;
    c.s_max = sample_s_max;
    c.s_noise = sample_s_noise;
    c.temperature = sample_temperature;
    c.wjs_sigma = sample_wjs_sigma;
    c.wjs_m = sample_wjs_m;
    c.wjs_steps = sample_wjs_steps;
    c.gamma = sample_gamma;
    c.delta = sample_delta;
    c.wjs_noise_scale = sample_noise_scale;
    return c;
}

RecoveryOptions RunConfig::recovery_options() const {
    RecoveryOptions r;
    r.render_resolution = recover_resolution;
    r.threshold = recover_threshold;
    r.refine_steps = recover_steps;
    r.refine_step0 = recover_step0;
    r.merge_dist = recover_merge_dist;
    return r;
}

int RunConfig::resolve_threads() const {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int want = threads > 0 ? threads : hw;
    if (const char* env = std::getenv("FIELDGEN_THREADS")) {
        try {
            int cap = std::stoi(env);
            if (cap > 0) want = std::min(want, cap);
        } catch (const std::exception&) {
            throw ConfigError("FIELDGEN_THREADS is not an integer");
        }
    }
    return std::max(1, want);
}

}  // namespace fieldgen
