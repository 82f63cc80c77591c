#include "fieldgen/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "fieldgen/checkpoint.hpp"
#include "fieldgen/errors.hpp"
#include "fieldgen/hungarian.hpp"
#include "fieldgen/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fieldgen {

namespace {

// RNG stream tags: per-file dataset seed (seed, 0xda7a, i); per-chain sampler
// seed (seed, 0x5a9, chain); codec initialization (seed, 0x1c0).
constexpr std::uint64_t kTagDataFile = 0xda7a;
constexpr std::uint64_t kTagChainSeed = 0x5a9;
constexpr std::uint64_t kTagCodecInit = 0x1c0;

std::string zpad(const char* stem, int i, int width, const char* suffix) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s%0*d%s", stem, width, i, suffix);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

void prepare_out_dir(RunConfig& rc, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    write_text_file(out_dir + "/resolved.cfg", rc.resolved());
}

std::vector<std::string> list_files(const std::string& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string name = e.path().filename().string();
        if (name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int checked_modality(const RunConfig& rc, int from_target) {
    int m = rc.sample_modality >= 0 ? rc.sample_modality : from_target;
    if (m < 0 || m >= rc.data_modality_count)
        throw ConfigError("sample modality " + std::to_string(m) + " outside [0, " +
                          std::to_string(rc.data_modality_count) + ")");
    return m;
}

struct ChainOutput {
    Molecule molecule;
    Tensor<double> latent;  // denormalized, [C, L, L, L]
    Mat3 rotation;
    RecoveryRow row;
    bool has_molecule = false;
};

void save_latent_file(const std::string& path, const Tensor<double>& z, const LatentFrame* frame,
                      int chain, const std::string& mode) {
    Checkpoint ck;
    ck.tensors["z"] = z;
    ck.meta["chain"] = std::to_string(chain);
    ck.meta["mode"] = mode;
    if (frame) {
        ck.meta["frame.lo.x"] = format_number(frame->lo.x);
        ck.meta["frame.lo.y"] = format_number(frame->lo.y);
        ck.meta["frame.lo.z"] = format_number(frame->lo.z);
        ck.meta["frame.extent"] = format_number(frame->extent);
    }
    ck.save(path);
}

double meta_number(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError("latent file lacks metadata key " + key);
    return std::stod(it->second);
}

ScoreSource analytic_source(const RunConfig& rc, const std::vector<int>& shape) {
    Tensor<double> center(shape);
    for (auto& v : center.data) v = rc.sample_source_mean;
    if (rc.sample_source == "gaussian")
        return gaussian_score_source(std::move(center), rc.sample_source_var);
    if (rc.sample_source == "point") return point_score_source(std::move(center));
    if (rc.sample_source == "mixture") return mixture_score_source(rc.sample_source_mean);
    throw ConfigError("unknown sample.source: " + rc.sample_source);
}

Tensor<double> run_one_sampler(const RunConfig& rc, const ScoreSource& source,
                               const SamplerConfig& scfg, const std::vector<int>& shape,
                               std::uint64_t chain_seed) {
    if (rc.sample_mode == "edm") return edm_sample(source, scfg, shape, chain_seed);
    if (rc.sample_mode == "wjs") return wjs_m_sample(source, scfg, shape, chain_seed);
    throw ConfigError("unknown sample.mode: " + rc.sample_mode);
}

// CSV cells: values are plain numbers or names without commas/quotes.
std::string metrics_csv(const std::vector<std::pair<std::string, std::string>>& rows) {
    std::string out = "metric,value\n";
    for (const auto& [k, v] : rows) out += k + "," + v + "\n";
    return out;
}

}  // namespace

std::string molecule_key(const Molecule& m) {
    struct Entry {
        int element;
        long long x, y, z;
    };
    std::vector<Entry> entries;
    entries.reserve(m.atoms.size());
    for (const auto& a : m.atoms)
        entries.push_back({static_cast<int>(a.element), std::llround(a.position.x * 10.0),
                           std::llround(a.position.y * 10.0), std::llround(a.position.z * 10.0)});
    std::sort(entries.begin(), entries.end(), [](const Entry& l, const Entry& r) {
        return std::tie(l.element, l.x, l.y, l.z) < std::tie(r.element, r.x, r.y, r.z);
    });
    std::string key;
    for (const auto& e : entries) {
        key += std::to_string(e.element);
        key += ':';
        key += std::to_string(e.x);
        key += ',';
        key += std::to_string(e.y);
        key += ',';
        key += std::to_string(e.z);
        key += ';';
    }
    return key;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
    if (labels.size() != values.size())
        throw ConfigError("svg_bar_chart: labels and values differ in length");
    const double width = 640, height = 400;
    const double left = 50, right = 20, top = 40, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    double maxv = 1.0;
    for (double v : values) maxv = std::max(maxv, v);

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_number(width) +
         "\" height=\"" + format_number(height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + format_number(width / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"16\">" +
         title + "</text>\n";
    s += "<line x1=\"" + format_number(left) + "\" y1=\"" + format_number(top) + "\" x2=\"" +
         format_number(left) + "\" y2=\"" + format_number(top + plot_h) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + format_number(left) + "\" y1=\"" + format_number(top + plot_h) +
         "\" x2=\"" + format_number(left + plot_w) + "\" y2=\"" + format_number(top + plot_h) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + format_number(left - 6) + "\" y=\"" + format_number(top + 6) +
         "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"12\">" +
         format_number(maxv) + "</text>\n";

    const auto n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        double slot = plot_w / std::max(1.0, n);
        double bw = slot * 0.8;
        double x = left + slot * static_cast<double>(i) + slot * 0.1;
        double h = plot_h * (values[i] / maxv);
        double y = top + plot_h - h;
        s += "<rect x=\"" + format_number(x) + "\" y=\"" + format_number(y) + "\" width=\"" +
             format_number(bw) + "\" height=\"" + format_number(h) +
             "\" fill=\"steelblue\"/>\n";
        s += "<text x=\"" + format_number(x + bw / 2) + "\" y=\"" +
             format_number(top + plot_h + 16) +
             "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">" +
             labels[i] + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string svg_line_chart(const std::string& title, const std::vector<double>& xs,
                           const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty())
        throw ConfigError("svg_line_chart: need matching non-empty series");
    const double width = 640, height = 400;
    const double left = 60, right = 20, top = 40, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_number(width) +
         "\" height=\"" + format_number(height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + format_number(width / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"16\">" +
         title + "</text>\n";
    s += "<line x1=\"" + format_number(left) + "\" y1=\"" + format_number(top) + "\" x2=\"" +
         format_number(left) + "\" y2=\"" + format_number(top + plot_h) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + format_number(left) + "\" y1=\"" + format_number(top + plot_h) +
         "\" x2=\"" + format_number(left + plot_w) + "\" y2=\"" + format_number(top + plot_h) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + format_number(left - 6) + "\" y=\"" + format_number(top + 6) +
         "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"12\">" +
         format_number(ymax) + "</text>\n";
    s += "<text x=\"" + format_number(left - 6) + "\" y=\"" + format_number(top + plot_h) +
         "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"12\">" +
         format_number(ymin) + "</text>\n";

    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double px = left + plot_w * (xs[i] - xmin) / (xmax - xmin);
        double py = top + plot_h * (1.0 - (ys[i] - ymin) / (ymax - ymin));
        if (i) pts += ' ';
        pts += format_number(px) + "," + format_number(py);
    }
    s += "<polyline fill=\"none\" stroke=\"firebrick\" stroke-width=\"1.5\" points=\"" + pts +
         "\"/>\n";
    s += "</svg>\n";
    return s;
}

std::vector<Complex> load_dataset(const std::string& dir) {
    if (dir.empty()) throw ConfigError("paths.dataset is not set");
    auto files = list_files(dir, ".cplx.txt");
    if (files.empty()) throw IoError("no .cplx.txt files in " + dir);
    std::vector<Complex> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(read_complex_file(f));
    return out;
}

void cmd_gen_data(RunConfig rc, const std::string& out_dir) {
    if (rc.data_count < 1) throw ConfigError("data.count must be >= 1");
    if (rc.data_modality_count < 1) throw ConfigError("data.modality_count must be >= 1");
    prepare_out_dir(rc, out_dir);

    nlohmann::json files = nlohmann::json::array();
    for (int i = 0; i < rc.data_count; ++i) {
        const int modality = i % rc.data_modality_count;
        const std::uint64_t file_seed = Rng::derive(rc.seed, kTagDataFile, i).u64();
        Complex cx = gen_toy_complex(file_seed, rc.toy_config(modality));
        std::string name = zpad("sample_", i, 4, ".cplx.txt");
        write_complex_file(out_dir + "/" + name, cx);
        files.push_back({{"file", name}, {"seed", file_seed}, {"modality", modality}});
    }
    nlohmann::json manifest{{"command", "gen-data"},
                            {"count", rc.data_count},
                            {"modality_count", rc.data_modality_count},
                            {"seed", rc.seed},
                            {"files", files}};
    write_text_file(out_dir + "/data_manifest.json", manifest.dump(2) + "\n");
}

void cmd_train_ae(RunConfig rc, const std::string& out_dir) {
    prepare_out_dir(rc, out_dir);
    std::vector<Complex> dataset = load_dataset(rc.path_dataset);
    Codec<float> codec(rc.encoder_config(), rc.mfn_config(), rc.field_spec(),
                       Rng::derive(rc.seed, kTagCodecInit).u64());
    train_autoencoder(codec, dataset, rc.vae_config(), out_dir);
}

void cmd_train_denoiser(RunConfig rc, const std::string& out_dir) {
    prepare_out_dir(rc, out_dir);
    if (rc.path_codec.empty())
        throw ConfigError("denoiser training requires a codec checkpoint (paths.codec)");
    std::vector<Complex> dataset = load_dataset(rc.path_dataset);

    Codec<float> codec(rc.encoder_config(), rc.mfn_config(), rc.field_spec(),
                       Rng::derive(rc.seed, kTagCodecInit).u64());
    codec.load(Checkpoint::load(rc.path_codec));

    DenoiserBundle<float> bundle(rc.unet_config(), rc.tenc_config(), rc.seed);
    Ema<float> ema;
    train_denoiser(bundle, ema, codec, dataset, rc.denoiser_config(), out_dir);
}

void cmd_sample(RunConfig rc, const std::string& out_dir) {
    prepare_out_dir(rc, out_dir);
    if (rc.sample_chains < 1) throw ConfigError("sample.chains must be >= 1");
    SamplerConfig scfg = rc.sampler_config();
    scfg.validate();
    const int chains = rc.sample_chains;
    const auto t0 = std::chrono::steady_clock::now();

    if (rc.sample_source != "learned") {
        // Analytic sources sample bare latent vectors; nothing to decode.
        if (rc.sample_dim < 1) throw ConfigError("sample.dim must be >= 1");
        const std::vector<int> shape{rc.sample_dim};
        ScoreSource source = analytic_source(rc, shape);
        auto latents = run_chains(chains, rc.resolve_threads(), [&](int c) {
            return run_one_sampler(rc, source, scfg,  shape,
                                   Rng::derive(rc.seed, kTagChainSeed, c).u64());
        });
        for (int c = 0; c < chains; ++c)
            save_latent_file(out_dir + "/" + zpad("latent_", c, 3, ".ckpt"), latents[c],
                             nullptr, c, rc.sample_mode + ":" + rc.sample_source);
        double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_sampler_manifest(out_dir + "/sampler_manifest.json", scfg,
                               rc.sample_mode + ":" + rc.sample_source, rc.seed, chains,
                               std::vector<Mat3>(static_cast<std::size_t>(chains)), wall);
        return;
    }

    if (rc.path_codec.empty()) throw ConfigError("sampling requires paths.codec");
    if (rc.path_denoiser.empty()) throw ConfigError("sampling requires paths.denoiser");
    if (rc.path_target.empty()) throw ConfigError("sampling requires paths.target");
    const Complex target_cx = read_complex_file(rc.path_target);
    const int modality = checked_modality(rc, target_cx.modality);
    const Checkpoint codec_ck = Checkpoint::load(rc.path_codec);
    const Checkpoint den_ck = Checkpoint::load(rc.path_denoiser);
    const GridSpec tspec = rc.target_spec();

    const int threads = std::min(rc.resolve_threads(), chains);
    std::vector<ChainOutput> outputs(static_cast<std::size_t>(chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));

    // Forward passes mutate layer caches, so each worker owns its own codec
    // and denoiser instance; chains are split statically.
    auto worker = [&](int w) {
        try {
            Codec<double> codec(rc.encoder_config(), rc.mfn_config(), rc.field_spec(),
                                Rng::derive(rc.seed, kTagCodecInit).u64());
            codec.load(codec_ck);
            DenoiserBundle<double> bundle(rc.unet_config(), rc.tenc_config(), rc.seed);
            bundle.load(den_ck, /*use_ema=*/true);
            if (bundle.cfg.latent_channels != rc.codec_latent_channels)
                throw ConfigError("denoiser and codec disagree on latent channels");
            const int side = codec.latent_side();
            const std::vector<int> shape{rc.codec_latent_channels, side, side, side};

            for (int c = w; c < chains; c += threads) {
                ChainFrame frame = rotate_condition_per_chain(
                    target_cx.target, rc.sample_rotate ? c : 0, rc.seed);
                DensityGrid tgrid =
                    voxelize(frame.target, tspec,
                             centered_origin(tspec, frame.target.bbox_center()));
                LatentGrid<double> z_tar = encode_target(bundle, tgrid);
                ScoreSource source = learned_score_source(bundle, z_tar.values, modality);

                Tensor<double> y = run_one_sampler(
                    rc, source, scfg, shape, Rng::derive(rc.seed, kTagChainSeed, c).u64());
                Tensor<double> z = denormalize_latent(y, bundle.stats);

                LatentGrid<double> zg(rc.codec_latent_channels, side, codec.frame());
                zg.values = z;
                Recovered rec = recover_molecule(codec.decoder, zg, rc.recovery_options(),
                                                 zpad("sample_", c, 3, ""));
                for (auto& a : rec.molecule.atoms) a.position = unrotate(frame, a.position);

                ChainOutput& out = outputs[static_cast<std::size_t>(c)];
                out.molecule = std::move(rec.molecule);
                out.latent = std::move(z);
                out.rotation = frame.rotation;
                out.row = rec.row;
                out.has_molecule = true;
            }
        } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
    };

    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<RecoveryRow> rows;
    std::vector<Mat3> rotations;
    const GridSpec in_spec = rc.field_spec();
    const LatentFrame frame = LatentFrame::for_grid(in_spec, centered_origin(in_spec));
    for (int c = 0; c < chains; ++c) {
        const ChainOutput& out = outputs[static_cast<std::size_t>(c)];
        write_molecule_file(out_dir + "/" + zpad("sample_", c, 3, ".mol.txt"), out.molecule);
        if (rc.sample_save_latents)
            save_latent_file(out_dir + "/" + zpad("latent_", c, 3, ".ckpt"), out.latent,
                             &frame, c, rc.sample_mode);
        rows.push_back(out.row);
        rotations.push_back(out.rotation);
    }
    write_text_file(out_dir + "/recovery.csv", recovery_csv(rows));
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_sampler_manifest(out_dir + "/sampler_manifest.json", scfg, rc.sample_mode, rc.seed,
                           chains, rotations, wall);
}

void cmd_recover(RunConfig rc, const std::string& out_dir) {
    prepare_out_dir(rc, out_dir);
    if (rc.path_codec.empty()) throw ConfigError("recovery requires paths.codec");
    if (rc.path_samples.empty()) throw ConfigError("recovery requires paths.samples");
    auto files = list_files(rc.path_samples, ".ckpt");
    files.erase(std::remove_if(files.begin(), files.end(),
                               [](const std::string& f) {
                                   return fs::path(f).filename().string().rfind("latent_", 0) !=
                                          0;
                               }),
                files.end());
    if (files.empty()) throw IoError("no latent_*.ckpt files in " + rc.path_samples);

    Codec<double> codec(rc.encoder_config(), rc.mfn_config(), rc.field_spec(),
                        Rng::derive(rc.seed, kTagCodecInit).u64());
    codec.load(Checkpoint::load(rc.path_codec));

    std::vector<RecoveryRow> rows;
    for (std::size_t i = 0; i < files.size(); ++i) {
        Checkpoint ck = Checkpoint::load(files[i]);
        auto it = ck.tensors.find("z");
        if (it == ck.tensors.end()) throw IoError("latent file lacks tensor z: " + files[i]);
        if (!ck.meta.count("frame.extent"))
            throw ConfigError("latent file has no spatial frame (analytic source?): " +
                              files[i]);
        LatentFrame frame;
        frame.lo = Vec3{meta_number(ck, "frame.lo.x"), meta_number(ck, "frame.lo.y"),
                        meta_number(ck, "frame.lo.z")};
        frame.extent = meta_number(ck, "frame.extent");

        LatentGrid<double> zg;
        zg.frame = frame;
        zg.values = it->second;
        const std::string name = zpad("recovered_", static_cast<int>(i), 3, "");
        Recovered rec = recover_molecule(codec.decoder, zg, rc.recovery_options(), name);
        write_molecule_file(out_dir + "/" + name + ".mol.txt", rec.molecule);
        rows.push_back(rec.row);
    }
    write_text_file(out_dir + "/recovery.csv", recovery_csv(rows));
}

void cmd_eval(RunConfig rc, const std::string& out_dir) {
    prepare_out_dir(rc, out_dir);
    if (rc.path_samples.empty()) throw ConfigError("evaluation requires paths.samples");
    auto mol_files = list_files(rc.path_samples, ".ckpt");
    auto latent_files = std::move(mol_files);
    latent_files.erase(
        std::remove_if(latent_files.begin(), latent_files.end(),
                       [](const std::string& f) {
                           return fs::path(f).filename().string().rfind("latent_", 0) != 0;
                       }),
        latent_files.end());
    mol_files = list_files(rc.path_samples, ".mol.txt");
    if (mol_files.empty() && latent_files.empty())
        throw ConfigError("empty sample set in " + rc.path_samples);

    std::vector<std::pair<std::string, std::string>> metrics;

    if (!mol_files.empty()) {
        std::vector<Molecule> mols;
        mols.reserve(mol_files.size());
        for (const auto& f : mol_files) mols.push_back(read_molecule_file(f));
        const int n = static_cast<int>(mols.size());
        metrics.emplace_back("samples", std::to_string(n));

        std::set<std::string> keys;
        for (const auto& m : mols) keys.insert(molecule_key(m));
        metrics.emplace_back("unique_fraction",
                             format_number(static_cast<double>(keys.size()) / n));

        int amin = mols[0].size(), amax = mols[0].size();
        double asum = 0.0;
        for (const auto& m : mols) {
            amin = std::min(amin, m.size());
            amax = std::max(amax, m.size());
            asum += m.size();
        }
        metrics.emplace_back("atoms_mean", format_number(asum / n));
        metrics.emplace_back("atoms_min", std::to_string(amin));
        metrics.emplace_back("atoms_max", std::to_string(amax));

        std::vector<std::string> labels;
        std::vector<double> counts;
        std::string hist_csv = "atoms,count\n";
        for (int a = amin; a <= amax; ++a) {
            int c = 0;
            for (const auto& m : mols) c += m.size() == a ? 1 : 0;
            labels.push_back(std::to_string(a));
            counts.push_back(c);
            hist_csv += std::to_string(a) + "," + std::to_string(c) + "\n";
        }
        write_text_file(out_dir + "/atom_count_hist.csv", hist_csv);
        write_text_file(out_dir + "/atom_count_hist.svg",
                        svg_bar_chart("atom count", labels, counts));

        if (!rc.path_reference.empty()) {
            Molecule ref;
            if (rc.path_reference.size() > 9 &&
                rc.path_reference.rfind(".cplx.txt") == rc.path_reference.size() - 9)
                ref = read_complex_file(rc.path_reference).binder;
            else
                ref = read_molecule_file(rc.path_reference);

            std::string rmsd_csv = "name,matched,rmsd,element_mismatches\n";
            std::vector<double> xs, ys;
            double rmsd_sum = 0.0;
            int exact = 0;
            for (int i = 0; i < n; ++i) {
                auto r = match_molecules(mols[static_cast<std::size_t>(i)], ref);
                rmsd_csv += fs::path(mol_files[static_cast<std::size_t>(i)])
                                .filename()
                                .string() +
                            "," + std::to_string(r.matched) + "," + format_number(r.rmsd) +
                            "," + std::to_string(r.element_mismatches) + "\n";
                xs.push_back(i);
                ys.push_back(r.rmsd);
                rmsd_sum += r.rmsd;
                if (mols[static_cast<std::size_t>(i)].size() == ref.size()) ++exact;
            }
            write_text_file(out_dir + "/rmsd_per_sample.csv", rmsd_csv);
            write_text_file(out_dir + "/rmsd_per_sample.svg",
                            svg_line_chart("rmsd vs reference", xs, ys));
            metrics.emplace_back("rmsd_mean", format_number(rmsd_sum / n));
            metrics.emplace_back("count_match_fraction",
                                 format_number(static_cast<double>(exact) / n));
        }
    }

    if (rc.eval_oracle == "gaussian") {
        if (latent_files.empty())
            throw ConfigError("eval.oracle needs latent_*.ckpt files in paths.samples");
        std::vector<Tensor<double>> zs;
        for (const auto& f : latent_files) {
            Checkpoint ck = Checkpoint::load(f);
            auto it = ck.tensors.find("z");
            if (it == ck.tensors.end()) throw IoError("latent file lacks tensor z: " + f);
            if (!zs.empty() && !it->second.same_shape(zs.front()))
                throw ConfigError("latent files disagree on shape");
            zs.push_back(it->second);
        }
        const std::size_t d = zs.front().data.size();
        const double nn = static_cast<double>(zs.size());
        double err_mean_sum = 0.0, err_mean_max = 0.0, err_var_sum = 0.0, err_var_max = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double m = 0.0, m2 = 0.0;
            for (const auto& z : zs) {
                m += z.data[i];
                m2 += z.data[i] * z.data[i];
            }
            m /= nn;
            const double var = m2 / nn - m * m;
            const double em = std::abs(m - rc.eval_oracle_mean);
            const double ev = std::abs(var - rc.eval_oracle_var);
            err_mean_sum += em;
            err_var_sum += ev;
            err_mean_max = std::max(err_mean_max, em);
            err_var_max = std::max(err_var_max, ev);
        }
        std::string csv = "stat,value\n";
        csv += "coordinates," + std::to_string(d) + "\n";
        csv += "chains," + std::to_string(zs.size()) + "\n";
        csv += "mean_abs_err_mean," + format_number(err_mean_sum / static_cast<double>(d)) + "\n";
        csv += "max_abs_err_mean," + format_number(err_mean_max) + "\n";
        csv += "mean_abs_err_var," + format_number(err_var_sum / static_cast<double>(d)) + "\n";
        csv += "max_abs_err_var," + format_number(err_var_max) + "\n";
        write_text_file(out_dir + "/latent_oracle.csv", csv);
        metrics.emplace_back("oracle_mean_err",
                             format_number(err_mean_sum / static_cast<double>(d)));
        metrics.emplace_back("oracle_var_err",
                             format_number(err_var_sum / static_cast<double>(d)));
    } else if (rc.eval_oracle != "none") {
        throw ConfigError("unknown eval.oracle: " + rc.eval_oracle);
    }

    write_text_file(out_dir + "/eval_metrics.csv", metrics_csv(metrics));
}

}  // namespace fieldgen
