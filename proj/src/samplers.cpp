#include "fieldgen/samplers.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace fieldgen {

ChainFrame rotate_condition_per_chain(const Molecule& target, int chain_index,
                                      std::uint64_t seed) {
    if (chain_index < 0) throw ConfigError("chain index must be non-negative");
    ChainFrame frame;
    frame.center = target.bbox_center();
    frame.rotation = Mat3::identity();
    frame.target = target;
    if (chain_index == 0) return frame;

    RigidTransform rt = random_rigid_transform(
        Rng::derive(seed, 0x207, static_cast<std::uint64_t>(chain_index)).u64(), 0.0);
    frame.rotation = rt.rotation;
    for (auto& atom : frame.target.atoms)
        atom.position = frame.rotation.apply(atom.position - frame.center) + frame.center;
    return frame;
}

std::vector<Tensor<double>> run_chains(int chains, int threads,
                                       const std::function<Tensor<double>(int)>& fn) {
    if (chains < 1) throw ConfigError("run_chains: need at least one chain");
    threads = std::max(1, std::min(threads, chains));
    std::vector<Tensor<double>> out(static_cast<std::size_t>(chains));
    if (threads == 1) {
        for (int c = 0; c < chains; ++c) out[static_cast<std::size_t>(c)] = fn(c);
        return out;
    }

    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&]() {
        for (;;) {
            int c = next.fetch_add(1);
            if (c >= chains) return;
            try {
                out[static_cast<std::size_t>(c)] = fn(c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

void write_sampler_manifest(const std::string& path, const SamplerConfig& cfg,
                            const std::string& mode, std::uint64_t seed, int chains,
                            const std::vector<Mat3>& rotations, double wall_s) {
    nlohmann::json j;
    j["mode"] = mode;
    j["seed"] = seed;
    j["chains"] = chains;
    j["wall_s"] = wall_s;
    j["config"] = {{"n_steps", cfg.n_steps},
                   {"sigma_min", cfg.sigma_min},
                   {"sigma_max", cfg.sigma_max},
                   {"rho", cfg.rho},
                   {"s_churn", cfg.s_churn},
                   {"s_min", cfg.s_min},
                   {"s_max", cfg.s_max},
                   {"s_noise", cfg.s_noise},
                   {"temperature", cfg.temperature},
                   {"wjs_sigma", cfg.wjs_sigma},
                   {"wjs_m", cfg.wjs_m},
                   {"wjs_steps", cfg.wjs_steps},
                   {"gamma", cfg.gamma},
                   {"delta", cfg.delta}};
    j["rotations"] = nlohmann::json::array();
    for (const Mat3& r : rotations) {
        nlohmann::json row = nlohmann::json::array();
        for (double v : r.m) row.push_back(v);
        j["rotations"].push_back(row);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace fieldgen
