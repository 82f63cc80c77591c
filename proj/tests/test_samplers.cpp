#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "doctest.h"
#include "fieldgen/samplers.hpp"
#include "json.hpp"

using namespace fieldgen;

namespace {

Tensor<double> random_tensor(const std::vector<int>& shape, std::uint64_t seed,
                             double scale = 1.0) {
    Tensor<double> t(shape);
    Rng rng = Rng::derive(seed, 0x7a);
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

// records the last (y, sigma) it denoised; output is a fixed linear map
struct RecordingState {
    Tensor<double> last_y;
    double last_sigma = -1.0;
};

ScoreSource recording_source(std::shared_ptr<RecordingState> state) {
    return {[state](const Tensor<double>& y, double sigma) {
        state->last_y = y;
        state->last_sigma = sigma;
        Tensor<double> out(y.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) out.data[i] = 0.5 * y.data[i];
        return out;
    }};
}

}  // namespace

TEST_CASE("score: fixed point, point mass, and gaussian closed forms") {
    Tensor<double> y = random_tensor({2, 3}, 1);

    ScoreSource identity{[](const Tensor<double>& yy, double) { return yy; }};
    Tensor<double> s0 = score(identity, y, 0.7);
    for (double v : s0.data) CHECK(v == 0.0);

    Tensor<double> z0 = random_tensor({2, 3}, 2);
    ScoreSource point = point_score_source(z0);
    Tensor<double> sp = score(point, y, 1.0);
    for (std::size_t i = 0; i < sp.data.size(); ++i)
        CHECK(sp.data[i] == doctest::Approx(z0.data[i] - y.data[i]).epsilon(1e-14));

    Tensor<double> mu({2, 3});
    ScoreSource gauss = gaussian_score_source(mu);
    for (double sigma : {0.5, 1.0, 2.0}) {
        Tensor<double> sg = score(gauss, y, sigma);
        for (std::size_t i = 0; i < sg.data.size(); ++i)
            CHECK(sg.data[i] ==
                  doctest::Approx(-y.data[i] / (1.0 + sigma * sigma)).epsilon(1e-13));
    }

    CHECK_THROWS_AS(score(identity, y, 0.0), ConfigError);
    ScoreSource bad{[](const Tensor<double>& yy, double) {
        Tensor<double> out(yy.shape);
        out.data[0] = std::nan("");
        return out;
    }};
    CHECK_THROWS_AS(score(bad, y, 1.0), NumericalError);
}

TEST_CASE("score times sigma^2 plus y reproduces the denoiser output") {
    ScoreSource warped{[](const Tensor<double>& yy, double sigma) {
        Tensor<double> out(yy.shape);
        for (std::size_t i = 0; i < yy.data.size(); ++i)
            out.data[i] = std::tanh(yy.data[i]) + 0.3 * sigma;
        return out;
    }};
    Rng rng = Rng::derive(4, 0x11);
    for (int trial = 0; trial < 50; ++trial) {
        double sigma = std::exp(rng.uniform(-3.0, 2.0));
        Tensor<double> y = random_tensor({7}, 50 + static_cast<std::uint64_t>(trial), 2.0);
        Tensor<double> zhat = warped.denoise(y, sigma);
        Tensor<double> s = score(warped, y, sigma);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            double back = s.data[i] * sigma * sigma + y.data[i];
            CHECK(std::abs(back - zhat.data[i]) <=
                  1e-12 * std::max(1.0, std::abs(zhat.data[i])));
        }
    }
}

TEST_CASE("noise-level schedule: endpoints, midpoint, monotonicity, oracle") {
    std::vector<double> s = edm_sigma_schedule(128, 0.01, 10.0, 7.0);
    REQUIRE(s.size() == 129);
    CHECK(s[0] == 10.0);
    CHECK(s[127] == 0.01);
    CHECK(s[128] == 0.0);

    // three-step schedule: the interior value of the power interpolation
    std::vector<double> s3 = edm_sigma_schedule(3, 0.01, 10.0, 7.0);
    REQUIRE(s3.size() == 4);
    CHECK(s3[0] == 10.0);
    CHECK(s3[2] == 0.01);
    CHECK(s3[3] == 0.0);
    CHECK(s3[1] == doctest::Approx(0.7177132302454148).epsilon(1e-9));

    // single step degenerates to {sigma_max, 0}
    std::vector<double> s1 = edm_sigma_schedule(1, 0.01, 10.0, 7.0);
    CHECK(s1 == std::vector<double>{10.0, 0.0});

    Rng rng = Rng::derive(8, 0x22);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 2 + rng.uniform_int(199);
        double rho = rng.uniform(1.0, 10.0);
        double smin = rng.uniform(1e-3, 0.5);
        double smax = rng.uniform(1.0, 100.0);
        std::vector<double> sched = edm_sigma_schedule(n, smin, smax, rho);
        REQUIRE(static_cast<int>(sched.size()) == n + 1);
        for (std::size_t i = 0; i + 1 < sched.size(); ++i) CHECK(sched[i] > sched[i + 1]);

        // independently coded evaluation in extended precision
        long double a = powl(static_cast<long double>(smax), 1.0L / static_cast<long double>(rho));
        long double b = powl(static_cast<long double>(smin), 1.0L / static_cast<long double>(rho));
        for (int i = 1; i + 1 < n; ++i) {
            long double t = static_cast<long double>(i) / (n - 1);
            long double ref = powl(a + t * (b - a), static_cast<long double>(rho));
            CHECK(std::abs(sched[static_cast<std::size_t>(i)] - static_cast<double>(ref)) <=
                  1e-12 * static_cast<double>(ref));
        }
        CHECK(sched[0] == smax);
        CHECK(sched[static_cast<std::size_t>(n) - 1] == smin);
    }
}

TEST_CASE("zero score with no churn returns the initial draw unchanged") {
    SamplerConfig cfg;
    cfg.n_steps = 16;
    cfg.s_churn = 0.0;
    cfg.temperature = 0.5;
    ScoreSource identity{[](const Tensor<double>& yy, double) { return yy; }};

    Tensor<double> out = edm_sample(identity, cfg, {8}, 99);

    Tensor<double> expect({8});
    Rng init = Rng::derive(99, 0xed30);
    for (auto& v : expect.data) v = 10.0 * 0.5 * init.normal();
    CHECK(out.data == expect.data);
}

TEST_CASE("diffusion sampling is seed-deterministic") {
    SamplerConfig cfg;
    cfg.n_steps = 32;
    cfg.temperature = 1.0;
    Tensor<double> mu({6});
    mu.fill(1.5);
    ScoreSource src = gaussian_score_source(mu);
    Tensor<double> a = edm_sample(src, cfg, {6}, 5);
    Tensor<double> b = edm_sample(src, cfg, {6}, 5);
    Tensor<double> c = edm_sample(src, cfg, {6}, 6);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
}

TEST_CASE("diffusion sampler reproduces a known gaussian target") {
    SamplerConfig cfg;
    cfg.temperature = 1.0;
    const int d = 8;
    Tensor<double> mu({d});
    mu.fill(3.0);
    ScoreSource src = gaussian_score_source(mu);

    const int chains = 1000;
    std::vector<Tensor<double>> samples =
        run_chains(chains, 4, [&](int chain) {
            return edm_sample(src, cfg, {d}, Rng::derive(17, 0xc4a, static_cast<std::uint64_t>(chain)).u64());
        });

    for (int k = 0; k < d; ++k) {
        double m = 0.0, v = 0.0;
        for (const auto& s : samples) m += s.data[static_cast<std::size_t>(k)];
        m /= chains;
        for (const auto& s : samples) {
            double dd = s.data[static_cast<std::size_t>(k)] - m;
            v += dd * dd;
        }
        v /= chains - 1;
        INFO("coordinate ", k, " mean ", m, " var ", v);
        CHECK(std::abs(m - 3.0) < 0.1);
        CHECK(std::abs(v - 1.0) < 0.15);
    }
}

TEST_CASE("free particle at rest stays at rest") {
    SamplerConfig cfg;
    cfg.wjs_steps = 50;
    cfg.wjs_noise_scale = 0.0;
    cfg.delta = 0.5;
    ScoreSource identity{[](const Tensor<double>& yy, double) { return yy; }};  // score == 0
    Tensor<double> y0 = random_tensor({5}, 7);
    Tensor<double> y = wjs_walk(identity, 1.0, cfg, 3, y0);
    CHECK(y.data == y0.data);
}

TEST_CASE("langevin walk reaches the smoothed stationary variance") {
    const double sigma = 1.0;
    SamplerConfig cfg;
    cfg.wjs_steps = 5000;
    cfg.delta = 0.5;
    cfg.gamma = 1.0;
    Tensor<double> mu({4});
    ScoreSource src = gaussian_score_source(mu);  // smoothed marginal N(0, (1+sigma^2) I)

    std::vector<Tensor<double>> traj;
    Tensor<double> y0 = random_tensor({4}, 23);
    wjs_walk(src, sigma, cfg, 41, y0, &traj);
    REQUIRE(static_cast<int>(traj.size()) == cfg.wjs_steps);

    double v = 0.0;
    std::int64_t n = 0;
    for (std::size_t t = 1000; t < traj.size(); ++t)
        for (double val : traj[t].data) {
            v += val * val;
            ++n;
        }
    v /= static_cast<double>(n);
    INFO("empirical variance ", v);
    CHECK(std::abs(v - (1.0 + sigma * sigma)) / (1.0 + sigma * sigma) < 0.10);
}

TEST_CASE("jump denoises in closed form and takes no randomness") {
    Tensor<double> z0 = random_tensor({6}, 31);
    ScoreSource point = point_score_source(z0);
    Tensor<double> y = random_tensor({6}, 32, 3.0);
    CHECK(wjs_jump(point, y, 2.5).data == z0.data);

    Tensor<double> mu({6});
    ScoreSource gauss = gaussian_score_source(mu);
    Tensor<double> j1 = wjs_jump(gauss, y, 2.0);
    Tensor<double> j2 = wjs_jump(gauss, y, 2.0);
    CHECK(j1.data == j2.data);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        CHECK(j1.data[i] == doctest::Approx(y.data[i] / 5.0).epsilon(1e-14));
}

TEST_CASE("single-measurement sampling equals walk plus jump exactly") {
    SamplerConfig cfg;
    cfg.wjs_sigma = 2.0;
    cfg.wjs_m = 1;
    cfg.wjs_steps = 30;
    cfg.delta = 1.0;
    Tensor<double> mu({6});
    mu.fill(0.5);
    ScoreSource src = gaussian_score_source(mu);

    const std::uint64_t seed = 77;
    Tensor<double> got = wjs_m_sample(src, cfg, {6}, seed);

    Tensor<double> y0({6});
    Rng init = Rng::derive(seed, 0x33a1);
    const double init_std = std::sqrt(cfg.wjs_sigma * cfg.wjs_sigma + 1.0);
    for (auto& v : y0.data) v = init_std * init.normal();
    Tensor<double> walked =
        wjs_walk(src, cfg.wjs_sigma, cfg, Rng::derive(seed, 0x3a1, 1).u64(), y0);
    Tensor<double> expect = wjs_jump(src, walked, cfg.wjs_sigma);
    CHECK(got.data == expect.data);
}

TEST_CASE("multi-measurement accounting: running mean and effective jump noise") {
    CHECK((2.0 + 4.0) / 2.0 == 3.0);
    CHECK(7.0 / std::sqrt(16.0) == 1.75);

    auto state = std::make_shared<RecordingState>();
    ScoreSource src = recording_source(state);
    SamplerConfig cfg;
    cfg.wjs_sigma = 7.0;
    cfg.wjs_m = 2;
    cfg.wjs_steps = 5;
    cfg.delta = 0.5;

    std::vector<Tensor<double>> measurements;
    wjs_m_sample(src, cfg, {3}, 13, &measurements);
    REQUIRE(measurements.size() == 2);

    // the final denoise call saw the empirical mean at sigma/sqrt(m)
    CHECK(state->last_sigma == 7.0 / std::sqrt(2.0));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(state->last_y.data[i] ==
              doctest::Approx((measurements[0].data[i] + measurements[1].data[i]) / 2.0)
                  .epsilon(1e-15));
}

TEST_CASE("both samplers cover both modes of a symmetric mixture") {
    const double mode = 4.0;
    const int d = 4;
    const int chains = 1000;
    ScoreSource src = mixture_score_source(mode);

    auto classify = [&](const std::vector<Tensor<double>>& samples) {
        int plus = 0;
        for (const auto& s : samples) {
            double total = 0.0;
            for (double v : s.data) total += v;
            if (total > 0.0) ++plus;
        }
        return plus;
    };

    SamplerConfig edm;
    edm.temperature = 1.0;
    std::vector<Tensor<double>> dsamples = run_chains(chains, 4, [&](int chain) {
        return edm_sample(src, edm, {d}, Rng::derive(3, 0xc4a, static_cast<std::uint64_t>(chain)).u64());
    });
    int dplus = classify(dsamples);
    INFO("diffusion basin split ", dplus, "/", chains - dplus);
    CHECK(dplus >= 300);
    CHECK(chains - dplus >= 300);

    SamplerConfig wjs;  // paper walk-jump defaults
    std::vector<Tensor<double>> wsamples = run_chains(chains, 4, [&](int chain) {
        return wjs_m_sample(src, wjs, {d}, Rng::derive(4, 0xc4a, static_cast<std::uint64_t>(chain)).u64());
    });
    int wplus = classify(wsamples);
    INFO("walk-jump basin split ", wplus, "/", chains - wplus);
    CHECK(wplus >= 300);
    CHECK(chains - wplus >= 300);
}

TEST_CASE("per-chain conditioning rotations: identity chain, frame round trip, distinctness") {
    ToyConfig tc;
    Complex cx = gen_toy_complex(55, tc);

    ChainFrame f0 = rotate_condition_per_chain(cx.target, 0, 19);
    for (std::size_t i = 0; i < cx.target.atoms.size(); ++i) {
        CHECK(f0.target.atoms[i].position.x == cx.target.atoms[i].position.x);
        CHECK(f0.target.atoms[i].position.y == cx.target.atoms[i].position.y);
        CHECK(f0.target.atoms[i].position.z == cx.target.atoms[i].position.z);
    }

    // a deterministic, equivariant stand-in for the full pipeline: the
    // "recovered" atoms are the conditioning atoms themselves
    ChainFrame f7 = rotate_condition_per_chain(cx.target, 7, 19);
    std::vector<Vec3> recovered;
    for (const auto& atom : f7.target.atoms) recovered.push_back(unrotate(f7, atom.position));
    const auto& ref = f0.target.atoms;
    REQUIRE(recovered.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(recovered[i].x - ref[i].position.x) < 1e-9);
        for (std::size_t j = i + 1; j < ref.size(); ++j) {
            double da = (recovered[i] - recovered[j]).norm();
            double db = (ref[i].position - ref[j].position).norm();
            CHECK(std::abs(da - db) < 1e-9);
        }
    }

    std::vector<Mat3> rots;
    for (int c = 0; c < 100; ++c) rots.push_back(rotate_condition_per_chain(cx.target, c, 19).rotation);
    int collisions = 0;
    for (std::size_t i = 0; i < rots.size(); ++i)
        for (std::size_t j = i + 1; j < rots.size(); ++j) {
            double diff = 0.0;
            for (int k = 0; k < 9; ++k) diff = std::max(diff, std::abs(rots[i].m[static_cast<std::size_t>(k)] - rots[j].m[static_cast<std::size_t>(k)]));
            if (diff < 1e-9) ++collisions;
        }
    CHECK(collisions == 0);
}

TEST_CASE("chain fan-out preserves indexing and propagates failures") {
    std::vector<Tensor<double>> out = run_chains(17, 3, [](int chain) {
        Tensor<double> t({1});
        t.data[0] = chain;
        return t;
    });
    for (int c = 0; c < 17; ++c) CHECK(out[static_cast<std::size_t>(c)].data[0] == c);

    CHECK_THROWS_AS(run_chains(8, 3,
                               [](int chain) -> Tensor<double> {
                                   if (chain == 5) throw NumericalError("chain blew up");
                                   return Tensor<double>({1});
                               }),
                    NumericalError);
}

TEST_CASE("sampler manifest records config, seed, and rotations") {
    SamplerConfig cfg;
    std::vector<Mat3> rots(3);
    rots[1] = Mat3::rot_z(0.5);
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "fieldgen_manifest.json").string();
    write_sampler_manifest(path, cfg, "edm", 42, 3, rots, 1.25);

    std::ifstream in(path);
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    CHECK(j["mode"] == "edm");
    CHECK(j["seed"] == 42);
    CHECK(j["chains"] == 3);
    CHECK(j["config"]["n_steps"] == 128);
    CHECK(j["config"]["temperature"] == 0.5);
    CHECK(j["rotations"].size() == 3);
    CHECK(j["rotations"][0][0] == 1.0);
    CHECK(j["rotations"][1][0] == doctest::Approx(std::cos(0.5)));
    fs::remove(path);
}
