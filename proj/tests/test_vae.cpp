#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fieldgen/gradcheck.hpp"
#include "fieldgen/vae.hpp"

using namespace fieldgen;

namespace {

EncoderConfig tiny_enc() {
    EncoderConfig e;
    e.stem_width = 6;
    e.widths = {6};
    e.pool = {0};
    e.latent_channels = 3;
    return e;
}

MfnConfig tiny_dec() {
    MfnConfig d;
    d.depth = 2;
    d.width = 6;
    d.latent_channels = 3;
    d.out_channels = kElementCount;
    d.freq_scale = 4.0;
    return d;
}

GridSpec coarse_spec(double resolution) {
    GridSpec s;
    s.extent = 16.0;
    s.resolution = resolution;
    s.channels = kElementCount;
    return s;
}

Molecule small_molecule() {
    Molecule m;
    m.atoms = {{Element::C, {0.3, -0.2, 0.1}},
               {Element::N, {1.5, 0.4, -0.6}},
               {Element::O, {-1.1, 0.9, 0.8}},
               {Element::C, {0.2, 1.6, -1.0}}};
    return m;
}

}  // namespace

TEST_CASE("encode is deterministic with documented shapes and clamped log-std") {
    Codec<float> codec(EncoderConfig{}, MfnConfig{}, coarse_spec(2.0), 1);
    Molecule m = small_molecule();

    auto [mu1, sg1] = codec.encode(m);
    auto [mu2, sg2] = codec.encode(m);
    CHECK(mu1.values.data == mu2.values.data);
    CHECK(sg1.values.data == sg2.values.data);
    CHECK(mu1.values.shape == std::vector<int>{16, 8, 8, 8});
    CHECK(sg1.values.shape == std::vector<int>{16, 8, 8, 8});

    // saturate the log-std head in both directions; sigma obeys the clamp
    codec.enc_ps.at("ls_head.b").value.fill(100.0f);
    auto [mu3, hi] = codec.encode(m);
    (void)mu3;
    for (float v : hi.values.data) CHECK(v == doctest::Approx(std::exp(4.0)).epsilon(1e-6));
    codec.enc_ps.at("ls_head.b").value.fill(-100.0f);
    auto [mu4, lo] = codec.encode(m);
    (void)mu4;
    for (float v : lo.values.data) CHECK(v == doctest::Approx(std::exp(-8.0)).epsilon(1e-6));
}

TEST_CASE("reparameterize: zero sigma, determinism, and moments") {
    Tensor<double> mu({4, 2, 2, 2});
    Tensor<double> sigma(mu.shape);
    Rng rng = Rng::derive(5, 0xb0);
    for (auto& v : mu.data) v = rng.normal();

    Tensor<double> z0 = reparameterize(mu, sigma, 7);
    CHECK(z0.data == mu.data);

    for (auto& v : sigma.data) v = 0.5 + rng.uniform_pos();
    Tensor<double> za = reparameterize(mu, sigma, 7);
    Tensor<double> zb = reparameterize(mu, sigma, 7);
    CHECK(za.data == zb.data);
    Tensor<double> zc = reparameterize(mu, sigma, 8);
    CHECK(za.data != zc.data);

    // one cell, many draws: mean within 4 standard errors, variance within 5%
    const int n = 100000;
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor<double> z = reparameterize(mu, sigma, 1000 + static_cast<std::uint64_t>(i));
        m += z.data[0];
        m2 += z.data[0] * z.data[0];
    }
    m /= n;
    double var = m2 / n - m * m;
    double se = sigma.data[0] / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(m - mu.data[0]) < 4 * se);
    CHECK(var == doctest::Approx(sigma.data[0] * sigma.data[0]).epsilon(0.05));
}

TEST_CASE("kl_term closed form and positivity") {
    Tensor<double> mu({1}), sigma({1});
    sigma.data[0] = 1.0;
    CHECK(kl_term(mu, sigma) == 0.0);
    mu.data[0] = 1.0;
    CHECK(kl_term(mu, sigma) == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng = Rng::derive(6, 0x4b);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> m({3, 4}), s({3, 4});
        for (auto& v : m.data) v = rng.normal();
        for (auto& v : s.data) v = std::exp(rng.normal() * 0.5);
        double got = kl_term(m, s);
        long double oracle = 0.0L;
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            long double mm = m.data[i], ss = s.data[i];
            oracle += 0.5L * (mm * mm + ss * ss - 1.0L - 2.0L * std::log(ss));
        }
        CHECK(std::abs(got - static_cast<double>(oracle)) < 1e-12);
        CHECK(got >= 0.0);
    }
}

TEST_CASE("recon_loss: oracle decoder gives zero, zero decoder gives field power") {
    Molecule m;
    m.atoms = {{Element::C, {0.5, -0.5, 0.25}}};
    CoordSampleConfig cs;

    double zero_for_truth =
        recon_loss_fn([&](const Vec3& p) { return occupancy(m, p); }, m, 512, cs, 42);
    CHECK(zero_for_truth == 0.0);

    double loss = recon_loss_fn([](const Vec3&) { return Channels{}; }, m, 512, cs, 42);
    Rng rng = Rng::derive(42, 0x5ec0);
    auto coords = sample_field_coords(m, 512, cs, rng);
    double expect = 0.0;
    for (const Vec3& p : coords) {
        Channels v = occupancy(m, p);
        for (double c : v) expect += c * c;
    }
    expect /= 512.0 * kElementCount;
    CHECK(loss == doctest::Approx(expect).epsilon(1e-15));
    CHECK(loss > 0.0);

    double again = recon_loss_fn([](const Vec3&) { return Channels{}; }, m, 512, cs, 42);
    CHECK(again == loss);
}

TEST_CASE("near-atom coordinate sampling respects fraction and radius") {
    Molecule m = small_molecule();
    CoordSampleConfig cs;
    cs.near_fraction = 0.5;
    cs.near_radius = 1.5;
    Rng rng = Rng::derive(9, 0x77);
    auto coords = sample_field_coords(m, 2000, cs, rng);
    REQUIRE(coords.size() == 2000);
    int within = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        double best = 1e9;
        for (const Atom& a : m.atoms) best = std::min(best, (coords[i] - a.position).norm());
        if (best <= 1.5 + 1e-9) ++within;
    }
    CHECK(within == 1000);  // the declared near half really is near
    for (const Vec3& p : coords) {
        CHECK(std::abs(p.x) <= 8.0);
        CHECK(std::abs(p.y) <= 8.0);
        CHECK(std::abs(p.z) <= 8.0);
    }
}

TEST_CASE("full objective gradient matches finite differences (tiny config)") {
    Codec<double> codec(tiny_enc(), tiny_dec(), coarse_spec(4.0), 3);
    Molecule m = small_molecule();
    VaeConfig cfg;
    cfg.beta = 0.01;  // large enough that the KL path contributes visibly

    auto loss = [&]() {
        VaeItemStats st = vae_item_loss(codec, m, cfg, 24, 11, 12, 1.0);
        return st.recon + cfg.beta * st.kl;
    };

    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.max_components_per_tensor = 10;
    opt.seed = 77;
    auto enc_report = grad_check_report(codec.enc_ps, loss, opt);
    INFO("encoder worst " << enc_report.worst_param << " analytic " << enc_report.analytic
                          << " numeric " << enc_report.numeric);
    CHECK(enc_report.max_rel_err < 1e-4);

    auto dec_report = grad_check_report(codec.dec_ps, loss, opt);
    INFO("decoder worst " << dec_report.worst_param << " analytic " << dec_report.analytic
                          << " numeric " << dec_report.numeric);
    CHECK(dec_report.max_rel_err < 1e-4);
}

TEST_CASE("training aborts on non-finite loss with a diagnostic") {
    Codec<float> codec(tiny_enc(), tiny_dec(), coarse_spec(4.0), 4);
    codec.enc_ps.at("stem.w").value.fill(std::numeric_limits<float>::quiet_NaN());
    std::vector<Complex> data(1);
    data[0].binder = small_molecule();
    data[0].target.atoms = {{Element::C, {12.0, 0.0, 0.0}}};
    VaeConfig cfg;
    cfg.batch = 1;
    cfg.epochs = 1;
    cfg.coords_per_step = 32;
    cfg.augment = false;
    CHECK_THROWS_WITH_AS(train_autoencoder(codec, data, cfg, ""),
                         doctest::Contains("non-finite"), NumericalError);
}

TEST_CASE("loss decreases over early training (window-50 smoothing)") {
    Rng drng = Rng::derive(17, 0x70);
    std::vector<Complex> data;
    ToyConfig tc;
    for (int i = 0; i < 12; ++i) {
        tc.modality = i % 3;
        data.push_back(gen_toy_complex(500 + static_cast<std::uint64_t>(i), tc));
    }
    EncoderConfig ec = tiny_enc();
    ec.stem_width = 8;
    ec.widths = {8, 12};
    ec.pool = {0, 0};
    ec.latent_channels = 4;
    MfnConfig dc = tiny_dec();
    dc.depth = 3;
    dc.width = 24;
    dc.latent_channels = 4;
    dc.freq_scale = 8.0;
    Codec<float> codec(ec, dc, coarse_spec(2.0), 5);

    VaeConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 67;  // 3 steps/epoch -> just over 200 steps
    cfg.coords_per_step = 1024;
    cfg.adam.lr = 2e-3;
    cfg.seed = 99;
    std::vector<double> trace;
    train_autoencoder(codec, data, cfg, "", &trace);
    REQUIRE(trace.size() >= 200);

    const int w = 50;
    std::vector<double> smooth;
    for (std::size_t i = 0; i + w <= 200; ++i) {
        double s = 0.0;
        for (int j = 0; j < w; ++j) s += trace[i + static_cast<std::size_t>(j)];
        smooth.push_back(s / w);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] < smooth[i - 1]);
}

TEST_CASE("KL pressure: beta=0 run ends with strictly larger KL than beta=1e-5") {
    Rng drng = Rng::derive(23, 0x71);
    std::vector<Complex> data;
    ToyConfig tc;
    for (int i = 0; i < 4; ++i) data.push_back(gen_toy_complex(900 + static_cast<std::uint64_t>(i), tc));

    auto run = [&](double beta) {
        EncoderConfig ec = tiny_enc();
        ec.latent_channels = 4;
        MfnConfig dc = tiny_dec();
        dc.latent_channels = 4;
        dc.width = 12;
        Codec<float> codec(ec, dc, coarse_spec(4.0), 6);
        VaeConfig cfg;
        cfg.beta = beta;
        cfg.batch = 4;
        cfg.epochs = 600;
        cfg.coords_per_step = 512;
        cfg.adam.lr = 2e-3;
        cfg.seed = 3;
        cfg.augment = false;
        train_autoencoder(codec, data, cfg, "");
        double kl = 0.0;
        for (const Complex& cx : data) {
            auto [mu, sg] = codec.encode(cx.binder);
            kl += kl_term(mu.values, sg.values);
        }
        return kl / static_cast<double>(data.size());
    };

    double kl_free = run(0.0);
    double kl_reg = run(1e-5);
    INFO("kl beta=0: " << kl_free << "  kl beta=1e-5: " << kl_reg);
    CHECK(kl_free > kl_reg);
}

TEST_CASE("single-binder overfit drives reconstruction below 1e-4") {
    std::vector<Complex> data(1);
    ToyConfig tc;
    data[0] = gen_toy_complex(1234, tc);

    EncoderConfig ec;
    ec.stem_width = 16;
    ec.widths = {16, 32};
    ec.pool = {0, 0};
    ec.latent_channels = 8;
    MfnConfig dc;
    dc.depth = 3;
    dc.width = 64;
    dc.latent_channels = 8;
    dc.freq_scale = 8.0;
    Codec<float> codec(ec, dc, coarse_spec(2.0), 8);

    VaeConfig cfg;
    cfg.batch = 1;
    cfg.epochs = 5000;
    cfg.coords_per_step = 1024;
    cfg.adam.lr = 1e-3;
    cfg.seed = 21;
    cfg.augment = false;
    TrainAeResult r = train_autoencoder(codec, data, cfg, "");
    INFO("final recon " << r.final_recon << " kl " << r.final_kl);
    CHECK(r.final_recon < 1e-4);
}

TEST_CASE("codec checkpoint round trip preserves encodings; resume matches straight run") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "fieldgen_vae_ckpt").string();
    fs::remove_all(dir);

    std::vector<Complex> data;
    ToyConfig tc;
    for (int i = 0; i < 8; ++i) data.push_back(gen_toy_complex(40 + static_cast<std::uint64_t>(i), tc));

    auto make = [&]() {
        EncoderConfig ec = tiny_enc();
        MfnConfig dc = tiny_dec();
        return std::make_unique<Codec<float>>(ec, dc, coarse_spec(4.0), 9);
    };

    VaeConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 4;  // 2 steps per epoch -> 8 steps
    cfg.coords_per_step = 256;
    cfg.seed = 55;

    auto straight = make();
    train_autoencoder(*straight, data, cfg, dir + "/a");

    auto resumed = make();
    VaeConfig half = cfg;
    half.epochs = 2;
    train_autoencoder(*resumed, data, half, dir + "/b");
    VaeConfig rest = cfg;
    rest.resume = true;
    train_autoencoder(*resumed, data, rest, dir + "/b");

    for (const Param<float>* p : straight->enc_ps.all())
        CHECK(p->value.data == resumed->enc_ps.at(p->name).value.data);
    for (const Param<float>* p : straight->dec_ps.all())
        CHECK(p->value.data == resumed->dec_ps.at(p->name).value.data);

    // save/load round trip reproduces encodings exactly
    straight->save(dir + "/codec.ckpt");
    auto loaded = make();
    loaded->load(Checkpoint::load(dir + "/codec.ckpt"));
    auto [mu_a, sg_a] = straight->encode(data[0].binder);
    auto [mu_b, sg_b] = loaded->encode(data[0].binder);
    CHECK(mu_a.values.data == mu_b.values.data);
    CHECK(sg_a.values.data == sg_b.values.data);
    fs::remove_all(dir);
}
