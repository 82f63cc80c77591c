#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "fieldgen/config.hpp"
#include "fieldgen/errors.hpp"

using namespace fieldgen;

TEST_CASE("config text parses keys, comments and blank lines") {
    ConfigMap m = ConfigMap::parse(
        "# comment\n"
        "\n"
        "seed = 42\n"
        "paths.dataset=/tmp/ds\n"
        "  vae.beta =  1e-4  \n");
    REQUIRE(m.entries.size() == 3);
    CHECK(m.entries[0] == std::pair<std::string, std::string>{"seed", "42"});
    CHECK(m.entries[1].second == "/tmp/ds");
    CHECK(m.entries[2] == std::pair<std::string, std::string>{"vae.beta", "1e-4"});
}

TEST_CASE("malformed config lines are rejected with line numbers") {
    CHECK_THROWS_WITH_AS(ConfigMap::parse("novalue\n"), "config line 1: expected key=value",
                         ConfigError);
    CHECK_THROWS_WITH_AS(ConfigMap::parse("a=1\n=2\n"), "config line 2: empty key",
                         ConfigError);
    CHECK_THROWS_WITH_AS(ConfigMap::parse("a=1\na=2\n"), "config line 2: duplicate key a",
                         ConfigError);
}

TEST_CASE("unknown keys are rejected by name") {
    RunConfig rc;
    CHECK_THROWS_WITH_AS(rc.apply(ConfigMap::parse("bogus.key=1\n")),
                         "unknown config key: bogus.key", ConfigError);
    CHECK_THROWS_WITH_AS(rc.apply(ConfigMap::parse("Seed=1\n")), "unknown config key: Seed",
                         ConfigError);
}

TEST_CASE("typed keys parse and reject garbage") {
    RunConfig rc;
    rc.apply(ConfigMap::parse("seed=9\nvae.beta=2.5e-4\nvae.augment=false\n"
                              "codec.widths=8,16,32\ndata.elements=CN\n"));
    CHECK(rc.seed == 9);
    CHECK(rc.vae_beta == 2.5e-4);
    CHECK(rc.vae_augment == false);
    CHECK(rc.codec_widths == std::vector<int>{8, 16, 32});
    CHECK(rc.data_elements == "CN");

    CHECK_THROWS_AS(rc.apply(ConfigMap::parse("vae.beta=abc\n")), ConfigError);
    CHECK_THROWS_AS(rc.apply(ConfigMap::parse("vae.batch=1.5\n")), ConfigError);
    CHECK_THROWS_AS(rc.apply(ConfigMap::parse("vae.augment=maybe\n")), ConfigError);
    CHECK_THROWS_AS(rc.apply(ConfigMap::parse("seed=-1\n")), ConfigError);
}

TEST_CASE("resolved config round-trips exactly") {
    RunConfig rc;
    rc.apply(ConfigMap::parse("seed=77\nsample.s_noise=1.003\nmfn.freq_scale=15.25\n"
                              "recover.step0=0.05\npaths.codec=/a/b.ckpt\n"));
    std::string text = rc.resolved();

    RunConfig rc2;
    rc2.apply(ConfigMap::parse(text));
    CHECK(rc2.resolved() == text);
    CHECK(rc2.seed == 77);
    CHECK(rc2.sample_s_noise == 1.003);
    CHECK(rc2.mfn_freq_scale == 15.25);
    CHECK(rc2.recover_step0 == 0.05);
    CHECK(rc2.path_codec == "/a/b.ckpt");

    // every bound key appears exactly once
    ConfigMap all = ConfigMap::parse(text);
    CHECK(all.entries.size() > 70);
}

TEST_CASE("number formatting is shortest-round-trip") {
    CHECK(format_number(16.0) == "16");
    CHECK(format_number(0.25) == "0.25");
    CHECK(format_number(1e-5) == "1e-05");
    CHECK(format_number(1.003) == "1.003");
    double v = 0.1 + 0.2;
    CHECK(std::stod(format_number(v)) == v);
}

TEST_CASE("module config builders propagate fields") {
    RunConfig rc;
    rc.apply(ConfigMap::parse("seed=5\ncodec.latent_channels=4\nmfn.width=32\n"
                              "target.resolution=2\ndenoiser.steps=12\nsample.wjs_m=4\n"
                              "recover.threshold=0.4\ndata.modality_count=2\n"));
    CHECK(rc.encoder_config().latent_channels == 4);
    CHECK(rc.mfn_config().latent_channels == 4);
    CHECK(rc.mfn_config().width == 32);
    CHECK(rc.unet_config().latent_channels == 4);
    CHECK(rc.unet_config().modalities == 2);
    CHECK(rc.tenc_config().latent_channels == 4);
    CHECK(rc.target_spec().resolution == 2.0);
    CHECK(rc.target_spec().channels == kTargetChannelCount);
    CHECK(rc.field_spec().channels == kElementCount);
    CHECK(rc.denoiser_config().steps == 12);
    CHECK(rc.denoiser_config().seed == 5);
    CHECK(rc.vae_config().seed == 5);
    CHECK(rc.sampler_config().wjs_m == 4);
    CHECK(rc.recovery_options().threshold == 0.4);

    CHECK_THROWS_AS(
        [&] {
            RunConfig bad;
            bad.apply(ConfigMap::parse("codec.widths=8,16\ncodec.pool=0\n"));
            return bad.encoder_config();
        }(),
        ConfigError);
}

TEST_CASE("thread resolution respects the environment cap") {
    RunConfig rc;
    rc.threads = 8;
    unsetenv("FIELDGEN_THREADS");
    CHECK(rc.resolve_threads() == 8);

    setenv("FIELDGEN_THREADS", "2", 1);
    CHECK(rc.resolve_threads() == 2);
    rc.threads = 1;
    CHECK(rc.resolve_threads() == 1);

    rc.threads = 0;  // default: hardware concurrency, still capped
    int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    CHECK(rc.resolve_threads() == std::min(hw, 2));

    setenv("FIELDGEN_THREADS", "zebra", 1);
    CHECK_THROWS_AS(rc.resolve_threads(), ConfigError);
    unsetenv("FIELDGEN_THREADS");
}
