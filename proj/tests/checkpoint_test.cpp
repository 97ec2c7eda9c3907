#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "dmtpp/checkpoint.hpp"

using namespace dmtpp;

namespace {

ModelCheckpoint sample_checkpoint(bool with_latent) {
    ModelCheckpoint c;
    c.U = 3;
    c.Z = 0;
    c.p = 2;
    c.xi = init_variational(3, 1);
    Rng rng(1);
    auto x = c.xi.flatten();
    for (auto& v : x) v = rng.normal();
    c.xi.assign(x);
    c.time.mu = {0.1, -0.2, 0.3};
    c.time.var = {0.5, 0.6, 0.7};
    c.time.mu0 = 0.05;
    c.time.var0 = 0.9;
    c.config.Q = 4;
    c.config.seed = 123456789012345ULL;
    c.log.epochs = {{1, -10.5, -3.25, 0}, {2, std::numeric_limits<double>::quiet_NaN(),
                                           -std::numeric_limits<double>::infinity(), 2}};
    c.log.best_epoch = 1;
    if (with_latent) {
        LinkConfig link;
        link.U = 3;
        link.E = 2;
        link.groups = {0, 0};
        link.order_base = 5;
        link.num_orders = 3;
        LatentBlock b{link, init_latent(link)};
        for (auto& w : b.params.omega) w = rng.normal();
        c.latent = b;
    }
    return c;
}

} // namespace

TEST(Checkpoint, RoundTripIsExact) {
    for (bool latent : {false, true}) {
        const auto c = sample_checkpoint(latent);
        const auto path = std::filesystem::temp_directory_path() / "dmtpp_checkpoint_test.json";
        save_checkpoint(c, path);
        const auto back = load_checkpoint(path);
        std::filesystem::remove(path);
        EXPECT_EQ(back.xi.flatten(), c.xi.flatten());
        EXPECT_EQ(back.time.mu, c.time.mu);
        EXPECT_EQ(back.time.var0, c.time.var0);
        EXPECT_EQ(back.config.Q, 4);
        EXPECT_EQ(back.config.seed, c.config.seed);
        ASSERT_EQ(back.log.epochs.size(), 2u);
        EXPECT_TRUE(std::isnan(back.log.epochs[1].objective));
        EXPECT_EQ(back.log.epochs[1].validation, -std::numeric_limits<double>::infinity());
        EXPECT_EQ(back.latent.has_value(), latent);
        if (latent) {
            EXPECT_EQ(back.latent->params.flatten(), c.latent->params.flatten());
            EXPECT_EQ(back.latent->link.order_base, 5);
        }
        EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    }
}

TEST(Checkpoint, RejectsBadInput) {
    auto j = nlohmann::json::parse(to_json(sample_checkpoint(false)).dump());
    auto bad = j;
    bad["version"] = 2;
    EXPECT_THROW(checkpoint_from_json(bad), DataError);
    bad = j;
    bad["variational"]["delta_raw"] = {1.0};
    EXPECT_THROW(checkpoint_from_json(bad), DataError);
    bad = j;
    bad.erase("time");
    EXPECT_THROW(checkpoint_from_json(bad), DataError);
    bad = j;
    bad["format"] = "other";
    EXPECT_THROW(checkpoint_from_json(bad), DataError);
    EXPECT_THROW(load_checkpoint("/nonexistent/model.json"), DataError);
}

TEST(Checkpoint, AdoptModelShape) {
    const auto c = sample_checkpoint(false);
    Dataset d;
    d.U = 2;
    adopt_model_shape(c, d);
    EXPECT_EQ(d.U, 3);
    d.U = 4;
    EXPECT_THROW(adopt_model_shape(c, d), DataError);
    d.U = 3;
    d.Z = 2;
    EXPECT_THROW(adopt_model_shape(c, d), DataError);
}
