#include <doctest.h>

#include "skyhdr/config.hpp"
#include "skyhdr/error.hpp"

using namespace skyhdr;

TEST_CASE("standard config") {
    Config c = Config::standard();
    CHECK(c.get_int("train.batch_size") == 32);
    CHECK(c.get_double("tonemap.gamma") == doctest::Approx(2.2));
    CHECK(c.get_ints("net.encoder_widths") == std::vector<int>{64, 128, 256, 256});
    c.load_text("# comment\ntrain.lr = 0.01\n\nnet.latent=32\n");
    CHECK(c.get_double("train.lr") == doctest::Approx(0.01));
    CHECK(c.get_int("net.latent") == 32);
    c.set_override("train.epochs=7");
    CHECK(c.get_int("train.epochs") == 7);
    CHECK_THROWS_AS(c.set("train.epoch", "3"), UsageError);
    CHECK_THROWS_AS(c.set_override("train.epochs"), UsageError);
    CHECK_THROWS_AS(c.load_text("bogus line"), UsageError);
    c.set("train.batch_size", "abc");
    CHECK_THROWS_AS(c.get_int("train.batch_size"), UsageError);
    c.apply_profile("paper");
    CHECK(c.get_int("train.batch_size") == 128);
    CHECK_THROWS_AS(c.apply_profile("huge"), UsageError);
    const Config std_cfg = Config::standard();
    const std::string keys = std_cfg.describe_keys();
    for (const auto& k : std_cfg.schema()) CHECK(keys.find(k.name) != std::string::npos);
    Config d = Config::standard();
    d.load_text(Config::standard().dump());
    CHECK(d.dump() == Config::standard().dump());
}
