#include <cmath>

#include "birdrone/backbone.hpp"
#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace brd;
using Catch::Approx;

TEST_CASE("gelan block splits, aggregates, and fuses") {
    Rng rng(61);
    AelanConfig cf;
    cf.in = 8;
    cf.out = 12;
    cf.csp_depth = 3;
    REQUIRE(cf.transition_in() == 16);
    auto block = GelanBlock<double>::make(cf, rng);
    auto x = tensor_uniform<double>(Shape{2, 8, 6, 6}, rng, -1, 1);
    auto y = block.forward(x);
    REQUIRE(y.shape() == Shape{2, 12, 6, 6});

    AelanConfig bad;
    bad.in = 7;
    bad.out = 8;
    REQUIRE_THROWS(bad.validate());
}

TEST_CASE("aelan equals gelan while its offsets are zero") {
    // the deformable variant consumes the same RNG stream and starts with a
    // zero offset branch, so a fresh pair must agree to float precision
    for (int trial = 0; trial < 4; ++trial) {
        AelanConfig cf;
        cf.in = 8;
        cf.out = 8;
        cf.csp_depth = 2;

        cf.use_deformable = false;
        Rng r1(200 + trial);
        auto gelan = GelanBlock<double>::make(cf, r1);
        cf.use_deformable = true;
        Rng r2(200 + trial);
        auto aelan = GelanBlock<double>::make(cf, r2);

        Rng rx(300 + trial);
        auto x = tensor_uniform<double>(Shape{1, 8, 10, 10}, rx, -1, 1);
        auto yg = gelan.forward(x);
        auto ya = aelan.forward(x);
        REQUIRE(yg.shape() == ya.shape());
        for (std::size_t i = 0; i < yg.numel(); ++i)
            REQUIRE(std::abs(yg.data()[i] - ya.data()[i]) < 1e-9);
    }
}

TEST_CASE("aelan adds exactly the offset-branch parameters") {
    AelanConfig cf;
    cf.in = 8;
    cf.out = 8;
    cf.csp_depth = 2;
    Rng r1(62), r2(62);
    cf.use_deformable = false;
    auto gelan = GelanBlock<double>::make(cf, r1);
    cf.use_deformable = true;
    auto aelan = GelanBlock<double>::make(cf, r2);

    ParamList<double> pg, pa;
    gelan.params(pg, "b");
    aelan.params(pa, "b");
    // per deformable 3x3 conv over 4 channels: offset kernel 18*4*3*3 plus 18 biases
    const std::size_t per_conv = 18 * 4 * 3 * 3 + 18;
    const std::size_t convs = 2 * 2;  // csp_depth blocks, two convs each
    REQUIRE(param_count(pa) == param_count(pg) + per_conv * convs);
}

TEST_CASE("backbone emits P3, P4, P5 at strides 8, 16, 32") {
    ModelConfig cfg;
    cfg.image_size = 160;
    cfg.validate();
    Rng rng(63);
    auto bb = Backbone<float>::make(cfg, rng);
    auto x = tensor_uniform<float>(Shape{2, 1, 160, 160}, rng, 0, 1);
    auto [p3, p4, p5] = bb.forward(x);
    REQUIRE(p3.shape() == Shape{2, cfg.p3_ch, 20, 20});
    REQUIRE(p4.shape() == Shape{2, cfg.p4_ch, 10, 10});
    REQUIRE(p5.shape() == Shape{2, cfg.p5_ch, 5, 5});
}

TEST_CASE("backbone config validation rejects bad sizes") {
    ModelConfig cfg;
    cfg.image_size = 100;  // not a multiple of 32
    REQUIRE_THROWS(cfg.validate());
    cfg.image_size = 20;
    REQUIRE_THROWS(cfg.validate());
    cfg.image_size = 96;
    REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("attention placement responds to feature map size") {
    // at 160 px input P3 is 20x20 (gets the dual attention when enabled);
    // the backbone must run with and without the flags
    for (bool mpda : {false, true}) {
        ModelConfig cfg;
        cfg.image_size = 160;
        cfg.use_mpda = mpda;
        cfg.use_rmpda = mpda;
        Rng rng(64);
        auto bb = Backbone<float>::make(cfg, rng);
        auto x = tensor_uniform<float>(Shape{1, 1, 160, 160}, rng, 0, 1);
        auto [p3, p4, p5] = bb.forward(x);
        REQUIRE(p3.shape().h == 20);
        REQUIRE(p5.shape().h == 5);
    }
}

TEST_CASE("module flags strictly add parameters") {
    auto count = [](bool aelan, bool mpda, bool rmpda) {
        ModelConfig cfg;
        cfg.image_size = 160;
        cfg.use_aelan = aelan;
        cfg.use_mpda = mpda;
        cfg.use_rmpda = rmpda;
        Rng rng(65);
        auto bb = Backbone<float>::make(cfg, rng);
        ParamList<float> p;
        bb.params(p, "bb");
        return param_count(p);
    };
    const auto none = count(false, false, false);
    REQUIRE(count(true, false, false) > none);
    REQUIRE(count(false, true, false) > none);
    REQUIRE(count(false, false, true) > none);
    REQUIRE(count(true, true, true) >
            std::max({count(true, false, false), count(false, true, false)}));
}

TEST_CASE("gelan block gradients against finite differences") {
    Rng rng(66);
    AelanConfig cf;
    cf.in = 8;
    cf.out = 8;
    cf.csp_depth = 1;
    cf.use_deformable = true;
    auto block = GelanBlock<double>::make(cf, rng);
    auto x = tensor_uniform<double>(Shape{1, 8, 8, 8}, rng, -1, 1);
    REQUIRE(gradcheck_fn(x, [&](Tensor<double>& t) {
        return sum(square(block.forward(t)));
    }, 1e-5, 150) < 1e-6);
    REQUIRE(gradcheck_fn(block.transition.w, [&](Tensor<double>&) {
        return sum(square(block.forward(x)));
    }, 1e-5, 100) < 1e-6);
}
