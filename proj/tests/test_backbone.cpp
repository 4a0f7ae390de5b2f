#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bseg/backbone.hpp"
#include "bseg/losses.hpp"
#include "testutil.hpp"

using namespace bseg;
namespace tu = bseg::testutil;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.stem_channels = 8;
    cfg.stage_channels = {8, 16, 32, 64};
    cfg.blocks_per_stage = {1, 1, 1, 1};
    return cfg;
}

}  // namespace

TEST_CASE("pyramid strides are exact") {
    std::mt19937_64 rng(1);
    ParamStore store;
    Backbone bb(store, "backbone", tiny_config(), rng);

    SUBCASE("256x256") {
        Var x = make_constant(tu::random_tensor({1, 3, 256, 256}, rng));
        FeaturePyramid pyr = bb.forward(x, false);
        const int64_t expect[4][2] = {{64, 64}, {32, 32}, {16, 16}, {8, 8}};
        const int64_t channels[4] = {8, 16, 32, 64};
        for (int k = 0; k < 4; ++k) {
            CHECK(pyr.levels[k]->value.dim(1) == channels[k]);
            CHECK(pyr.levels[k]->value.dim(2) == expect[k][0]);
            CHECK(pyr.levels[k]->value.dim(3) == expect[k][1]);
        }
    }
    SUBCASE("batch 2 at 64x64") {
        Var x = make_constant(tu::random_tensor({2, 3, 64, 64}, rng));
        FeaturePyramid pyr = bb.forward(x, false);
        CHECK(pyr.levels[0]->value.shape() == Shape{2, 8, 16, 16});
        CHECK(pyr.levels[3]->value.shape() == Shape{2, 64, 2, 2});
    }
    SUBCASE("non-multiple-of-32 and non-3-channel inputs are rejected") {
        CHECK_THROWS_AS(bb.forward(make_constant(Tensor::zeros({1, 3, 96, 100})), false), ShapeError);
        CHECK_THROWS_AS(bb.forward(make_constant(Tensor::zeros({1, 3, 50, 50})), false), ShapeError);
        CHECK_THROWS_AS(bb.forward(make_constant(Tensor::zeros({1, 1, 64, 64})), false), ShapeError);
    }
    SUBCASE("random stride-preserving sizes") {
        std::mt19937_64 sz_rng(5);
        for (int trial = 0; trial < 4; ++trial) {
            const int64_t h = 32 * (1 + static_cast<int64_t>(sz_rng() % 4));
            const int64_t w = 32 * (1 + static_cast<int64_t>(sz_rng() % 4));
            Var x = make_constant(tu::random_tensor({1, 3, h, w}, sz_rng));
            FeaturePyramid pyr = bb.forward(x, false);
            for (int k = 0; k < 4; ++k) {
                CHECK(pyr.levels[k]->value.dim(2) == h / FeaturePyramid::kStrides[k]);
                CHECK(pyr.levels[k]->value.dim(3) == w / FeaturePyramid::kStrides[k]);
            }
        }
    }
}

TEST_CASE("deterministic forward: identical params and input give bitwise-equal pyramids") {
    std::mt19937_64 rng(2);
    ParamStore store;
    Backbone bb(store, "backbone", tiny_config(), rng);
    Tensor xt = tu::random_tensor({1, 3, 64, 64}, rng);
    FeaturePyramid a = bb.forward(make_constant(xt), false);
    FeaturePyramid b = bb.forward(make_constant(xt), false);
    for (int k = 0; k < 4; ++k)
        for (int64_t i = 0; i < a.levels[k]->value.numel(); ++i)
            REQUIRE(a.levels[k]->value[i] == b.levels[k]->value[i]);
}

TEST_CASE("parameter count matches an independent hand enumeration") {
    // tiny config: stem 8; stages 8,16,32,64 with one bottleneck each;
    // bottleneck mid width = cout/4; convs carry no bias (BN follows).
    const int64_t stem = 7 * 7 * 3 * 8 + 2 * 8;
    auto block = [](int64_t cin, int64_t cout, bool projected) {
        const int64_t mid = cout / 4;
        int64_t n = 0;
        n += 1 * 1 * cin * mid + 2 * mid;   // reduce + BN
        n += 3 * 3 * mid * mid + 2 * mid;   // spatial + BN
        n += 1 * 1 * mid * cout + 2 * cout; // expand + BN
        if (projected) n += 1 * 1 * cin * cout + 2 * cout;
        return n;
    };
    const int64_t expect = stem + block(8, 8, false) + block(8, 16, true) + block(16, 32, true) +
                           block(32, 64, true);
    CHECK(backbone_param_count(tiny_config()) == expect);

    SUBCASE("doubling every channel strictly grows the count") {
        BackboneConfig big = tiny_config();
        big.stem_channels *= 2;
        for (auto& c : big.stage_channels) c *= 2;
        CHECK(backbone_param_count(big) > backbone_param_count(tiny_config()));
    }
    SUBCASE("zero-block config is rejected") {
        BackboneConfig bad = tiny_config();
        bad.blocks_per_stage[2] = 0;
        CHECK_THROWS_AS(backbone_param_count(bad), ConfigError);
        bad = tiny_config();
        bad.stem_channels = 0;
        CHECK_THROWS_AS(backbone_param_count(bad), ConfigError);
    }
    SUBCASE("decreasing stage widths are rejected") {
        BackboneConfig bad = tiny_config();
        bad.stage_channels = {16, 8, 32, 64};
        CHECK_THROWS_AS(backbone_param_count(bad), ConfigError);
    }
}

TEST_CASE("finiteness on random inputs in [-3,3]") {
    std::mt19937_64 rng(3);
    ParamStore store;
    Backbone bb(store, "backbone", tiny_config(), rng);
    for (int trial = 0; trial < 3; ++trial) {
        Var x = make_constant(tu::random_tensor({2, 3, 64, 64}, rng, -3.0, 3.0));
        FeaturePyramid pyr = bb.forward(x, trial % 2 == 0);
        for (int k = 0; k < 4; ++k) CHECK(pyr.levels[k]->value.all_finite());
    }
}

TEST_CASE("analytic gradients match finite differences on a 3x32x32 input") {
    std::mt19937_64 rng(4);
    ParamStore store;
    BackboneConfig cfg;
    cfg.stem_channels = 4;
    cfg.stage_channels = {4, 8, 8, 8};
    cfg.blocks_per_stage = {1, 1, 1, 1};
    Backbone bb(store, "backbone", cfg, rng);
    Tensor xt = tu::random_tensor({2, 3, 32, 32}, rng);
    Tensor wsum[4];
    for (int k = 0; k < 4; ++k)
        wsum[k] = tu::random_tensor({2, cfg.stage_channels[k], 32 / FeaturePyramid::kStrides[k],
                                     32 / FeaturePyramid::kStrides[k]},
                                    rng);
    auto build_loss = [&]() {
        FeaturePyramid pyr = bb.forward(make_constant(xt), /*training=*/true);
        Var acc;
        for (int k = 0; k < 4; ++k) {
            Var term = ops::sum_all(ops::mul(pyr.levels[k], make_constant(wsum[k])));
            acc = acc ? ops::add(acc, term) : term;
        }
        return acc;
    };
    // sample a few parameters from each depth
    std::vector<Var> leaves;
    const auto& params = store.params();
    for (size_t i = 0; i < params.size(); i += std::max<size_t>(1, params.size() / 8))
        leaves.push_back(params[i].second);
    auto r = tu::check_gradients(build_loss, leaves, 4, rng);
    CHECK(r.checked >= 20);
    CHECK(r.max_rel_err < 1e-3);
}
