#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bseg/losses.hpp"
#include "bseg/model.hpp"
#include "testutil.hpp"

using namespace bseg;
namespace tu = bseg::testutil;

TEST_CASE("boundary-inject stage semantics") {
    std::mt19937_64 rng(3);
    ParamStore store;
    BoundaryInject stage(store, "bim", 6, 12, 8, rng);

    SUBCASE("shape contract: fb(1,6,32,32), fc(1,12,32,32), fd(1,8,16,16) -> (1,8,32,32)") {
        Var fb = make_constant(tu::random_tensor({1, 6, 32, 32}, rng));
        Var fc = make_constant(tu::random_tensor({1, 12, 32, 32}, rng));
        Var fd = make_constant(tu::random_tensor({1, 8, 16, 16}, rng));
        CHECK(stage.forward(fb, fc, fd, false)->value.shape() == Shape{1, 8, 32, 32});
    }
    SUBCASE("foreground attention and background gate sum to 1 pointwise") {
        Var fd_up = make_constant(tu::random_tensor({1, 8, 8, 8}, rng));
        Var fg_att = stage.foreground_attention(fd_up);
        for (int64_t i = 0; i < fg_att->value.numel(); ++i) {
            const double a = fg_att->value[i];
            CHECK(a > 0.0);
            CHECK(a < 1.0);
            CHECK(a + (1.0 - a) == 1.0);
        }
    }
    SUBCASE("saturated attention shuts the background path down to its bias response") {
        Conv2d& att = stage.attention_conv();
        att.w_->value.fill(0.0);
        att.b_->value.fill(50.0);  // sigmoid ~ 1, background gate ~ 0
        Var fd_up = make_constant(tu::random_tensor({1, 8, 8, 8}, rng));
        Var fc_a = make_constant(tu::random_tensor({1, 12, 8, 8}, rng));
        Var fc_b = make_constant(tu::random_tensor({1, 12, 8, 8}, rng));
        Var bg_a = stage.background_path(fc_a, fd_up, false);
        Var bg_b = stage.background_path(fc_b, fd_up, false);
        for (int64_t i = 0; i < bg_a->value.numel(); ++i)
            CHECK(bg_a->value[i] == doctest::Approx(bg_b->value[i]).epsilon(1e-9));
    }
    SUBCASE("zero attention logits gate the input by exactly one half") {
        Conv2d& att = stage.attention_conv();
        Var fd_up = make_constant(tu::random_tensor({1, 8, 8, 8}, rng));
        Tensor fc = tu::random_tensor({1, 12, 8, 8}, rng);
        // gate = 0.5 on doubled input ...
        att.w_->value.fill(0.0);
        att.b_->value.fill(0.0);
        Tensor fc2 = fc;
        fc2.scale_(2.0);
        Var half_gated = stage.background_path(make_constant(fc2), fd_up, false);
        // ... equals gate ~ 1 on the raw input.
        att.b_->value.fill(500.0);
        Var full_gated_in = stage.background_path(make_constant(fc), fd_up, false);
        // sigmoid(500) saturates to 1 exactly in double precision, so the
        // background gate is exactly (1 - 1) ... that kills the signal; use
        // the complement: bias -500 => gate = 1.
        att.b_->value.fill(-500.0);
        Var ungated = stage.background_path(make_constant(fc), fd_up, false);
        for (int64_t i = 0; i < ungated->value.numel(); ++i)
            CHECK(half_gated->value[i] == doctest::Approx(ungated->value[i]).epsilon(1e-9));
    }
    SUBCASE("mismatched resolutions are rejected") {
        Var fb = make_constant(Tensor::zeros({1, 6, 16, 16}));
        Var fc = make_constant(Tensor::zeros({1, 12, 32, 32}));
        Var fd = make_constant(Tensor::zeros({1, 8, 16, 16}));
        CHECK_THROWS_AS(stage.forward(fb, fc, fd, false), ShapeError);
        Var fd_bad = make_constant(Tensor::zeros({1, 8, 8, 8}));
        Var fb_ok = make_constant(Tensor::zeros({1, 6, 32, 32}));
        CHECK_THROWS_AS(stage.forward(fb_ok, fc, fd_bad, false), ShapeError);
    }
}

TEST_CASE("model factory: variant contracts") {
    const Variant variants[] = {Variant::Cnn, Variant::CnnVit, Variant::CnnVitCbm,
                                Variant::CnnVitBem, Variant::Full};
    for (Variant v : variants) {
        CAPTURE(to_string(v));
        Model model(ModelConfig::tiny(64, v), 7);
        Tensor x({1, 3, 64, 64});
        std::mt19937_64 rng(1);
        x = tu::random_tensor({1, 3, 64, 64}, rng);
        SegOutput out = model.forward(x, false);
        CHECK(out.interior_logits.size() == 3);
        for (const Var& l : out.interior_logits) CHECK(l->value.shape() == Shape{1, 1, 64, 64});
        const bool boundary_expected =
            v == Variant::CnnVitCbm || v == Variant::CnnVitBem || v == Variant::Full;
        CHECK((out.boundary_logits != nullptr) == boundary_expected);
        if (boundary_expected) CHECK(out.boundary_logits->value.shape() == Shape{1, 1, 16, 16});
        for (const Var& l : out.interior_logits) CHECK(l->value.all_finite());
    }

    SUBCASE("unknown variant strings are rejected") {
        CHECK_THROWS_AS(variant_from_string("resnet"), ConfigError);
        CHECK(variant_from_string("cnn+vit+bem") == Variant::CnnVitBem);
    }
    SUBCASE("parameter counts grow strictly along the ablation path") {
        const int64_t p_vit = Model(ModelConfig::tiny(64, Variant::CnnVit), 0).param_count();
        const int64_t p_cbm = Model(ModelConfig::tiny(64, Variant::CnnVitCbm), 0).param_count();
        const int64_t p_bem = Model(ModelConfig::tiny(64, Variant::CnnVitBem), 0).param_count();
        const int64_t p_full = Model(ModelConfig::tiny(64, Variant::Full), 0).param_count();
        CHECK(p_full > p_bem);
        CHECK(p_bem > p_vit);
        CHECK(p_bem == p_cbm);  // the Sobel layer carries no trainable scalars
    }
}

TEST_CASE("shape contract at the native 256 input") {
    Model model(ModelConfig::tiny(256, Variant::Full), 3);
    std::mt19937_64 rng(2);
    SegOutput out = model.forward(tu::random_tensor({1, 3, 256, 256}, rng), false);
    CHECK(out.interior_logits.size() == 3);
    for (const Var& l : out.interior_logits) CHECK(l->value.shape() == Shape{1, 1, 256, 256});
    CHECK(out.boundary_logits->value.shape() == Shape{1, 1, 64, 64});
    // four transformer branches at 64x64 stride-4 maps: 256/64/16/4 tokens
    const int64_t expected_tokens[4] = {256, 64, 16, 4};
    for (int i = 0; i < 4; ++i) {
        CHECK(model.vit()->branch(i).token_count() == expected_tokens[i]);
        CHECK(model.vit()->branch(i).patch_size() == LightVit::patch_sizes(64)[i]);
    }
}

TEST_CASE("determinism: same seed, same params; same input, same output") {
    Model a(ModelConfig::tiny(64, Variant::Full), 42);
    Model b(ModelConfig::tiny(64, Variant::Full), 42);
    const auto& pa = a.store().params();
    const auto& pb = b.store().params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second->value.numel() == pb[i].second->value.numel());
        for (int64_t j = 0; j < pa[i].second->value.numel(); ++j)
            REQUIRE(pa[i].second->value[j] == pb[i].second->value[j]);
    }
    std::mt19937_64 rng(5);
    Tensor x = tu::random_tensor({2, 3, 64, 64}, rng);
    SegOutput oa = a.forward(x, false);
    SegOutput ob = b.forward(x, false);
    for (int j = 0; j < 3; ++j)
        for (int64_t i = 0; i < oa.interior_logits[j]->value.numel(); ++i)
            REQUIRE(oa.interior_logits[j]->value[i] == ob.interior_logits[j]->value[i]);

    Model c(ModelConfig::tiny(64, Variant::Full), 43);
    bool any_diff = false;
    for (int64_t j = 0; j < pa[0].second->value.numel(); ++j)
        if (c.store().params()[0].second->value[j] != pa[0].second->value[j]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("multi-class head emits K channels and argmax predictions stay in range") {
    ModelConfig cfg = ModelConfig::tiny(64, Variant::Full);
    cfg.classes = 3;
    Model model(cfg, 11);
    std::mt19937_64 rng(6);
    SegOutput out = model.forward(tu::random_tensor({1, 3, 64, 64}, rng), false);
    for (const Var& l : out.interior_logits) CHECK(l->value.shape() == Shape{1, 3, 64, 64});
}

TEST_CASE("end-to-end gradient check through the full assembly (64x64)") {
    ModelConfig cfg = ModelConfig::tiny(64, Variant::Full);
    Model model(cfg, 9);
    std::mt19937_64 rng(10);
    Tensor x = tu::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
    Tensor label({1, 1, 64, 64});
    Tensor boundary({1, 1, 64, 64});
    for (int64_t i = 0; i < 64 * 64; ++i) {
        const int64_t yy = i / 64, xx = i % 64;
        const bool inside = (yy - 32) * (yy - 32) + (xx - 32) * (xx - 32) < 15 * 15;
        label[i] = inside ? 1.0 : 0.0;
    }
    for (int64_t yy = 0; yy < 64; ++yy)
        for (int64_t xx = 0; xx < 64; ++xx) {
            const double r = std::sqrt(static_cast<double>((yy - 32) * (yy - 32) + (xx - 32) * (xx - 32)));
            boundary[yy * 64 + xx] = std::abs(r - 15.0) < 1.0 ? 1.0 : 0.0;
        }
    auto build = [&]() {
        SegOutput out = model.forward(x, /*training=*/true);
        return total_loss(out, label, boundary, 3.0, 1).total_var;
    };
    // one parameter from every module family
    std::vector<Var> leaves;
    for (const char* name :
         {"backbone.stem.conv.w", "backbone.stage2.block0.c2.w", "backbone.stage4.block0.b3.gamma",
          "lightvit.branch3.embed.w", "lightvit.branch0.wq.w", "lightvit.fuse.w", "bem.gate1.w",
          "bem.fuse1.conv.w", "bem.head.w", "decoder.bottleneck.conv.w", "decoder.stage1.att.w",
          "decoder.stage2.fg1.conv.w", "decoder.stage3.bg2.conv.w", "decoder.head3.w",
          "decoder.head1.b"}) {
        Var p = model.store().find_param(name);
        REQUIRE_MESSAGE(p != nullptr, name);
        leaves.push_back(p);
    }
    auto r = tu::check_gradients(build, leaves, 2, rng, 1e-5);
    CHECK(r.checked >= 20);
    CHECK(r.max_rel_err < 1e-3);
}
