#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bseg/boundary.hpp"
#include "bseg/losses.hpp"
#include "bseg/train.hpp"
#include "testutil.hpp"

using namespace bseg;
namespace tu = bseg::testutil;

namespace {

// Independent edge-replicated 3x3 cross-correlation, applied per channel.
Tensor sobel_ref(const Tensor& x, const std::array<double, 9>& k) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto clamp_idx = [](int64_t v, int64_t hi) { return std::min(std::max<int64_t>(v, 0), hi - 1); };
    Tensor y({B, C, H, W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oy = 0; oy < H; ++oy)
                for (int64_t ox = 0; ox < W; ++ox) {
                    double acc = 0.0;
                    for (int64_t ky = 0; ky < 3; ++ky)
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t iy = clamp_idx(oy + ky - 1, H);
                            const int64_t ix = clamp_idx(ox + kx - 1, W);
                            acc += x.at(b, c, iy, ix) * k[static_cast<size_t>(ky * 3 + kx)];
                        }
                    y.at(b, c, oy, ox) = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("sobel gradient maps") {
    std::mt19937_64 rng(3);

    SUBCASE("constant map has zero gradients everywhere (incl. borders)") {
        Var f = make_constant(Tensor::full({1, 2, 5, 5}, 3.7));
        auto [mx, my] = sobel_gradients(f);
        for (int64_t i = 0; i < mx->value.numel(); ++i) {
            CHECK(std::abs(mx->value[i]) < 1e-12);
            CHECK(std::abs(my->value[i]) < 1e-12);
        }
    }
    SUBCASE("replicate padding FD") {
        Var x = make_param(tu::random_tensor({1, 2, 4, 5}, rng));
        auto r = tu::check_gradients(
            [&] {
                Var y = ops::replicate_pad2d(x, 2);
                return ops::mean_all(ops::mul(y, y));
            },
            {x}, 20, rng);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("vertical step: columns [0,0,1,1] give mx = 4 on interior rows at the step") {
        Tensor step({1, 1, 4, 4});
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x) step.at(0, 0, y, x) = x >= 2 ? 1.0 : 0.0;
        auto [mx, my] = sobel_gradients(make_constant(step));
        for (int64_t y = 1; y <= 2; ++y) {
            CHECK(mx->value.at(0, 0, y, 1) == doctest::Approx(4.0));
            CHECK(mx->value.at(0, 0, y, 2) == doctest::Approx(4.0));
        }
        // whole map against the independent correlation
        Tensor ref = sobel_ref(step, kSobelX);
        for (int64_t i = 0; i < ref.numel(); ++i) CHECK(mx->value[i] == doctest::Approx(ref[i]));
    }
    SUBCASE("matches the brute-force correlation on random maps") {
        Tensor x = tu::random_tensor({2, 3, 6, 7}, rng);
        auto [mx, my] = sobel_gradients(make_constant(x));
        Tensor rx = sobel_ref(x, kSobelX), ry = sobel_ref(x, kSobelY);
        for (int64_t i = 0; i < x.numel(); ++i) {
            CHECK(mx->value[i] == doctest::Approx(rx[i]).epsilon(1e-12));
            CHECK(my->value[i] == doctest::Approx(ry[i]).epsilon(1e-12));
        }
    }
    SUBCASE("transposing the input swaps the directional maps") {
        Tensor x = tu::random_tensor({1, 1, 4, 4}, rng);
        Tensor xt({1, 1, 4, 4});
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t c = 0; c < 4; ++c) xt.at(0, 0, y, c) = x.at(0, 0, c, y);
        auto [mx_t, my_t] = sobel_gradients(make_constant(xt));
        auto [mx, my] = sobel_gradients(make_constant(x));
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t c = 0; c < 4; ++c) {
                CHECK(mx_t->value.at(0, 0, y, c) == doctest::Approx(my->value.at(0, 0, c, y)));
                CHECK(my_t->value.at(0, 0, y, c) == doctest::Approx(mx->value.at(0, 0, c, y)));
            }
    }
    SUBCASE("horizontal flip negates and flips the horizontal map") {
        Tensor x = tu::random_tensor({1, 1, 5, 6}, rng);
        Tensor xf({1, 1, 5, 6});
        for (int64_t y = 0; y < 5; ++y)
            for (int64_t c = 0; c < 6; ++c) xf.at(0, 0, y, c) = x.at(0, 0, y, 5 - c);
        auto [mxf, _] = sobel_gradients(make_constant(xf));
        auto [mx, __] = sobel_gradients(make_constant(x));
        for (int64_t y = 0; y < 5; ++y)
            for (int64_t c = 0; c < 6; ++c)
                CHECK(mxf->value.at(0, 0, y, c) == doctest::Approx(-mx->value.at(0, 0, y, 5 - c)));
    }
    SUBCASE("maps smaller than 3x3 are rejected") {
        CHECK_THROWS_AS(sobel_gradients(make_constant(Tensor::zeros({1, 1, 2, 5}))), ShapeError);
    }
}

TEST_CASE("edge enhancement gating") {
    std::mt19937_64 rng(5);
    ParamStore store;
    BoundaryEnhance bem(store, "bem", 3, 8, 8, /*use_sobel=*/true, rng);

    SUBCASE("constant input forces the 0.5 gate: F_e = 0.5 * F_c") {
        Var f = make_constant(Tensor::full({1, 3, 6, 6}, 2.0));
        Var fe = bem.edge_enhance(f, bem.gate1());
        for (int64_t i = 0; i < fe->value.numel(); ++i) CHECK(fe->value[i] == doctest::Approx(1.0));
    }
    SUBCASE("gate keeps |F_e| <= |F_c| elementwise and preserves shape") {
        Tensor ft = tu::random_tensor({2, 3, 6, 6}, rng);
        Var fe = bem.edge_enhance(make_constant(ft), bem.gate1());
        REQUIRE(fe->value.shape() == ft.shape());
        for (int64_t i = 0; i < ft.numel(); ++i) CHECK(std::abs(fe->value[i]) <= std::abs(ft[i]));
    }
    SUBCASE("the ablation module is not forced through 0.5 on constant input") {
        ParamStore store2;
        std::mt19937_64 rng2(7);
        BoundaryEnhance cbm(store2, "cbm", 3, 8, 8, /*use_sobel=*/false, rng2);
        Var f = make_constant(Tensor::full({1, 3, 6, 6}, 2.0));
        Var fe = cbm.edge_enhance(f, cbm.gate1());
        bool any_off_half = false;
        for (int64_t i = 0; i < fe->value.numel(); ++i)
            if (std::abs(fe->value[i] - 1.0) > 1e-6) any_off_half = true;
        CHECK(any_off_half);
    }
}

TEST_CASE("boundary module forward contract") {
    std::mt19937_64 rng(9);
    ParamStore store;
    BoundaryEnhance bem(store, "bem", 8, 16, 12, true, rng);

    SUBCASE("shapes: logits at the stride-4 resolution, feature at module width") {
        Var f1 = make_constant(tu::random_tensor({1, 8, 32, 32}, rng));
        Var f4 = make_constant(tu::random_tensor({1, 16, 4, 4}, rng));
        BoundaryFeature bf = bem.forward(f1, f4, false);
        CHECK(bf.logits->value.shape() == Shape{1, 1, 32, 32});
        CHECK(bf.feature->value.shape() == Shape{1, 12, 32, 32});
    }
    SUBCASE("mismatched pyramid levels are rejected") {
        Var f1 = make_constant(Tensor::zeros({1, 8, 32, 32}));
        Var f4 = make_constant(Tensor::zeros({1, 16, 8, 8}));
        CHECK_THROWS_AS(bem.forward(f1, f4, false), ShapeError);
    }
    SUBCASE("logits depend on both inputs (nonzero input gradients)") {
        Var f1 = make_param(tu::random_tensor({1, 8, 16, 16}, rng));
        Var f4 = make_param(tu::random_tensor({1, 16, 2, 2}, rng));
        store.zero_grads();
        f1->zero_grad();
        f4->zero_grad();
        BoundaryFeature bf = bem.forward(f1, f4, true);
        backward(ops::mean_all(ops::mul(bf.logits, bf.logits)));
        auto norm = [](const Tensor& g) {
            double n = 0.0;
            for (int64_t i = 0; i < g.numel(); ++i) n += g[i] * g[i];
            return n;
        };
        REQUIRE_FALSE(f1->grad.empty());
        REQUIRE_FALSE(f4->grad.empty());
        CHECK(norm(f1->grad) > 0.0);
        CHECK(norm(f4->grad) > 0.0);
    }
}

TEST_CASE("boundary dice gradients vs finite differences (16x16 input)") {
    std::mt19937_64 rng(11);
    ParamStore store;
    BoundaryEnhance bem(store, "bem", 4, 8, 6, true, rng);
    Tensor f1 = tu::random_tensor({1, 4, 16, 16}, rng);
    Tensor f4 = tu::random_tensor({1, 8, 2, 2}, rng);
    Tensor target({1, 1, 16, 16});
    for (int64_t i = 0; i < 256; ++i) target[i] = (i % 7 == 0) ? 1.0 : 0.0;
    auto build = [&]() {
        BoundaryFeature bf = bem.forward(make_constant(f1), make_constant(f4), true);
        return dice_loss(ops::sigmoid(bf.logits), make_constant(target));
    };
    std::vector<Var> leaves{store.find_param("bem.fuse1.conv.w"), store.find_param("bem.fuse2.conv.w"),
                            store.find_param("bem.gate1.w"), store.find_param("bem.head.w"),
                            store.find_param("bem.match4.w")};
    for (const Var& l : leaves) REQUIRE(l != nullptr);
    auto r = tu::check_gradients(build, leaves, 5, rng);
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("Sobel kernels never move under the optimizer") {
    std::mt19937_64 rng(13);
    ParamStore store;
    BoundaryEnhance bem(store, "bem", 4, 8, 6, true, rng);
    std::vector<Var> params;
    for (const auto& [name, v] : store.params()) params.push_back(v);
    Adam opt(params, 1e-2);

    Tensor f1 = tu::random_tensor({1, 4, 16, 16}, rng);
    Tensor f4 = tu::random_tensor({1, 8, 2, 2}, rng);
    Tensor target({1, 1, 16, 16});
    for (int64_t i = 0; i < 256; ++i) target[i] = (i % 5 == 0) ? 1.0 : 0.0;
    for (int step = 0; step < 120; ++step) {
        BoundaryFeature bf = bem.forward(make_constant(f1), make_constant(f4), true);
        Var loss = dice_loss(ops::sigmoid(bf.logits), make_constant(target));
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    const Var kx = store.find_buffer("bem.sobel.kx");
    const Var ky = store.find_buffer("bem.sobel.ky");
    REQUIRE(kx != nullptr);
    REQUIRE(ky != nullptr);
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(kx->value[i] == kSobelX[static_cast<size_t>(i)]);  // bitwise
        CHECK(ky->value[i] == kSobelY[static_cast<size_t>(i)]);
    }
}

TEST_CASE("ablation variant bookkeeping: trainable counts equal, fixed params fewer") {
    std::mt19937_64 rng_a(17), rng_b(17);
    ParamStore sa, sb;
    BoundaryEnhance bem(sa, "m", 4, 8, 6, true, rng_a);
    BoundaryEnhance cbm(sb, "m", 4, 8, 6, false, rng_b);
    CHECK(sa.param_count() == sb.param_count());
    CHECK(sb.buffer_count() < sa.buffer_count());
    CHECK(sa.buffer_count() - sb.buffer_count() == 18);  // two 3x3 kernels
}
