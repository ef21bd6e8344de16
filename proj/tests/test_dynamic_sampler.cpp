#include <doctest.h>

#include <random>

#include "t2s/dynamic_sampler.hpp"

using namespace t2s;
using ad::Var;

TEST_CASE("info weights: zero MLP gives one half, large bias saturates") {
    nn::ParamSet<double> ps;
    nn::Rng rng(0);
    auto mlp = dyn::make_info_mlp(ps, "info", 4, rng);
    for (auto& [name, v] : ps.entries()) v.mutable_value().fill(0.0);
    const Var<double> h(Tensor<double>(Shape{3, 4}, std::vector<double>(12, 0.7)));
    const auto half = dyn::info_weights(h, mlp).value();
    for (double w : half.values()) CHECK(w == 0.5);
    mlp.out.bias.mutable_value().fill(10.0);
    const auto sat = dyn::info_weights(h, mlp).value();
    for (double w : sat.values()) CHECK(w > 0.9999);
    CHECK_THROWS_AS(dyn::info_weights(Var<double>(Tensor<double>(Shape{3, 5})), mlp), DimensionError);
}

TEST_CASE("segment edge cases") {
    CHECK(dyn::segment<double>(std::vector<double>{0.1, 0.1, 0.1}, 1.0) == std::vector<std::uint32_t>{0, 0, 0});
    CHECK_THROWS_AS(dyn::segment<double>(std::vector<double>{}, 1.0), EmptyInputError);
    CHECK_THROWS_AS(dyn::segment<double>(std::vector<double>{0.5}, 0.0), ConfigError);
}

TEST_CASE("raising one weight within (0, 1) never lowers the segment count") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> w(1 + rng() % 50);
        for (auto& x : w) x = u(rng);
        const auto m0 = dyn::compact(dyn::segment<double>(w, 1.0)).count();
        auto& x = w[rng() % w.size()];
        x += (1.0 - x) * u(rng);
        CHECK(dyn::compact(dyn::segment<double>(w, 1.0)).count() >= m0);
    }
}

TEST_CASE("downsample sums weighted rows per segment") {
    const Var<double> h(Tensor<double>(Shape{4, 2}, std::vector<double>{1, 1, 2, 2, 3, 3, 4, 4}), true);
    const Var<double> w(Tensor<double>(Shape{4, 1}, std::vector<double>{0.5, 0.6, 0.4, 0.7}), true);
    const auto markers = dyn::segment<double>(w.value().values(), 1.0);
    const auto ds = dyn::downsample(h, w, markers);
    CHECK(ds.segments.durations == std::vector<std::uint32_t>{1, 2, 1});
    CHECK(ds.latents.value().values() ==
          std::vector<double>{0.5, 0.5, 0.6 * 2 + 0.4 * 3, 0.6 * 2 + 0.4 * 3, 0.7 * 4, 0.7 * 4});

    // single segment with unit weights is a column sum
    const Var<double> ones(Tensor<double>(Shape{4, 1}, std::vector<double>(4, 1.0)));
    const std::vector<std::uint32_t> zero(4, 0);
    const auto one = dyn::downsample(h, ones, zero);
    CHECK(one.latents.value().values() == std::vector<double>{10, 10});
    CHECK(one.segments.durations == std::vector<std::uint32_t>{4});
}

TEST_CASE("length regulator worked example and errors") {
    const Tensor<double> z(Shape{3, 1}, std::vector<double>{1, 2, 3});
    const std::vector<std::uint32_t> d{1, 2, 3};
    CHECK(dyn::length_regulate(z, d).values() == std::vector<double>{1, 2, 2, 3, 3, 3});
    CHECK_THROWS_AS(dyn::length_regulate(z, std::vector<std::uint32_t>{1, 0, 1}), DurationError);
    CHECK_THROWS_AS(dyn::length_regulate(z, std::vector<std::uint32_t>{1, 1}), DimensionError);
}

TEST_CASE("length_regulate of a downsampled constant input reproduces segment boundaries") {
    const Var<double> h(Tensor<double>(Shape{5, 1}, std::vector<double>(5, 1.0)));
    const Var<double> w(Tensor<double>(Shape{5, 1}, std::vector<double>{0.6, 0.6, 0.3, 0.3, 0.9}));
    const auto markers = dyn::segment<double>(w.value().values(), 1.0);
    const auto ds = dyn::downsample(h, w, markers);
    const auto back = dyn::length_regulate(ds.latents.value(), ds.segments.durations);
    REQUIRE(back.rows() == 5);
    for (std::size_t t = 0; t < 5; ++t) CHECK(back[t] == ds.latents.value()[ds.segments.ids[t]]);
}

TEST_CASE("budget loss hinge") {
    Var<double> w(Tensor<double>(Shape{48, 1}, std::vector<double>(48, 10.0 / 48.0)), true);
    const auto l = dyn::budget_loss(w, 48, 12.0);
    CHECK(l.item() == doctest::Approx(6.0));
    ad::backward(l);
    for (double g : w.grad().values()) CHECK(g == doctest::Approx(1.0));
    const Var<double> small(Tensor<double>(Shape{48, 1}, std::vector<double>(48, 0.05)));
    CHECK(dyn::budget_loss(small, 48, 12.0).item() == 0.0);

    const std::vector<Var<double>> batch{Var<double>(Tensor<double>(Shape{2, 1}, std::vector<double>{1, 1})),
                                         Var<double>(Tensor<double>(Shape{2, 1}, std::vector<double>{0, 0}))};
    const std::vector<std::size_t> lens{2, 2};
    CHECK(dyn::budget_loss<double>(batch, lens, 2.0).item() == doctest::Approx(0.5));
}
