#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "t2s/errors.hpp"
#include "t2s/rot6d.hpp"

using namespace t2s;
using namespace t2s::rot;

namespace {

double angle_of(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

TEST_CASE("identity and quarter turn") {
    const auto i = axis_angle_to_matrix({0, 0, 0});
    CHECK(max_abs_diff(i, Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}) == 0.0);
    const auto r = axis_angle_to_matrix({0, 0, std::numbers::pi / 2});
    CHECK(max_abs_diff(r, Mat3{0, -1, 0, 1, 0, 0, 0, 0, 1}) < 1e-15);
    CHECK(matrix_to_6d(r) == Rot6D{r[0], r[3], r[6], r[1], r[4], r[7]});
}

TEST_CASE("round trips for random, tiny and near-π rotations") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 600; ++trial) {
        Vec3 axis{n(rng), n(rng), n(rng)};
        const double len = angle_of(axis);
        double theta;
        if (trial % 3 == 0) theta = u(rng) * std::numbers::pi;
        else if (trial % 3 == 1) theta = std::pow(10.0, -8.0 * u(rng) - 1.0);
        else theta = std::numbers::pi - std::pow(10.0, -7.0 * u(rng) - 1.0);
        const Vec3 w{axis[0] / len * theta, axis[1] / len * theta, axis[2] / len * theta};
        const auto r = axis_angle_to_matrix(w);
        CHECK(orthogonality_error(r) < 1e-12);
        CHECK(determinant(r) == doctest::Approx(1.0).epsilon(1e-12));
        const auto r2 = sixd_to_matrix(matrix_to_6d(r));
        CHECK(max_abs_diff(r, r2) < 1e-12);
        const auto back = axis_angle_to_matrix(matrix_to_axis_angle(r));
        CHECK(max_abs_diff(r, back) < 1e-8);
        CHECK(angle_of(matrix_to_axis_angle(r)) <= std::numbers::pi + 1e-12);
    }
}

TEST_CASE("Gram-Schmidt output is a proper rotation for noisy input") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Rot6D r;
        for (auto& x : r) x = n(rng);
        const auto m = sixd_to_matrix(r);
        CHECK(orthogonality_error(m) < 1e-12);
        CHECK(determinant(m) == doctest::Approx(1.0).epsilon(1e-12));
        // first column is the normalized first input column
        const double l = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        CHECK(m[0] == doctest::Approx(r[0] / l).epsilon(1e-12));
        CHECK(m[3] == doctest::Approx(r[1] / l).epsilon(1e-12));
        CHECK(m[6] == doctest::Approx(r[2] / l).epsilon(1e-12));
    }
}

TEST_CASE("degenerate 6D input") {
    CHECK_THROWS_AS(sixd_to_matrix(Rot6D{0, 0, 0, 0, 1, 0}), DegeneracyError);
    CHECK_THROWS_AS(sixd_to_matrix(Rot6D{1, 0, 0, 2, 0, 0}), DegeneracyError);
}

TEST_CASE("exact half turns") {
    for (const Vec3 axis : {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}, Vec3{1 / std::sqrt(2.0), 1 / std::sqrt(2.0), 0}}) {
        const Vec3 w{axis[0] * std::numbers::pi, axis[1] * std::numbers::pi, axis[2] * std::numbers::pi};
        const auto r = axis_angle_to_matrix(w);
        const auto back = matrix_to_axis_angle(r);
        CHECK(angle_of(back) == doctest::Approx(std::numbers::pi).epsilon(1e-9));
        CHECK(max_abs_diff(axis_angle_to_matrix(back), r) < 1e-8);
    }
}
