#include "t2s/rot6d.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "t2s/errors.hpp"

namespace t2s::rot {

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

Mat3 axis_angle_to_matrix(const Vec3& w) {
    const double th2 = dot(w, w);
    const double th = std::sqrt(th2);
    // R = I + a·[w]x + b·[w]x², a = sin θ / θ, b = (1 − cos θ) / θ²
    double a, b;
    if (th < 1e-4) {
        a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
        b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
    } else {
        a = std::sin(th) / th;
        b = (1.0 - std::cos(th)) / th2;
    }
    const double x = w[0], y = w[1], z = w[2];
    return {1.0 - b * (y * y + z * z), -a * z + b * x * y,         a * y + b * x * z,
            a * z + b * x * y,         1.0 - b * (x * x + z * z), -a * x + b * y * z,
            -a * y + b * x * z,        a * x + b * y * z,         1.0 - b * (x * x + y * y)};
}

Rot6D matrix_to_6d(const Mat3& r) { return {r[0], r[3], r[6], r[1], r[4], r[7]}; }

Mat3 sixd_to_matrix(const Rot6D& r) {
    Vec3 a1{r[0], r[1], r[2]};
    Vec3 a2{r[3], r[4], r[5]};
    const double n1 = norm(a1);
    if (!(n1 > 1e-12)) throw DegeneracyError("6D rotation: first column has zero norm");
    for (auto& v : a1) v /= n1;
    const double p = dot(a1, a2);
    for (int i = 0; i < 3; ++i) a2[i] -= p * a1[i];
    const double n2 = norm(a2);
    if (!(n2 > 1e-12 * std::max(1.0, norm(Vec3{r[3], r[4], r[5]}))))
        throw DegeneracyError("6D rotation: columns are parallel or second column is zero");
    for (auto& v : a2) v /= n2;
    const Vec3 a3 = cross(a1, a2);
    return {a1[0], a2[0], a3[0], a1[1], a2[1], a3[1], a1[2], a2[2], a3[2]};
}

Vec3 matrix_to_axis_angle(const Mat3& r) {
    const double tr = r[0] + r[4] + r[8];
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    // 2 sin θ · axis
    const Vec3 v{r[7] - r[5], r[2] - r[6], r[3] - r[1]};
    const double s = 0.5 * norm(v);
    const double th = std::atan2(s, c);
    if (th < 1e-6) {
        // θ ≈ 0: ω ≈ v / 2 to first order
        return {0.5 * v[0], 0.5 * v[1], 0.5 * v[2]};
    }
    if (c > -0.99) {
        const double k = th / (2.0 * std::sin(th));
        return {k * v[0], k * v[1], k * v[2]};
    }
    // Near π: axis from the symmetric part, R + Rᵀ = 2 cos θ·I + 2(1 − cos θ)·n nᵀ,
    // using the column with the largest diagonal entry.
    const std::array<double, 3> diag{r[0], r[4], r[8]};
    const int i = static_cast<int>(std::max_element(diag.begin(), diag.end()) - diag.begin());
    Vec3 n{};
    const double one_minus_c = 1.0 - c;
    const double nii = std::sqrt(std::max(0.0, (r[i * 4] - c) / one_minus_c));
    n[i] = nii;
    for (int j = 0; j < 3; ++j) {
        if (j == i) continue;
        n[j] = (r[i * 3 + j] + r[j * 3 + i]) / (2.0 * one_minus_c * nii);
    }
    const double nn = norm(n);
    for (auto& x : n) x /= nn;
    // Sign from the antisymmetric part so that small departures from π keep
    // the right orientation.
    if (dot(n, v) < 0.0)
        for (auto& x : n) x = -x;
    return {th * n[0], th * n[1], th * n[2]};
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

Mat3 transpose(const Mat3& a) { return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]}; }

double determinant(const Mat3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
    double m = 0.0;
    for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double orthogonality_error(const Mat3& r) {
    const Mat3 p = multiply(transpose(r), r);
    double m = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m = std::max(m, std::abs(p[i * 3 + j] - (i == j ? 1.0 : 0.0)));
    return m;
}

}  // namespace t2s::rot
