#pragma once

// Axis-angle ↔ rotation matrix ↔ 6D rotation representation.
//
// Matrices are row-major 3×3. The 6D form is the first two matrix columns,
// column-major: r = [R00, R10, R20, R01, R11, R21].

#include <array>

namespace t2s::rot {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;
using Rot6D = std::array<double, 6>;

Mat3 axis_angle_to_matrix(const Vec3& omega);
Rot6D matrix_to_6d(const Mat3& r);
// Gram–Schmidt on the two columns; DegeneracyError on zero-norm or parallel
// columns.
Mat3 sixd_to_matrix(const Rot6D& r);
// Canonical axis-angle with angle in [0, π].
Vec3 matrix_to_axis_angle(const Mat3& r);

Mat3 multiply(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& a);
double determinant(const Mat3& a);
// max |a_ij − b_ij|
double max_abs_diff(const Mat3& a, const Mat3& b);
// max |(RᵀR − I)_ij|
double orthogonality_error(const Mat3& r);

}  // namespace t2s::rot
