#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace dyn {

template <class S>
struct Vec2 {
  S x = 0, y = 0;
  Vec2() = default;
  Vec2(S x_, S y_) : x(x_), y(y_) {}
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(S k) const { return {x * k, y * k}; }
  S norm() const { return std::sqrt(x * x + y * y); }
};

template <class S>
struct Vec3 {
  S x = 0, y = 0, z = 0;
  Vec3() = default;
  Vec3(S x_, S y_, S z_) : x(x_), y(y_), z(z_) {}
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(S k) const { return {x * k, y * k, z * k}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  S dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  S norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    S n = norm();
    return n > S(0) ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
  }
};

// Row-major 3x3.
template <class S>
struct Mat3 {
  std::array<S, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return Mat3{}; }
  static Mat3 zero() {
    Mat3 r;
    r.m = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    return r;
  }
  S& operator()(int r, int c) { return m[r * 3 + c]; }
  S operator()(int r, int c) const { return m[r * 3 + c]; }

  Vec3<S> operator*(const Vec3<S>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r = zero();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) {
        S a = (*this)(i, k);
        for (int j = 0; j < 3; ++j) r(i, j) += a * o(k, j);
      }
    return r;
  }
  Mat3 operator+(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
    return r;
  }
  Mat3 operator*(S k) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] * k;
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  Vec3<S> transposed_mul(const Vec3<S>& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
  S det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
  Mat3 inverse() const {
    Mat3 r;
    S d = det();
    S id = S(1) / d;
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) * id;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) * id;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) * id;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) * id;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) * id;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) * id;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) * id;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) * id;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) * id;
    return r;
  }
};

template <class S>
Mat3<S> skew(const Vec3<S>& v) {
  Mat3<S> r = Mat3<S>::zero();
  r(0, 1) = -v.z;
  r(0, 2) = v.y;
  r(1, 0) = v.z;
  r(1, 2) = -v.x;
  r(2, 0) = -v.y;
  r(2, 1) = v.x;
  return r;
}

// Rodrigues: axis-angle (axis*angle) to rotation matrix.
template <class S>
Mat3<S> axis_angle_to_matrix(const Vec3<S>& aa) {
  S theta = aa.norm();
  if (theta < S(1e-12)) {
    Mat3<S> r = Mat3<S>::identity();
    Mat3<S> k = skew(aa);
    return r + k;  // first-order term keeps tiny rotations exact enough
  }
  Vec3<S> axis = aa * (S(1) / theta);
  Mat3<S> k = skew(axis);
  S c = std::cos(theta), s = std::sin(theta);
  return Mat3<S>::identity() + k * s + (k * k) * (S(1) - c);
}

// Inverse Rodrigues via quaternion extraction (stable near 0 and pi).
template <class S>
Vec3<S> matrix_to_axis_angle(const Mat3<S>& r) {
  S t = r(0, 0) + r(1, 1) + r(2, 2);
  S qw, qx, qy, qz;
  if (t > S(0)) {
    S s = std::sqrt(t + S(1)) * S(2);
    qw = S(0.25) * s;
    qx = (r(2, 1) - r(1, 2)) / s;
    qy = (r(0, 2) - r(2, 0)) / s;
    qz = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    S s = std::sqrt(S(1) + r(0, 0) - r(1, 1) - r(2, 2)) * S(2);
    qw = (r(2, 1) - r(1, 2)) / s;
    qx = S(0.25) * s;
    qy = (r(0, 1) + r(1, 0)) / s;
    qz = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    S s = std::sqrt(S(1) + r(1, 1) - r(0, 0) - r(2, 2)) * S(2);
    qw = (r(0, 2) - r(2, 0)) / s;
    qx = (r(0, 1) + r(1, 0)) / s;
    qy = S(0.25) * s;
    qz = (r(1, 2) + r(2, 1)) / s;
  } else {
    S s = std::sqrt(S(1) + r(2, 2) - r(0, 0) - r(1, 1)) * S(2);
    qw = (r(1, 0) - r(0, 1)) / s;
    qx = (r(0, 2) + r(2, 0)) / s;
    qy = (r(1, 2) + r(2, 1)) / s;
    qz = S(0.25) * s;
  }
  if (qw < S(0)) {
    qw = -qw;
    qx = -qx;
    qy = -qy;
    qz = -qz;
  }
  S vn = std::sqrt(qx * qx + qy * qy + qz * qz);
  if (vn < S(1e-12)) return {0, 0, 0};
  S angle = S(2) * std::atan2(vn, qw);
  return Vec3<S>{qx, qy, qz} * (angle / vn);
}

// d(exp(aa))/d(aa_k), Gallego & Yezzi closed form; limit [e_k]x at aa -> 0.
template <class S>
Mat3<S> axis_angle_jacobian(const Vec3<S>& aa, int k, const Mat3<S>& rot) {
  Vec3<S> e{S(k == 0), S(k == 1), S(k == 2)};
  S n2 = aa.dot(aa);
  if (n2 < S(1e-16)) return skew(e);
  Vec3<S> ime = e - rot * e;  // (I - R) e_k
  S ak = (k == 0) ? aa.x : (k == 1) ? aa.y : aa.z;
  Mat3<S> lhs = skew(aa) * ak + skew(aa.cross(ime));
  return (lhs * (S(1) / n2)) * rot;
}

// Nearest rotation by Newton polar iteration; inputs are near-orthonormal
// blends of rotations so a handful of steps converge.
template <class S>
Mat3<S> polar_rotation(const Mat3<S>& a) {
  Mat3<S> x = a;
  for (int it = 0; it < 20; ++it) {
    Mat3<S> xit = x.inverse().transposed();
    Mat3<S> next;
    S diff = 0;
    for (int i = 0; i < 9; ++i) {
      next.m[i] = S(0.5) * (x.m[i] + xit.m[i]);
      diff += std::abs(next.m[i] - x.m[i]);
    }
    x = next;
    if (diff < S(1e-14)) break;
  }
  return x;
}

// Rigid transform p -> r*p + t.
template <class S>
struct Transform {
  Mat3<S> r;
  Vec3<S> t;
  Vec3<S> apply(const Vec3<S>& p) const { return r * p + t; }
  Transform operator*(const Transform& o) const { return {r * o.r, r * o.t + t}; }
  Transform inverse() const {
    Mat3<S> rt = r.transposed();
    return {rt, rt * (t * S(-1))};
  }
  static Transform identity() { return {Mat3<S>::identity(), {0, 0, 0}}; }
  static Transform translation(const Vec3<S>& t) { return {Mat3<S>::identity(), t}; }
};

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

// Deterministic normal sampler: mt19937_64 uniforms through Box-Muller,
// pinned by the standard (std::normal_distribution is not).
template <class Rng>
double gauss(Rng& rng) {
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  double u1 = 0;
  while (u1 <= 0) u1 = double(rng() >> 11) * kScale;
  double u2 = double(rng() >> 11) * kScale;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

}  // namespace dyn
