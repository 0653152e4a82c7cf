#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace e2pn {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }

/// Proper rotation stored as a row-major 3x3 matrix.
class Rotation3 {
 public:
  Rotation3() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Rotation3(const std::array<double, 9>& m) : m_(m) {}

  static Rotation3 identity() { return Rotation3(); }

  /// Right-handed rotation by `angle` radians about `axis` (need not be unit).
  static Rotation3 axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = normalized(axis);
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return Rotation3({t * u[0] * u[0] + c, t * u[0] * u[1] - s * u[2], t * u[0] * u[2] + s * u[1],
                      t * u[0] * u[1] + s * u[2], t * u[1] * u[1] + c, t * u[1] * u[2] - s * u[0],
                      t * u[0] * u[2] - s * u[1], t * u[1] * u[2] + s * u[0], t * u[2] * u[2] + c});
  }

  double operator()(std::size_t r, std::size_t c) const { return m_[3 * r + c]; }
  const std::array<double, 9>& data() const { return m_; }

  Vec3 apply(const Vec3& v) const {
    return {m_[0] * v[0] + m_[1] * v[1] + m_[2] * v[2], m_[3] * v[0] + m_[4] * v[1] + m_[5] * v[2],
            m_[6] * v[0] + m_[7] * v[1] + m_[8] * v[2]};
  }

  Rotation3 operator*(const Rotation3& o) const {
    std::array<double, 9> r{};
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        r[3 * i + j] = m_[3 * i] * o.m_[j] + m_[3 * i + 1] * o.m_[3 + j] + m_[3 * i + 2] * o.m_[6 + j];
    return Rotation3(r);
  }

  Rotation3 transpose() const {
    return Rotation3({m_[0], m_[3], m_[6], m_[1], m_[4], m_[7], m_[2], m_[5], m_[8]});
  }

  double determinant() const {
    return m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) - m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
           m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
  }

  /// max |m_ij - o_ij|
  double max_abs_diff(const Rotation3& o) const {
    double d = 0.0;
    for (std::size_t i = 0; i < 9; ++i) d = std::max(d, std::abs(m_[i] - o.m_[i]));
    return d;
  }

  /// max |(m^T m - I)_ij|
  double orthogonality_error() const { return (transpose() * *this).max_abs_diff(identity()); }

 private:
  std::array<double, 9> m_;
};

/// Rigid motion x -> R x + t.
struct RigidMotion {
  Rotation3 rotation;
  Vec3 translation{0.0, 0.0, 0.0};

  Vec3 apply(const Vec3& p) const { return rotation.apply(p) + translation; }
};

}  // namespace e2pn
