#pragma once

#include <array>
#include <cmath>

namespace alvi {

/// Unit quaternion (w, x, y, z); composition is the Hamilton product.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quat identity() { return {}; }

  static Quat axis_angle(double ax, double ay, double az, double angle) {
    const double n = std::sqrt(ax * ax + ay * ay + az * az);
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), ax * s, ay * s, az * s};
  }
  static Quat rot_x(double a) { return {std::cos(0.5 * a), std::sin(0.5 * a), 0.0, 0.0}; }
  static Quat rot_y(double a) { return {std::cos(0.5 * a), 0.0, std::sin(0.5 * a), 0.0}; }
  static Quat rot_z(double a) { return {std::cos(0.5 * a), 0.0, 0.0, std::sin(0.5 * a)}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  Quat normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  /// Same rotation with w >= 0.
  Quat canonical() const { return w < 0.0 ? Quat{-w, -x, -y, -z} : *this; }

  friend Quat operator*(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }
};

/// Largest component-wise distance between a and b up to the double cover.
inline double rotation_distance(const Quat& a, const Quat& b) {
  auto d = [](const Quat& p, const Quat& q) {
    return std::max({std::abs(p.w - q.w), std::abs(p.x - q.x), std::abs(p.y - q.y), std::abs(p.z - q.z)});
  };
  return std::min(d(a, b), d(a, Quat{-b.w, -b.x, -b.y, -b.z}));
}

struct TwistSwing {
  Quat swing;
  Quat twist;
};

/// Factor q = swing * twist where twist rotates about the unit axis (ax, ay, az).
/// A rotation whose axis is orthogonal to the twist axis has no twist.
inline TwistSwing twist_swing(const Quat& q_in, double ax, double ay, double az) {
  const Quat q = q_in.canonical();
  const double p = q.x * ax + q.y * ay + q.z * az;
  Quat twist{q.w, p * ax, p * ay, p * az};
  const double n = twist.norm();
  if (n < 1e-12) {
    twist = Quat::identity();
  } else {
    twist = {twist.w / n, twist.x / n, twist.y / n, twist.z / n};
  }
  return {q * twist.conjugate(), twist};
}

/// Signed rotation angle in (-pi, pi] of a quaternion known to rotate about the given axis.
inline double signed_angle(const Quat& q_in, double ax, double ay, double az) {
  const Quat q = q_in.canonical();
  const double s = q.x * ax + q.y * ay + q.z * az;
  return 2.0 * std::atan2(s, q.w);
}

}  // namespace alvi
