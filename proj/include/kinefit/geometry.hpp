// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT
//
// SO(3)/SE(3) primitives and finite-difference utilities.
//
// Convention used throughout the library: increments are right-multiplicative
// (body frame), twists are ordered [rotation (rad); translation (length)].

#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <cmath>

#include "kinefit/errors.hpp"

namespace kinefit {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Angle below which exp/log use their second-order Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

/// Skew-symmetric matrix such that skew(v) * u = v x u.
inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Inverse of skew() on skew-symmetric input.
inline Eigen::Vector3d unskew(const Eigen::Matrix3d& m) {
  return {m(2, 1), m(0, 2), m(1, 0)};
}

/// SO(3) exponential map (Rodrigues).
inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  double a, b;  // R = I + a*[w]x + b*[w]x^2
  if (theta2 < kSmallAngle * kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Eigen::Matrix3d w = skew(omega);
  return Eigen::Matrix3d::Identity() + a * w + b * w * w;
}

/// SO(3) logarithm. Throws AngleNearPi when trace(R) <= -1 + 1e-9
/// (angle within ~3e-5 of pi), where the map is not continuous.
inline Eigen::Vector3d so3_log(const Eigen::Matrix3d& r) {
  const double trace = r.trace();
  if (trace <= -1.0 + 1e-9) {
    throw AngleNearPi();
  }
  const Eigen::Vector3d axis_sin = 0.5 * unskew(r - r.transpose());  // = sin(theta) * axis
  const double cos_theta = std::min(1.0, std::max(-1.0, 0.5 * (trace - 1.0)));
  const double sin_theta = std::min(1.0, axis_sin.norm());
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < kSmallAngle) {
    return (1.0 + theta * theta / 6.0) * axis_sin;
  }
  return (theta / sin_theta) * axis_sin;
}

/// Left Jacobian of SO(3): exp(omega + d) ~ exp(J_l(omega) d) * exp(omega).
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  double b, c;  // J = I + b*[w]x + c*[w]x^2
  if (theta2 < kSmallAngle * kSmallAngle) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Eigen::Matrix3d w = skew(omega);
  return Eigen::Matrix3d::Identity() + b * w + c * w * w;
}

/// Inverse of the left Jacobian of SO(3).
inline Eigen::Matrix3d so3_left_jacobian_inverse(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  double c;
  if (theta2 < kSmallAngle * kSmallAngle) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    const double theta = std::sqrt(theta2);
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  const Eigen::Matrix3d w = skew(omega);
  return Eigen::Matrix3d::Identity() - 0.5 * w + c * w * w;
}

/// Inverse of the right Jacobian of SO(3). This is the derivative of
/// phi -> log(exp(phi_hat) * exp(d)) at d = 0.
inline Eigen::Matrix3d so3_right_jacobian_inverse(const Eigen::Vector3d& phi) {
  return so3_left_jacobian_inverse(-phi);
}

/// Polar projection of a near-orthonormal matrix onto SO(3).
inline Eigen::Matrix3d reorthonormalize(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0.0) {
    u.col(2) *= -1.0;
  }
  return u * svd.matrixV().transpose();
}

/// Drift threshold above which retractions re-project the rotation.
inline constexpr double kOrthonormalityDrift = 1e-9;

inline Eigen::Matrix3d fix_drift(const Eigen::Matrix3d& r) {
  const double drift =
      (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
  return drift > kOrthonormalityDrift ? reorthonormalize(r) : r;
}

/// Right-multiplicative rotation update: R * exp(delta).
inline Eigen::Matrix3d rotation_retract(const Eigen::Matrix3d& r, const Eigen::Vector3d& delta) {
  return fix_drift((r * so3_exp(delta)).eval());
}

/// Rigid transform of one body part: rotation plus translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose Identity() { return {}; }

  Pose inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose operator*(const Pose& a, const Pose& b) { return pose_compose(a, b); }

/// SE(3) exponential; xi = [omega; rho].
inline Pose se3_exp(const Vector6d& xi) {
  const Eigen::Vector3d omega = xi.head<3>();
  const Eigen::Vector3d rho = xi.tail<3>();
  return {so3_exp(omega), so3_left_jacobian(omega) * rho};
}

/// SE(3) logarithm; inherits the AngleNearPi guard of so3_log.
inline Vector6d se3_log(const Pose& t) {
  const Eigen::Vector3d omega = so3_log(t.rotation);
  Vector6d xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * t.translation;
  return xi;
}

/// Right-multiplicative pose update: T * exp(delta).
inline Pose pose_retract(const Pose& t, const Vector6d& delta) {
  Pose out = pose_compose(t, se3_exp(delta));
  out.rotation = fix_drift(out.rotation);
  return out;
}

/// Adjoint of T on twists [omega; rho]: Ad(T) = [[R, 0], [t^ R, R]].
inline Matrix6d se3_adjoint(const Pose& t) {
  Matrix6d ad = Matrix6d::Zero();
  ad.topLeftCorner<3, 3>() = t.rotation;
  ad.bottomRightCorner<3, 3>() = t.rotation;
  ad.bottomLeftCorner<3, 3>() = skew(t.translation) * t.rotation;
  return ad;
}

/// Matrix of the Lie bracket ad(xi) y = [xi, y] on twists [omega; rho].
inline Matrix6d se3_ad(const Vector6d& xi) {
  Matrix6d ad = Matrix6d::Zero();
  const Eigen::Matrix3d w = skew(xi.head<3>());
  ad.topLeftCorner<3, 3>() = w;
  ad.bottomRightCorner<3, 3>() = w;
  ad.bottomLeftCorner<3, 3>() = skew(xi.tail<3>());
  return ad;
}

/// Inverse of the right Jacobian of SE(3): the derivative of
/// xi -> log(exp(xi_hat) * exp(d)) at d = 0.
///
/// J_r(xi) = sum_n (-ad_xi)^n / (n+1)! is summed to machine precision and
/// inverted; for the twist magnitudes a pose prior sees (< pi) the series
/// converges in a handful of terms.
inline Matrix6d se3_right_jacobian_inverse(const Vector6d& xi) {
  const Matrix6d a = -se3_ad(xi);
  Matrix6d jr = Matrix6d::Identity();
  Matrix6d term = Matrix6d::Identity();
  for (int n = 1; n <= 60; ++n) {
    term = (term * a / static_cast<double>(n + 1)).eval();
    jr += term;
    if (term.lpNorm<Eigen::Infinity>() < 1e-19) break;
  }
  return jr.partialPivLu().inverse();
}

/// Central-difference Jacobian of f at x; column k is
/// (f(x + eps e_k) - f(x - eps e_k)) / (2 eps).
template <typename F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x, double eps) {
  Eigen::VectorXd probe = x;
  probe(0) += eps;
  const Eigen::VectorXd f_hi0 = f(probe);
  Eigen::MatrixXd jac(f_hi0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += eps;
    xm(k) -= eps;
    jac.col(k) = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return jac;
}

}  // namespace kinefit
