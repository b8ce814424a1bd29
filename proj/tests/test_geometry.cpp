// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT

#include <catch2/catch_amalgamated.hpp>

#include "kinefit/geometry.hpp"
#include "test_helpers.hpp"

using namespace kinefit;
using kinefit::testing::TestRng;

namespace {
Eigen::VectorXd flatten(const Pose& t) {
  Eigen::VectorXd v(12);
  Eigen::Index k = 0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v(k++) = t.rotation(r, c);
  }
  v.tail<3>() = t.translation;
  return v;
}
}  // namespace

TEST_CASE("so3_exp basics") {
  CHECK(so3_exp(Eigen::Vector3d::Zero()).isApprox(Eigen::Matrix3d::Identity(), 1e-15));

  const Eigen::Matrix3d quarter_turn = so3_exp({0.0, 0.0, M_PI / 2.0});
  CHECK((quarter_turn * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm() < 1e-12);

  TestRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector3d omega = rng.vector3(1.0);
    omega = 0.3 * omega / omega.norm();
    CHECK((so3_log(so3_exp(omega)) - omega).norm() < 1e-12);
  }
}

TEST_CASE("so3_exp small-angle branch stays accurate") {
  for (const double scale : {1e-12, 1e-9, 5e-9}) {
    const Eigen::Vector3d omega(scale, -2.0 * scale, 0.5 * scale);
    const Eigen::Matrix3d r = so3_exp(omega);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-15);
    CHECK((so3_log(r) - omega).norm() < 1e-15);
  }
}

TEST_CASE("so3_log basics") {
  CHECK(so3_log(Eigen::Matrix3d::Identity()).norm() == 0.0);

  const Eigen::Vector3d omega(0.1, 0.2, 0.3);
  CHECK((so3_log(so3_exp(omega)) - omega).norm() < 1e-12);

  const double near_pi = M_PI - 1e-3;
  const Eigen::Vector3d log_near_pi = so3_log(so3_exp({0.0, 0.0, near_pi}));
  CHECK((log_near_pi - Eigen::Vector3d(0.0, 0.0, near_pi)).norm() < 1e-8);

  CHECK_THROWS_AS(so3_log(so3_exp({0.0, 0.0, M_PI})), AngleNearPi);
}

TEST_CASE("so3 round trip up to angle 3") {
  TestRng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector3d omega = rng.vector3(1.0);
    if (omega.norm() < 1e-6) continue;
    omega = rng.uniform(0.0, 3.0) * omega / omega.norm();
    CHECK((so3_log(so3_exp(omega)) - omega).norm() <= 1e-10);
  }
}

TEST_CASE("pose_compose") {
  TestRng rng(13);
  const Pose t = rng.pose(2.0, 1.0);

  const Pose id;
  CHECK(flatten(pose_compose(id, t)).isApprox(flatten(t), 1e-15));

  const Pose round = pose_compose(t, t.inverse());
  CHECK((round.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(round.translation.norm() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    const Pose a = rng.pose(2.0, 1.0);
    const Pose b = rng.pose(2.0, 1.0);
    const Eigen::Matrix4d oracle = a.matrix() * b.matrix();
    CHECK((pose_compose(a, b).matrix() - oracle).norm() < 1e-13);
  }
}

TEST_CASE("pose composition is associative") {
  TestRng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose a = rng.pose(2.0, 1.0), b = rng.pose(2.0, 1.0), c = rng.pose(2.0, 1.0);
    CHECK(flatten((a * b) * c).isApprox(flatten(a * (b * c)), 1e-12));
  }
}

TEST_CASE("pose_retract") {
  TestRng rng(15);
  const Pose t = rng.pose(2.0, 1.0);

  CHECK(flatten(pose_retract(t, Vector6d::Zero())).isApprox(flatten(t), 1e-15));

  Vector6d pure_translation;
  pure_translation << 0, 0, 0, 1, 2, 3;
  const Pose shifted = pose_retract(Pose{}, pure_translation);
  CHECK((shifted.translation - Eigen::Vector3d(1, 2, 3)).norm() < 1e-15);
  CHECK((shifted.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-15);

  // d/deps retract(T, eps*delta) at 0 equals T * hat(delta).
  for (int trial = 0; trial < 10; ++trial) {
    const Pose base = rng.pose(2.0, 1.0);
    Vector6d delta;
    for (int i = 0; i < 6; ++i) delta(i) = rng.uniform(-1.0, 1.0);
    Eigen::Matrix4d hat = Eigen::Matrix4d::Zero();
    hat.topLeftCorner<3, 3>() = skew(delta.head<3>());
    hat.topRightCorner<3, 1>() = delta.tail<3>();
    const Eigen::Matrix4d analytic = base.matrix() * hat;

    const double eps = 1e-6;
    const Eigen::Matrix4d fd =
        (pose_retract(base, (eps * delta).eval()).matrix() -
         pose_retract(base, (-eps * delta).eval()).matrix()) /
        (2.0 * eps);
    CHECK((fd - analytic).norm() < 1e-6 * std::max(1.0, analytic.norm()));
  }
}

TEST_CASE("se3 exp/log round trip") {
  TestRng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    Vector6d xi;
    for (int i = 0; i < 6; ++i) xi(i) = rng.uniform(-1.5, 1.5);
    CHECK((se3_log(se3_exp(xi)) - xi).norm() < 1e-10);
  }
}

TEST_CASE("se3 right Jacobian inverse matches finite differences") {
  TestRng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose prior = rng.pose(1.5, 1.0);
    const Pose t = rng.pose(1.5, 1.0);
    const Vector6d r0 = se3_log(prior.inverse() * t);
    const Matrix6d analytic = se3_right_jacobian_inverse(r0);

    const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return se3_log(prior.inverse() * pose_retract(t, Vector6d(d)));
    };
    const Eigen::MatrixXd fd = numeric_jacobian(f, Eigen::VectorXd::Zero(6), 1e-6);
    CHECK((fd - analytic).norm() < 1e-6 * std::max(1.0, analytic.norm()));
  }
}

TEST_CASE("so3 right Jacobian inverse matches finite differences") {
  TestRng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3d mean = rng.rotation(1.5);
    const Eigen::Matrix3d omega = rng.rotation(1.5);
    const Eigen::Vector3d phi = so3_log(mean.transpose() * omega);
    const Eigen::Matrix3d analytic = so3_right_jacobian_inverse(phi);

    const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return so3_log(mean.transpose() * (omega * so3_exp(d)));
    };
    const Eigen::MatrixXd fd = numeric_jacobian(f, Eigen::VectorXd::Zero(3), 1e-6);
    CHECK((fd - analytic).norm() < 1e-6 * std::max(1.0, analytic.norm()));
  }
}

TEST_CASE("numeric_jacobian") {
  TestRng rng(19);
  Eigen::MatrixXd m(3, 4);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = rng.uniform(-2.0, 2.0);
  }
  const auto linear = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return m * x; };
  // No truncation error on a linear map, so a large step leaves only roundoff.
  const Eigen::MatrixXd jac = numeric_jacobian(linear, rng.uniform_vector(4, -1, 1), 1e-2);
  CHECK((jac - m).norm() < 1e-12 * m.norm());

  const auto sqnorm = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd out(1);
    out(0) = x.squaredNorm();
    return out;
  };
  const Eigen::MatrixXd grad = numeric_jacobian(sqnorm, Eigen::Vector2d(1.0, 2.0), 1e-6);
  CHECK(std::abs(grad(0, 0) - 2.0) < 1e-8);
  CHECK(std::abs(grad(0, 1) - 4.0) < 1e-8);
}

TEST_CASE("orthonormality survives long chains of operations") {
  TestRng rng(20);
  Pose t;
  for (int step = 0; step < 10000; ++step) {
    Vector6d delta;
    for (int i = 0; i < 6; ++i) delta(i) = rng.uniform(-0.2, 0.2);
    t = pose_retract(t, delta);
    if (step % 3 == 0) t = pose_compose(t, rng.pose(0.5, 0.2));
  }
  CHECK((t.rotation.transpose() * t.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-8);
  CHECK(std::abs(t.rotation.determinant() - 1.0) < 1e-8);
}
