#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>

namespace mbf {

using Vec3 = Eigen::Vector3d;
using Index3 = std::array<int, 3>;

struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 extent() const { return hi - lo; }
  bool empty() const { return (hi.array() < lo.array()).any(); }
};

}  // namespace mbf
