#pragma once

#include <Eigen/Core>
#include <cmath>

namespace gridracer {

// Planar rigid pose: position of a frame's origin in its parent frame plus
// the frame's heading. x forward, y left, yaw counterclockwise.
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
};

enum class TransformDirection { world_to_body, body_to_world };

inline Eigen::Vector2d body_to_world(const Pose2& pose, const Eigen::Vector2d& p) {
    const double c = std::cos(pose.yaw);
    const double s = std::sin(pose.yaw);
    return {pose.x + c * p.x() - s * p.y(), pose.y + s * p.x() + c * p.y()};
}

inline Eigen::Vector2d world_to_body(const Pose2& pose, const Eigen::Vector2d& p) {
    const double c = std::cos(pose.yaw);
    const double s = std::sin(pose.yaw);
    const double dx = p.x() - pose.x;
    const double dy = p.y() - pose.y;
    return {c * dx + s * dy, -s * dx + c * dy};
}

inline Eigen::Vector2d transform_point(const Pose2& pose, const Eigen::Vector2d& p,
                                       TransformDirection dir) {
    return dir == TransformDirection::body_to_world ? body_to_world(pose, p)
                                                    : world_to_body(pose, p);
}

inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

}  // namespace gridracer
