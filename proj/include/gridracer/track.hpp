#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "gridracer/costmap.hpp"
#include "gridracer/pose2.hpp"
#include "gridracer/rng.hpp"

namespace gridracer {

// Stadium oval: two straights joined by semicircular turns, vertex 0 at the
// middle of the bottom straight heading +x (counterclockwise traversal).
inline Centerline make_oval_centerline(double straight_length, double radius,
                                       double half_width, double spacing = 0.25) {
    if (!(radius > 0.0)) throw std::invalid_argument("oval: radius must be > 0");
    if (!(straight_length >= 0.0)) throw std::invalid_argument("oval: straight length must be >= 0");
    if (!(half_width > 0.0)) throw std::invalid_argument("oval: half_width must be > 0");
    if (!(spacing > 0.0)) throw std::invalid_argument("oval: spacing must be > 0");

    const double hs = straight_length / 2.0;
    Centerline line;
    line.closed = true;
    line.half_width = half_width;

    auto add_straight = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        const double len = (b - a).norm();
        const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
        for (int i = 0; i < n; ++i)
            line.vertices.push_back(a + (b - a) * (static_cast<double>(i) / n));
    };
    auto add_arc = [&](const Eigen::Vector2d& center, double a0, double a1) {
        const double len = std::abs(a1 - a0) * radius;
        const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)));
        for (int i = 0; i < n; ++i) {
            const double a = a0 + (a1 - a0) * (static_cast<double>(i) / n);
            line.vertices.push_back(center + radius * Eigen::Vector2d{std::cos(a), std::sin(a)});
        }
    };

    add_straight({0.0, -radius}, {hs, -radius});
    add_arc({hs, 0.0}, -M_PI / 2.0, M_PI / 2.0);
    add_straight({hs, radius}, {-hs, radius});
    add_arc({-hs, 0.0}, M_PI / 2.0, 3.0 * M_PI / 2.0);
    add_straight({-hs, -radius}, {0.0, -radius});

    line.validate();
    return line;
}

inline bool segments_properly_intersect(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                        const Eigen::Vector2d& c, const Eigen::Vector2d& d) {
    auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return u.x() * v.y() - u.y() * v.x();
    };
    const double d1 = cross(b - a, c - a);
    const double d2 = cross(b - a, d - a);
    const double d3 = cross(d - c, a - c);
    const double d4 = cross(d - c, b - c);
    // strict sign changes: touching at shared endpoints does not count
    return d1 * d2 < 0.0 && d3 * d4 < 0.0;
}

inline Centerline make_waypoint_centerline(const std::vector<Eigen::Vector2d>& waypoints,
                                           bool closed, double half_width) {
    Centerline line;
    line.vertices = waypoints;
    line.closed = closed;
    line.half_width = half_width;
    line.validate();
    for (size_t i = 0; i < line.segment_count(); ++i) {
        for (size_t j = i + 1; j < line.segment_count(); ++j) {
            const auto [a, b] = line.segment(i);
            const auto [c, d] = line.segment(j);
            if (segments_properly_intersect(a, b, c, d))
                throw std::invalid_argument("waypoint centerline self-intersects");
        }
    }
    return line;
}

// Arc-length parametrization of a centerline, for sampling poses along a
// track and locating the start line.
class TrackArc {
public:
    explicit TrackArc(const Centerline& line) : line_(line) {
        line.validate();
        cumulative_.push_back(0.0);
        for (size_t i = 0; i < line.segment_count(); ++i) {
            const auto [a, b] = line.segment(i);
            cumulative_.push_back(cumulative_.back() + (b - a).norm());
        }
    }

    double length() const { return cumulative_.back(); }

    Pose2 pose_at(double s) const {
        const double total = length();
        if (line_.closed) {
            s = std::fmod(s, total);
            if (s < 0.0) s += total;
        } else {
            s = std::clamp(s, 0.0, total);
        }
        size_t i = 0;
        while (i + 1 < cumulative_.size() - 1 && cumulative_[i + 1] <= s) ++i;
        const auto [a, b] = line_.segment(i);
        const double seg_len = cumulative_[i + 1] - cumulative_[i];
        const double t = seg_len > 0.0 ? (s - cumulative_[i]) / seg_len : 0.0;
        const Eigen::Vector2d p = a + t * (b - a);
        const Eigen::Vector2d dir = (b - a).normalized();
        return Pose2{p.x(), p.y(), std::atan2(dir.y(), dir.x())};
    }

private:
    Centerline line_;
    std::vector<double> cumulative_;
};

// Deterministic poses along the track with small lateral and heading jitter.
inline std::vector<Pose2> sample_track_poses(const Centerline& line, int count,
                                             std::uint64_t seed,
                                             double lateral_sigma = 0.2,
                                             double yaw_sigma = 0.1) {
    if (count <= 0) throw std::invalid_argument("sample_track_poses: count must be > 0");
    const TrackArc arc(line);
    Rng rng(seed);
    std::vector<Pose2> poses;
    poses.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double s = arc.length() * (static_cast<double>(i) / count);
        Pose2 p = arc.pose_at(s);
        const double lat = lateral_sigma * rng.next_gaussian();
        p.x += -std::sin(p.yaw) * lat;
        p.y += std::cos(p.yaw) * lat;
        p.yaw = wrap_angle(p.yaw + yaw_sigma * rng.next_gaussian());
        poses.push_back(p);
    }
    return poses;
}

}  // namespace gridracer
