#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

namespace gridracer {

// Rigid transform in 3D: p_out = R * p_in + t.
struct Pose3 {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    void validate() const {
        const Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
        if (err.cwiseAbs().maxCoeff() > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9)
            throw std::invalid_argument("Pose3: rotation must be orthonormal with determinant +1");
    }

    Pose3 inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }

    Pose3 compose(const Pose3& inner) const {
        // this * inner: applies inner first
        return {rotation * inner.rotation, rotation * inner.translation + translation};
    }

    static Pose3 from_quaternion(double qw, double qx, double qy, double qz,
                                 const Eigen::Vector3d& t) {
        Eigen::Quaterniond q(qw, qx, qy, qz);
        if (q.norm() < 1e-12) throw std::invalid_argument("Pose3: zero quaternion");
        q.normalize();
        return {q.toRotationMatrix(), t};
    }
};

// Pinhole camera plus its mounting transform on the vehicle.
// Camera frame: x right, y down, z along the optical axis.
struct CameraModel {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    Pose3 cam_from_car;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw std::invalid_argument("CameraModel: focal lengths must be > 0");
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("CameraModel: image size must be positive");
        if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
            throw std::invalid_argument("CameraModel: principal point outside image");
        cam_from_car.validate();
    }

    Eigen::Matrix3d intrinsics() const {
        Eigen::Matrix3d k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }
};

// Full 3x4 ground projection and its reduced 3x3 form for z = 0 points.
struct GroundHomography {
    Eigen::Matrix<double, 3, 4> H = Eigen::Matrix<double, 3, 4>::Zero();
    Eigen::Matrix3d H_hat = Eigen::Matrix3d::Zero();
    int image_width = 0;
    int image_height = 0;

    static Eigen::Matrix3d reduce(const Eigen::Matrix<double, 3, 4>& full) {
        Eigen::Matrix3d r;
        r.col(0) = full.col(0);
        r.col(1) = full.col(1);
        r.col(2) = full.col(3);
        return r;
    }
};

// H = K [R|t]_cam_from_car [R|t]_car_from_world, mapping homogeneous world
// points to homogeneous pixels; the z column is dropped for ground points.
inline GroundHomography compose_homography(const CameraModel& camera,
                                           const Pose3& world_from_car) {
    camera.validate();
    world_from_car.validate();

    const Pose3 cam_from_world = camera.cam_from_car.compose(world_from_car.inverse());
    Eigen::Matrix<double, 3, 4> rt;
    rt.block<3, 3>(0, 0) = cam_from_world.rotation;
    rt.col(3) = cam_from_world.translation;

    GroundHomography g;
    g.H = camera.intrinsics() * rt;
    g.H_hat = GroundHomography::reduce(g.H);
    g.image_width = camera.width;
    g.image_height = camera.height;
    return g;
}

struct PixelProjection {
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    double w = 0.0;  // homogeneous depth; <= 0 means behind the camera
    bool valid = false;
};

inline PixelProjection project_ground_point(const GroundHomography& g,
                                            const Eigen::Vector2d& p_world) {
    const Eigen::Vector3d h = g.H_hat * Eigen::Vector3d{p_world.x(), p_world.y(), 1.0};
    PixelProjection out;
    out.w = h.z();
    if (h.z() <= 0.0) return out;
    out.pixel = {h.x() / h.z(), h.y() / h.z()};
    out.valid = out.pixel.x() >= 0.0 && out.pixel.x() < g.image_width &&
                out.pixel.y() >= 0.0 && out.pixel.y() < g.image_height;
    return out;
}

// Pixel ray back to the z = 0 plane. Returns false at or above the horizon.
inline bool backproject_pixel(const Eigen::Matrix3d& h_hat_inv,
                              const Eigen::Vector2d& pixel, Eigen::Vector2d& ground) {
    const Eigen::Vector3d g = h_hat_inv * Eigen::Vector3d{pixel.x(), pixel.y(), 1.0};
    if (g.z() <= 1e-12) return false;
    ground = {g.x() / g.z(), g.y() / g.z()};
    return true;
}

template <typename Json>
void to_json(Json& j, const Pose3& p) {
    j = Json{{"rotation",
              {p.rotation(0, 0), p.rotation(0, 1), p.rotation(0, 2),
               p.rotation(1, 0), p.rotation(1, 1), p.rotation(1, 2),
               p.rotation(2, 0), p.rotation(2, 1), p.rotation(2, 2)}},
             {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

template <typename Json>
void from_json(const Json& j, Pose3& p) {
    const auto& r = j.at("rotation");
    if (r.size() != 9) throw std::invalid_argument("Pose3: rotation must have 9 entries");
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) p.rotation(i, k) = r.at(i * 3 + k).template get<double>();
    const auto& t = j.at("translation");
    p.translation = {t.at(0).template get<double>(), t.at(1).template get<double>(),
                     t.at(2).template get<double>()};
    p.validate();
}

template <typename Json>
void to_json(Json& j, const CameraModel& c) {
    j = Json{{"fx", c.fx},         {"fy", c.fy},   {"cx", c.cx},
             {"cy", c.cy},         {"width", c.width}, {"height", c.height},
             {"cam_from_car", c.cam_from_car}};
}

template <typename Json>
void from_json(const Json& j, CameraModel& c) {
    j.at("fx").get_to(c.fx);
    j.at("fy").get_to(c.fy);
    j.at("cx").get_to(c.cx);
    j.at("cy").get_to(c.cy);
    j.at("width").get_to(c.width);
    j.at("height").get_to(c.height);
    c.cam_from_car = j.at("cam_from_car").template get<Pose3>();
    c.validate();
}

inline CameraModel load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open camera file: " + path);
    nlohmann::json j;
    in >> j;
    return j.get<CameraModel>();
}

}  // namespace gridracer
