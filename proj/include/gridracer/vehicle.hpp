#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gridracer {

// Planar rigid-body state. Position and yaw are in the world frame,
// velocities in the body frame (x forward, y left).
struct VehicleState {
    double px = 0.0;
    double py = 0.0;
    double yaw = 0.0;
    double roll = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double yaw_rate = 0.0;

    bool finite() const {
        return std::isfinite(px) && std::isfinite(py) && std::isfinite(yaw) &&
               std::isfinite(roll) && std::isfinite(vx) && std::isfinite(vy) &&
               std::isfinite(yaw_rate);
    }
    double speed() const { return std::hypot(vx, vy); }
};

struct Control {
    double steering = 0.0;  // [-1, 1], positive turns left
    double throttle = 0.0;  // [-1, 1], negative brakes

    Control clamped() const {
        return {std::clamp(steering, -1.0, 1.0), std::clamp(throttle, -1.0, 1.0)};
    }
};

struct VehicleParams {
    double mass = 22.0;                      // kg
    double wheelbase = 0.57;                 // m
    double front_axle = 0.285;               // CG to front axle, m
    double rear_axle = 0.285;                // CG to rear axle, m
    double yaw_inertia = 1.8;                // kg m^2
    double cornering_stiffness_front = 1200; // N/rad
    double cornering_stiffness_rear = 1400;  // N/rad
    double max_steering_angle = 0.40;        // rad at the wheel for |steering| = 1
    double drive_force_gain = 100.0;         // N per unit throttle
    double rolling_drag = 1.2;               // N per (m/s)
    double aero_drag = 0.10;                 // N per (m/s)^2
    double roll_gain = 0.058;                // rad per (m/s^2) lateral accel
    double max_speed = 26.0;                 // m/s, drag-limited top speed

    void validate() const {
        auto pos = [](double v, const char* name) {
            if (!(v > 0.0)) throw std::invalid_argument(std::string("VehicleParams: ") + name + " must be > 0");
        };
        pos(mass, "mass");
        pos(wheelbase, "wheelbase");
        pos(front_axle, "front_axle");
        pos(rear_axle, "rear_axle");
        pos(yaw_inertia, "yaw_inertia");
        pos(cornering_stiffness_front, "cornering_stiffness_front");
        pos(cornering_stiffness_rear, "cornering_stiffness_rear");
        pos(max_steering_angle, "max_steering_angle");
        pos(drive_force_gain, "drive_force_gain");
        pos(roll_gain, "roll_gain");
        pos(max_speed, "max_speed");
        if (rolling_drag < 0.0 || aero_drag < 0.0)
            throw std::invalid_argument("VehicleParams: drag coefficients must be >= 0");
        if (std::abs(front_axle + rear_axle - wheelbase) > 1e-9)
            throw std::invalid_argument("VehicleParams: front_axle + rear_axle must equal wheelbase");
    }
};

template <typename Json>
void to_json(Json& j, const VehicleParams& p) {
    j = Json{{"mass", p.mass},
             {"wheelbase", p.wheelbase},
             {"front_axle", p.front_axle},
             {"rear_axle", p.rear_axle},
             {"yaw_inertia", p.yaw_inertia},
             {"cornering_stiffness_front", p.cornering_stiffness_front},
             {"cornering_stiffness_rear", p.cornering_stiffness_rear},
             {"max_steering_angle", p.max_steering_angle},
             {"drive_force_gain", p.drive_force_gain},
             {"rolling_drag", p.rolling_drag},
             {"aero_drag", p.aero_drag},
             {"roll_gain", p.roll_gain},
             {"max_speed", p.max_speed}};
}

template <typename Json>
void from_json(const Json& j, VehicleParams& p) {
    static const char* keys[] = {"mass", "wheelbase", "front_axle", "rear_axle",
                                 "yaw_inertia", "cornering_stiffness_front",
                                 "cornering_stiffness_rear", "max_steering_angle",
                                 "drive_force_gain", "rolling_drag", "aero_drag",
                                 "roll_gain", "max_speed"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(std::begin(keys), std::end(keys),
                         [&](const char* k) { return key == k; }) == std::end(keys))
            throw std::invalid_argument("VehicleParams: unknown key '" + key + "'");
    }
    j.at("mass").get_to(p.mass);
    j.at("wheelbase").get_to(p.wheelbase);
    j.at("front_axle").get_to(p.front_axle);
    j.at("rear_axle").get_to(p.rear_axle);
    j.at("yaw_inertia").get_to(p.yaw_inertia);
    j.at("cornering_stiffness_front").get_to(p.cornering_stiffness_front);
    j.at("cornering_stiffness_rear").get_to(p.cornering_stiffness_rear);
    j.at("max_steering_angle").get_to(p.max_steering_angle);
    j.at("drive_force_gain").get_to(p.drive_force_gain);
    j.at("rolling_drag").get_to(p.rolling_drag);
    j.at("aero_drag").get_to(p.aero_drag);
    j.at("roll_gain").get_to(p.roll_gain);
    j.at("max_speed").get_to(p.max_speed);
}

inline VehicleParams load_vehicle_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vehicle params file: " + path);
    nlohmann::json j;
    in >> j;
    VehicleParams p = j.get<VehicleParams>();
    p.validate();
    return p;
}

// Below this longitudinal speed the slip-angle denominator is held constant
// to avoid division blowup at rest.
inline constexpr double kMinSlipSpeed = 0.1;

// Lateral tire force fades as vx^2 / (vx^2 + kTireFadeSpeed^2). Slip angles
// lose meaning near standstill, and the fade keeps the lateral dynamics
// eigenvalue ~ C/(m vx) inside the RK4 stability region at the 25 ms control
// period for every speed.
inline constexpr double kTireFadeSpeed = 1.2;

inline double guarded_vx(double vx) {
    if (vx >= kMinSlipSpeed) return vx;
    if (vx <= -kMinSlipSpeed) return vx;
    return vx >= 0.0 ? kMinSlipSpeed : -kMinSlipSpeed;
}

namespace detail {

// atan to ~3e-10 absolute accuracy at a fraction of the libm cost; the
// rollout hot loop calls this eight times per RK4 step. Exactly odd, so the
// model keeps its left/right mirror symmetry bitwise.
inline double fast_atan(double x) {
    const double ax = std::abs(x);
    const double z = ax > 1.0 ? 1.0 / ax : ax;
    const double t = z * z;
    double p = 1.08449274851173051e-03;
    p = p * t - 7.16616488715148599e-03;
    p = p * t + 2.22034549021395584e-02;
    p = p * t - 4.42736682656944130e-02;
    p = p * t + 6.71011398950347865e-02;
    p = p * t - 8.79611755811110507e-02;
    p = p * t + 1.10537847535589984e-01;
    p = p * t - 1.42790484169691506e-01;
    p = p * t + 1.99995958541804131e-01;
    p = p * t - 3.33333236656271403e-01;
    p = p * t + 9.99999999614525570e-01;
    double r = z * p;
    if (ax > 1.0) r = M_PI_2 - r;
    return std::copysign(r, x);
}

struct Derivative {
    double px, py, yaw, vx, vy, yaw_rate;
};

// Dynamic bicycle model with linear tires. Forces are linear in the slip
// angles (atan keeps them bounded at extreme sideslip); drive force is
// throttle-proportional, braking opposes vx and fades smoothly through zero
// so it can never reverse the vehicle.
inline Derivative dynamics(const VehicleState& s, double wheel_angle, double throttle,
                           const VehicleParams& p, double cos_delta, double sin_delta) {
    const double vxg = guarded_vx(s.vx);
    const double fade = s.vx * s.vx / (s.vx * s.vx + kTireFadeSpeed * kTireFadeSpeed);
    const double alpha_f = fast_atan((s.vy + p.front_axle * s.yaw_rate) / vxg) - wheel_angle;
    const double alpha_r = fast_atan((s.vy - p.rear_axle * s.yaw_rate) / vxg);
    const double fyf = -fade * p.cornering_stiffness_front * alpha_f;
    const double fyr = -fade * p.cornering_stiffness_rear * alpha_r;

    double fx = p.drive_force_gain * throttle;
    if (throttle < 0.0) fx *= std::tanh(s.vx / kMinSlipSpeed);
    fx -= p.rolling_drag * s.vx + p.aero_drag * s.vx * std::abs(s.vx);

    const double cy = std::cos(s.yaw);
    const double sy = std::sin(s.yaw);

    Derivative d;
    d.px = s.vx * cy - s.vy * sy;
    d.py = s.vx * sy + s.vy * cy;
    d.yaw = s.yaw_rate;
    d.vx = (fx - fyf * sin_delta) / p.mass + s.vy * s.yaw_rate;
    d.vy = (fyf * cos_delta + fyr) / p.mass - s.vx * s.yaw_rate;
    d.yaw_rate = (p.front_axle * fyf * cos_delta - p.rear_axle * fyr) / p.yaw_inertia;
    return d;
}

inline double lateral_accel(const VehicleState& s, double wheel_angle,
                            const VehicleParams& p, double cos_delta) {
    const double vxg = guarded_vx(s.vx);
    const double fade = s.vx * s.vx / (s.vx * s.vx + kTireFadeSpeed * kTireFadeSpeed);
    const double alpha_f = fast_atan((s.vy + p.front_axle * s.yaw_rate) / vxg) - wheel_angle;
    const double alpha_r = fast_atan((s.vy - p.rear_axle * s.yaw_rate) / vxg);
    const double fyf = -fade * p.cornering_stiffness_front * alpha_f;
    const double fyr = -fade * p.cornering_stiffness_rear * alpha_r;
    return (fyf * cos_delta + fyr) / p.mass;
}

// One RK4 step, control held constant. No validity checks; callers on the
// hot path validate the initial state once.
inline VehicleState rk4_step(const VehicleState& s, const Control& u,
                             const VehicleParams& p, double dt) {
    const double wheel = u.steering * p.max_steering_angle;
    const double cd = std::cos(wheel);
    const double sd = std::sin(wheel);

    auto advance = [&](const VehicleState& base, const Derivative& d, double h) {
        VehicleState n = base;
        n.px += d.px * h;
        n.py += d.py * h;
        n.yaw += d.yaw * h;
        n.vx += d.vx * h;
        n.vy += d.vy * h;
        n.yaw_rate += d.yaw_rate * h;
        return n;
    };

    const Derivative k1 = dynamics(s, wheel, u.throttle, p, cd, sd);
    const Derivative k2 = dynamics(advance(s, k1, dt * 0.5), wheel, u.throttle, p, cd, sd);
    const Derivative k3 = dynamics(advance(s, k2, dt * 0.5), wheel, u.throttle, p, cd, sd);
    const Derivative k4 = dynamics(advance(s, k3, dt), wheel, u.throttle, p, cd, sd);

    VehicleState out = s;
    const double w = dt / 6.0;
    out.px += w * (k1.px + 2.0 * k2.px + 2.0 * k3.px + k4.px);
    out.py += w * (k1.py + 2.0 * k2.py + 2.0 * k3.py + k4.py);
    out.yaw += w * (k1.yaw + 2.0 * k2.yaw + 2.0 * k3.yaw + k4.yaw);
    out.vx += w * (k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx);
    out.vy += w * (k1.vy + 2.0 * k2.vy + 2.0 * k3.vy + k4.vy);
    out.yaw_rate += w * (k1.yaw_rate + 2.0 * k2.yaw_rate + 2.0 * k3.yaw_rate + k4.yaw_rate);
    out.roll = std::clamp(p.roll_gain * lateral_accel(out, wheel, p, cd),
                          -M_PI / 2.0, M_PI / 2.0);
    return out;
}

}  // namespace detail

inline VehicleState step(const VehicleState& state, const Control& control,
                         const VehicleParams& params, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
    if (!state.finite()) throw std::invalid_argument("step: non-finite vehicle state");
    return detail::rk4_step(state, control.clamped(), params, dt);
}

using Trajectory = std::vector<VehicleState>;

inline Trajectory rollout(const VehicleState& state, const std::vector<Control>& controls,
                          const VehicleParams& params, double dt) {
    if (controls.empty()) throw std::invalid_argument("rollout: empty control sequence");
    if (!(dt > 0.0)) throw std::invalid_argument("rollout: dt must be > 0");
    if (!state.finite()) throw std::invalid_argument("rollout: non-finite vehicle state");
    Trajectory traj;
    traj.reserve(controls.size() + 1);
    traj.push_back(state);
    for (const Control& u : controls)
        traj.push_back(detail::rk4_step(traj.back(), u.clamped(), params, dt));
    return traj;
}

}  // namespace gridracer
