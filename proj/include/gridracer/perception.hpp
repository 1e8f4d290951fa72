#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridracer/autolabel.hpp"
#include "gridracer/costmap.hpp"
#include "gridracer/pose2.hpp"
#include "gridracer/rng.hpp"

namespace gridracer {

// A body-frame costmap stamped with the pose and time it was captured at.
// Queries for world points go through the capture pose, so a stale frame
// stays geometrically consistent while the vehicle keeps moving.
struct CostmapFrame {
    CostMapGrid grid;
    std::vector<std::uint8_t> validity;  // false = unknown, reads as cost 1
    Pose2 capture_pose;
    double capture_time = 0.0;

    double cost_at_body(double bx, double by) const {
        return lookup_cost(grid, bx, by, validity.empty() ? nullptr : &validity);
    }

    double cost_at_world(double wx, double wy) const {
        const Eigen::Vector2d b = world_to_body(capture_pose, {wx, wy});
        return cost_at_body(b.x(), b.y());
    }
};

struct CorruptionSpec {
    double blur_sigma = 0.0;      // cells
    int dropout_block = 8;        // cells
    double dropout_prob = 0.0;
    double fov_half_angle = 0.0;  // rad, 0 = disabled
    double fov_camera_offset = 0.0;  // m along body x, cone apex
    double noise_sigma = 0.0;     // cost units
    std::uint64_t seed = 0;

    void validate() const {
        if (blur_sigma < 0.0 || noise_sigma < 0.0)
            throw std::invalid_argument("CorruptionSpec: sigmas must be >= 0");
        if (dropout_prob < 0.0 || dropout_prob > 1.0)
            throw std::invalid_argument("CorruptionSpec: dropout_prob must be in [0,1]");
        if (dropout_block < 1)
            throw std::invalid_argument("CorruptionSpec: dropout_block must be >= 1");
        if (fov_half_angle < 0.0 || fov_half_angle > M_PI / 2.0)
            throw std::invalid_argument("CorruptionSpec: fov_half_angle must be in [0, pi/2]");
    }

    bool is_identity() const {
        return blur_sigma == 0.0 && dropout_prob == 0.0 && noise_sigma == 0.0;
    }
};

template <typename Json>
void to_json(Json& j, const CorruptionSpec& c) {
    j = Json{{"blur_sigma", c.blur_sigma},
             {"dropout_block", c.dropout_block},
             {"dropout_prob", c.dropout_prob},
             {"fov_half_angle", c.fov_half_angle},
             {"fov_camera_offset", c.fov_camera_offset},
             {"noise_sigma", c.noise_sigma},
             {"seed", c.seed}};
}

template <typename Json>
void from_json(const Json& j, CorruptionSpec& c) {
    c = CorruptionSpec{};
    if (j.contains("blur_sigma")) j.at("blur_sigma").get_to(c.blur_sigma);
    if (j.contains("dropout_block")) j.at("dropout_block").get_to(c.dropout_block);
    if (j.contains("dropout_prob")) j.at("dropout_prob").get_to(c.dropout_prob);
    if (j.contains("fov_half_angle")) j.at("fov_half_angle").get_to(c.fov_half_angle);
    if (j.contains("fov_camera_offset")) j.at("fov_camera_offset").get_to(c.fov_camera_offset);
    if (j.contains("noise_sigma")) j.at("noise_sigma").get_to(c.noise_sigma);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    c.validate();
}

enum class ProviderKind { oracle, corrupted };

struct ProviderSpec {
    ProviderKind kind = ProviderKind::oracle;
    double update_rate = 40.0;  // Hz
    double latency = 0.0;       // s
    CorruptionSpec corruption;
    CropSpec crop;

    void validate() const {
        if (!(update_rate > 0.0))
            throw std::invalid_argument("ProviderSpec: update_rate must be > 0");
        if (latency < 0.0) throw std::invalid_argument("ProviderSpec: latency must be >= 0");
        corruption.validate();
        crop.validate();
    }
};

template <typename Json>
void to_json(Json& j, const ProviderSpec& p) {
    j = Json{{"kind", p.kind == ProviderKind::oracle ? "oracle" : "corrupted"},
             {"update_rate", p.update_rate},
             {"latency", p.latency},
             {"corruption", p.corruption},
             {"crop", p.crop}};
}

template <typename Json>
void from_json(const Json& j, ProviderSpec& p) {
    p = ProviderSpec{};
    if (j.contains("kind")) {
        const std::string k = j.at("kind").template get<std::string>();
        if (k == "oracle")
            p.kind = ProviderKind::oracle;
        else if (k == "corrupted")
            p.kind = ProviderKind::corrupted;
        else
            throw std::invalid_argument("ProviderSpec: unknown kind '" + k + "'");
    }
    if (j.contains("update_rate")) j.at("update_rate").get_to(p.update_rate);
    if (j.contains("latency")) j.at("latency").get_to(p.latency);
    if (j.contains("corruption")) p.corruption = j.at("corruption").template get<CorruptionSpec>();
    if (j.contains("crop")) p.crop = j.at("crop").template get<CropSpec>();
    p.validate();
}

// Invalidate cells outside the forward cone. The apex sits on the body
// x-axis at `camera_offset`; a half angle of pi/2 keeps everything ahead of
// the apex.
inline CostmapFrame apply_fov_mask(const CostmapFrame& frame, double half_angle,
                                   double camera_offset) {
    if (!(half_angle > 0.0) || half_angle > M_PI / 2.0)
        throw std::invalid_argument("apply_fov_mask: half_angle must be in (0, pi/2]");
    CostmapFrame out = frame;
    if (out.validity.empty()) out.validity.assign(out.grid.values.size(), 1);
    const double tan_half = std::tan(half_angle);
    for (int iy = 0; iy < out.grid.height; ++iy) {
        for (int ix = 0; ix < out.grid.width; ++ix) {
            const Eigen::Vector2d c = out.grid.cell_center(ix, iy);
            const double dx = c.x() - camera_offset;
            bool inside;
            if (half_angle >= M_PI / 2.0) {
                inside = dx >= 0.0;
            } else {
                inside = dx > 0.0 && std::abs(c.y()) <= dx * tan_half;
            }
            if (!inside) out.validity[static_cast<size_t>(iy) * out.grid.width + ix] = 0;
        }
    }
    return out;
}

// Blur, additive noise, then block dropout, in that order. Values are
// re-clamped to [0,1]; validity only ever flips from true to false.
inline CostmapFrame apply_corruption(const CostmapFrame& frame, const CorruptionSpec& spec) {
    spec.validate();
    if (spec.is_identity()) return frame;

    CostmapFrame out = frame;
    const int w = out.grid.width;
    const int h = out.grid.height;
    if (out.validity.empty()) out.validity.assign(out.grid.values.size(), 1);
    Rng rng(spec.seed);

    if (spec.blur_sigma > 0.0) {
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * spec.blur_sigma)));
        std::vector<double> kernel(2 * radius + 1);
        for (int i = -radius; i <= radius; ++i)
            kernel[i + radius] = std::exp(-0.5 * (i * i) / (spec.blur_sigma * spec.blur_sigma));

        std::vector<float> blurred(out.grid.values.size());
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                double acc = 0.0;
                double norm = 0.0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int jy = iy + dy;
                    if (jy < 0 || jy >= h) continue;
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int jx = ix + dx;
                        if (jx < 0 || jx >= w) continue;
                        if (!out.validity[static_cast<size_t>(jy) * w + jx]) continue;
                        const double k = kernel[dy + radius] * kernel[dx + radius];
                        acc += k * out.grid.at(jx, jy);
                        norm += k;
                    }
                }
                blurred[static_cast<size_t>(iy) * w + ix] =
                    norm > 0.0 ? static_cast<float>(acc / norm) : out.grid.at(ix, iy);
            }
        }
        out.grid.values = std::move(blurred);
    }

    if (spec.noise_sigma > 0.0) {
        for (auto& v : out.grid.values)
            v = static_cast<float>(std::clamp(
                static_cast<double>(v) + spec.noise_sigma * rng.next_gaussian(), 0.0, 1.0));
    }

    if (spec.dropout_prob > 0.0) {
        const int b = spec.dropout_block;
        for (int by = 0; by < h; by += b) {
            for (int bx = 0; bx < w; bx += b) {
                if (rng.next_unit() >= spec.dropout_prob) continue;
                for (int iy = by; iy < std::min(by + b, h); ++iy)
                    for (int ix = bx; ix < std::min(bx + b, w); ++ix)
                        out.validity[static_cast<size_t>(iy) * w + ix] = 0;
            }
        }
    }

    for (auto& v : out.grid.values) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

// Simulated costmap source: captures body-frame crops of the world map on a
// fixed schedule and delivers them after a latency. Asynchrony is modeled,
// not executed; everything is driven by the simulation clock.
class CostmapProvider {
public:
    CostmapProvider(const ProviderSpec& spec, std::uint64_t seed)
        : spec_(spec), seed_(seed) {
        spec.validate();
    }

    // Advance the capture schedule to `now`, using `true_pose` as the pose
    // at the capture instant. The simulation must tick at least as fast as
    // the capture rate for poses to be exact.
    void tick(const CostMapGrid& world, const Pose2& true_pose, double now) {
        while (next_capture_ <= now + 1e-9) {
            CostmapFrame frame;
            frame.grid = extract_topdown_crop(world, true_pose, spec_.crop);
            frame.validity.assign(frame.grid.values.size(), 1);
            frame.capture_pose = true_pose;
            frame.capture_time = next_capture_;
            if (spec_.kind == ProviderKind::corrupted) {
                CorruptionSpec per_frame = spec_.corruption;
                per_frame.seed = derive_seed(seed_, capture_index_);
                frame = apply_corruption(frame, per_frame);
                if (spec_.corruption.fov_half_angle > 0.0)
                    frame = apply_fov_mask(frame, spec_.corruption.fov_half_angle,
                                           spec_.corruption.fov_camera_offset);
            }
            frames_.push_back(std::move(frame));
            ++capture_index_;
            next_capture_ += 1.0 / spec_.update_rate;
            while (frames_.size() > 4) frames_.pop_front();
        }
    }

    // Newest frame whose capture_time + latency <= now; nullptr before the
    // first frame is delivered (the controller brakes on that).
    const CostmapFrame* latest(double now) const {
        const CostmapFrame* best = nullptr;
        for (const auto& f : frames_)
            if (f.capture_time + spec_.latency <= now + 1e-9) best = &f;
        return best;
    }

    const ProviderSpec& spec() const { return spec_; }

private:
    ProviderSpec spec_;
    std::uint64_t seed_ = 0;
    std::deque<CostmapFrame> frames_;
    double next_capture_ = 0.0;
    std::uint64_t capture_index_ = 0;
};

inline const CostmapFrame* provide(CostmapProvider& provider, const CostMapGrid& world,
                                   const Pose2& true_pose_at_capture, double now) {
    provider.tick(world, true_pose_at_capture, now);
    return provider.latest(now);
}

}  // namespace gridracer
