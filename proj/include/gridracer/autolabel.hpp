#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridracer/costmap.hpp"
#include "gridracer/homography.hpp"
#include "gridracer/pose2.hpp"

namespace gridracer {

inline constexpr float kImageLabelSentinel = -1.0f;

// Body-frame crop geometry: x forward, y left, vehicle near the rear edge.
struct CropSpec {
    int lateral_cells = 160;
    int longitudinal_cells = 128;
    double lateral_min = -5.0;
    double lateral_max = 5.0;
    double longitudinal_min = -1.0;
    double longitudinal_max = 7.0;

    double resolution() const {
        const double lon = (longitudinal_max - longitudinal_min) / longitudinal_cells;
        const double lat = (lateral_max - lateral_min) / lateral_cells;
        if (std::abs(lon - lat) > 1e-9)
            throw std::invalid_argument("CropSpec: cells must be square");
        return lon;
    }

    void validate() const {
        if (lateral_cells <= 0 || longitudinal_cells <= 0)
            throw std::invalid_argument("CropSpec: cell counts must be positive");
        if (!(lateral_max > lateral_min) || !(longitudinal_max > longitudinal_min))
            throw std::invalid_argument("CropSpec: empty extents");
        resolution();
    }
};

inline void to_json(nlohmann::json& j, const CropSpec& c) {
    j = nlohmann::json{{"lateral_cells", c.lateral_cells},
                       {"longitudinal_cells", c.longitudinal_cells},
                       {"lateral_min", c.lateral_min},
                       {"lateral_max", c.lateral_max},
                       {"longitudinal_min", c.longitudinal_min},
                       {"longitudinal_max", c.longitudinal_max}};
}

inline void from_json(const nlohmann::json& j, CropSpec& c) {
    j.at("lateral_cells").get_to(c.lateral_cells);
    j.at("longitudinal_cells").get_to(c.longitudinal_cells);
    j.at("lateral_min").get_to(c.lateral_min);
    j.at("lateral_max").get_to(c.lateral_max);
    j.at("longitudinal_min").get_to(c.longitudinal_min);
    j.at("longitudinal_max").get_to(c.longitudinal_max);
    c.validate();
}

// Resample the world map into a body-frame grid anchored at the vehicle.
// Grid x (columns) runs longitudinal, grid y (rows) lateral.
inline CostMapGrid extract_topdown_crop(const CostMapGrid& world_map, const Pose2& vehicle_pose,
                                        const CropSpec& spec) {
    if (world_map.frame != GridFrame::world)
        throw std::invalid_argument("extract_topdown_crop: map must be in the world frame");
    spec.validate();

    CostMapGrid crop;
    crop.width = spec.longitudinal_cells;
    crop.height = spec.lateral_cells;
    crop.resolution = spec.resolution();
    crop.origin = Pose2{spec.longitudinal_min, spec.lateral_min, 0.0};
    crop.frame = GridFrame::body;
    crop.values.resize(static_cast<size_t>(crop.width) * crop.height);

    const double c = std::cos(vehicle_pose.yaw);
    const double s = std::sin(vehicle_pose.yaw);
    for (int iy = 0; iy < crop.height; ++iy) {
        const double by = spec.lateral_min + (iy + 0.5) * crop.resolution;
        for (int ix = 0; ix < crop.width; ++ix) {
            const double bx = spec.longitudinal_min + (ix + 0.5) * crop.resolution;
            const double wx = vehicle_pose.x + c * bx - s * by;
            const double wy = vehicle_pose.y + s * bx + c * by;
            crop.at(ix, iy) = static_cast<float>(lookup_cost(world_map, wx, wy));
        }
    }
    return crop;
}

// Cells at the saturated cost that lie within `band_cells` (Euclidean) of a
// below-saturation cell. Together with the on-track cells this is the region
// evaluation losses are restricted to.
inline std::vector<std::uint8_t> track_edge_band_mask(const CostMapGrid& grid,
                                                      int band_cells = 10) {
    if (band_cells < 0) throw std::invalid_argument("track_edge_band_mask: negative band");
    std::vector<std::uint8_t> band(grid.values.size(), 0);
    const int r2 = band_cells * band_cells;
    for (int iy = 0; iy < grid.height; ++iy) {
        for (int ix = 0; ix < grid.width; ++ix) {
            if (grid.at(ix, iy) < 1.0f) continue;
            bool near = false;
            for (int dy = -band_cells; dy <= band_cells && !near; ++dy) {
                const int jy = iy + dy;
                if (jy < 0 || jy >= grid.height) continue;
                for (int dx = -band_cells; dx <= band_cells; ++dx) {
                    const int jx = ix + dx;
                    if (jx < 0 || jx >= grid.width) continue;
                    if (dx * dx + dy * dy > r2) continue;
                    if (grid.at(jx, jy) < 1.0f) {
                        near = true;
                        break;
                    }
                }
            }
            band[static_cast<size_t>(iy) * grid.width + ix] = near ? 1 : 0;
        }
    }
    return band;
}

// Back-project every pixel to the ground plane and sample the world map.
// Pixels at or above the horizon get the sentinel.
inline CostMapGrid render_image_plane_labels(const CostMapGrid& world_map,
                                             const GroundHomography& h, int width,
                                             int height) {
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("render_image_plane_labels: bad image size");
    const double det = h.H_hat.determinant();
    if (std::abs(det) < 1e-12)
        throw std::invalid_argument("render_image_plane_labels: singular reduced homography");
    const Eigen::Matrix3d inv = h.H_hat.inverse();

    CostMapGrid img;
    img.width = width;
    img.height = height;
    img.resolution = 1.0;
    img.origin = Pose2{};
    img.frame = GridFrame::image;
    img.values.resize(static_cast<size_t>(width) * height);

    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            Eigen::Vector2d ground;
            if (backproject_pixel(inv, {u + 0.5, v + 0.5}, ground))
                img.at(u, v) = static_cast<float>(lookup_cost(world_map, ground.x(), ground.y()));
            else
                img.at(u, v) = kImageLabelSentinel;
        }
    }
    return img;
}

struct TimedPose3 {
    double t = 0.0;
    Pose3 pose;
};

// CSV columns: t, x, y, z, qw, qx, qy, qz. A non-numeric first line is
// treated as a header.
inline std::vector<TimedPose3> load_pose_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pose log: " + path.string());
    std::vector<TimedPose3> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<double> fields;
        std::string tok;
        bool numeric = true;
        while (std::getline(ss, tok, ',')) {
            try {
                fields.push_back(std::stod(tok));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error("pose log: non-numeric row in " + path.string());
        }
        first = false;
        if (fields.size() != 8)
            throw std::runtime_error("pose log: expected 8 columns in " + path.string());
        TimedPose3 tp;
        tp.t = fields[0];
        tp.pose = Pose3::from_quaternion(fields[4], fields[5], fields[6], fields[7],
                                         {fields[1], fields[2], fields[3]});
        out.push_back(tp);
    }
    return out;
}

inline Pose2 ground_pose(const Pose3& p) {
    return Pose2{p.translation.x(), p.translation.y(),
                 std::atan2(p.rotation(1, 0), p.rotation(0, 0))};
}

// Writes, per pose: the top-down crop, its edge-band mask, the image-plane
// label grid, and a JSON sidecar. Returns the number of pairs written.
inline int emit_dataset(const std::vector<TimedPose3>& pose_log, const CostMapGrid& world_map,
                        const CameraModel& camera, const std::filesystem::path& out_dir,
                        const CropSpec& crop_spec = CropSpec{}, int band_cells = 10) {
    camera.validate();
    if (pose_log.empty()) return 0;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw std::runtime_error("emit_dataset: cannot create output directory " + out_dir.string());

    char name[64];
    for (size_t i = 0; i < pose_log.size(); ++i) {
        const TimedPose3& tp = pose_log[i];
        const Pose2 pose2 = ground_pose(tp.pose);

        const CostMapGrid crop = extract_topdown_crop(world_map, pose2, crop_spec);
        std::snprintf(name, sizeof(name), "crop_%06zu.json", i);
        save_costmap(crop, out_dir / name);

        const auto band = track_edge_band_mask(crop, band_cells);
        CostMapGrid mask = crop;
        for (size_t k = 0; k < band.size(); ++k) mask.values[k] = band[k] ? 1.0f : 0.0f;
        std::snprintf(name, sizeof(name), "crop_%06zu_mask.json", i);
        save_costmap(mask, out_dir / name);

        const GroundHomography h = compose_homography(camera, tp.pose);
        const CostMapGrid labels =
            render_image_plane_labels(world_map, h, camera.width, camera.height);
        std::snprintf(name, sizeof(name), "implane_%06zu.json", i);
        save_costmap(labels, out_dir / name);

        nlohmann::ordered_json side;
        side["index"] = i;
        side["t"] = tp.t;
        side["pose"] = tp.pose;
        auto& hm = side["homography"] = nlohmann::ordered_json::array();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) hm.push_back(h.H(r, c));
        char crop_name[64], mask_name[64], implane_name[64];
        std::snprintf(crop_name, sizeof(crop_name), "crop_%06zu.json", i);
        std::snprintf(mask_name, sizeof(mask_name), "crop_%06zu_mask.json", i);
        std::snprintf(implane_name, sizeof(implane_name), "implane_%06zu.json", i);
        side["files"] = {{"crop", crop_name},
                         {"crop_mask", mask_name},
                         {"image_plane", implane_name}};
        std::snprintf(name, sizeof(name), "sample_%06zu.json", i);
        std::ofstream side_out(out_dir / name);
        if (!side_out)
            throw std::runtime_error("emit_dataset: cannot write sidecar in " + out_dir.string());
        side_out << side.dump(2) << "\n";
    }
    return static_cast<int>(pose_log.size());
}

}  // namespace gridracer
