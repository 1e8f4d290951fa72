#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "gridracer/pose2.hpp"

namespace gridracer {

inline constexpr double kOutOfMapCost = 1.0;

enum class GridFrame { world, body, image };

inline std::string to_string(GridFrame f) {
    switch (f) {
        case GridFrame::world: return "world";
        case GridFrame::body: return "body";
        case GridFrame::image: return "image";
    }
    return "world";
}

inline GridFrame grid_frame_from_string(const std::string& s) {
    if (s == "world") return GridFrame::world;
    if (s == "body") return GridFrame::body;
    if (s == "image") return GridFrame::image;
    throw std::invalid_argument("unknown grid frame: " + s);
}

// Row-major scalar field. Cell (ix, iy) covers the square whose corner is
// origin + (ix, iy) * resolution in the grid's own frame; values are taken
// at cell centers. `origin.yaw` rotates the grid axes within that frame.
struct CostMapGrid {
    int width = 0;
    int height = 0;
    double resolution = 0.0;
    Pose2 origin;
    GridFrame frame = GridFrame::world;
    std::vector<float> values;

    float& at(int ix, int iy) { return values[static_cast<size_t>(iy) * width + ix]; }
    float at(int ix, int iy) const { return values[static_cast<size_t>(iy) * width + ix]; }

    Eigen::Vector2d cell_center(int ix, int iy) const {
        const Eigen::Vector2d local{(ix + 0.5) * resolution, (iy + 0.5) * resolution};
        return body_to_world(origin, local);
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("CostMapGrid: empty grid");
        if (!(resolution > 0.0)) throw std::invalid_argument("CostMapGrid: resolution must be > 0");
        if (values.size() != static_cast<size_t>(width) * height)
            throw std::invalid_argument("CostMapGrid: value count does not match dimensions");
    }
};

// Ordered polyline track centerline with a constant half width.
struct Centerline {
    std::vector<Eigen::Vector2d> vertices;
    bool closed = false;
    double half_width = 0.0;

    void validate() const {
        if (!(half_width > 0.0)) throw std::invalid_argument("Centerline: half_width must be > 0");
        const size_t min_vertices = closed ? 3 : 2;
        if (vertices.size() < min_vertices)
            throw std::invalid_argument("Centerline: too few vertices");
        for (size_t i = 0; i + 1 < vertices.size(); ++i)
            if ((vertices[i + 1] - vertices[i]).norm() < 1e-12)
                throw std::invalid_argument("Centerline: consecutive vertices coincide");
        if (closed && (vertices.front() - vertices.back()).norm() < 1e-12)
            throw std::invalid_argument("Centerline: closed polyline must not repeat the first vertex");
    }

    size_t segment_count() const {
        return closed ? vertices.size() : vertices.size() - 1;
    }
    std::pair<Eigen::Vector2d, Eigen::Vector2d> segment(size_t i) const {
        const size_t j = (i + 1) % vertices.size();
        return {vertices[i], vertices[j]};
    }
};

inline double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                                     const Eigen::Vector2d& b) {
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 <= 0.0) return (p - a).norm();
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

inline double distance_to_centerline(const Centerline& line, const Eigen::Vector2d& p) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < line.segment_count(); ++i) {
        const auto [a, b] = line.segment(i);
        best = std::min(best, point_segment_distance(p, a, b));
    }
    return best;
}

// Track costmap: linear ramp from 0 on the centerline to 1 at the track
// edge, saturating beyond. Covers the centerline bounding box inflated by
// `margin` on all sides.
inline CostMapGrid build_track_costmap(const Centerline& line, double resolution,
                                       double margin) {
    line.validate();
    if (!(resolution > 0.0)) throw std::invalid_argument("build_track_costmap: resolution must be > 0");

    Eigen::Vector2d lo = line.vertices.front();
    Eigen::Vector2d hi = lo;
    for (const auto& v : line.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    lo.array() -= margin;
    hi.array() += margin;

    CostMapGrid grid;
    grid.resolution = resolution;
    grid.width = std::max(1, static_cast<int>(std::ceil((hi.x() - lo.x()) / resolution)));
    grid.height = std::max(1, static_cast<int>(std::ceil((hi.y() - lo.y()) / resolution)));
    grid.origin = Pose2{lo.x(), lo.y(), 0.0};
    grid.frame = GridFrame::world;
    grid.values.resize(static_cast<size_t>(grid.width) * grid.height);

    for (int iy = 0; iy < grid.height; ++iy) {
        for (int ix = 0; ix < grid.width; ++ix) {
            const Eigen::Vector2d c = grid.cell_center(ix, iy);
            const double d = distance_to_centerline(line, c);
            grid.at(ix, iy) = static_cast<float>(std::min(1.0, d / line.half_width));
        }
    }
    return grid;
}

// Bilinear interpolation over cell centers; coordinates are in the grid's
// frame. Queries outside the grid rectangle return kOutOfMapCost, as do
// masked cells when a validity mask is given (false = unknown).
inline double lookup_cost(const CostMapGrid& grid, double x, double y,
                          const std::vector<std::uint8_t>* validity = nullptr) {
    double lx = x - grid.origin.x;
    double ly = y - grid.origin.y;
    if (grid.origin.yaw != 0.0) {
        const double c = std::cos(grid.origin.yaw);
        const double s = std::sin(grid.origin.yaw);
        const double rx = c * lx + s * ly;
        ly = -s * lx + c * ly;
        lx = rx;
    }
    if (lx < 0.0 || ly < 0.0 || lx > grid.width * grid.resolution ||
        ly > grid.height * grid.resolution)
        return kOutOfMapCost;

    const double u = lx / grid.resolution - 0.5;
    const double v = ly / grid.resolution - 0.5;
    int i0 = static_cast<int>(std::floor(u));
    int j0 = static_cast<int>(std::floor(v));
    const double fu = u - i0;
    const double fv = v - j0;
    const int i1 = std::clamp(i0 + 1, 0, grid.width - 1);
    const int j1 = std::clamp(j0 + 1, 0, grid.height - 1);
    i0 = std::clamp(i0, 0, grid.width - 1);
    j0 = std::clamp(j0, 0, grid.height - 1);

    auto value = [&](int ix, int iy) -> double {
        if (validity && !(*validity)[static_cast<size_t>(iy) * grid.width + ix])
            return kOutOfMapCost;
        return grid.at(ix, iy);
    };

    const double v00 = value(i0, j0);
    const double v10 = value(i1, j0);
    const double v01 = value(i0, j1);
    const double v11 = value(i1, j1);
    const double a = v00 + (v10 - v00) * fu;
    const double b = v01 + (v11 - v01) * fu;
    return a + (b - a) * fv;
}

// --- file formats -----------------------------------------------------
//
// Costmap: JSON header { width, height, resolution, origin, frame, payload }
// next to a row-major little-endian float32 payload file.
// Centerline: JSON { vertices, closed, half_width }.

static_assert(std::endian::native == std::endian::little,
              "costmap payload format assumes a little-endian host");

inline std::filesystem::path payload_path_for(const std::filesystem::path& json_path) {
    std::filesystem::path p = json_path;
    p.replace_extension(".f32");
    return p;
}

inline void save_costmap(const CostMapGrid& grid, const std::filesystem::path& json_path) {
    grid.validate();
    const std::filesystem::path payload = payload_path_for(json_path);

    nlohmann::ordered_json j;
    j["width"] = grid.width;
    j["height"] = grid.height;
    j["resolution"] = grid.resolution;
    j["origin"] = {{"x", grid.origin.x}, {"y", grid.origin.y}, {"yaw", grid.origin.yaw}};
    j["frame"] = to_string(grid.frame);
    j["payload"] = payload.filename().string();

    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write costmap header: " + json_path.string());
    out << j.dump(2) << "\n";

    std::ofstream bin(payload, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write costmap payload: " + payload.string());
    bin.write(reinterpret_cast<const char*>(grid.values.data()),
              static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
}

inline CostMapGrid load_costmap(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot open costmap header: " + json_path.string());
    nlohmann::json j;
    in >> j;

    CostMapGrid grid;
    grid.width = j.at("width").get<int>();
    grid.height = j.at("height").get<int>();
    grid.resolution = j.at("resolution").get<double>();
    grid.origin.x = j.at("origin").at("x").get<double>();
    grid.origin.y = j.at("origin").at("y").get<double>();
    grid.origin.yaw = j.at("origin").at("yaw").get<double>();
    grid.frame = grid_frame_from_string(j.at("frame").get<std::string>());

    const std::filesystem::path payload =
        json_path.parent_path() / j.at("payload").get<std::string>();
    std::ifstream bin(payload, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open costmap payload: " + payload.string());
    grid.values.resize(static_cast<size_t>(grid.width) * grid.height);
    bin.read(reinterpret_cast<char*>(grid.values.data()),
             static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
    if (bin.gcount() != static_cast<std::streamsize>(grid.values.size() * sizeof(float)))
        throw std::runtime_error("costmap payload truncated: " + payload.string());
    grid.validate();

    if (grid.frame != GridFrame::image) {
        for (float v : grid.values)
            if (!(v >= 0.0f && v <= 1.0f))
                throw std::runtime_error("costmap values outside [0,1]: " + json_path.string());
    }
    return grid;
}

inline void save_centerline(const Centerline& line, const std::filesystem::path& path) {
    line.validate();
    nlohmann::ordered_json j;
    auto& verts = j["vertices"] = nlohmann::ordered_json::array();
    for (const auto& v : line.vertices) verts.push_back({v.x(), v.y()});
    j["closed"] = line.closed;
    j["half_width"] = line.half_width;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write centerline: " + path.string());
    out << j.dump(2) << "\n";
}

inline Centerline load_centerline(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open centerline: " + path.string());
    nlohmann::json j;
    in >> j;
    Centerline line;
    for (const auto& v : j.at("vertices"))
        line.vertices.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    line.closed = j.at("closed").get<bool>();
    line.half_width = j.at("half_width").get<double>();
    line.validate();
    return line;
}

}  // namespace gridracer
