#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridracer/costmap.hpp"
#include "gridracer/mppi.hpp"
#include "gridracer/perception.hpp"
#include "gridracer/track.hpp"
#include "gridracer/vehicle.hpp"

namespace gridracer {

enum class TrackDirection { ccw, cw };

struct FailureSpec {
    double offtrack_cost = 0.98;  // true track cost above this ...
    double offtrack_hold = 1.0;   // ... continuously for this long fails
    double stall_speed = 0.2;     // speed below this ...
    double stall_hold = 3.0;      // ... continuously for this long fails
};

template <typename Json>
void to_json(Json& j, const FailureSpec& f) {
    j = Json{{"offtrack_cost", f.offtrack_cost},
             {"offtrack_hold", f.offtrack_hold},
             {"stall_speed", f.stall_speed},
             {"stall_hold", f.stall_hold}};
}

template <typename Json>
void from_json(const Json& j, FailureSpec& f) {
    f = FailureSpec{};
    if (j.contains("offtrack_cost")) j.at("offtrack_cost").get_to(f.offtrack_cost);
    if (j.contains("offtrack_hold")) j.at("offtrack_hold").get_to(f.offtrack_hold);
    if (j.contains("stall_speed")) j.at("stall_speed").get_to(f.stall_speed);
    if (j.contains("stall_hold")) j.at("stall_hold").get_to(f.stall_hold);
}

struct EpisodeConfig {
    std::string track_file;
    std::string world_map_file;     // optional: overrides the built map
    std::string vehicle_params_file;
    std::string plant_params_file;  // optional: defaults to vehicle params
    std::string mppi_params_file;
    ProviderSpec provider;
    double target_speed = 5.0;
    TrackDirection direction = TrackDirection::ccw;
    int lap_goal = 10;
    std::uint64_t master_seed = 42;
    double time_limit = 180.0;
    FailureSpec failure;
    double map_resolution = 0.0625;
    double map_margin = 2.0;
    double initial_speed = 2.0;

    void validate() const {
        if (track_file.empty()) throw std::invalid_argument("EpisodeConfig: track file required");
        if (vehicle_params_file.empty())
            throw std::invalid_argument("EpisodeConfig: vehicle params file required");
        if (mppi_params_file.empty())
            throw std::invalid_argument("EpisodeConfig: MPPI params file required");
        if (lap_goal < 1) throw std::invalid_argument("EpisodeConfig: lap_goal must be >= 1");
        if (!(time_limit > 0.0)) throw std::invalid_argument("EpisodeConfig: time_limit must be > 0");
        if (!(target_speed > 0.0))
            throw std::invalid_argument("EpisodeConfig: target_speed must be > 0");
        if (!(map_resolution > 0.0) || map_margin < 0.0)
            throw std::invalid_argument("EpisodeConfig: bad map geometry");
        provider.validate();
    }
};

template <typename Json>
void to_json(Json& j, const EpisodeConfig& c) {
    j = Json{{"track", c.track_file},
             {"world_map", c.world_map_file},
             {"vehicle_params", c.vehicle_params_file},
             {"plant_params", c.plant_params_file},
             {"mppi_params", c.mppi_params_file},
             {"provider", c.provider},
             {"target_speed", c.target_speed},
             {"direction", c.direction == TrackDirection::ccw ? "ccw" : "cw"},
             {"lap_goal", c.lap_goal},
             {"master_seed", c.master_seed},
             {"time_limit", c.time_limit},
             {"failure", c.failure},
             {"map_resolution", c.map_resolution},
             {"map_margin", c.map_margin},
             {"initial_speed", c.initial_speed}};
}

template <typename Json>
void from_json(const Json& j, EpisodeConfig& c) {
    c = EpisodeConfig{};
    static const char* keys[] = {"track", "world_map", "vehicle_params", "plant_params",
                                 "mppi_params", "provider", "target_speed", "direction",
                                 "lap_goal", "master_seed", "time_limit", "failure",
                                 "map_resolution", "map_margin", "initial_speed"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(std::begin(keys), std::end(keys),
                         [&](const char* k) { return key == k; }) == std::end(keys)) {
            std::string valid;
            for (const char* k : keys) valid += std::string(" ") + k;
            throw std::invalid_argument("EpisodeConfig: unknown key '" + key +
                                        "'; valid keys:" + valid);
        }
    }
    j.at("track").get_to(c.track_file);
    if (j.contains("world_map") && !j.at("world_map").is_null())
        j.at("world_map").get_to(c.world_map_file);
    j.at("vehicle_params").get_to(c.vehicle_params_file);
    if (j.contains("plant_params") && !j.at("plant_params").is_null())
        j.at("plant_params").get_to(c.plant_params_file);
    j.at("mppi_params").get_to(c.mppi_params_file);
    if (j.contains("provider")) c.provider = j.at("provider").template get<ProviderSpec>();
    if (j.contains("target_speed")) j.at("target_speed").get_to(c.target_speed);
    if (j.contains("direction")) {
        const std::string d = j.at("direction").template get<std::string>();
        if (d == "ccw")
            c.direction = TrackDirection::ccw;
        else if (d == "cw")
            c.direction = TrackDirection::cw;
        else
            throw std::invalid_argument("EpisodeConfig: direction must be ccw or cw");
    }
    if (j.contains("lap_goal")) j.at("lap_goal").get_to(c.lap_goal);
    if (j.contains("master_seed")) j.at("master_seed").get_to(c.master_seed);
    if (j.contains("time_limit")) j.at("time_limit").get_to(c.time_limit);
    if (j.contains("failure")) c.failure = j.at("failure").template get<FailureSpec>();
    if (j.contains("map_resolution")) j.at("map_resolution").get_to(c.map_resolution);
    if (j.contains("map_margin")) j.at("map_margin").get_to(c.map_margin);
    if (j.contains("initial_speed")) j.at("initial_speed").get_to(c.initial_speed);
    c.validate();
}

// Dotted-path override: "provider.update_rate=10". Values parse as JSON
// where possible, otherwise as strings.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
        parsed = value;
    }

    nlohmann::json* node = &j;
    std::istringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw std::invalid_argument("empty override path");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = parsed;
}

inline EpisodeConfig load_episode_config(const std::filesystem::path& path,
                                         const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open episode config: " + path.string());
    nlohmann::json j;
    in >> j;
    for (const auto& o : overrides) apply_override(j, o);
    EpisodeConfig cfg = j.get<EpisodeConfig>();
    // resolve file references against the config's own directory
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&](std::string& file) {
        if (file.empty()) return;
        const std::filesystem::path p(file);
        if (p.is_relative()) file = (base / p).string();
    };
    resolve(cfg.track_file);
    resolve(cfg.world_map_file);
    resolve(cfg.vehicle_params_file);
    resolve(cfg.plant_params_file);
    resolve(cfg.mppi_params_file);
    return cfg;
}

// Pre-loaded episode inputs, shareable across the runs of a sweep.
struct EpisodeAssets {
    Centerline track;
    CostMapGrid world;
    VehicleParams vehicle;
    VehicleParams plant;
    MppiParams mppi;
};

inline EpisodeAssets load_episode_assets(const EpisodeConfig& cfg) {
    EpisodeAssets a;
    a.track = load_centerline(cfg.track_file);
    if (!cfg.world_map_file.empty())
        a.world = load_costmap(cfg.world_map_file);
    else
        a.world = build_track_costmap(a.track, cfg.map_resolution,
                                      cfg.map_margin + a.track.half_width);
    a.vehicle = load_vehicle_params(cfg.vehicle_params_file);
    a.plant = cfg.plant_params_file.empty() ? a.vehicle
                                            : load_vehicle_params(cfg.plant_params_file);
    a.mppi = load_mppi_params(cfg.mppi_params_file);
    return a;
}

struct StartLine {
    Eigen::Vector2d a;
    Eigen::Vector2d b;
    Eigen::Vector2d tangent;  // required crossing direction
};

inline StartLine start_line_for(const Centerline& track, TrackDirection direction) {
    const auto [p0, p1] = track.segment(0);
    Eigen::Vector2d tangent = (p1 - p0).normalized();
    if (direction == TrackDirection::cw) tangent = -tangent;
    const Eigen::Vector2d normal{-tangent.y(), tangent.x()};
    const double span = 1.25 * track.half_width;
    return StartLine{p0 + span * normal, p0 - span * normal, tangent};
}

// Pure geometric crossing test: the motion segment properly intersects the
// start line while heading in the required direction.
inline bool detect_lap(const Eigen::Vector2d& prev, const Eigen::Vector2d& cur,
                       const StartLine& line) {
    auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return u.x() * v.y() - u.y() * v.x();
    };
    const double d1 = cross(cur - prev, line.a - prev);
    const double d2 = cross(cur - prev, line.b - prev);
    const double d3 = cross(line.b - line.a, prev - line.a);
    const double d4 = cross(line.b - line.a, cur - line.a);
    const bool crosses = d1 * d2 < 0.0 && d3 * d4 < 0.0;
    return crosses && (cur - prev).dot(line.tangent) > 0.0;
}

// Adds the 2 s refractory window on top of the geometric test, so jitter on
// the line counts once.
class LapDetector {
public:
    LapDetector(const StartLine& line, double refractory = 2.0)
        : line_(line), refractory_(refractory) {}

    bool update(const Eigen::Vector2d& prev, const Eigen::Vector2d& cur, double t) {
        if (!detect_lap(prev, cur, line_)) return false;
        if (t - last_event_ < refractory_) return false;
        last_event_ = t;
        return true;
    }

private:
    StartLine line_;
    double refractory_;
    double last_event_ = 0.0;  // the episode starts on the line
};

struct StepRecord {
    int step = 0;
    double t = 0.0;
    VehicleState state;
    Control control;
    double frame_age = -1.0;  // -1 when no frame was available
    MppiDiagnostics diag;
};

struct EpisodeFailure {
    std::string cause;  // "off_track" | "stalled"
    double time = 0.0;
};

struct EpisodeLog {
    std::vector<StepRecord> steps;
    std::vector<double> lap_times;
    std::optional<EpisodeFailure> failure;
    double top_speed = 0.0;
    double sim_time = 0.0;

    int laps() const { return static_cast<int>(lap_times.size()); }
    double avg_lap() const {
        if (lap_times.empty()) return 0.0;
        double s = 0.0;
        for (double l : lap_times) s += l;
        return s / static_cast<double>(lap_times.size());
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline const char* kEpisodeCsvHeader =
    "step,t,px,py,yaw,roll,vx,vy,yaw_rate,steering,throttle,frame_age,fallback,"
    "min_cost,mean_cost,ess,crash_fraction";

inline void write_episode_csv(const EpisodeLog& log, std::ostream& out) {
    out << kEpisodeCsvHeader << "\n";
    for (const StepRecord& r : log.steps) {
        out << r.step << ',' << detail::fmt_double(r.t) << ','
            << detail::fmt_double(r.state.px) << ',' << detail::fmt_double(r.state.py) << ','
            << detail::fmt_double(r.state.yaw) << ',' << detail::fmt_double(r.state.roll) << ','
            << detail::fmt_double(r.state.vx) << ',' << detail::fmt_double(r.state.vy) << ','
            << detail::fmt_double(r.state.yaw_rate) << ','
            << detail::fmt_double(r.control.steering) << ','
            << detail::fmt_double(r.control.throttle) << ','
            << detail::fmt_double(r.frame_age) << ',' << (r.diag.fallback ? 1 : 0) << ','
            << detail::fmt_double(r.diag.min_cost) << ','
            << detail::fmt_double(r.diag.mean_cost) << ',' << detail::fmt_double(r.diag.ess)
            << ',' << detail::fmt_double(r.diag.crash_fraction) << "\n";
    }
}

inline void write_episode_csv(const EpisodeLog& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write episode log: " + path.string());
    write_episode_csv(log, out);
}

inline nlohmann::ordered_json episode_summary(const EpisodeLog& log) {
    nlohmann::ordered_json j;
    j["laps"] = log.laps();
    j["lap_times"] = log.lap_times;
    if (log.laps() > 0)
        j["avg_lap"] = log.avg_lap();
    else
        j["avg_lap"] = nullptr;
    j["top_speed"] = log.top_speed;
    if (log.failure) {
        j["failure"] = {{"cause", log.failure->cause}, {"time", log.failure->time}};
    } else {
        j["failure"] = nullptr;
    }
    j["sim_time"] = log.sim_time;
    j["steps"] = log.steps.size();
    return j;
}

// Closed-loop episode: plant and controller step in lockstep at the MPPI dt
// while the provider follows its own capture/latency schedule.
inline EpisodeLog run_episode(const EpisodeConfig& cfg, const EpisodeAssets& assets) {
    cfg.validate();
    const double dt = assets.mppi.dt;
    const TrackArc arc(assets.track);

    MppiParams mppi = assets.mppi;
    mppi.desired_speed = cfg.target_speed;

    Pose2 start = arc.pose_at(0.0);
    if (cfg.direction == TrackDirection::cw) start.yaw = wrap_angle(start.yaw + M_PI);

    VehicleState state;
    state.px = start.x;
    state.py = start.y;
    state.yaw = start.yaw;
    state.vx = cfg.initial_speed;

    CostmapProvider provider(cfg.provider, derive_seed(cfg.master_seed, 1));
    MppiController controller(mppi, assets.vehicle, derive_seed(cfg.master_seed, 2));
    LapDetector laps(start_line_for(assets.track, cfg.direction));

    EpisodeLog log;
    double offtrack_time = 0.0;
    double stall_time = 0.0;
    double last_lap_event = 0.0;

    for (int step_idx = 0;; ++step_idx) {
        const double t = step_idx * dt;
        if (t >= cfg.time_limit - 1e-12) break;

        const Pose2 pose{state.px, state.py, state.yaw};
        const CostmapFrame* frame = provide(provider, assets.world, pose, t);
        const Control control = controller.step(state, frame);

        StepRecord rec;
        rec.step = step_idx;
        rec.t = t;
        rec.state = state;
        rec.control = control;
        rec.frame_age = frame ? t - frame->capture_time : -1.0;
        rec.diag = controller.last_diagnostics();
        log.steps.push_back(rec);

        const Eigen::Vector2d prev{state.px, state.py};
        state = gridracer::step(state, control, assets.plant, dt);
        const double t_next = (step_idx + 1) * dt;
        log.sim_time = t_next;

        if (laps.update(prev, {state.px, state.py}, t_next)) {
            log.lap_times.push_back(t_next - last_lap_event);
            last_lap_event = t_next;
            if (log.laps() >= cfg.lap_goal) break;
        }

        const double true_cost = lookup_cost(assets.world, state.px, state.py);
        offtrack_time = true_cost > cfg.failure.offtrack_cost ? offtrack_time + dt : 0.0;
        stall_time = state.speed() < cfg.failure.stall_speed ? stall_time + dt : 0.0;
        if (offtrack_time >= cfg.failure.offtrack_hold - 1e-12) {
            log.failure = EpisodeFailure{"off_track", t_next};
            break;
        }
        if (stall_time >= cfg.failure.stall_hold - 1e-12) {
            log.failure = EpisodeFailure{"stalled", t_next};
            break;
        }
    }

    for (const StepRecord& r : log.steps)
        log.top_speed = std::max(log.top_speed, r.state.speed());
    return log;
}

inline EpisodeLog run_episode(const EpisodeConfig& cfg) {
    return run_episode(cfg, load_episode_assets(cfg));
}

struct SweepCell {
    bool ran = false;
    bool completed = false;
    double avg_lap = 0.0;
    double top_speed = 0.0;
    int laps = 0;
    std::string failure_cause;
};

struct SweepRow {
    double target = 0.0;
    SweepCell ccw;
    SweepCell cw;
};

struct SweepTable {
    std::string method;
    std::vector<SweepRow> rows;
};

// Table-1-style sweep: one row per target, one column group per direction.
// Each run derives a fresh seed from the base seed and its run index.
template <typename PerEpisode = std::nullptr_t>
SweepTable speed_sweep(const EpisodeConfig& base, const EpisodeAssets& assets,
                       const std::vector<double>& targets,
                       const std::vector<TrackDirection>& directions =
                           {TrackDirection::ccw, TrackDirection::cw},
                       PerEpisode&& per_episode = nullptr) {
    if (targets.empty()) throw std::invalid_argument("speed_sweep: no targets");
    for (size_t i = 1; i < targets.size(); ++i)
        if (!(targets[i] > targets[i - 1]))
            throw std::invalid_argument("speed_sweep: targets must be ascending");
    if (directions.empty()) throw std::invalid_argument("speed_sweep: no directions");

    SweepTable table;
    table.method = base.provider.kind == ProviderKind::oracle ? "oracle" : "corrupted";
    int run_index = 0;
    for (double target : targets) {
        SweepRow row;
        row.target = target;
        for (TrackDirection dir : directions) {
            EpisodeConfig cfg = base;
            cfg.target_speed = target;
            cfg.direction = dir;
            cfg.master_seed = derive_seed(base.master_seed, run_index);
            const EpisodeLog log = run_episode(cfg, assets);

            SweepCell cell;
            cell.ran = true;
            cell.laps = log.laps();
            cell.completed = !log.failure && log.laps() >= cfg.lap_goal;
            cell.avg_lap = log.avg_lap();
            cell.top_speed = log.top_speed;
            if (log.failure) cell.failure_cause = log.failure->cause;
            (dir == TrackDirection::ccw ? row.ccw : row.cw) = cell;

            if constexpr (!std::is_same_v<std::decay_t<PerEpisode>, std::nullptr_t>)
                per_episode(cfg, log, run_index);
            ++run_index;
        }
        table.rows.push_back(row);
    }
    return table;
}

inline void write_sweep_csv(const SweepTable& table, std::ostream& out) {
    out << "method,target_mps,ccw_avg_lap_s,ccw_top_speed_mps,cw_avg_lap_s,cw_top_speed_mps\n";
    auto cell_text = [](const SweepCell& c, bool lap_column) -> std::string {
        if (!c.ran) return "n/a";
        if (!c.completed) return "failure";
        return detail::fmt_double(lap_column ? c.avg_lap : c.top_speed);
    };
    for (const SweepRow& r : table.rows) {
        out << table.method << ',' << detail::fmt_double(r.target) << ','
            << cell_text(r.ccw, true) << ',' << cell_text(r.ccw, false) << ','
            << cell_text(r.cw, true) << ',' << cell_text(r.cw, false) << "\n";
    }
}

inline void write_sweep_csv(const SweepTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sweep table: " + path.string());
    write_sweep_csv(table, out);
}

}  // namespace gridracer
