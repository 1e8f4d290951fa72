#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "gridracer/parallel.hpp"
#include "gridracer/perception.hpp"
#include "gridracer/rng.hpp"
#include "gridracer/vehicle.hpp"

namespace gridracer {

using ControlSequence = std::vector<Control>;

struct CostWeights {
    double track = 100.0;
    double speed = 4.25;
    double crash = 10000.0;
    double slip = 1.75;
};

struct IndicatorThresholds {
    double track_cost = 0.9;
    double roll = 0.35;
    double yaw_rate = 6.0;
    double discount = 0.9;
};

struct MppiParams {
    int sample_count = 1200;   // K
    int horizon_steps = 60;    // T
    double dt = 0.025;
    Eigen::Matrix2d sigma = (Eigen::Matrix2d() << 0.09, 0.0, 0.0, 0.04).finished();
    double lambda = 0.15;
    double gamma = 0.1;
    CostWeights weights;
    double desired_speed = 5.0;
    IndicatorThresholds indicator;
    bool latch_indicator = true;
    int threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (sample_count < 1) throw std::invalid_argument("MppiParams: sample_count must be >= 1");
        if (horizon_steps < 1) throw std::invalid_argument("MppiParams: horizon_steps must be >= 1");
        if (!(dt > 0.0)) throw std::invalid_argument("MppiParams: dt must be > 0");
        if (!(lambda > 0.0)) throw std::invalid_argument("MppiParams: lambda must be > 0");
        if (gamma < 0.0) throw std::invalid_argument("MppiParams: gamma must be >= 0");
        if (std::abs(sigma(0, 1) - sigma(1, 0)) > 1e-12)
            throw std::invalid_argument("MppiParams: sigma must be symmetric");
        const Eigen::LLT<Eigen::Matrix2d> llt(sigma);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("MppiParams: sigma must be positive definite");
    }
};

template <typename Json>
void to_json(Json& j, const MppiParams& p) {
    j = Json{{"sample_count", p.sample_count},
             {"horizon_steps", p.horizon_steps},
             {"dt", p.dt},
             {"sigma", {{p.sigma(0, 0), p.sigma(0, 1)}, {p.sigma(1, 0), p.sigma(1, 1)}}},
             {"lambda", p.lambda},
             {"gamma", p.gamma},
             {"weights",
              {{"track", p.weights.track},
               {"speed", p.weights.speed},
               {"crash", p.weights.crash},
               {"slip", p.weights.slip}}},
             {"desired_speed", p.desired_speed},
             {"indicator",
              {{"track_cost", p.indicator.track_cost},
               {"roll", p.indicator.roll},
               {"yaw_rate", p.indicator.yaw_rate},
               {"discount", p.indicator.discount}}},
             {"latch_indicator", p.latch_indicator},
             {"threads", p.threads}};
}

template <typename Json>
void from_json(const Json& j, MppiParams& p) {
    p = MppiParams{};
    static const char* keys[] = {"sample_count", "horizon_steps", "dt", "sigma",
                                 "lambda", "gamma", "weights", "desired_speed",
                                 "indicator", "latch_indicator", "threads"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(std::begin(keys), std::end(keys),
                         [&](const char* k) { return key == k; }) == std::end(keys))
            throw std::invalid_argument("MppiParams: unknown key '" + key + "'");
    }
    if (j.contains("sample_count")) j.at("sample_count").get_to(p.sample_count);
    if (j.contains("horizon_steps")) j.at("horizon_steps").get_to(p.horizon_steps);
    if (j.contains("dt")) j.at("dt").get_to(p.dt);
    if (j.contains("sigma")) {
        const auto& s = j.at("sigma");
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) p.sigma(r, c) = s.at(r).at(c).template get<double>();
    }
    if (j.contains("lambda")) j.at("lambda").get_to(p.lambda);
    if (j.contains("gamma")) j.at("gamma").get_to(p.gamma);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        w.at("track").get_to(p.weights.track);
        w.at("speed").get_to(p.weights.speed);
        w.at("crash").get_to(p.weights.crash);
        w.at("slip").get_to(p.weights.slip);
    }
    if (j.contains("desired_speed")) j.at("desired_speed").get_to(p.desired_speed);
    if (j.contains("indicator")) {
        const auto& t = j.at("indicator");
        t.at("track_cost").get_to(p.indicator.track_cost);
        t.at("roll").get_to(p.indicator.roll);
        t.at("yaw_rate").get_to(p.indicator.yaw_rate);
        t.at("discount").get_to(p.indicator.discount);
    }
    if (j.contains("latch_indicator")) j.at("latch_indicator").get_to(p.latch_indicator);
    if (j.contains("threads")) j.at("threads").get_to(p.threads);
    p.validate();
}

inline MppiParams load_mppi_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open MPPI params file: " + path);
    nlohmann::json j;
    in >> j;
    return j.get<MppiParams>();
}

// K perturbed control sequences with their rollout costs and importance
// weights, flattened row-major: sample k, step t at index k*T + t.
struct RolloutBatch {
    int sample_count = 0;
    int horizon_steps = 0;
    std::vector<Control> samples;
    std::vector<double> state_cost;    // S(eps_k)
    std::vector<double> control_cost;  // sum_t u_t^T Sigma^-1 eps_k^t (gamma applied later)
    std::vector<double> weight;
    std::vector<std::uint8_t> crashed;

    void resize(int k, int t) {
        sample_count = k;
        horizon_steps = t;
        samples.resize(static_cast<size_t>(k) * t);
        state_cost.assign(k, 0.0);
        control_cost.assign(k, 0.0);
        weight.assign(k, 0.0);
        crashed.assign(k, 0);
    }
};

namespace detail {

struct SigmaChol {
    double l00, l10, l11;  // lower Cholesky factor of sigma

    static SigmaChol from(const Eigen::Matrix2d& sigma) {
        const Eigen::LLT<Eigen::Matrix2d> llt(sigma);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("sigma must be positive definite");
        const Eigen::Matrix2d l = llt.matrixL();
        return {l(0, 0), l(1, 0), l(1, 1)};
    }
};

// One sample's perturbed sequence: Gaussian around U with covariance sigma,
// clamped to control bounds. Exactly one Box-Muller pair per step.
inline void generate_sample(const ControlSequence& u, const SigmaChol& chol,
                            std::uint64_t stream_seed, Control* out, int horizon) {
    Rng rng(stream_seed);
    for (int t = 0; t < horizon; ++t) {
        const double z0 = rng.next_gaussian();
        const double z1 = rng.next_gaussian();
        out[t] = Control{u[t].steering + chol.l00 * z0,
                         u[t].throttle + chol.l10 * z0 + chol.l11 * z1}
                     .clamped();
    }
}

}  // namespace detail

// Per-sample streams use seed ^ sample_index, so the result is independent
// of any parallel schedule.
inline RolloutBatch sample_perturbations(const ControlSequence& u, const MppiParams& params,
                                         std::uint64_t seed) {
    params.validate();
    if (static_cast<int>(u.size()) != params.horizon_steps)
        throw std::invalid_argument("sample_perturbations: sequence length != horizon");
    const detail::SigmaChol chol = detail::SigmaChol::from(params.sigma);
    RolloutBatch batch;
    batch.resize(params.sample_count, params.horizon_steps);
    for (int k = 0; k < params.sample_count; ++k)
        detail::generate_sample(u, chol, seed ^ static_cast<std::uint64_t>(k),
                                batch.samples.data() + static_cast<size_t>(k) * params.horizon_steps,
                                params.horizon_steps);
    return batch;
}

struct RunningCost {
    double cost = 0.0;
    bool indicator = false;
};

namespace detail {

inline RunningCost running_cost_with_discount(const VehicleState& state, double discount_pow,
                                              double costmap_cost, const MppiParams& params) {
    const bool indicator = costmap_cost > params.indicator.track_cost ||
                           std::abs(state.roll) > params.indicator.roll ||
                           std::abs(state.yaw_rate) > params.indicator.yaw_rate;
    const double dv = state.vx - params.desired_speed;
    const double slip = state.vy / guarded_vx(state.vx);
    double q = params.weights.track * costmap_cost + params.weights.speed * dv * dv +
               params.weights.slip * slip * slip;
    if (indicator) q += params.weights.crash * discount_pow;
    return {q, indicator};
}

}  // namespace detail

// Eq.-level running cost: track term, speed error, discounted crash
// indicator, and squared slip ratio.
inline RunningCost running_cost(const VehicleState& state, int t, double costmap_cost,
                                const MppiParams& params) {
    if (t < 0) throw std::invalid_argument("running_cost: t must be >= 0");
    return detail::running_cost_with_discount(state, std::pow(params.indicator.discount, t),
                                              costmap_cost, params);
}

struct TrajectoryCost {
    double total = 0.0;
    bool crashed = false;
};

// Sum of running costs over all T+1 states. With latching enabled (the
// default) the indicator stays on for the rest of the trajectory once fired.
template <typename CostFn>
TrajectoryCost trajectory_cost(const Trajectory& trajectory, CostFn&& costmap_query,
                               const MppiParams& params) {
    TrajectoryCost out;
    bool latched = false;
    for (size_t t = 0; t < trajectory.size(); ++t) {
        const VehicleState& s = trajectory[t];
        const double c = costmap_query(s.px, s.py);
        const double discount_pow = std::pow(params.indicator.discount, static_cast<double>(t));
        RunningCost rc = detail::running_cost_with_discount(s, discount_pow, c, params);
        if (params.latch_indicator && latched && !rc.indicator)
            rc.cost += params.weights.crash * discount_pow;
        latched = latched || rc.indicator;
        out.total += rc.cost;
    }
    out.crashed = latched;
    return out;
}

// Eq. 1-2: importance weights from exponentiated costs (stabilized by
// subtracting the minimum exponent) and the weighted average of samples.
inline ControlSequence mppi_update(const ControlSequence& u, RolloutBatch& batch,
                                   const MppiParams& params) {
    const int k_count = batch.sample_count;
    const int horizon = batch.horizon_steps;
    if (k_count < 1) throw std::invalid_argument("mppi_update: empty batch");
    if (static_cast<int>(u.size()) != horizon)
        throw std::invalid_argument("mppi_update: sequence length != batch horizon");

    double min_exponent = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
        const double e = batch.state_cost[k] + params.gamma * batch.control_cost[k];
        if (!std::isfinite(e)) throw std::runtime_error("mppi_update: non-finite rollout cost");
        min_exponent = std::min(min_exponent, e);
    }

    double eta = 0.0;
    for (int k = 0; k < k_count; ++k) {
        const double e = batch.state_cost[k] + params.gamma * batch.control_cost[k];
        batch.weight[k] = std::exp(-(e - min_exponent) / params.lambda);
        eta += batch.weight[k];
    }
    if (!(eta > 0.0)) throw std::runtime_error("mppi_update: all weights underflowed");

    ControlSequence out(horizon);
    for (int k = 0; k < k_count; ++k) {
        batch.weight[k] /= eta;
        const double w = batch.weight[k];
        const Control* row = batch.samples.data() + static_cast<size_t>(k) * horizon;
        for (int t = 0; t < horizon; ++t) {
            out[t].steering += w * row[t].steering;
            out[t].throttle += w * row[t].throttle;
        }
    }
    return out;
}

struct MppiDiagnostics {
    double min_cost = 0.0;
    double mean_cost = 0.0;
    double ess = 0.0;  // effective sample size, 1 / sum w^2
    double crash_fraction = 0.0;
    bool fallback = false;  // no costmap frame; brake command issued
};

inline constexpr Control kBrakeFallback{0.0, -0.3};

// Receding-horizon MPPI driver: sample, roll out, weight, execute the first
// control, shift. Rollout costmap queries go through the frame's capture
// pose. Rollouts across samples run in parallel; per-sample seeds and a
// fixed-order reduction keep results independent of the worker count.
class MppiController {
public:
    MppiController(const MppiParams& params, const VehicleParams& vehicle,
                   std::uint64_t master_seed)
        : params_(params),
          vehicle_(vehicle),
          master_seed_(master_seed),
          chol_(detail::SigmaChol::from(params.sigma)) {
        params_.validate();
        vehicle_.validate();
        sigma_inv_ = params_.sigma.inverse();
        discount_pow_.resize(params_.horizon_steps + 1);
        for (int t = 0; t <= params_.horizon_steps; ++t)
            discount_pow_[t] = std::pow(params_.indicator.discount, t);
        reset();
    }

    void reset() {
        sequence_.assign(params_.horizon_steps, Control{});
        last_optimized_.assign(params_.horizon_steps, Control{});
        step_counter_ = 0;
    }

    Control step(const VehicleState& feedback, const CostmapFrame* frame) {
        const std::uint64_t step_seed = derive_seed(master_seed_, step_counter_);
        ++step_counter_;
        diag_ = MppiDiagnostics{};

        if (frame == nullptr) {
            diag_.fallback = true;
            return kBrakeFallback;
        }
        if (!feedback.finite())
            throw std::invalid_argument("control_step: non-finite state feedback");

        batch_.resize(params_.sample_count, params_.horizon_steps);
        evaluate_samples(feedback, *frame, step_seed);
        const ControlSequence updated = mppi_update(sequence_, batch_, params_);
        last_optimized_ = updated;

        double min_cost = std::numeric_limits<double>::infinity();
        double sum_cost = 0.0;
        double sum_w2 = 0.0;
        int crashes = 0;
        for (int k = 0; k < params_.sample_count; ++k) {
            min_cost = std::min(min_cost, batch_.state_cost[k]);
            sum_cost += batch_.state_cost[k];
            sum_w2 += batch_.weight[k] * batch_.weight[k];
            crashes += batch_.crashed[k];
        }
        diag_.min_cost = min_cost;
        diag_.mean_cost = sum_cost / params_.sample_count;
        diag_.ess = sum_w2 > 0.0 ? 1.0 / sum_w2 : 0.0;
        diag_.crash_fraction = static_cast<double>(crashes) / params_.sample_count;

        const Control execute = updated.front();
        // shift left, repeating the last entry to keep cornering intent
        for (int t = 0; t + 1 < params_.horizon_steps; ++t) sequence_[t] = updated[t + 1];
        sequence_[params_.horizon_steps - 1] = updated[params_.horizon_steps - 1];
        return execute;
    }

    const MppiDiagnostics& last_diagnostics() const { return diag_; }
    const ControlSequence& planned_sequence() const { return sequence_; }
    const ControlSequence& last_optimized_sequence() const { return last_optimized_; }
    const RolloutBatch& last_batch() const { return batch_; }
    const MppiParams& params() const { return params_; }

private:
    void evaluate_samples(const VehicleState& feedback, const CostmapFrame& frame,
                          std::uint64_t step_seed) {
        const int horizon = params_.horizon_steps;
        const double cos_cap = std::cos(frame.capture_pose.yaw);
        const double sin_cap = std::sin(frame.capture_pose.yaw);
        const std::vector<std::uint8_t>* validity =
            frame.validity.empty() ? nullptr : &frame.validity;

        auto frame_cost = [&](double wx, double wy) {
            const double dx = wx - frame.capture_pose.x;
            const double dy = wy - frame.capture_pose.y;
            return lookup_cost(frame.grid, cos_cap * dx + sin_cap * dy,
                               -sin_cap * dx + cos_cap * dy, validity);
        };

        parallel_for(params_.sample_count, params_.threads, [&](int begin, int end) {
            for (int k = begin; k < end; ++k) {
                Control* row = batch_.samples.data() + static_cast<size_t>(k) * horizon;
                detail::generate_sample(sequence_, chol_,
                                        step_seed ^ static_cast<std::uint64_t>(k), row, horizon);

                double state_cost = 0.0;
                double control_cost = 0.0;
                bool latched = false;
                VehicleState s = feedback;
                {
                    const RunningCost rc = detail::running_cost_with_discount(
                        s, discount_pow_[0], frame_cost(s.px, s.py), params_);
                    state_cost += rc.cost;
                    latched = rc.indicator;
                }
                for (int t = 0; t < horizon; ++t) {
                    const Control& u_prev = sequence_[t];
                    const Control& eps = row[t];
                    control_cost +=
                        u_prev.steering * (sigma_inv_(0, 0) * eps.steering +
                                           sigma_inv_(0, 1) * eps.throttle) +
                        u_prev.throttle * (sigma_inv_(1, 0) * eps.steering +
                                           sigma_inv_(1, 1) * eps.throttle);

                    s = gridracer::detail::rk4_step(s, eps, vehicle_, params_.dt);
                    RunningCost rc = detail::running_cost_with_discount(
                        s, discount_pow_[t + 1], frame_cost(s.px, s.py), params_);
                    if (params_.latch_indicator && latched && !rc.indicator)
                        rc.cost += params_.weights.crash * discount_pow_[t + 1];
                    latched = latched || rc.indicator;
                    state_cost += rc.cost;
                }
                batch_.state_cost[k] = state_cost;
                batch_.control_cost[k] = control_cost;
                batch_.crashed[k] = latched ? 1 : 0;
            }
        });
    }

    MppiParams params_;
    VehicleParams vehicle_;
    std::uint64_t master_seed_;
    detail::SigmaChol chol_;
    Eigen::Matrix2d sigma_inv_;
    std::vector<double> discount_pow_;
    ControlSequence sequence_;
    ControlSequence last_optimized_;
    RolloutBatch batch_;
    MppiDiagnostics diag_;
    std::uint64_t step_counter_ = 0;
};

}  // namespace gridracer
