#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gridracer/mppi.hpp"
#include "gridracer/track.hpp"

using namespace gridracer;

namespace {

MppiParams small_params(int k, int t) {
    MppiParams p;
    p.sample_count = k;
    p.horizon_steps = t;
    return p;
}

RolloutBatch batch_with_costs(const std::vector<double>& costs,
                              const std::vector<Control>& samples, int horizon) {
    RolloutBatch b;
    b.resize(static_cast<int>(costs.size()), horizon);
    b.state_cost = costs;
    b.samples = samples;
    return b;
}

CostmapFrame frame_for_track(const CostMapGrid& world, const Pose2& pose) {
    CostmapFrame f;
    f.grid = extract_topdown_crop(world, pose, CropSpec{});
    f.validity.assign(f.grid.values.size(), 1);
    f.capture_pose = pose;
    f.capture_time = 0.0;
    return f;
}

}  // namespace

TEST_CASE("perturbation sampling") {
    MppiParams p = small_params(16, 8);
    ControlSequence u(8, Control{0.1, 0.2});

    SECTION("same seed gives bitwise-identical samples") {
        const RolloutBatch a = sample_perturbations(u, p, 42);
        const RolloutBatch b = sample_perturbations(u, p, 42);
        REQUIRE(a.samples.size() == b.samples.size());
        for (size_t i = 0; i < a.samples.size(); ++i) {
            CHECK(a.samples[i].steering == b.samples[i].steering);
            CHECK(a.samples[i].throttle == b.samples[i].throttle);
        }
        const RolloutBatch c = sample_perturbations(u, p, 43);
        CHECK(a.samples[0].steering != c.samples[0].steering);
    }

    SECTION("vanishing covariance collapses onto the mean sequence") {
        p.sigma = 1e-12 * Eigen::Matrix2d::Identity();
        const RolloutBatch b = sample_perturbations(u, p, 7);
        for (const Control& c : b.samples) {
            CHECK_THAT(c.steering, Catch::Matchers::WithinAbs(0.1, 1e-5));
            CHECK_THAT(c.throttle, Catch::Matchers::WithinAbs(0.2, 1e-5));
        }
    }

    SECTION("sample statistics match the requested distribution") {
        p = small_params(10000, 1);
        ControlSequence mean(1, Control{0.1, 0.2});
        const RolloutBatch b = sample_perturbations(mean, p, 12345);

        double ms = 0.0, mt = 0.0;
        for (const Control& c : b.samples) {
            ms += c.steering;
            mt += c.throttle;
        }
        ms /= b.samples.size();
        mt /= b.samples.size();
        const double sigma_s = std::sqrt(0.09), sigma_t = std::sqrt(0.04);
        CHECK(std::abs(ms - 0.1) < 3.0 * sigma_s / 100.0);
        CHECK(std::abs(mt - 0.2) < 3.0 * sigma_t / 100.0);

        double css = 0.0, ctt = 0.0, cst = 0.0;
        for (const Control& c : b.samples) {
            css += (c.steering - ms) * (c.steering - ms);
            ctt += (c.throttle - mt) * (c.throttle - mt);
            cst += (c.steering - ms) * (c.throttle - mt);
        }
        css /= b.samples.size() - 1;
        ctt /= b.samples.size() - 1;
        cst /= b.samples.size() - 1;
        CHECK(std::abs(css - 0.09) < 0.05 * 0.09);
        CHECK(std::abs(ctt - 0.04) < 0.05 * 0.04);
        CHECK(std::abs(cst) < 0.05 * std::sqrt(0.09 * 0.04));
    }

    SECTION("samples respect control bounds") {
        p.sigma = (Eigen::Matrix2d() << 4.0, 0.0, 0.0, 4.0).finished();
        const RolloutBatch b = sample_perturbations(u, p, 3);
        for (const Control& c : b.samples) {
            CHECK(std::abs(c.steering) <= 1.0);
            CHECK(std::abs(c.throttle) <= 1.0);
        }
    }

    SECTION("non-PD sigma is rejected") {
        p.sigma = (Eigen::Matrix2d() << 1.0, 2.0, 2.0, 1.0).finished();
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        CHECK_THROWS_AS(sample_perturbations(u, p, 1), std::invalid_argument);
    }
}

TEST_CASE("running cost matches the tabulated examples") {
    MppiParams p;
    p.desired_speed = 5.0;

    SECTION("on centerline at desired speed costs zero") {
        VehicleState s;
        s.vx = 5.0;
        const RunningCost rc = running_cost(s, 0, 0.0, p);
        CHECK(rc.cost == 0.0);
        CHECK_FALSE(rc.indicator);
    }

    SECTION("one m/s speed error costs the speed weight") {
        VehicleState s;
        s.vx = 4.0;
        const RunningCost rc = running_cost(s, 0, 0.0, p);
        CHECK_THAT(rc.cost, Catch::Matchers::WithinAbs(4.25, 1e-12));
    }

    SECTION("crash at t=2 with 0.9 discount costs 8100") {
        VehicleState s;
        s.vx = 5.0;
        s.roll = 0.5;  // above the roll threshold
        const RunningCost rc = running_cost(s, 2, 0.0, p);
        CHECK(rc.indicator);
        CHECK(rc.cost == 10000.0 * std::pow(0.9, 2));
        CHECK_THAT(rc.cost, Catch::Matchers::WithinAbs(8100.0, 1e-8));
    }

    SECTION("indicator fires on any of the three thresholds") {
        VehicleState s;
        s.vx = 5.0;
        CHECK(running_cost(s, 0, 0.95, p).indicator);  // track cost
        s.yaw_rate = 7.0;
        CHECK(running_cost(s, 0, 0.0, p).indicator);  // yaw rate
    }
}

TEST_CASE("trajectory cost") {
    MppiParams p;
    p.desired_speed = 0.0;

    SECTION("constant per-state costs sum") {
        // two states, track costs chosen to give q = 1.0 and 2.5
        Trajectory traj(2);
        traj[0].vx = 0.0;
        traj[1].vx = 0.0;
        int call = 0;
        auto query = [&](double, double) { return call++ == 0 ? 0.01 : 0.025; };
        const TrajectoryCost tc = trajectory_cost(traj, query, p);
        CHECK_THAT(tc.total, Catch::Matchers::WithinAbs(3.5, 1e-12));
        CHECK_FALSE(tc.crashed);
    }

    SECTION("resting on the centerline at desired speed costs zero") {
        MppiParams q;
        q.desired_speed = 5.0;
        Trajectory traj(10);
        for (auto& s : traj) s.vx = 5.0;
        const TrajectoryCost tc = trajectory_cost(traj, [](double, double) { return 0.0; }, q);
        CHECK(tc.total == 0.0);
    }

    SECTION("random trajectory matches step-by-step re-summation") {
        MppiParams q;
        q.desired_speed = 5.0;
        q.latch_indicator = false;
        Rng rng(4);
        Trajectory traj(30);
        std::vector<double> costs(30);
        for (int i = 0; i < 30; ++i) {
            traj[i].vx = 6.0 * rng.next_unit();
            traj[i].vy = 0.4 * rng.next_gaussian();
            traj[i].roll = 0.2 * rng.next_gaussian();
            traj[i].yaw_rate = 2.0 * rng.next_gaussian();
            costs[i] = rng.next_unit();
        }
        int idx = 0;
        const TrajectoryCost tc =
            trajectory_cost(traj, [&](double, double) { return costs[idx++]; }, q);
        double expected = 0.0;
        for (int i = 0; i < 30; ++i) expected += running_cost(traj[i], i, costs[i], q).cost;
        CHECK_THAT(tc.total, Catch::Matchers::WithinAbs(expected, 1e-9));
    }

    SECTION("crash latches for the rest of the trajectory") {
        MppiParams q;
        q.desired_speed = 0.0;
        Trajectory traj(5);
        traj[2].roll = 0.5;  // indicator fires only at t=2
        const TrajectoryCost tc = trajectory_cost(traj, [](double, double) { return 0.0; }, q);
        double expected = 0.0;
        for (int t = 2; t < 5; ++t) expected += 10000.0 * std::pow(0.9, t);
        CHECK_THAT(tc.total, Catch::Matchers::WithinAbs(expected, 1e-9));
        CHECK(tc.crashed);

        q.latch_indicator = false;
        const TrajectoryCost unlatched =
            trajectory_cost(traj, [](double, double) { return 0.0; }, q);
        CHECK_THAT(unlatched.total,
                   Catch::Matchers::WithinAbs(10000.0 * std::pow(0.9, 2), 1e-9));
    }
}

TEST_CASE("mppi update") {
    MppiParams p;
    p.lambda = 1.0;
    p.gamma = 0.0;

    SECTION("single sample is returned unchanged regardless of cost") {
        p.sample_count = 1;
        p.horizon_steps = 2;
        std::vector<Control> samples = {{0.4, -0.2}, {0.1, 0.9}};
        RolloutBatch b = batch_with_costs({123456.0}, samples, 2);
        const ControlSequence u = mppi_update(ControlSequence(2), b, p);
        CHECK(u[0].steering == 0.4);
        CHECK(u[1].throttle == 0.9);
        CHECK_THAT(b.weight[0], Catch::Matchers::WithinAbs(1.0, 1e-15));
    }

    SECTION("identical exponents average the samples") {
        p.sample_count = 4;
        p.horizon_steps = 1;
        std::vector<Control> samples = {{0.0, 0.0}, {1.0, 0.4}, {-1.0, 0.0}, {0.4, 0.4}};
        RolloutBatch b = batch_with_costs({7.0, 7.0, 7.0, 7.0}, samples, 1);
        const ControlSequence u = mppi_update(ControlSequence(1), b, p);
        CHECK_THAT(u[0].steering, Catch::Matchers::WithinAbs(0.1, 1e-12));
        CHECK_THAT(u[0].throttle, Catch::Matchers::WithinAbs(0.2, 1e-12));
    }

    SECTION("hand-computed two-sample weights") {
        p.sample_count = 2;
        p.horizon_steps = 1;
        std::vector<Control> samples = {{0.8, 0.6}, {-0.4, 0.2}};
        RolloutBatch b = batch_with_costs({0.0, std::log(3.0)}, samples, 1);
        const ControlSequence u = mppi_update(ControlSequence(1), b, p);
        CHECK_THAT(b.weight[0], Catch::Matchers::WithinAbs(0.75, 1e-12));
        CHECK_THAT(b.weight[1], Catch::Matchers::WithinAbs(0.25, 1e-12));
        CHECK_THAT(u[0].steering,
                   Catch::Matchers::WithinAbs(0.75 * 0.8 + 0.25 * -0.4, 1e-12));
        CHECK_THAT(u[0].throttle,
                   Catch::Matchers::WithinAbs(0.75 * 0.6 + 0.25 * 0.2, 1e-12));
    }

    SECTION("weights normalize and the update stays in the sample hull") {
        Rng rng(31);
        for (int trial = 0; trial < 1000; ++trial) {
            const int k = 2 + static_cast<int>(rng.next_unit() * 7);
            const int horizon = 1 + static_cast<int>(rng.next_unit() * 4);
            p.sample_count = k;
            p.horizon_steps = horizon;
            p.lambda = 0.05 + rng.next_unit();
            std::vector<Control> samples(static_cast<size_t>(k) * horizon);
            std::vector<double> costs(k);
            for (auto& c : samples)
                c = Control{2.0 * rng.next_unit() - 1.0, 2.0 * rng.next_unit() - 1.0};
            for (auto& c : costs) c = 1000.0 * rng.next_unit();
            RolloutBatch b = batch_with_costs(costs, samples, horizon);
            const ControlSequence u = mppi_update(ControlSequence(horizon), b, p);

            double wsum = 0.0;
            for (double w : b.weight) {
                CHECK(w >= 0.0);
                wsum += w;
            }
            CHECK(std::abs(wsum - 1.0) <= 1e-12);

            for (int t = 0; t < horizon; ++t) {
                double lo_s = 1e9, hi_s = -1e9, lo_t = 1e9, hi_t = -1e9;
                for (int kk = 0; kk < k; ++kk) {
                    const Control& c = samples[static_cast<size_t>(kk) * horizon + t];
                    lo_s = std::min(lo_s, c.steering);
                    hi_s = std::max(hi_s, c.steering);
                    lo_t = std::min(lo_t, c.throttle);
                    hi_t = std::max(hi_t, c.throttle);
                }
                CHECK(u[t].steering >= lo_s - 1e-12);
                CHECK(u[t].steering <= hi_s + 1e-12);
                CHECK(u[t].throttle >= lo_t - 1e-12);
                CHECK(u[t].throttle <= hi_t + 1e-12);
            }
        }
    }

    SECTION("softmin limit picks the argmin sample") {
        p.sample_count = 5;
        p.horizon_steps = 1;
        p.lambda = 1e-6;
        std::vector<Control> samples = {
            {0.1, 0.1}, {0.2, 0.2}, {-0.7, 0.9}, {0.4, -0.4}, {0.9, 0.0}};
        RolloutBatch b = batch_with_costs({5.0, 3.0, 0.002, 0.5, 9.0}, samples, 1);
        const ControlSequence u = mppi_update(ControlSequence(1), b, p);
        CHECK(std::abs(u[0].steering - -0.7) < 1e-6);
        CHECK(std::abs(u[0].throttle - 0.9) < 1e-6);
    }

    SECTION("subtracting a constant from all exponents changes nothing") {
        p.sample_count = 6;
        p.horizon_steps = 3;
        p.lambda = 0.2;
        Rng rng(77);
        std::vector<Control> samples(18);
        std::vector<double> costs = {10.0, 250.0, 31.0, 999.0, 42.0, 77.0};
        for (auto& c : samples)
            c = Control{2.0 * rng.next_unit() - 1.0, 2.0 * rng.next_unit() - 1.0};
        RolloutBatch a = batch_with_costs(costs, samples, 3);
        const ControlSequence ua = mppi_update(ControlSequence(3), a, p);

        for (auto& c : costs) c += 5432.1;
        RolloutBatch b2 = batch_with_costs(costs, samples, 3);
        const ControlSequence ub = mppi_update(ControlSequence(3), b2, p);
        for (int t = 0; t < 3; ++t) {
            CHECK(std::abs(ua[t].steering - ub[t].steering) <= 1e-12);
            CHECK(std::abs(ua[t].throttle - ub[t].throttle) <= 1e-12);
        }
    }
}

TEST_CASE("control step") {
    const Centerline oval = make_oval_centerline(18.0, 3.8, 1.5);
    const CostMapGrid world = build_track_costmap(oval, 0.0625, 2.0);
    const VehicleParams vp;
    MppiParams mp;
    mp.sample_count = 128;  // keep unit tests quick
    mp.threads = 2;

    VehicleState start;
    start.px = 0.0;
    start.py = -3.8;
    start.vx = 3.0;

    SECTION("missing frame brakes and flags the event") {
        MppiController ctrl(mp, vp, 1);
        const Control u = ctrl.step(start, nullptr);
        CHECK(u.steering == 0.0);
        CHECK(u.throttle == -0.3);
        CHECK(ctrl.last_diagnostics().fallback);
    }

    SECTION("stored sequence is the shifted optimized sequence") {
        MppiController ctrl(mp, vp, 1);
        const CostmapFrame frame = frame_for_track(world, Pose2{0.0, -3.8, 0.0});
        const Control exec = ctrl.step(start, &frame);
        const ControlSequence& opt = ctrl.last_optimized_sequence();
        const ControlSequence& stored = ctrl.planned_sequence();
        CHECK(exec.steering == opt[0].steering);
        CHECK(exec.throttle == opt[0].throttle);
        REQUIRE(stored.size() == opt.size());
        for (size_t t = 0; t + 1 < opt.size(); ++t) {
            CHECK(stored[t].steering == opt[t + 1].steering);
            CHECK(stored[t].throttle == opt[t + 1].throttle);
        }
        CHECK(stored.back().steering == opt.back().steering);
        CHECK(stored.back().throttle == opt.back().throttle);
    }

    SECTION("below desired speed on a straight the controller accelerates") {
        const CostmapFrame frame = frame_for_track(world, Pose2{0.0, -3.8, 0.0});
        double mean_throttle = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            MppiController ctrl(mp, vp, seed);
            mean_throttle += ctrl.step(start, &frame).throttle;
        }
        mean_throttle /= 10.0;
        CHECK(mean_throttle > 0.0);
    }

    SECTION("all-crash costmap keeps the output finite and bounded") {
        CostMapGrid wall = world;
        for (auto& v : wall.values) v = 1.0f;
        const CostmapFrame frame = frame_for_track(wall, Pose2{0.0, -3.8, 0.0});
        MppiController ctrl(mp, vp, 5);
        const Control u = ctrl.step(start, &frame);
        CHECK(std::isfinite(u.steering));
        CHECK(std::isfinite(u.throttle));
        CHECK(std::abs(u.steering) <= 1.0);
        CHECK(std::abs(u.throttle) <= 1.0);
        CHECK(ctrl.last_diagnostics().crash_fraction == 1.0);
    }

    SECTION("result is bitwise identical for any worker count") {
        const CostmapFrame frame = frame_for_track(world, Pose2{0.0, -3.8, 0.0});
        MppiParams one = mp;
        one.threads = 1;
        MppiParams four = mp;
        four.threads = 4;
        MppiController a(one, vp, 9);
        MppiController b(four, vp, 9);
        for (int i = 0; i < 5; ++i) {
            const Control ua = a.step(start, &frame);
            const Control ub = b.step(start, &frame);
            CHECK(ua.steering == ub.steering);
            CHECK(ua.throttle == ub.throttle);
        }
        const ControlSequence& sa = a.planned_sequence();
        const ControlSequence& sb = b.planned_sequence();
        for (size_t t = 0; t < sa.size(); ++t) {
            CHECK(sa[t].steering == sb[t].steering);
            CHECK(sa[t].throttle == sb[t].throttle);
        }
    }
}

TEST_CASE("mppi params JSON round trip") {
    MppiParams p;
    p.lambda = 0.33;
    p.sigma(0, 0) = 0.2;
    nlohmann::json j = p;
    const MppiParams q = j.get<MppiParams>();
    CHECK(q.lambda == p.lambda);
    CHECK(q.sigma == p.sigma);
    CHECK(q.weights.crash == 10000.0);

    j["mystery"] = 3;
    CHECK_THROWS_AS(j.get<MppiParams>(), std::invalid_argument);
}
