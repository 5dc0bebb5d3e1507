#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "spaars/error.hpp"
#include "spaars/verify.hpp"

using namespace spaars;
using namespace spaars::verify;

namespace {

// Iterative policy evaluation, independent of the library's linear solve.
Eigen::VectorXd iterate_values(const TabularMdp& mdp, const std::vector<int>& policy) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(TabularMdp::kStates);
    for (int it = 0; it < 2000; ++it) {
        Eigen::VectorXd nv(TabularMdp::kStates);
        for (int s = 0; s < TabularMdp::kStates; ++s) {
            const int a = policy[static_cast<std::size_t>(s)];
            nv[s] = mdp.reward(s, a) + mdp.gamma * v[mdp.next(s, a)];
        }
        v = nv;
    }
    return v;
}

}  // namespace

TEST_CASE("report verdict is recomputed from measured, bound and tolerance") {
    BoundReport r;
    r.measured = 1.05;
    r.bound = 1.0;
    r.tolerance = 0.1;
    CHECK(r.pass());
    CHECK(r.status() == Status::Pass);
    CHECK(r.slack() == doctest::Approx(-0.05));
    r.tolerance = 0.0;
    CHECK(r.status() == Status::Fail);
    CHECK(r.failed());
    r.set_status(Status::Qualitative);
    CHECK_FALSE(r.failed());
    r.measured = std::numeric_limits<double>::quiet_NaN();
    r.has_override = false;
    CHECK(r.status() == Status::Fail);
    CHECK(to_string(Status::NotApplicable) == "not_applicable");
    r.name = "x";
    CHECK(r.to_json().find("\"name\":\"x\"") != std::string::npos);
    CHECK(summary_table({r}).find("x") != std::string::npos);
}

TEST_CASE("tabular MDP dynamics and exact values") {
    TabularMdp mdp;
    CHECK(mdp.state_value(mdp.goal) == doctest::Approx(0.5));
    CHECK(mdp.next(0, 0) == 0);
    CHECK(mdp.next(0, 4) == 2);
    CHECK(mdp.next(40, 4) == 40);
    CHECK(mdp.reward(29, 3) == doctest::Approx(0.0));
    CHECK(mdp.reward(29, 4) == doctest::Approx(-0.05));
    CHECK(mdp.raw_action(10) == 4);
    CHECK(mdp.latent_action(35) == 1);
    CHECK(mdp.raw_action(mdp.goal) == 2);
    std::vector<int> raw(TabularMdp::kStates), lat(TabularMdp::kStates);
    for (int s = 0; s < TabularMdp::kStates; ++s) {
        raw[static_cast<std::size_t>(s)] = mdp.raw_action(s);
        lat[static_cast<std::size_t>(s)] = mdp.latent_action(s);
    }
    CHECK((mdp.evaluate(raw) - iterate_values(mdp, raw)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((mdp.evaluate(lat) - iterate_values(mdp, lat)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(mdp.evaluate(raw)[mdp.goal] == doctest::Approx(0.0));
    CHECK(mdp.objective(raw) == doctest::Approx(iterate_values(mdp, raw).mean()));

    // The best switching policy is at least as good as either pure option everywhere.
    const Eigen::MatrixXd q = mdp.option_q_star();
    const Eigen::VectorXd v = q.rowwise().maxCoeff();
    const Eigen::VectorXd vr = iterate_values(mdp, raw), vl = iterate_values(mdp, lat);
    for (int s = 0; s < TabularMdp::kStates; ++s) {
        CHECK(v[s] >= vr[s] - 1e-9);
        CHECK(v[s] >= vl[s] - 1e-9);
    }
    // Greedy switching on Q* attains V*.
    std::vector<int> best(TabularMdp::kStates);
    for (int s = 0; s < TabularMdp::kStates; ++s)
        best[static_cast<std::size_t>(s)] = q(s, 0) > q(s, 1) ? mdp.raw_action(s) : mdp.latent_action(s);
    CHECK((iterate_values(mdp, best) - v).cwiseAbs().maxCoeff() < 1e-9);
    CHECK_THROWS_AS(mdp.evaluate({0, 1}), InputError);
}

TEST_CASE("gate regret is exactly zero without noise and within the bound with it") {
    TabularMdp mdp;
    RegretOptions opt;
    opt.noise_seeds = 10;
    const auto reports = check_gate_regret(mdp, opt);
    REQUIRE(reports.size() == opt.eps_q.size());
    CHECK(reports[0].measured == 0.0);
    for (const auto& r : reports) CHECK(r.status() == Status::Pass);
    CHECK(reports.back().bound == doctest::Approx(0.2 / (1.0 - 0.9)));
    RegretOptions ties = opt;
    ties.ties_only = true;
    for (const auto& r : check_gate_regret(mdp, ties)) CHECK(r.measured == 0.0);
}

TEST_CASE("heatmap CSV round trip") {
    curriculum::GateSnapshot snap;
    snap.step = 1200;
    snap.states = Eigen::MatrixXd::Zero(4, 3);
    snap.states.row(0) << 0.125, 0.375, 1.625;
    snap.states.row(1) << 0.125, 0.125, 2.875;
    snap.fired = {true, false, true};
    const auto path = (std::filesystem::temp_directory_path() / "spaars_test_heatmap_1200.csv").string();
    write_heatmap_csv(path, snap);
    const auto back = read_heatmap_csv(path);
    std::remove(path.c_str());
    CHECK(back.fired == snap.fired);
    CHECK((back.states.topRows(2) - snap.states.topRows(2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(read_heatmap_csv("/nonexistent/heatmap_1.csv"), InputError);
}

TEST_CASE("convergence check is descriptive and needs two snapshots") {
    curriculum::GateSnapshot a, b;
    a.states = b.states = Eigen::MatrixXd::Zero(2, 4);
    a.fired = {true, true, false, false};
    b.fired = {true, true, true, false};
    CHECK(check_gate_convergence({a}).status() == Status::NotApplicable);
    const auto r = check_gate_convergence({a, b});
    CHECK(r.status() == Status::Qualitative);
    CHECK(r.measured == doctest::Approx(1.0 - 2.0 / 3.0));
}

TEST_CASE("variance controls: constant critic ratio k/d and identity decoder ratio 1") {
    VarianceOptions opt;
    opt.n_samples = 20000;
    CHECK(check_variance_constant_control(1, 4, opt).status() == Status::Pass);
    CHECK(check_variance_identity_control(2, opt).status() == Status::Pass);
}

TEST_CASE("smoothness reports scale with alpha and vanish at alpha 0") {
    const Bounds b = Bounds::symmetric(1, 1.0);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(1, 4), Az(1, 4);
    Az << 0.1, 0.2, -0.1, 0.0;
    const auto raw = [&](const Eigen::MatrixXd&) { Eigen::MatrixXd A = Az; A.array() += 0.3; return A; };
    const auto reports = check_transition_smoothness(S, Az, raw, b, {0.0, 0.5, 1.0});
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].measured == 0.0);
    CHECK(reports[1].measured == doctest::Approx(0.15));
    CHECK(reports[2].measured == doctest::Approx(0.3));
    for (const auto& r : reports) CHECK(r.status() == Status::Pass);
}

TEST_CASE("gate sweep: infinite margin fires nowhere and a frozen critic is stable") {
    auto env = envs::make_env("reach-1d", 0);
    const auto ds = envs::generate_dataset(*env, envs::Behavior::Medium, 500, 1);
    curriculum::TrainConfig c;
    c.total_steps = 200;
    c.batch_size = 32;
    c.learning_starts = 32;
    c.cvae.epochs = 2;
    c.curriculum.variant = curriculum::Variant::Gate;
    curriculum::Trainer t(c, ds);
    for (int i = 0; i < 100; ++i) t.step();
    const auto none = t.gate_sweep(std::numeric_limits<double>::infinity(), 10.0);
    CHECK(none.fired.size() == 41);
    CHECK(std::count(none.fired.begin(), none.fired.end(), true) == 0);
    const auto s1 = t.gate_sweep(0.0, 1e9);
    const auto s2 = t.gate_sweep(0.0, 1e9);
    CHECK(curriculum::jaccard(s1.fired, s2.fired) == 1.0);
    // Zero margin fires exactly where the raw ensemble mean beats the latent one.
    for (Eigen::Index i = 0; i < s1.states.cols(); ++i) {
        const Eigen::VectorXd s = s1.states.col(i);
        const Eigen::VectorXd az = t.model().decode(t.latent_actor().mean_latent(t.model(), s), s);
        const Eigen::VectorXd ar = t.raw_actor().mean_action(s);
        const double adv = rl::ensemble_stats(t.critics(), s, ar).mean - rl::ensemble_stats(t.critics(), s, az).mean;
        CHECK(s1.fired[static_cast<std::size_t>(i)] == (adv > 0.0));
    }
}

TEST_CASE("suite names and unknown suites") {
    const auto names = suite_names();
    CHECK(std::find(names.begin(), names.end(), "all") != names.end());
    CHECK_THROWS_AS(run_suite("nope", SuiteOptions{}), ConfigError);
    const auto regret = run_suite("regret", SuiteOptions{});
    CHECK_FALSE(regret.empty());
    for (const auto& r : regret) CHECK_FALSE(r.failed());
}
