// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "spaars/curriculum.hpp"
#include "spaars/envs.hpp"
#include "spaars/verify.hpp"
#include "support.hpp"

using namespace spaars;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

// Suite reports are expensive (bandit critic training), so compute them once.
const std::vector<verify::BoundReport>& reports() {
    static const std::vector<verify::BoundReport> all = [] {
        std::vector<verify::BoundReport> out;
        for (const char* suite : {"variance", "gap", "calibration", "smoothness", "regret"}) {
            auto r = verify::run_suite(suite, verify::SuiteOptions{});
            out.insert(out.end(), r.begin(), r.end());
        }
        return out;
    }();
    return all;
}

const verify::BoundReport& report(const std::string& name) {
    for (const auto& r : reports())
        if (r.name == name) return r;
    throw std::runtime_error("missing report " + name);
}

std::vector<verify::BoundReport> reports_with_prefix(const std::string& prefix) {
    std::vector<verify::BoundReport> out;
    for (const auto& r : reports())
        if (r.name.rfind(prefix, 0) == 0) out.push_back(r);
    return out;
}

Outcome gradients() {
    const auto fd = testing::fd_check_random_nets(50, 2024);
    return {fd.nets == 50 && fd.worst_rel < 1e-4,
            "nets=" + std::to_string(fd.nets) + " params=" + std::to_string(fd.params_checked) +
                " worst_rel=" + fmt(fd.worst_rel)};
}

Outcome variance_reduction() {
    const auto& main = report("variance_reduction");
    const auto& control = report("variance_constant_critic");
    const bool ok = main.status() == verify::Status::Pass && control.status() == verify::Status::Pass;
    return {ok, "latent/raw ratio=" + fmt(main.measured) + " bound=" + fmt(main.bound) + " (tol 0.2)" +
                    "; constant-critic |ratio/(k/d)-1|=" + fmt(control.measured) + " (<= 0.15)"};
}

Outcome exploitation_gap() {
    const auto& expert = report("exploitation_gap[expert_noisy]");
    const auto& medium = report("exploitation_gap[medium]");
    const bool ok = expert.status() == verify::Status::Pass && medium.status() == verify::Status::Pass &&
                    medium.measured > 0.0;
    return {ok, "expert gap=" + fmt(expert.measured) + " <= " + fmt(expert.bound) + "; medium gap=" +
                    fmt(medium.measured) + " <= " + fmt(medium.bound) + " and > 0"};
}

Outcome calibration() {
    const auto& r = report("calibration_stability");
    const double rate = 1.0 - r.measured;
    return {rate >= 0.93, "pass rate=" + fmt(rate) + " (>= 0.93)"};
}

Outcome smoothness() {
    const auto reps = reports_with_prefix("transition_smoothness");
    bool ok = !reps.empty();
    std::string detail;
    for (const auto& r : reps) {
        const bool zero_alpha = r.bound == 0.0;
        const bool this_ok = zero_alpha ? r.measured == 0.0 : r.measured <= 1.1 * r.bound;
        ok = ok && this_ok;
        detail += r.name.substr(std::string("transition_smoothness").size()) + " " + fmt(r.measured) + "<=" +
                  fmt(1.1 * r.bound) + "; ";
    }
    return {ok, detail};
}

Outcome gate_regret() {
    const auto reps = reports_with_prefix("gate_regret[");
    bool ok = !reps.empty();
    std::string detail;
    for (const auto& r : reps) {
        const bool zero_eps = r.bound == 0.0;
        ok = ok && (zero_eps ? r.measured == 0.0 : r.measured <= 1.05 * r.bound);
        detail += r.name.substr(std::string("gate_regret").size()) + " " + fmt(r.measured) + "<=" + fmt(1.05 * r.bound) +
                  "; ";
    }
    return {ok, detail + "50 noise seeds"};
}

Outcome curriculum_contracts() {
    using namespace curriculum;
    bool ok = true;
    std::vector<std::string> broken;
    auto need = [&](bool cond, const std::string& what) {
        if (!cond) broken.push_back(what);
        ok = ok && cond;
    };
    const Bounds b = Bounds::symmetric(3, 1.0);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd az(3), ar(3);
        for (int j = 0; j < 3; ++j) {
            az[j] = u(rng);
            ar[j] = u(rng);
        }
        need(blend(az, ar, 0.0, b) == az && blend(az, ar, 1.0, b) == ar, "blend endpoints");
    }
    // Alpha through the phase machine is monotone in steps and saturates at 1.
    CurriculumConfig cfg;
    CurriculumState st;
    phase_step(st, cfg, 137, {});
    need(st.phase == Phase::LatentExploration, "pretrain -> latent");
    phase_step(st, cfg, 137, PhaseSignals{true, 1.0});
    phase_step(st, cfg, 137, PhaseSignals{false, 0.0});
    need(st.phase == Phase::LatentExploration, "exit requires both conditions");
    st.env_step = 10;
    phase_step(st, cfg, 137, PhaseSignals{true, 0.0});
    need(st.phase == Phase::Transition, "exit when both hold");
    double prev = 0.0;
    for (std::int64_t t = 11; t < 400; ++t) {
        st.env_step = t;
        phase_step(st, cfg, 137, {});
        need(st.alpha >= prev, "alpha monotone");
        prev = st.alpha;
    }
    need(st.alpha == 1.0 && st.phase == Phase::RawExploitation, "alpha saturates");
    // Plateau EMA equals the independent recurrence bit for bit.
    PlateauTracker tr;
    std::vector<double> xs;
    for (int i = 0; i < 200; ++i) xs.push_back(std::exp(-0.03 * i) + 0.01 * std::sin(i));
    for (double x : xs) plateau_detect(tr, x);
    need(tr.ema_history == testing::ema_sequence(xs, tr.config.ema_decay), "plateau EMA exact");
    std::string detail = ok ? "blend endpoints, alpha monotone, exit AND, plateau EMA exact" : "broken:";
    for (const auto& s : broken) detail += " " + s;
    return {ok, detail};
}

Outcome gate_reasons() {
    using namespace curriculum;
    GateConfig g;
    g.margin = 3.0;
    g.sigma_max = 10.0;
    const rl::EnsembleStats lat{0.0, 1.0};
    struct Case {
        double mean, sd;
        std::int64_t steps;
        GateReason want;
    };
    const std::vector<Case> cases{{50.0, 0.0, 4, GateReason::Warmup},     {50.0, 10.0, 5, GateReason::Disagreement},
                                  {50.0, 12.0, 5, GateReason::Disagreement}, {3.0, 1.0, 5, GateReason::MarginFail},
                                  {2.0, 9.0, 5, GateReason::MarginFail},   {3.5, 9.9, 5, GateReason::Fired}};
    bool ok = true;
    for (const auto& c : cases) {
        const auto d = gate_decide(rl::EnsembleStats{c.mean, c.sd}, lat, g, c.steps, 5);
        ok = ok && d.reason == c.want && (d.mode == Mode::Raw) == (c.want == GateReason::Fired);
    }
    return {ok, std::to_string(cases.size()) + " cases at m=3, sigma_max=10"};
}

curriculum::TrainConfig reach_config(curriculum::Variant v, std::uint64_t seed) {
    curriculum::TrainConfig c;
    c.env = "reach-1d";
    c.seed = seed;
    c.total_steps = 6000;
    c.eval_interval = 500;
    c.cvae.epochs = 30;
    c.cvae.batch_size = 64;
    c.curriculum.variant = v;
    c.curriculum.gate.margin = 0.05;
    c.curriculum.plateau.window = 5;
    return c;
}

envs::OfflineDataset reach_medium(std::uint64_t seed) {
    auto env = envs::make_env("reach-1d", seed);
    return envs::generate_dataset(*env, envs::Behavior::Medium, 5000, seed);
}

Outcome reach_comparison() {
    using curriculum::Variant;
    int schedule_wins = 0, gate_wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = reach_medium(seed);
        const double behavior = envs::behavior_return("reach-1d", envs::Behavior::Medium, 10, seed + 1000);
        const double sched = curriculum::run_training(reach_config(Variant::Schedule, seed), ds, nullptr).final_eval_return;
        const double gate = curriculum::run_training(reach_config(Variant::Gate, seed), ds, nullptr).final_eval_return;
        const double latent = curriculum::run_training(reach_config(Variant::LatentOnly, seed), ds, nullptr).final_eval_return;
        schedule_wins += sched > behavior ? 1 : 0;
        gate_wins += gate >= latent ? 1 : 0;
        detail += "seed" + std::to_string(seed) + "(beh " + fmt(behavior) + ", sched " + fmt(sched) + ", gate " +
                  fmt(gate) + ", latent " + fmt(latent) + ") ";
    }
    return {schedule_wins >= 4 && gate_wins >= 4, "schedule>behavior " + std::to_string(schedule_wins) +
                                                      "/5, gate>=latent_only " + std::to_string(gate_wins) + "/5; " +
                                                      detail};
}

Outcome determinism() {
    auto cfg = reach_config(curriculum::Variant::Gate, 11);
    cfg.total_steps = 3000;
    const auto ds = reach_medium(11);
    std::ostringstream a, b;
    curriculum::run_training(cfg, ds, &a);
    curriculum::run_training(cfg, ds, &b);
    const bool ok = !a.str().empty() && a.str() == b.str();
    return {ok, std::to_string(a.str().size()) + " metric bytes, identical=" + (ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<int> only;
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"analytic gradients match finite differences on 50 random nets", gradients},
        {"latent-space score-function variance reduction bound", variance_reduction},
        {"manifold exploitation gap within reconstruction bound", exploitation_gap},
        {"critic calibration stability under blending", calibration},
        {"transition smoothness at every alpha", smoothness},
        {"gate regret under critic noise", gate_regret},
        {"curriculum contracts", curriculum_contracts},
        {"gate reasons at default thresholds", gate_reasons},
        {"reach-1d medium: schedule beats behavior, gate matches latent-only", reach_comparison},
        {"byte-identical metrics for a fixed config and seed", determinism},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << "criterion " << n << ": " << criteria[i].first << ": " << (o.pass ? "PASS" : "FAIL") << " ["
                  << o.detail << "]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
