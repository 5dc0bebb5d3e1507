#include "spaars/verify.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "spaars/error.hpp"
#include "spaars/oracle.hpp"

namespace spaars::verify {

namespace {

using json = nlohmann::ordered_json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

Eigen::VectorXd uniform_action(const Bounds& b, nn::Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd a(b.dim());
    for (int i = 0; i < b.dim(); ++i) a(i) = b.low(i) + (b.high(i) - b.low(i)) * u(rng);
    return a;
}

Eigen::MatrixXd uniform_actions(const Bounds& b, int n, nn::Rng& rng) {
    Eigen::MatrixXd A(b.dim(), n);
    for (int j = 0; j < n; ++j) A.col(j) = uniform_action(b, rng);
    return A;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw InputError("quantile of an empty sample");
    const auto idx = static_cast<std::size_t>(std::clamp(std::ceil(q * static_cast<double>(v.size())) - 1.0, 0.0,
                                                         static_cast<double>(v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
}

std::string alpha_tag(double a) {
    std::ostringstream os;
    os << a;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- reports

std::string to_string(Status s) {
    switch (s) {
        case Status::Pass: return "pass";
        case Status::Fail: return "fail";
        case Status::Inconclusive: return "inconclusive";
        case Status::Qualitative: return "qualitative";
        case Status::NotApplicable: return "not_applicable";
    }
    return "unknown";
}

Status BoundReport::status() const {
    if (has_override) return override_status;
    return pass() ? Status::Pass : Status::Fail;
}

std::string BoundReport::to_json() const {
    json j;
    j["name"] = name;
    j["status"] = to_string(status());
    j["pass"] = pass();
    j["measured"] = number(measured);
    j["bound"] = number(bound);
    j["tolerance"] = tolerance;
    j["slack"] = number(slack());
    json in = json::object();
    for (const auto& [k, v] : inputs) in[k] = number(v);
    j["inputs"] = in;
    json ex = json::object();
    for (const auto& [k, v] : extras) ex[k] = number(v);
    j["extras"] = ex;
    if (!note.empty()) j["note"] = note;
    return j.dump();
}

std::string summary_table(const std::vector<BoundReport>& reports) {
    std::size_t width = 4;
    for (const auto& r : reports) width = std::max(width, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "name" << "  " << std::setw(14) << "status"
       << std::setw(14) << "measured" << std::setw(14) << "bound" << std::setw(8) << "tol" << "\n";
    for (const auto& r : reports) {
        os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(14)
           << to_string(r.status()) << std::setw(14) << fmt(r.measured) << std::setw(14) << fmt(r.bound)
           << std::setw(8) << fmt(r.tolerance) << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------- bandit artifacts

double BanditArtifacts::q(const Eigen::VectorXd& a) const { return critic.q_all(state, a).col(0).mean(); }

BanditArtifacts make_bandit_artifacts(const BanditSetup& setup) {
    if (setup.critic_steps < 1 || setup.critic_batch < 1) throw ConfigError("bandit: critic steps and batch must be >= 1");
    BanditArtifacts art{envs::BanditQuadratic(setup.action_dim, setup.seed), {}, {}, {}, {}};
    art.state = art.env.reset();

    envs::BehaviorConfig bc;
    bc.noise = setup.noise;
    art.dataset = envs::generate_dataset(art.env, setup.behavior, setup.n_pairs, setup.seed, bc);

    cvae::CvaeTrainConfig cc = setup.cvae;
    cc.latent_dim = setup.latent_dim;
    const Bounds& bounds = art.env.spec().action_bounds;
    art.model = cvae::train_cvae(art.dataset, bounds, cc, setup.seed).model;

    // gamma = 0 and every step terminal: the critic regresses the reward directly.
    nn::Rng rng(setup.seed ^ 0xb4d17c0ffeeULL);
    rl::CriticConfig crit = setup.critic;
    crit.lr = setup.critic_lr;
    art.critic = rl::CriticEnsemble(art.env.spec().state_dim, setup.action_dim, crit, rng);
    const Eigen::MatrixXd S = art.state.replicate(1, setup.critic_batch);
    Eigen::VectorXd y(setup.critic_batch);
    for (int step = 0; step < setup.critic_steps; ++step) {
        const Eigen::MatrixXd A = uniform_actions(bounds, setup.critic_batch, rng);
        for (int j = 0; j < setup.critic_batch; ++j) y(j) = art.env.reward(A.col(j));
        art.critic.regress(S, A, y);
    }
    return art;
}

double critic_grid_mae(const BanditArtifacts& art, int res) {
    if (res < 2) throw ConfigError("critic_grid_mae: resolution must be >= 2");
    const Bounds& b = art.env.spec().action_bounds;
    const int d = b.dim();
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    double total = 0.0;
    long count = 0;
    Eigen::VectorXd a(d);
    while (true) {
        for (int i = 0; i < d; ++i)
            a(i) = b.low(i) + (b.high(i) - b.low(i)) * idx[static_cast<std::size_t>(i)] / (res - 1);
        total += std::abs(art.q(a) - art.q_star(a));
        ++count;
        int i = 0;
        while (i < d && ++idx[static_cast<std::size_t>(i)] == res) idx[static_cast<std::size_t>(i++)] = 0;
        if (i == d) break;
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------- variance reduction

namespace {

BoundReport variance_report(const std::string& name, const rl::ProbeResult& z, const rl::ProbeResult& a) {
    BoundReport r;
    r.name = name;
    r.inputs["k"] = z.dim;
    r.inputs["d"] = a.dim;
    r.inputs["n_samples"] = z.samples;
    r.extras = {{"var_grad_z", z.grad_variance}, {"var_grad_a", a.grad_variance}, {"var_q_z", z.q_variance},
                {"var_q_a", a.q_variance},       {"mean_q_z", z.q_mean},          {"mean_q_a", a.q_mean}};
    return r;
}

}  // namespace

BoundReport check_variance_reduction(const BanditArtifacts& art, const VarianceOptions& opt) {
    if (!(opt.sigma > 0.0)) throw ConfigError("variance: sigma must be positive");
    const cvae::CvaeModel& model = art.model;
    const int k = model.latent_dim();
    const int d = model.action_dim();
    const Eigen::VectorXd mu_z = model.prior(art.state).mean;
    const Eigen::VectorXd mu_a = model.decode(mu_z, art.state);
    const double log_sigma = std::log(opt.sigma);

    const nn::GaussianHead head_z(mu_z, Eigen::VectorXd::Constant(k, log_sigma));
    const nn::GaussianHead head_a(mu_a, Eigen::VectorXd::Constant(d, log_sigma));
    const rl::ScalarCritic q_z = [&](const Eigen::VectorXd& z) { return art.q(model.decode(z, art.state)); };
    const rl::ScalarCritic q_a = [&](const Eigen::VectorXd& a) { return art.q(a); };

    const rl::ProbeResult pz = rl::reinforce_variance_probe(q_z, head_z, rl::ProbeSpace::Latent, opt.n_samples, opt.seed);
    const rl::ProbeResult pa =
        rl::reinforce_variance_probe(q_a, head_a, rl::ProbeSpace::Raw, opt.n_samples, opt.seed + 1);

    BoundReport r = variance_report("variance_reduction", pz, pa);
    r.tolerance = 0.2;
    r.inputs["sigma"] = opt.sigma;
    constexpr double kTiny = 1e-12;
    if (pa.grad_variance < kTiny || pa.q_variance < kTiny) {
        r.measured = std::numeric_limits<double>::quiet_NaN();
        r.bound = std::numeric_limits<double>::quiet_NaN();
        r.set_status(Status::Inconclusive);
        r.note = "raw-space variance is numerically zero";
        return r;
    }
    r.measured = pz.grad_variance / pa.grad_variance;
    r.bound = static_cast<double>(k) / d * (pz.q_variance / pa.q_variance);
    // The estimator's variance is driven by E[Q^2], not Var[Q]; report the second-moment analogue too.
    const double m2z = pz.q_variance + pz.q_mean * pz.q_mean;
    const double m2a = pa.q_variance + pa.q_mean * pa.q_mean;
    r.extras.emplace_back("second_moment_bound", static_cast<double>(k) / d * (m2z / m2a));
    r.note = "plain score-function estimator; its variance scales with E[Q^2], see second_moment_bound";
    return r;
}

BoundReport check_variance_constant_control(int k, int d, const VarianceOptions& opt) {
    if (k < 1 || d < 1) throw ConfigError("variance control: dims must be >= 1");
    const double log_sigma = std::log(opt.sigma);
    const rl::ScalarCritic c = [](const Eigen::VectorXd&) { return 1.0; };
    const nn::GaussianHead hz(Eigen::VectorXd::Zero(k), Eigen::VectorXd::Constant(k, log_sigma));
    const nn::GaussianHead ha(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Constant(d, log_sigma));
    const auto pz = rl::reinforce_variance_probe(c, hz, rl::ProbeSpace::Latent, opt.n_samples, opt.seed);
    const auto pa = rl::reinforce_variance_probe(c, ha, rl::ProbeSpace::Raw, opt.n_samples, opt.seed + 1);
    BoundReport r = variance_report("variance_constant_critic", pz, pa);
    const double ratio = pz.grad_variance / pa.grad_variance;
    const double expected = static_cast<double>(k) / d;
    r.measured = std::abs(ratio / expected - 1.0);
    r.bound = 0.15;
    r.extras.emplace_back("ratio", ratio);
    r.extras.emplace_back("expected_ratio", expected);
    r.note = "measured is the relative error of the variance ratio against k/d";
    return r;
}

BoundReport check_variance_identity_control(int d, const VarianceOptions& opt) {
    if (d < 1) throw ConfigError("variance control: dim must be >= 1");
    const Eigen::VectorXd target = envs::BanditQuadratic::default_target(d);
    const rl::ScalarCritic q = [&](const Eigen::VectorXd& x) { return -(x - target).squaredNorm(); };
    const double log_sigma = std::log(opt.sigma);
    const nn::GaussianHead head(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Constant(d, log_sigma));
    const auto pz = rl::reinforce_variance_probe(q, head, rl::ProbeSpace::Latent, opt.n_samples, opt.seed);
    const auto pa = rl::reinforce_variance_probe(q, head, rl::ProbeSpace::Raw, opt.n_samples, opt.seed + 1);
    BoundReport r = variance_report("variance_identity_decoder", pz, pa);
    const double ratio = pz.grad_variance / pa.grad_variance;
    const double bound_ratio = pz.q_variance / pa.q_variance;
    r.measured = std::abs(ratio - 1.0);
    r.bound = 0.2;
    r.extras.emplace_back("ratio", ratio);
    r.extras.emplace_back("bound_ratio", bound_ratio);
    r.note = "measured is |Var_z / Var_a - 1| with k = d and Dec = identity";
    return r;
}

// ---------------------------------------------------------------- exploitation gap

BoundReport check_exploitation_gap(const envs::BanditQuadratic& env, const cvae::CvaeModel& model,
                                   const envs::OfflineDataset& dataset, const GapOptions& opt) {
    if (!(opt.gamma >= 0.0 && opt.gamma < 1.0)) throw ConfigError("gap: gamma must lie in [0, 1)");
    const oracle::Optima o = oracle::brute_force_optima(env, model, opt.grid_resolution, opt.gamma);
    const cvae::ReconstructionError rec = cvae::reconstruction_error(model, dataset);
    const double lq = env.lipschitz();
    const double horizon = 1.0 / (1.0 - opt.gamma);

    BoundReport r;
    r.name = "exploitation_gap[" + dataset.meta.behavior + "]";
    r.measured = o.gap();
    r.bound = lq * rec.sup * horizon;
    r.inputs = {{"L_Q", lq}, {"eps_rec", rec.rms}, {"eps_rec_sup", rec.sup}, {"gamma", opt.gamma},
                {"grid_resolution", opt.grid_resolution}};

    double nearest = std::numeric_limits<double>::infinity();
    for (int j = 0; j < dataset.size(); ++j)
        nearest = std::min(nearest, (dataset.actions.col(j) - env.target()).norm());
    const bool covered = nearest <= opt.coverage_radius;
    r.extras = {{"j_raw", o.j_raw},
                {"j_latent", o.j_latent},
                {"gap", o.gap()},
                {"nearest_action_to_optimum", nearest},
                {"coverage_bound", covered ? lq * rec.rms * horizon : std::numeric_limits<double>::quiet_NaN()}};
    if (!covered) r.note = "coverage bound not applicable: no logged action within " + fmt(opt.coverage_radius) + " of a*";
    return r;
}

BoundReport check_exploitation_gap_reach(const cvae::CvaeModel& model, const envs::OfflineDataset& dataset,
                                         int grid_resolution) {
    const envs::Reach1d env(0, false);
    const double gamma = env.spec().gamma;
    const oracle::Optima o = oracle::brute_force_optima(env, model, grid_resolution, gamma);
    const cvae::ReconstructionError rec = cvae::reconstruction_error(model, dataset);
    // |dQ*/da| <= step_scale (1 + gamma / (1 - gamma)): the reward and every later value are 1-Lipschitz in s'.
    const double lq = envs::Reach1d::kStepScale / (1.0 - gamma);
    BoundReport r;
    r.name = "exploitation_gap[reach-1d]";
    r.measured = o.gap();
    r.bound = lq * rec.sup / (1.0 - gamma);
    r.inputs = {{"L_Q", lq}, {"eps_rec", rec.rms}, {"eps_rec_sup", rec.sup}, {"gamma", gamma},
                {"grid_resolution", grid_resolution}};
    r.extras = {{"j_raw", o.j_raw}, {"j_latent", o.j_latent}, {"gap", o.gap()}, {"tightness", o.gap() / r.bound}};
    r.note = "multi-step bound carries the 1/(1-gamma) horizon factor and is loose by design";
    return r;
}

// ---------------------------------------------------------------- calibration stability

BoundReport check_calibration_stability(const BanditArtifacts& art, const CalibrationOptions& opt) {
    if (opt.alphas.empty()) throw ConfigError("calibration: empty alpha grid");
    if (opt.calibration_samples < 1 || opt.holdout_samples < 1) throw ConfigError("calibration: sample counts must be >= 1");
    if (!(opt.delta > 0.0 && opt.delta < 1.0)) throw ConfigError("calibration: delta must lie in (0, 1)");
    const cvae::CvaeModel& model = art.model;
    const Bounds& bounds = art.env.spec().action_bounds;
    const nn::GaussianHead prior = model.prior(art.state);
    const double lq = art.env.lipschitz();
    nn::Rng rng(opt.seed ^ 0xca11b4a7eULL);

    auto on_manifold = [&]() {
        return model.decode(prior.sample(nn::standard_normal(model.latent_dim(), rng)), art.state);
    };
    std::vector<double> errors;
    errors.reserve(static_cast<std::size_t>(opt.calibration_samples));
    for (int i = 0; i < opt.calibration_samples; ++i) {
        const Eigen::VectorXd a = on_manifold();
        errors.push_back(std::abs(art.q(a) - art.q_star(a)));
    }
    const double eps_m = quantile(errors, 1.0 - opt.delta);

    std::vector<long> violations(opt.alphas.size(), 0);
    long total_violations = 0;
    for (int i = 0; i < opt.holdout_samples; ++i) {
        const Eigen::VectorXd a_z = on_manifold();
        const Eigen::VectorXd a_r = uniform_action(bounds, rng);
        const double dist = (a_r - a_z).norm();
        for (std::size_t j = 0; j < opt.alphas.size(); ++j) {
            const double alpha = opt.alphas[j];
            const Eigen::VectorXd a = curriculum::blend(a_z, a_r, alpha, bounds);
            if (!(std::abs(art.q(a) - art.q_star(a)) <= eps_m + lq * alpha * dist)) {
                ++violations[j];
                ++total_violations;
            }
        }
    }
    const double n = static_cast<double>(opt.holdout_samples);
    BoundReport r;
    r.name = "calibration_stability";
    r.measured = static_cast<double>(total_violations) / (n * static_cast<double>(opt.alphas.size()));
    r.bound = opt.delta + opt.slack;
    r.inputs = {{"L_Q", lq}, {"eps_M", eps_m}, {"delta", opt.delta}, {"slack", opt.slack}};
    r.extras.emplace_back("pass_rate", 1.0 - r.measured);
    for (std::size_t j = 0; j < opt.alphas.size(); ++j)
        r.extras.emplace_back("violation_rate[alpha=" + alpha_tag(opt.alphas[j]) + "]",
                              static_cast<double>(violations[j]) / n);
    r.note = "measured is the holdout violation rate; a_r drawn uniformly from the action box";
    return r;
}

// ---------------------------------------------------------------- transition smoothness

std::vector<BoundReport> check_transition_smoothness(const Eigen::MatrixXd& states, const Eigen::MatrixXd& latent_actions,
                                                     const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& raw_policy,
                                                     const Bounds& bounds, const std::vector<double>& alphas) {
    if (states.cols() == 0) throw InputError("smoothness: empty buffer");
    if (states.cols() != latent_actions.cols()) throw InputError("smoothness: state/action count mismatch");
    const Eigen::MatrixXd raw = raw_policy(states);
    if (raw.rows() != latent_actions.rows() || raw.cols() != latent_actions.cols())
        throw InputError("smoothness: raw policy output has the wrong shape");
    const double n = static_cast<double>(states.cols());
    const double eps_bc = (raw - latent_actions).colwise().squaredNorm().sum() / n;

    std::vector<BoundReport> out;
    for (const double alpha : alphas) {
        double total = 0.0;
        for (Eigen::Index j = 0; j < states.cols(); ++j) {
            const Eigen::VectorXd a_z = latent_actions.col(j);
            total += (curriculum::blend(a_z, raw.col(j), alpha, bounds) - a_z).norm();
        }
        BoundReport r;
        r.name = "transition_smoothness[alpha=" + alpha_tag(alpha) + "]";
        r.measured = total / n;
        r.bound = alpha * std::sqrt(eps_bc);
        r.tolerance = 0.1;
        r.inputs = {{"eps_BC", eps_bc}, {"alpha", alpha}, {"buffer_size", n}};
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------- tabular gate MDP

namespace {

constexpr int kCellShift[TabularMdp::kActions] = {-2, -1, 0, 1, 2};

}  // namespace

int TabularMdp::next(int s, int a) const {
    if (s < 0 || s >= kStates || a < 0 || a >= kActions) throw InputError("tabular mdp: index out of range");
    return std::clamp(s + kCellShift[a], 0, kStates - 1);
}

double TabularMdp::reward(int s, int a) const {
    return -std::abs(state_value(next(s, a)) - state_value(goal));
}

int TabularMdp::raw_action(int s) const { return s < goal ? 4 : (s > goal ? 0 : 2); }

int TabularMdp::latent_action(int s) const { return s < goal ? 3 : (s > goal ? 1 : 2); }

Eigen::VectorXd TabularMdp::evaluate(const std::vector<int>& policy) const {
    if (static_cast<int>(policy.size()) != kStates) throw InputError("tabular mdp: policy must cover every state");
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(kStates, kStates);
    Eigen::VectorXd r(kStates);
    for (int s = 0; s < kStates; ++s) {
        const int a = policy[static_cast<std::size_t>(s)];
        r(s) = reward(s, a);
        m(s, next(s, a)) -= gamma;
    }
    return m.partialPivLu().solve(r);
}

double TabularMdp::objective(const std::vector<int>& policy) const { return evaluate(policy).mean(); }

Eigen::MatrixXd TabularMdp::option_q_star() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(kStates);
    Eigen::MatrixXd q(kStates, 2);
    for (int iter = 0; iter < 10000; ++iter) {
        for (int s = 0; s < kStates; ++s) {
            const int ar = raw_action(s);
            const int az = latent_action(s);
            q(s, 0) = reward(s, ar) + gamma * v(next(s, ar));
            q(s, 1) = reward(s, az) + gamma * v(next(s, az));
        }
        const Eigen::VectorXd nv = q.rowwise().maxCoeff();
        const double change = (nv - v).cwiseAbs().maxCoeff();
        v = nv;
        if (change < 1e-13) break;
    }
    return q;
}

std::vector<BoundReport> check_gate_regret(const TabularMdp& mdp, const RegretOptions& opt) {
    if (opt.noise_seeds < 1) throw ConfigError("regret: noise_seeds must be >= 1");
    const int n = TabularMdp::kStates;
    const Eigen::MatrixXd q_star = mdp.option_q_star();

    curriculum::GateConfig gate;
    gate.margin = 0.0;
    gate.sigma_max = std::numeric_limits<double>::infinity();
    auto gate_policy = [&](const Eigen::MatrixXd& q) {
        std::vector<int> pol(static_cast<std::size_t>(n));
        for (int s = 0; s < n; ++s) {
            const curriculum::GateDecision d =
                curriculum::gate_decide(rl::EnsembleStats{q(s, 0), 0.0}, rl::EnsembleStats{q(s, 1), 0.0}, gate, 0, 0);
            pol[static_cast<std::size_t>(s)] = d.mode == curriculum::Mode::Raw ? mdp.raw_action(s) : mdp.latent_action(s);
        }
        return pol;
    };
    const double j_oracle = mdp.objective(gate_policy(q_star));

    std::vector<BoundReport> out;
    for (std::size_t e = 0; e < opt.eps_q.size(); ++e) {
        const double eps = opt.eps_q[e];
        if (!(eps >= 0.0)) throw ConfigError("regret: eps_Q must be >= 0");
        nn::Rng rng(opt.seed + 7919 * (e + 1));
        std::uniform_real_distribution<double> u(-eps, eps);
        double total = 0.0;
        double worst = 0.0;
        for (int k = 0; k < opt.noise_seeds; ++k) {
            Eigen::MatrixXd q = q_star;
            for (int s = 0; s < n; ++s) {
                const bool tie = q_star(s, 0) == q_star(s, 1);
                const double n0 = eps > 0.0 ? u(rng) : 0.0;
                const double n1 = eps > 0.0 ? u(rng) : 0.0;
                if (opt.ties_only && !tie) continue;
                q(s, 0) += n0;
                q(s, 1) += n1;
            }
            const double regret = j_oracle - mdp.objective(gate_policy(q));
            total += regret;
            worst = std::max(worst, regret);
        }
        BoundReport r;
        r.name = std::string(opt.ties_only ? "gate_regret_ties" : "gate_regret") + "[eps=" + alpha_tag(eps) + "]";
        r.measured = total / opt.noise_seeds;
        r.bound = eps / (1.0 - mdp.gamma);
        r.tolerance = opt.tolerance;
        r.inputs = {{"eps_Q", eps}, {"gamma", mdp.gamma}, {"m", 0.0}, {"sigma_max", gate.sigma_max},
                    {"noise_seeds", opt.noise_seeds}};
        r.extras = {{"j_oracle", j_oracle}, {"max_regret", worst}, {"per_state_gap_bound", 2.0 * eps / (1.0 - mdp.gamma)}};
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------- gate convergence

BoundReport check_gate_convergence(const std::vector<curriculum::GateSnapshot>& snapshots) {
    BoundReport r;
    r.name = "gate_convergence";
    if (snapshots.size() < 2) {
        r.measured = std::numeric_limits<double>::quiet_NaN();
        r.bound = 0.2;
        r.set_status(Status::NotApplicable);
        r.note = "needs at least two gate snapshots";
        return r;
    }
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        const auto& f = snapshots[i].fired;
        const auto size = static_cast<double>(std::count(f.begin(), f.end(), true));
        r.extras.emplace_back("s_raw_size[step=" + std::to_string(snapshots[i].step) + "]", size);
        if (i > 0)
            r.extras.emplace_back("jaccard[step=" + std::to_string(snapshots[i].step) + "]",
                                  curriculum::jaccard(snapshots[i - 1].fired, f));
    }
    const double last = curriculum::jaccard(snapshots[snapshots.size() - 2].fired, snapshots.back().fired);
    r.measured = 1.0 - last;
    r.bound = 0.2;
    r.extras.emplace_back("jaccard_final", last);
    r.set_status(Status::Qualitative);
    r.note = "descriptive: measured is 1 - Jaccard of the final two activation sets (reference 0.8 similarity)";
    return r;
}

void write_heatmap_csv(const std::string& path, const curriculum::GateSnapshot& snap) {
    if (snap.states.rows() < 2) throw InputError("heatmap: states need at least two coordinates");
    if (static_cast<std::size_t>(snap.states.cols()) != snap.fired.size()) throw InputError("heatmap: size mismatch");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << std::setprecision(17) << "x,y,fired\n";
    for (Eigen::Index j = 0; j < snap.states.cols(); ++j)
        out << snap.states(0, j) << ',' << snap.states(1, j) << ',' << (snap.fired[static_cast<std::size_t>(j)] ? 1 : 0)
            << '\n';
}

curriculum::GateSnapshot read_heatmap_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "x,y,fired") throw InputError(path + ": expected header x,y,fired");
    std::vector<double> xs, ys;
    curriculum::GateSnapshot snap;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string a, b, c;
        if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
            throw InputError(path + ": malformed row '" + line + "'");
        try {
            xs.push_back(std::stod(a));
            ys.push_back(std::stod(b));
        } catch (const std::exception&) {
            throw InputError(path + ": malformed row '" + line + "'");
        }
        if (c != "0" && c != "1") throw InputError(path + ": fired must be 0 or 1");
        snap.fired.push_back(c == "1");
    }
    snap.states.resize(2, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t j = 0; j < xs.size(); ++j) {
        snap.states(0, static_cast<Eigen::Index>(j)) = xs[j];
        snap.states(1, static_cast<Eigen::Index>(j)) = ys[j];
    }
    return snap;
}

// ---------------------------------------------------------------- suites

std::vector<std::string> suite_names() {
    return {"variance", "gap", "calibration", "smoothness", "regret", "convergence", "all"};
}

curriculum::Trainer phase1_reach_run(std::uint64_t seed, std::int64_t steps) {
    auto env = envs::make_env("reach-1d", seed);
    const envs::OfflineDataset ds = envs::generate_dataset(*env, envs::Behavior::Medium, 5000, seed);
    curriculum::TrainConfig cfg;
    cfg.env = "reach-1d";
    cfg.seed = seed;
    cfg.total_steps = steps;
    cfg.eval_interval = steps;
    cfg.cvae.epochs = 30;
    cfg.cvae.batch_size = 64;
    cfg.curriculum.variant = curriculum::Variant::LatentOnly;
    cfg.curriculum.plateau.window = 5;
    curriculum::Trainer trainer(cfg, ds);
    trainer.run();
    return trainer;
}

namespace {

BanditSetup default_bandit(envs::Behavior behavior, std::uint64_t seed) {
    BanditSetup s;
    s.behavior = behavior;
    s.seed = seed;
    return s;
}

std::vector<curriculum::GateSnapshot> load_snapshots(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<curriculum::GateSnapshot> snaps;
    if (dir.empty() || !fs::is_directory(dir)) return snaps;
    const std::regex pattern(R"(heatmap_(\d+)\.csv)");
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (!std::regex_match(name, m, pattern)) continue;
        curriculum::GateSnapshot s = read_heatmap_csv(entry.path().string());
        s.step = std::stoll(m[1].str());
        snaps.push_back(std::move(s));
    }
    std::sort(snaps.begin(), snaps.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    return snaps;
}

}  // namespace

std::vector<BoundReport> run_suite(const std::string& name, const SuiteOptions& opt) {
    const auto names = suite_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) throw ConfigError("unknown verify suite '" + name + "'");
    const bool all = name == "all";
    std::vector<BoundReport> out;
    std::optional<BanditArtifacts> expert;
    auto expert_artifacts = [&]() -> const BanditArtifacts& {
        if (!expert) expert = make_bandit_artifacts(default_bandit(envs::Behavior::ExpertNoisy, opt.seed));
        return *expert;
    };

    if (all || name == "variance") {
        VarianceOptions vo;
        vo.n_samples = opt.variance_samples;
        vo.seed = opt.seed;
        out.push_back(check_variance_reduction(expert_artifacts(), vo));
        out.push_back(check_variance_constant_control(1, 4, vo));
        out.push_back(check_variance_identity_control(4, vo));
    }
    if (all || name == "gap") {
        const GapOptions go;
        const BanditArtifacts& ex = expert_artifacts();
        out.push_back(check_exploitation_gap(ex.env, ex.model, ex.dataset, go));
        BanditSetup ms = default_bandit(envs::Behavior::Medium, opt.seed);
        ms.critic_steps = 1;
        const BanditArtifacts med = make_bandit_artifacts(ms);
        out.push_back(check_exploitation_gap(med.env, med.model, med.dataset, go));

        auto env = envs::make_env("reach-1d", opt.seed);
        const envs::OfflineDataset ds = envs::generate_dataset(*env, envs::Behavior::Medium, 5000, opt.seed);
        cvae::CvaeTrainConfig cc;
        cc.epochs = 30;
        cc.batch_size = 64;
        const cvae::CvaeModel model = cvae::train_cvae(ds, env->spec().action_bounds, cc, opt.seed).model;
        out.push_back(check_exploitation_gap_reach(model, ds, 101));
    }
    if (all || name == "calibration") {
        CalibrationOptions co;
        co.seed = opt.seed;
        out.push_back(check_calibration_stability(expert_artifacts(), co));
    }
    if (all || name == "smoothness") {
        const curriculum::Trainer t = phase1_reach_run(opt.seed, 3000);
        const rl::Batch b = t.phase1_buffer().all();
        auto reps = check_transition_smoothness(
            b.S, b.A, [&](const Eigen::MatrixXd& S) { return t.raw_actor().mean_action(S); },
            t.model().bounds(), {0.0, 0.25, 0.5, 0.75, 1.0});
        out.insert(out.end(), reps.begin(), reps.end());
    }
    if (all || name == "regret") {
        const TabularMdp mdp;
        RegretOptions ro;
        ro.seed = opt.seed;
        auto reps = check_gate_regret(mdp, ro);
        out.insert(out.end(), reps.begin(), reps.end());
        ro.ties_only = true;
        ro.eps_q = {0.2};
        reps = check_gate_regret(mdp, ro);
        for (auto& r : reps) {
            r.bound = 0.0;  // tie perturbations must not change the policy at all
            r.tolerance = 0.0;
        }
        out.insert(out.end(), reps.begin(), reps.end());
    }
    if (all || name == "convergence") out.push_back(check_gate_convergence(load_snapshots(opt.run_dir)));
    return out;
}

}  // namespace spaars::verify
