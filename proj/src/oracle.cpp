#include "spaars/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "spaars/error.hpp"

namespace spaars::oracle {

namespace {

constexpr double kMaxLatticePoints = 2e7;
constexpr int kStateGrid = 401;

// Every point of a `res`^dim lattice over [low, high], one column each.
Eigen::MatrixXd lattice(const Eigen::VectorXd& low, const Eigen::VectorXd& high, int res) {
    const int dim = static_cast<int>(low.size());
    if (std::pow(static_cast<double>(res), dim) > kMaxLatticePoints)
        throw UnsupportedError("oracle: grid of " + std::to_string(res) + "^" + std::to_string(dim) +
                               " points is too large");
    Eigen::Index total = 1;
    for (int i = 0; i < dim; ++i) total *= res;
    Eigen::MatrixXd pts(dim, total);
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    for (Eigen::Index c = 0; c < total; ++c) {
        for (int i = 0; i < dim; ++i)
            pts(i, c) = low[i] + (high[i] - low[i]) * idx[static_cast<std::size_t>(i)] / (res - 1);
        for (int i = 0; i < dim; ++i) {
            if (++idx[static_cast<std::size_t>(i)] < res) break;
            idx[static_cast<std::size_t>(i)] = 0;
        }
    }
    return pts;
}

void check_resolution(int res) {
    if (res < 50) throw ConfigError("oracle: grid_resolution must be >= 50 per dimension");
}

void check_env(const envs::Env& env) {
    const auto& spec = env.spec();
    if (spec.horizon > kMaxHorizon)
        throw UnsupportedError("oracle: horizon " + std::to_string(spec.horizon) + " exceeds exhaustive cap");
}

struct Best {
    double value = -std::numeric_limits<double>::infinity();
    Eigen::Index index = -1;
};

// Single-step: best reward over the action columns at state s.
Best best_reward(const envs::Env& env, const Eigen::VectorXd& s, const Eigen::MatrixXd& actions) {
    Best b;
    for (Eigen::Index c = 0; c < actions.cols(); ++c) {
        const double r = env.transition(s, actions.col(c)).reward;
        if (r > b.value) {
            b.value = r;
            b.index = c;
        }
    }
    return b;
}

Eigen::MatrixXd latent_box_grid(const cvae::CvaeModel& model, const Eigen::VectorXd& s, int res) {
    const nn::GaussianHead p = model.prior(s);
    const Eigen::VectorXd sd = p.stddev();
    return lattice(p.mean - 3.0 * sd, p.mean + 3.0 * sd, res);
}

Eigen::MatrixXd repeat_state(const Eigen::VectorXd& s, Eigen::Index n) { return s.replicate(1, n); }

// Finite-horizon DP for 1-D states in [-1, 1]. `actions_at(i)` gives the candidate
// actions at state grid point i. Returns the value at `start` and the argmax index there.
template <class ActionsAt>
Best dp_1d(const envs::Env& env, double gamma, double start, ActionsAt actions_at) {
    const int n = kStateGrid;
    const double h = 2.0 / (n - 1);
    auto grid_state = [&](int i) { return -1.0 + h * i; };
    auto interp = [&](const Eigen::VectorXd& v, double s) {
        const double x = std::clamp((s + 1.0) / h, 0.0, static_cast<double>(n - 1));
        const int i = std::min(static_cast<int>(x), n - 2);
        const double w = x - i;
        return (1.0 - w) * v[i] + w * v[i + 1];
    };

    std::vector<Eigen::VectorXd> rewards(n), next(n);
    std::vector<std::vector<char>> terminal(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::MatrixXd acts = actions_at(i);
        rewards[i].resize(acts.cols());
        next[i].resize(acts.cols());
        terminal[i].assign(static_cast<std::size_t>(acts.cols()), 0);
        const Eigen::VectorXd s = Eigen::VectorXd::Constant(1, grid_state(i));
        for (Eigen::Index c = 0; c < acts.cols(); ++c) {
            const envs::StepResult r = env.transition(s, acts.col(c));
            rewards[i][c] = r.reward;
            next[i][c] = r.state[0];
            terminal[i][static_cast<std::size_t>(c)] = r.terminal ? 1 : 0;
        }
    }

    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int t = env.spec().horizon - 1; t >= 1; --t) {
        Eigen::VectorXd nv(n);
        for (int i = 0; i < n; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < rewards[i].size(); ++c) {
                const double boot = terminal[i][static_cast<std::size_t>(c)] ? 0.0 : gamma * interp(v, next[i][c]);
                best = std::max(best, rewards[i][c] + boot);
            }
            nv[i] = best;
        }
        v = nv;
    }

    // First step evaluated exactly from the start state.
    const Eigen::VectorXd s0 = Eigen::VectorXd::Constant(1, start);
    const double x = (start + 1.0) / h;
    const int i0 = static_cast<int>(std::lround(x));
    const Eigen::MatrixXd acts = actions_at(i0);
    Best b;
    for (Eigen::Index c = 0; c < acts.cols(); ++c) {
        const envs::StepResult r = env.transition(s0, acts.col(c));
        const double q = r.reward + (r.terminal ? 0.0 : gamma * interp(v, r.state[0]));
        if (q > b.value) {
            b.value = q;
            b.index = c;
        }
    }
    return b;
}

bool is_reach(const envs::Env& env) { return dynamic_cast<const envs::Reach1d*>(&env) != nullptr; }
bool is_bandit(const envs::Env& env) { return dynamic_cast<const envs::BanditQuadratic*>(&env) != nullptr; }

}  // namespace

double brute_force_raw(const envs::Env& env, int grid_resolution, double gamma, Eigen::VectorXd* a_star) {
    check_resolution(grid_resolution);
    check_env(env);
    const auto& spec = env.spec();
    if (gamma < 0.0) gamma = spec.gamma;
    const Eigen::MatrixXd actions = lattice(spec.action_bounds.low, spec.action_bounds.high, grid_resolution);
    Best b;
    if (is_bandit(env)) {
        b = best_reward(env, Eigen::VectorXd::Zero(spec.state_dim), actions);
    } else if (is_reach(env)) {
        b = dp_1d(env, gamma, envs::Reach1d::kStart, [&](int) { return actions; });
    } else {
        throw UnsupportedError("oracle: environment '" + spec.name + "' is not supported");
    }
    if (a_star) *a_star = actions.col(b.index);
    return b.value;
}

Optima brute_force_optima(const envs::Env& env, const cvae::CvaeModel& model, int grid_resolution, double gamma) {
    check_resolution(grid_resolution);
    check_env(env);
    const auto& spec = env.spec();
    if (model.action_dim() != spec.action_dim || model.state_dim() != spec.state_dim)
        throw ConfigError("oracle: model dims do not match environment");
    if (gamma < 0.0) gamma = spec.gamma;

    Optima out;
    out.j_raw = brute_force_raw(env, grid_resolution, gamma, &out.a_star);

    if (is_bandit(env)) {
        const Eigen::VectorXd s = Eigen::VectorXd::Zero(spec.state_dim);
        const Eigen::MatrixXd Z = latent_box_grid(model, s, grid_resolution);
        const Eigen::MatrixXd A = model.decode_batch(Z, repeat_state(s, Z.cols()));
        const Best b = best_reward(env, s, A);
        out.j_latent = b.value;
        out.z_star = Z.col(b.index);
    } else {
        const double h = 2.0 / (kStateGrid - 1);
        std::vector<Eigen::MatrixXd> zs(kStateGrid), as(kStateGrid);
        for (int i = 0; i < kStateGrid; ++i) {
            const Eigen::VectorXd s = Eigen::VectorXd::Constant(1, -1.0 + h * i);
            zs[i] = latent_box_grid(model, s, grid_resolution);
            as[i] = model.decode_batch(zs[i], repeat_state(s, zs[i].cols()));
        }
        const Best b = dp_1d(env, gamma, envs::Reach1d::kStart, [&](int i) { return as[i]; });
        out.j_latent = b.value;
        const int i0 = static_cast<int>(std::lround((envs::Reach1d::kStart + 1.0) / h));
        out.z_star = zs[i0].col(b.index);
    }
    return out;
}

}  // namespace spaars::oracle
