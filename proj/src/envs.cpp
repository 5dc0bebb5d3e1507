#include "spaars/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include "json.hpp"

#include "spaars/error.hpp"

namespace spaars::envs {

void EnvSpec::validate() const {
    if (state_dim <= 0 || action_dim <= 0) throw ConfigError("env spec: dims must be positive");
    if (action_bounds.dim() != action_dim) throw ConfigError("env spec: bounds dim != action dim");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("env spec: gamma must lie in (0, 1)");
    if (horizon <= 0) throw ConfigError("env spec: horizon must be positive");
}

StepResult Env::advance(const Eigen::VectorXd& action) {
    if (action.size() != spec().action_dim) throw ConfigError("env step: action dimension mismatch");
    StepResult r = transition(state_, action);
    ++elapsed_;
    state_ = r.state;
    r.truncated = !r.terminal && elapsed_ >= spec().horizon;
    return r;
}

void Env::save(io::Writer& w) const {
    w.put_vector(state_);
    w.put<std::int32_t>(elapsed_);
    w.put_rng(reset_rng_);
}

void Env::load(io::Reader& r) {
    state_ = r.get_vector();
    elapsed_ = r.get<std::int32_t>();
    r.get_rng(reset_rng_);
    if (state_.size() != spec().state_dim) throw ConfigError("env checkpoint: state dimension mismatch");
}

// ---------------------------------------------------------------- bandit

Eigen::VectorXd BanditQuadratic::default_target(int action_dim) {
    // Multiples of 0.2 so the optimum sits on 51- and 101-point grids over [-1, 1].
    static constexpr std::array<double, 6> pattern{0.6, -0.4, 0.2, -0.6, 0.4, -0.2};
    Eigen::VectorXd t(action_dim);
    for (int i = 0; i < action_dim; ++i) t[i] = pattern[static_cast<std::size_t>(i) % pattern.size()];
    return t;
}

BanditQuadratic::BanditQuadratic(int action_dim, std::uint64_t seed) : target_(default_target(action_dim)) {
    spec_.name = "bandit-quadratic";
    spec_.state_dim = 1;
    spec_.action_dim = action_dim;
    spec_.action_bounds = Bounds::symmetric(action_dim, 1.0);
    spec_.gamma = 0.99;
    spec_.horizon = 1;
    spec_.reward_kind = RewardKind::QuadraticBandit;
    spec_.validate();
    reset_rng_.seed(seed);
    state_ = Eigen::VectorXd::Zero(1);
}

Eigen::VectorXd BanditQuadratic::reset() {
    state_ = Eigen::VectorXd::Zero(1);
    elapsed_ = 0;
    return state_;
}

double BanditQuadratic::reward(const Eigen::VectorXd& action) const {
    return -(spec_.action_bounds.clip(action) - target_).squaredNorm();
}

double BanditQuadratic::lipschitz() const {
    const auto& b = spec_.action_bounds;
    const Eigen::VectorXd far = (b.high - target_).cwiseAbs().cwiseMax((b.low - target_).cwiseAbs());
    return 2.0 * far.norm();
}

StepResult BanditQuadratic::transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    if (action.size() != spec_.action_dim) throw ConfigError("bandit: action dimension mismatch");
    return StepResult{state, reward(action), true, false};
}

// ---------------------------------------------------------------- reach-1d

Reach1d::Reach1d(std::uint64_t seed, bool random_start) : random_start_(random_start) {
    spec_.name = "reach-1d";
    spec_.state_dim = 1;
    spec_.action_dim = 1;
    spec_.action_bounds = Bounds::symmetric(1, 1.0);
    spec_.gamma = 0.9;
    spec_.horizon = 25;
    spec_.reward_kind = RewardKind::Shaped;
    spec_.validate();
    reset_rng_.seed(seed);
    state_ = Eigen::VectorXd::Constant(1, kStart);
}

Eigen::VectorXd Reach1d::reset() {
    double s0 = kStart;
    if (random_start_) {
        std::uniform_real_distribution<double> u(-kStartJitter, kStartJitter);
        s0 += u(reset_rng_);
    }
    state_ = Eigen::VectorXd::Constant(1, s0);
    elapsed_ = 0;
    return state_;
}

StepResult Reach1d::transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    if (action.size() != 1 || state.size() != 1) throw ConfigError("reach-1d: dimension mismatch");
    const double a = std::clamp(action[0], -1.0, 1.0);
    const double next = std::clamp(state[0] + kStepScale * a, -1.0, 1.0);
    return StepResult{Eigen::VectorXd::Constant(1, next), -std::abs(next - kGoal), false, false};
}

// ---------------------------------------------------------------- point maze

namespace {

// Row strings from top (row 4) to bottom (row 0).
constexpr std::array<const char*, PointMaze::kSize> kLayout{
    "...#G",
    ".#.#.",
    ".#...",
    ".###.",
    ".....",
};

char cell_at(int col, int row) { return kLayout[static_cast<std::size_t>(PointMaze::kSize - 1 - row)][col]; }

}  // namespace

PointMaze::PointMaze(std::uint64_t seed) {
    spec_.name = "pointmaze-sparse";
    spec_.state_dim = 4;
    spec_.action_dim = 2;
    spec_.action_bounds = Bounds::symmetric(2, 1.0);
    spec_.gamma = 0.99;
    spec_.horizon = 150;
    spec_.reward_kind = RewardKind::SparseGoal;
    spec_.validate();
    reset_rng_.seed(seed);
    state_ = Eigen::Vector4d(start().x(), start().y(), 0.0, 0.0);
}

bool PointMaze::is_wall(int col, int row) {
    if (col < 0 || row < 0 || col >= kSize || row >= kSize) return true;
    return cell_at(col, row) == '#';
}

bool PointMaze::position_free(double x, double y) {
    if (!(x >= 0.0 && y >= 0.0 && x < kSize && y < kSize)) return false;
    return !is_wall(static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)));
}

Eigen::Vector2d PointMaze::goal() {
    for (int row = 0; row < kSize; ++row)
        for (int col = 0; col < kSize; ++col)
            if (cell_at(col, row) == 'G') return {col + 0.5, row + 0.5};
    return {kSize - 0.5, kSize - 0.5};
}

Eigen::Vector2d PointMaze::start() { return {0.5, 0.5}; }

Eigen::Vector2d PointMaze::next_waypoint(double x, double y) {
    const Eigen::Vector2d g = goal();
    const int gc = static_cast<int>(g.x());
    const int gr = static_cast<int>(g.y());
    const int c0 = std::clamp(static_cast<int>(std::floor(x)), 0, kSize - 1);
    const int r0 = std::clamp(static_cast<int>(std::floor(y)), 0, kSize - 1);
    if (c0 == gc && r0 == gr) return g;
    // BFS from the goal so each cell knows its successor toward it.
    std::array<int, kSize * kSize> dist;
    dist.fill(-1);
    std::queue<std::pair<int, int>> q;
    dist[gr * kSize + gc] = 0;
    q.emplace(gc, gr);
    constexpr std::array<std::pair<int, int>, 4> moves{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    while (!q.empty()) {
        auto [c, r] = q.front();
        q.pop();
        for (auto [dc, dr] : moves) {
            const int nc = c + dc, nr = r + dr;
            if (is_wall(nc, nr) || dist[nr * kSize + nc] >= 0) continue;
            dist[nr * kSize + nc] = dist[r * kSize + c] + 1;
            q.emplace(nc, nr);
        }
    }
    Eigen::Vector2d best(c0 + 0.5, r0 + 0.5);
    int best_d = dist[r0 * kSize + c0] < 0 ? 1 << 20 : dist[r0 * kSize + c0];
    for (auto [dc, dr] : moves) {
        const int nc = c0 + dc, nr = r0 + dr;
        if (is_wall(nc, nr)) continue;
        const int d = dist[nr * kSize + nc];
        if (d >= 0 && d < best_d) {
            best_d = d;
            best = {nc + 0.5, nr + 0.5};
        }
    }
    return best;
}

Eigen::VectorXd PointMaze::reset() {
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    const double dx = u(reset_rng_);
    const double dy = u(reset_rng_);
    state_ = Eigen::Vector4d(start().x() + dx, start().y() + dy, 0.0, 0.0);
    elapsed_ = 0;
    return state_;
}

StepResult PointMaze::transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    if (action.size() != 2 || state.size() != 4) throw ConfigError("pointmaze: dimension mismatch");
    const Eigen::Vector2d a = spec_.action_bounds.clip(action);
    double x = state[0], y = state[1];
    double vx = kDrag * state[2] + kForceGain * a[0];
    double vy = kDrag * state[3] + kForceGain * a[1];
    // Axis-separated moves: a blocked axis keeps its coordinate and loses its velocity.
    if (position_free(x + kDt * vx, y)) {
        x += kDt * vx;
    } else {
        vx = 0.0;
    }
    if (position_free(x, y + kDt * vy)) {
        y += kDt * vy;
    } else {
        vy = 0.0;
    }
    StepResult r;
    r.state = Eigen::Vector4d(x, y, vx, vy);
    const bool at_goal = (Eigen::Vector2d(x, y) - goal()).norm() < kGoalRadius;
    r.reward = at_goal ? 1.0 : 0.0;
    r.terminal = at_goal;
    return r;
}

// ---------------------------------------------------------------- factory

std::vector<std::string> env_names() { return {"bandit-quadratic", "pointmaze-sparse", "reach-1d"}; }

std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed) {
    if (name == "bandit-quadratic") return std::make_unique<BanditQuadratic>(4, seed);
    if (name.rfind("bandit-quadratic-", 0) == 0) {
        // bandit-quadratic-<d> selects the action dimension.
        const std::string suffix = name.substr(std::string("bandit-quadratic-").size());
        int d = 0;
        try {
            d = std::stoi(suffix);
        } catch (const std::exception&) {
            throw ConfigError("unknown environment: " + name);
        }
        if (d < 1 || d > 16) throw ConfigError("bandit action dimension must be in [1, 16]");
        return std::make_unique<BanditQuadratic>(d, seed);
    }
    if (name == "pointmaze-sparse") return std::make_unique<PointMaze>(seed);
    if (name == "reach-1d") return std::make_unique<Reach1d>(seed);
    throw ConfigError("unknown environment: " + name);
}

// ---------------------------------------------------------------- behavior

Behavior parse_behavior(const std::string& tag) {
    if (tag == "expert_noisy") return Behavior::ExpertNoisy;
    if (tag == "medium") return Behavior::Medium;
    if (tag == "random_safe") return Behavior::RandomSafe;
    throw InputError("unknown behavior tag: " + tag);
}

std::string to_string(Behavior b) {
    switch (b) {
        case Behavior::ExpertNoisy: return "expert_noisy";
        case Behavior::Medium: return "medium";
        case Behavior::RandomSafe: return "random_safe";
    }
    return "?";
}

namespace {

Eigen::VectorXd expert_clean(const Env& env, const Eigen::VectorXd& s) {
    const auto& name = env.spec().name;
    if (auto* bandit = dynamic_cast<const BanditQuadratic*>(&env)) return bandit->target();
    if (name == "reach-1d") {
        const double a = std::clamp((Reach1d::kGoal - s[0]) / Reach1d::kStepScale, -1.0, 1.0);
        return Eigen::VectorXd::Constant(1, a);
    }
    if (name == "pointmaze-sparse") {
        const Eigen::Vector2d w = PointMaze::next_waypoint(s[0], s[1]);
        const Eigen::Vector2d p(s[0], s[1]);
        const Eigen::Vector2d v(s[2], s[3]);
        const Eigen::Vector2d a = (3.0 * (w - p) - 2.0 * v).cwiseMax(-1.0).cwiseMin(1.0);
        return a;
    }
    throw ConfigError("no scripted behavior for environment " + name);
}

}  // namespace

Eigen::VectorXd behavior_action(const Env& env, Behavior behavior, const Eigen::VectorXd& state, Rng& rng,
                                const BehaviorConfig& config) {
    const auto& bounds = env.spec().action_bounds;
    const int d = env.spec().action_dim;
    if (behavior == Behavior::RandomSafe) {
        Eigen::VectorXd a(d);
        for (int i = 0; i < d; ++i) {
            std::uniform_real_distribution<double> u(bounds.low[i], bounds.high[i]);
            a[i] = u(rng);
        }
        return a;
    }
    Eigen::VectorXd a = expert_clean(env, state);
    if (behavior == Behavior::Medium) a *= config.medium_scale;
    std::normal_distribution<double> noise(0.0, config.noise);
    for (int i = 0; i < d; ++i) a[i] += noise(rng);
    return bounds.clip(a);
}

OfflineDataset generate_dataset(Env& env, Behavior behavior, int n_pairs, std::uint64_t seed,
                                const BehaviorConfig& config) {
    if (n_pairs <= 0) throw InputError("generate_dataset: n_pairs must be positive");
    const auto& spec = env.spec();
    Rng rng(seed);
    std::vector<Eigen::VectorXd> states, actions;
    std::vector<double> rewards;
    states.reserve(static_cast<std::size_t>(n_pairs));
    Eigen::VectorXd s = env.reset();
    while (static_cast<int>(states.size()) < n_pairs) {
        Eigen::VectorXd a = behavior_action(env, behavior, s, rng, config);
        StepResult r = env.step(a);
        states.push_back(s);
        actions.push_back(a);
        rewards.push_back(r.reward);
        s = (r.terminal || r.truncated) ? env.reset() : r.state;
    }
    std::vector<int> order(static_cast<std::size_t>(n_pairs));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    OfflineDataset ds;
    ds.states.resize(spec.state_dim, n_pairs);
    ds.actions.resize(spec.action_dim, n_pairs);
    ds.rewards.resize(n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        const auto src = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        ds.states.col(i) = states[src];
        ds.actions.col(i) = actions[src];
        ds.rewards[i] = rewards[src];
    }
    ds.meta = DatasetMeta{spec.name, to_string(behavior),
                          behavior == Behavior::RandomSafe ? 0.0 : config.noise, seed, true};
    return ds;
}

void validate_dataset(const OfflineDataset& ds, const EnvSpec& spec) {
    if (ds.empty()) throw InputError("dataset is empty");
    if (ds.state_dim() != spec.state_dim)
        throw ConfigError("dataset state dim " + std::to_string(ds.state_dim()) + " != env state dim " +
                          std::to_string(spec.state_dim));
    if (ds.action_dim() != spec.action_dim)
        throw ConfigError("dataset action dim " + std::to_string(ds.action_dim()) + " != env action dim " +
                          std::to_string(spec.action_dim));
    if (ds.actions.cols() != ds.states.cols()) throw ConfigError("dataset state/action row counts differ");
}

// ---------------------------------------------------------------- dataset file

namespace {

constexpr const char* kDatasetMagic = "# spaars-dataset v1";

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void save_dataset(const std::string& path, const OfflineDataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    const bool has_rewards = ds.rewards.size() == ds.size() && ds.size() > 0;
    nlohmann::ordered_json meta;
    meta["env"] = ds.meta.env;
    meta["behavior"] = ds.meta.behavior;
    meta["noise"] = ds.meta.noise;
    meta["seed"] = ds.meta.seed;
    meta["shuffled"] = ds.meta.shuffled;
    meta["state_dim"] = ds.state_dim();
    meta["action_dim"] = ds.action_dim();
    meta["rows"] = ds.size();
    meta["has_rewards"] = has_rewards;
    out << kDatasetMagic << '\n' << meta.dump() << '\n';
    for (int i = 0; i < ds.state_dim(); ++i) out << (i ? "," : "") << "s" << i;
    for (int i = 0; i < ds.action_dim(); ++i) out << ",a" << i;
    if (has_rewards) out << ",r";
    out << '\n';
    for (int row = 0; row < ds.size(); ++row) {
        for (int i = 0; i < ds.state_dim(); ++i) out << (i ? "," : "") << fmt_double(ds.states(i, row));
        for (int i = 0; i < ds.action_dim(); ++i) out << ',' << fmt_double(ds.actions(i, row));
        if (has_rewards) out << ',' << fmt_double(ds.rewards[row]);
        out << '\n';
    }
    if (!out) throw ConfigError("failed writing " + path);
}

OfflineDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset " + path);
    std::string line;
    if (!std::getline(in, line) || line != kDatasetMagic) throw ConfigError(path + ": not a spaars dataset");
    if (!std::getline(in, line)) throw ConfigError(path + ": missing metadata header");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": bad metadata header: " + e.what());
    }
    OfflineDataset ds;
    int sd = 0, ad = 0, rows = 0;
    bool has_rewards = false;
    try {
        ds.meta.env = meta.at("env").get<std::string>();
        ds.meta.behavior = meta.at("behavior").get<std::string>();
        ds.meta.noise = meta.at("noise").get<double>();
        ds.meta.seed = meta.at("seed").get<std::uint64_t>();
        ds.meta.shuffled = meta.at("shuffled").get<bool>();
        sd = meta.at("state_dim").get<int>();
        ad = meta.at("action_dim").get<int>();
        rows = meta.at("rows").get<int>();
        has_rewards = meta.at("has_rewards").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": incomplete metadata: " + e.what());
    }
    if (sd <= 0 || ad <= 0 || rows < 0) throw ConfigError(path + ": invalid dims in metadata");
    std::getline(in, line);  // column names
    ds.states.resize(sd, rows);
    ds.actions.resize(ad, rows);
    if (has_rewards) ds.rewards.resize(rows);
    const int width = sd + ad + (has_rewards ? 1 : 0);
    for (int row = 0; row < rows; ++row) {
        if (!std::getline(in, line)) throw ConfigError(path + ": fewer rows than declared");
        std::istringstream ls(line);
        std::string field;
        int col = 0;
        while (std::getline(ls, field, ',')) {
            if (col >= width) throw ConfigError(path + ": too many columns at row " + std::to_string(row));
            double v = 0.0;
            try {
                v = std::stod(field);
            } catch (const std::exception&) {
                throw ConfigError(path + ": bad number at row " + std::to_string(row));
            }
            if (col < sd)
                ds.states(col, row) = v;
            else if (col < sd + ad)
                ds.actions(col - sd, row) = v;
            else
                ds.rewards[row] = v;
            ++col;
        }
        if (col != width) throw ConfigError(path + ": wrong column count at row " + std::to_string(row));
    }
    return ds;
}

double behavior_return(const std::string& env_name, Behavior behavior, int episodes, std::uint64_t seed,
                       const BehaviorConfig& config) {
    auto env = make_env(env_name, seed);
    Rng rng(seed + 17);
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        Eigen::VectorXd s = env->reset();
        double ret = 0.0;
        for (;;) {
            StepResult r = env->step(behavior_action(*env, behavior, s, rng, config));
            ret += r.reward;
            if (r.terminal || r.truncated) break;
            s = r.state;
        }
        total += ret;
    }
    return total / episodes;
}

}  // namespace spaars::envs
