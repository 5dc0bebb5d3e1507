#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spaars/bounds.hpp"
#include "spaars/io.hpp"

namespace spaars::envs {

using Rng = std::mt19937_64;

enum class RewardKind { SparseGoal, QuadraticBandit, Shaped };

struct EnvSpec {
    std::string name;
    int state_dim = 0;
    int action_dim = 0;
    Bounds action_bounds;
    double gamma = 0.99;
    int horizon = 1;
    RewardKind reward_kind = RewardKind::Shaped;

    void validate() const;
};

struct StepResult {
    Eigen::VectorXd state;
    double reward = 0.0;
    bool terminal = false;   ///< true environment termination (no bootstrap)
    bool truncated = false;  ///< horizon reached
};

/// Reset/step contract. Dynamics are deterministic; the only randomness is
/// reset placement, drawn from an internal generator seeded by make_env.
class Env {
public:
    virtual ~Env() = default;

    virtual const EnvSpec& spec() const = 0;
    virtual Eigen::VectorXd reset() = 0;
    virtual StepResult step(const Eigen::VectorXd& action) = 0;
    virtual std::unique_ptr<Env> clone() const = 0;

    /// Pure transition function used by oracles and tests.
    virtual StepResult transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const = 0;

    const Eigen::VectorXd& state() const { return state_; }
    int elapsed() const { return elapsed_; }

    void save(io::Writer& w) const;
    void load(io::Reader& r);

protected:
    StepResult advance(const Eigen::VectorXd& action);

    Eigen::VectorXd state_;
    int elapsed_ = 0;
    Rng reset_rng_;
};

/// Single state, horizon 1, reward -||a - a*||^2.
class BanditQuadratic final : public Env {
public:
    BanditQuadratic(int action_dim, std::uint64_t seed);

    const EnvSpec& spec() const override { return spec_; }
    Eigen::VectorXd reset() override;
    StepResult step(const Eigen::VectorXd& action) override { return advance(action); }
    std::unique_ptr<Env> clone() const override { return std::make_unique<BanditQuadratic>(*this); }
    StepResult transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const override;

    const Eigen::VectorXd& target() const { return target_; }
    double reward(const Eigen::VectorXd& action) const;
    /// 2 * max_{a in bounds} ||a - a*||, the action-Lipschitz constant of the reward.
    double lipschitz() const;

    static Eigen::VectorXd default_target(int action_dim);

private:
    EnvSpec spec_;
    Eigen::VectorXd target_;
};

/// s' = clip(s + step_scale * a, -1, 1), reward -|s' - goal|.
class Reach1d final : public Env {
public:
    static constexpr double kGoal = 0.5;
    static constexpr double kStart = -0.5;
    static constexpr double kStartJitter = 0.1;
    static constexpr double kStepScale = 0.1;

    Reach1d(std::uint64_t seed, bool random_start = true);

    const EnvSpec& spec() const override { return spec_; }
    Eigen::VectorXd reset() override;
    StepResult step(const Eigen::VectorXd& action) override { return advance(action); }
    std::unique_ptr<Env> clone() const override { return std::make_unique<Reach1d>(*this); }
    StepResult transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const override;

private:
    EnvSpec spec_;
    bool random_start_;
};

/// Point mass in a fixed 5x5-cell maze. State (x, y, vx, vy); walls block motion
/// per axis; reward 1 and termination inside the goal radius.
class PointMaze final : public Env {
public:
    static constexpr int kSize = 5;
    static constexpr double kDrag = 0.7;
    static constexpr double kForceGain = 0.3;
    static constexpr double kDt = 0.25;
    static constexpr double kGoalRadius = 0.5;

    explicit PointMaze(std::uint64_t seed);

    const EnvSpec& spec() const override { return spec_; }
    Eigen::VectorXd reset() override;
    StepResult step(const Eigen::VectorXd& action) override { return advance(action); }
    std::unique_ptr<Env> clone() const override { return std::make_unique<PointMaze>(*this); }
    StepResult transition(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const override;

    /// Cell (col, row) is a wall; out-of-grid cells count as walls.
    static bool is_wall(int col, int row);
    static bool position_free(double x, double y);
    static Eigen::Vector2d goal();
    static Eigen::Vector2d start();
    /// Center of the next cell on a shortest cell path from (x, y) to the goal.
    static Eigen::Vector2d next_waypoint(double x, double y);

private:
    EnvSpec spec_;
};

std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed);
std::vector<std::string> env_names();

enum class Behavior { ExpertNoisy, Medium, RandomSafe };

Behavior parse_behavior(const std::string& tag);
std::string to_string(Behavior b);

struct BehaviorConfig {
    double noise = 0.1;         ///< Gaussian action noise sigma_beta
    double medium_scale = 0.6;  ///< medium caps magnitude at this fraction of the expert
};

/// Scripted behavioral policy action at `state` (clipped to bounds).
Eigen::VectorXd behavior_action(const Env& env, Behavior behavior, const Eigen::VectorXd& state, Rng& rng,
                                const BehaviorConfig& config = {});

struct DatasetMeta {
    std::string env;
    std::string behavior;
    double noise = 0.0;
    std::uint64_t seed = 0;
    bool shuffled = false;
};

/// Unordered (s, a) pairs, one per column.
struct OfflineDataset {
    Eigen::MatrixXd states;
    Eigen::MatrixXd actions;
    Eigen::VectorXd rewards;  ///< optional; empty when absent
    DatasetMeta meta;

    int size() const { return static_cast<int>(states.cols()); }
    int state_dim() const { return static_cast<int>(states.rows()); }
    int action_dim() const { return static_cast<int>(actions.rows()); }
    bool empty() const { return states.cols() == 0; }
};

OfflineDataset generate_dataset(Env& env, Behavior behavior, int n_pairs, std::uint64_t seed,
                                const BehaviorConfig& config = {});

/// Throws ConfigError when dims disagree with the spec.
void validate_dataset(const OfflineDataset& ds, const EnvSpec& spec);

void save_dataset(const std::string& path, const OfflineDataset& ds);
OfflineDataset load_dataset(const std::string& path);

/// Mean undiscounted return of the behavior policy over `episodes` episodes.
double behavior_return(const std::string& env_name, Behavior behavior, int episodes, std::uint64_t seed,
                       const BehaviorConfig& config = {});

}  // namespace spaars::envs
