#pragma once

// Phase machine, alpha schedule, blending, plateau detection, the advantage
// gate and the training loop that ties every learner together.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spaars/cvae.hpp"
#include "spaars/envs.hpp"
#include "spaars/rl.hpp"

namespace spaars::curriculum {

enum class Variant : std::uint8_t { Schedule = 0, Gate = 1, LatentOnly = 2 };
enum class Phase : std::uint8_t { CvaePretrain = 0, LatentExploration = 1, Transition = 2, RawExploitation = 3, GateActive = 4 };
enum class Mode : std::uint8_t { Latent = 0, Raw = 1 };
enum class GateReason : std::uint8_t { Warmup = 0, MarginFail = 1, Disagreement = 2, Fired = 3 };

std::string to_string(Variant v);
std::string to_string(Phase p);
std::string to_string(Mode m);
std::string to_string(GateReason r);
Variant parse_variant(const std::string& s);

// ---------------------------------------------------------------- plateau

struct PlateauConfig {
    int window = 10;         ///< W, in episodes
    double tau = 0.01;       ///< relative-change threshold
    double ema_decay = 0.9;  ///< r_bar <- decay * r_bar + (1 - decay) * r_episode

    void validate() const;
};

struct PlateauTracker {
    PlateauConfig config;
    std::vector<double> ema_history;  ///< r_bar after each episode; index T-1 holds r_bar(T)

    double ema() const { return ema_history.empty() ? 0.0 : ema_history.back(); }
    int episodes() const { return static_cast<int>(ema_history.size()); }
};

/// Feed one episode's intrinsic reward; returns true iff the EMA's relative change over
/// the last W episodes is below tau. Never true before episode W + 1.
bool plateau_detect(PlateauTracker& tracker, double r_int_episode);

// ---------------------------------------------------------------- schedule and blend

/// clamp((step - t0) / ramp_steps, 0, 1)
double alpha_schedule(std::int64_t t0, std::int64_t ramp_steps, std::int64_t step);

/// (1 - alpha) a_z + alpha a_raw, clipped to bounds. Throws InputError for alpha outside [0, 1].
Eigen::VectorXd blend(const Eigen::VectorXd& a_z, const Eigen::VectorXd& a_raw, double alpha, const Bounds& bounds);

// ---------------------------------------------------------------- gate

struct GateConfig {
    double margin = 3.0;      ///< m
    double sigma_max = 10.0;  ///< disagreement threshold
    std::int64_t t_warm = -1; ///< lockout steps after GateActive entry; < 0 selects 2 W episodes of steps
    int commit = 1;           ///< H

    void validate() const;
};

struct GateDecision {
    Mode mode = Mode::Latent;
    GateReason reason = GateReason::Warmup;
    double q_raw_mean = 0.0;
    double q_z_mean = 0.0;
    double sigma_raw = 0.0;
};

/// Pure rule on precomputed ensemble statistics. `steps_in_gate` counts env steps since
/// GateActive entry. Warmup first, then the disagreement filter, then the margin.
GateDecision gate_decide(const rl::EnsembleStats& raw, const rl::EnsembleStats& latent, const GateConfig& config,
                         std::int64_t steps_in_gate, std::int64_t t_warm);

GateDecision gate_decide(const Eigen::VectorXd& s, const Eigen::VectorXd& a_z, const Eigen::VectorXd& a_raw,
                         const rl::CriticEnsemble& ens, const GateConfig& config, std::int64_t steps_in_gate,
                         std::int64_t t_warm);

/// Holds each fresh decision for H consecutive steps.
struct GateCommitment {
    int remaining = 0;
    GateDecision held;

    template <class Decide>
    GateDecision next(int commit, Decide&& decide) {
        if (remaining > 0) {
            --remaining;
            return held;
        }
        held = decide();
        remaining = commit - 1;
        return held;
    }
};

// ---------------------------------------------------------------- phase machine

struct CurriculumConfig {
    Variant variant = Variant::Schedule;
    double eps_bc = 0.05;
    double bc_ema_decay = 0.95;   ///< smoothing of batch L_BC fed to the exit test
    std::int64_t ramp_steps = -1; ///< < 0 selects 25% of the total budget
    PlateauConfig plateau;
    GateConfig gate;

    void validate() const;
};

struct CurriculumState {
    Phase phase = Phase::CvaePretrain;
    double alpha = 0.0;
    std::int64_t env_step = 0;
    std::int64_t phase_start = 0;  ///< env step at which the current phase began
    bool exit_met = false;         ///< Phase-1 exit condition has held once
    PlateauTracker plateau;
    bool plateaued = false;
    double l_bc = 0.0;             ///< smoothed L_BC
    bool have_l_bc = false;
    GateCommitment commitment;
};

struct PhaseSignals {
    bool plateaued = false;
    double l_bc = 0.0;
};

/// Applies one env step's worth of phase logic at state.env_step.
void phase_step(CurriculumState& state, const CurriculumConfig& config, std::int64_t ramp_steps,
                const PhaseSignals& signals);

// ---------------------------------------------------------------- training loop

struct TrainConfig {
    std::string env = "reach-1d";
    std::uint64_t seed = 0;
    std::int64_t total_steps = 20000;
    std::int64_t eval_interval = 1000;
    int eval_episodes = 10;
    int batch_size = 128;
    int replay_capacity = 100000;
    std::int64_t learning_starts = 256;  ///< env steps before any update
    double intrinsic_weight = 1.0;       ///< lambda during Phase 1
    cvae::CvaeTrainConfig cvae;
    rl::CriticConfig critic;
    rl::ActorConfig latent_actor;
    rl::ActorConfig raw_actor;
    rl::RndConfig rnd;
    CurriculumConfig curriculum;
    bool heatmaps = false;               ///< pointmaze gate runs: sweep the gate at every eval

    void validate() const;
    std::int64_t resolved_ramp_steps() const;
    std::int64_t resolved_t_warm(int horizon) const;
};

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct EvalPoint {
    std::int64_t step = 0;
    double eval_return = 0.0;
};

/// One heatmap snapshot: fired flag for each state on the fixed sweep grid.
struct GateSnapshot {
    std::int64_t step = 0;
    Eigen::MatrixXd states;  ///< state_dim x n
    std::vector<bool> fired;
};

struct TrainResult {
    std::vector<EvalPoint> evals;
    double final_eval_return = 0.0;
    std::vector<Phase> phases_seen;  ///< in order of first appearance
    std::int64_t phase1_exit_step = -1;
    std::vector<GateSnapshot> gate_snapshots;
};

class Trainer {
public:
    /// Validates config against the dataset and env, then runs Phase 0 unless `pretrained` is given.
    Trainer(const TrainConfig& config, const envs::OfflineDataset& dataset,
            std::optional<cvae::CvaeModel> pretrained = std::nullopt);

    void set_metrics(std::ostream* out) { metrics_ = out; }

    /// One env step, learner updates and phase logic.
    void step();
    /// Steps until env_step == total_steps (evaluating every eval_interval).
    TrainResult run();

    double evaluate(int episodes);
    /// Gate activation on the sweep grid with the current critic (warmup ignored).
    GateSnapshot gate_sweep(double margin, double sigma_max) const;
    /// Deterministic action the current phase would take at s (used by evaluation).
    Eigen::VectorXd policy_action(const Eigen::VectorXd& s, GateDecision* decision = nullptr) const;

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    const TrainConfig& config() const { return config_; }
    const CurriculumState& state() const { return state_; }
    const cvae::CvaeModel& model() const { return model_; }
    const rl::CriticEnsemble& critics() const { return critics_; }
    const rl::RawActor& raw_actor() const { return raw_actor_; }
    const rl::LatentActor& latent_actor() const { return latent_actor_; }
    const rl::ReplayBuffer& buffer() const { return buffer_; }
    const rl::RndPair& rnd() const { return rnd_; }
    /// Transitions gathered while the phase was LatentExploration.
    const rl::ReplayBuffer& phase1_buffer() const { return phase1_buffer_; }
    const TrainResult& result() const { return result_; }
    std::int64_t ramp_steps() const { return ramp_steps_; }
    std::int64_t t_warm() const { return t_warm_; }

private:
    void update_learners();
    void log_step(const GateDecision* gate, double r_ext, double r_int);
    void log_eval(double value);
    void note_phase();
    Eigen::MatrixXd sweep_grid() const;

    TrainConfig config_;
    std::unique_ptr<envs::Env> env_;
    cvae::CvaeModel model_;
    rl::CriticEnsemble critics_;
    rl::RawActor raw_actor_;
    rl::LatentActor latent_actor_;
    rl::RndPair rnd_;
    rl::ReplayBuffer buffer_;
    rl::ReplayBuffer phase1_buffer_;
    CurriculumState state_;
    nn::Rng rng_;
    Eigen::VectorXd obs_;
    double episode_r_int_ = 0.0;
    int episode_len_ = 0;
    double last_l_bc_ = 0.0;
    std::int64_t ramp_steps_ = 0;
    std::int64_t t_warm_ = 0;
    TrainResult result_;
    std::ostream* metrics_ = nullptr;
};

TrainResult run_training(const TrainConfig& config, const envs::OfflineDataset& dataset, std::ostream* metrics,
                         std::optional<cvae::CvaeModel> pretrained = std::nullopt);

/// Jaccard similarity of two fired sets over the same grid (1 when both are empty).
double jaccard(const std::vector<bool>& a, const std::vector<bool>& b);

}  // namespace spaars::curriculum
