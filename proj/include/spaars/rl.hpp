#pragma once

// SAC learners for the latent and raw policies, the shared critic ensemble,
// replay storage and RND novelty. Batches are column-major like everything in nn.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "spaars/bounds.hpp"
#include "spaars/cvae.hpp"
#include "spaars/io.hpp"
#include "spaars/nn.hpp"

namespace spaars::rl {

enum class Source : std::uint8_t { Latent = 0, Raw = 1, Blend = 2, Dataset = 3 };

std::string to_string(Source s);

struct Transition {
    Eigen::VectorXd s;
    Eigen::VectorXd a;
    Eigen::VectorXd z;  ///< latent that produced the action; empty for raw-only actions
    double r_ext = 0.0;
    double r_int = 0.0;
    Eigen::VectorXd s_next;
    bool done = false;  ///< true termination (bootstrap off)
    Source source = Source::Latent;
};

struct Batch {
    Eigen::MatrixXd S;
    Eigen::MatrixXd A;
    Eigen::MatrixXd Z;  ///< zero-filled columns where a transition had no latent
    Eigen::VectorXd r_ext;
    Eigen::VectorXd r_int;
    Eigen::MatrixXd S_next;
    Eigen::VectorXd done;  ///< 1.0 for terminal transitions

    int size() const { return static_cast<int>(S.cols()); }
};

/// Fixed-capacity FIFO ring.
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(int capacity, int state_dim, int action_dim, int latent_dim);

    void push(const Transition& t);
    int size() const { return size_; }
    int capacity() const { return capacity_; }
    bool empty() const { return size_ == 0; }

    /// i-th oldest stored transition.
    const Transition& at(int i) const;

    /// Uniform sample with replacement.
    Batch sample(int n, nn::Rng& rng) const;
    /// Every stored transition, oldest first.
    Batch all() const;
    /// The most recent `n` transitions (or all of them), oldest first.
    Batch recent(int n) const;

    void save(io::Writer& w) const;
    void load(io::Reader& r);

private:
    Batch gather(const std::vector<int>& slots) const;

    int capacity_ = 0;
    int state_dim_ = 0;
    int action_dim_ = 0;
    int latent_dim_ = 0;
    int cursor_ = 0;
    int size_ = 0;
    std::vector<Transition> ring_;
};

struct CriticConfig {
    int members = 4;      ///< K
    int min_subset = 2;   ///< target members minimized over
    int hidden = 64;
    double lr = 3e-4;
    double polyak = 0.995;  ///< rho in target = rho * target + (1 - rho) * online

    void validate() const;
};

/// Q values and dQ/da for a batch of (s, a) columns.
struct ActionValue {
    Eigen::VectorXd q;
    Eigen::MatrixXd dq_da;
};

struct EnsembleStats {
    double mean = 0.0;
    double std = 0.0;  ///< population std over members
};

/// a' and log pi(a'|s') for every next state; supplied by whichever policy is acting.
using NextActionFn = std::function<void(const Eigen::MatrixXd& S_next, Eigen::MatrixXd& A_next,
                                        Eigen::VectorXd& logp_next)>;

struct CriticUpdateConfig {
    double gamma = 0.99;
    double intrinsic_weight = 0.0;  ///< lambda on r_int
    double entropy_alpha = 0.0;     ///< temperature of the acting policy in the soft target
};

struct CriticLosses {
    std::vector<double> member_loss;
    double mean_target = 0.0;
};

class CriticEnsemble {
public:
    CriticEnsemble() = default;
    CriticEnsemble(int state_dim, int action_dim, const CriticConfig& config, nn::Rng& rng);

    int size() const { return static_cast<int>(members_.size()); }
    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    const CriticConfig& config() const { return config_; }

    /// K x B matrix of online Q values.
    Eigen::MatrixXd q_all(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const;
    Eigen::MatrixXd q_all_target(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const;
    /// Q value and action gradient of one online member.
    ActionValue member_value(int k, const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const;
    /// Element-wise min over two distinct random online members with the matching gradient.
    ActionValue min_pair(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A, nn::Rng& rng) const;

    /// y = r_ext + lambda r_int + gamma (1 - done) (min_subset Q_targ(s', a') - alpha log pi(a'|s')).
    Eigen::VectorXd td_targets(const Batch& batch, const NextActionFn& next_action,
                               const CriticUpdateConfig& config, nn::Rng& rng) const;

    /// One regression step of every member toward shared targets (no polyak).
    std::vector<double> regress(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A, const Eigen::VectorXd& targets);
    void polyak_update();

    nn::Mlp& member(int k) { return members_.at(static_cast<std::size_t>(k)); }
    const nn::Mlp& member(int k) const { return members_.at(static_cast<std::size_t>(k)); }
    const nn::Mlp& target(int k) const { return targets_.at(static_cast<std::size_t>(k)); }
    nn::Mlp& target(int k) { return targets_.at(static_cast<std::size_t>(k)); }

    void save(io::Writer& w, std::ostream& out) const;
    void load(io::Reader& r, std::istream& in);

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    CriticConfig config_;
    std::vector<nn::Mlp> members_;
    std::vector<nn::Mlp> targets_;
    std::vector<nn::AdamState> opts_;
};

/// TD targets from the target members, regression of every member, then polyak.
CriticLosses critic_update(CriticEnsemble& ens, const Batch& batch, const NextActionFn& next_action,
                           const CriticUpdateConfig& config, nn::Rng& rng);

EnsembleStats ensemble_stats(const CriticEnsemble& ens, const Eigen::VectorXd& s, const Eigen::VectorXd& a);

struct ActorConfig {
    int hidden = 64;
    double lr = 3e-4;
    double alpha_lr = 3e-4;
    double init_alpha = 0.1;
    bool auto_alpha = true;  ///< tune toward target entropy -n
    double target_entropy = 0.0;  ///< 0 selects -n

    void validate() const;
};

struct ActorLoss {
    double loss = 0.0;
    double log_prob = 0.0;  ///< batch mean
    double alpha = 0.0;
};

/// Common tanh-squashed Gaussian policy machinery: s -> (mean, log_std) over R^n.
class SquashedGaussianActor {
public:
    int state_dim() const { return net_.input_dim(); }
    int out_dim() const { return net_.output_dim() / 2; }
    double alpha() const { return std::exp(log_alpha_); }
    void set_alpha(double a);
    double target_entropy() const { return target_entropy_; }
    bool auto_alpha() const { return config_.auto_alpha; }

    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }

    /// Pre-squash means and clamped log-stds.
    void heads(const Eigen::MatrixXd& S, Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) const;

    void save(io::Writer& w, std::ostream& out) const;
    void load(io::Reader& r, std::istream& in);

protected:
    SquashedGaussianActor() = default;
    SquashedGaussianActor(int state_dim, int out_dim, const ActorConfig& config, nn::Rng& rng);

    // Shared SAC step. `grad_u` receives tanh(u) and returns dQ/du (n x B) plus Q per column.
    using QGradFn = std::function<void(const Eigen::MatrixXd& S, const Eigen::MatrixXd& U, Eigen::VectorXd& q,
                                       Eigen::MatrixXd& dq_du)>;
    ActorLoss sac_step(const Eigen::MatrixXd& S, const QGradFn& q_grad, const Eigen::MatrixXd& log_jacobian_scale,
                       nn::Rng& rng);

    ActorConfig config_;
    nn::Mlp net_;
    nn::AdamState opt_;
    double log_alpha_ = 0.0;
    double target_entropy_ = 0.0;
    nn::ScalarAdam alpha_opt_;
};

/// pi_raw: a = center + half * tanh(u), u ~ N(mean(s), std(s)).
class RawActor : public SquashedGaussianActor {
public:
    RawActor() = default;
    RawActor(int state_dim, const Bounds& bounds, const ActorConfig& config, nn::Rng& rng);

    const Bounds& bounds() const { return bounds_; }
    int action_dim() const { return out_dim(); }

    /// Deterministic action center + half * tanh(mean).
    Eigen::MatrixXd mean_action(const Eigen::MatrixXd& S) const;
    Eigen::VectorXd mean_action(const Eigen::VectorXd& s) const;
    /// Stochastic action with log-probability (change of variables through the squash).
    void sample(const Eigen::MatrixXd& S, nn::Rng& rng, Eigen::MatrixXd& A, Eigen::VectorXd& logp) const;

    void save(io::Writer& w, std::ostream& out) const;
    void load(io::Reader& r, std::istream& in);

    friend ActorLoss raw_actor_sac_update(RawActor&, const CriticEnsemble&, const Batch&, nn::Rng&);
    friend double raw_actor_bc_update(RawActor&, const Batch&);

private:
    Bounds bounds_;
};

/// pi_z: z = prior_mean(s) + 3 prior_std(s) tanh(u), u ~ N(mean(s), std(s)), action Dec(z, s).
class LatentActor : public SquashedGaussianActor {
public:
    static constexpr double kPriorBox = 3.0;

    LatentActor() = default;
    LatentActor(int state_dim, int latent_dim, const ActorConfig& config, nn::Rng& rng);

    int latent_dim() const { return out_dim(); }

    /// z from pre-squash U together with d z / d u (element-wise).
    void latent_from_u(const cvae::CvaeModel& model, const Eigen::MatrixXd& S, const Eigen::MatrixXd& U,
                       Eigen::MatrixXd& Z, Eigen::MatrixXd& dz_du) const;
    Eigen::MatrixXd mean_latent(const cvae::CvaeModel& model, const Eigen::MatrixXd& S) const;
    Eigen::VectorXd mean_latent(const cvae::CvaeModel& model, const Eigen::VectorXd& s) const;
    void sample(const cvae::CvaeModel& model, const Eigen::MatrixXd& S, nn::Rng& rng, Eigen::MatrixXd& Z,
                Eigen::VectorXd& logp) const;

    void save(io::Writer& w, std::ostream& out) const;
    void load(io::Reader& r, std::istream& in);

    friend ActorLoss latent_actor_update(LatentActor&, const cvae::CvaeModel&, const CriticEnsemble&, const Batch&,
                                         nn::Rng&);
};

/// Mean squared error between pi_raw's mean action and the batch actions, then one step
/// on that loss. Returns the loss before the step.
double raw_actor_bc_update(RawActor& actor, const Batch& batch);
double raw_actor_bc_loss(const RawActor& actor, const Batch& batch);

ActorLoss raw_actor_sac_update(RawActor& actor, const CriticEnsemble& ens, const Batch& batch, nn::Rng& rng);

/// SAC in z-space; the critic gradient reaches the actor as J_Dec^T dQ/da via the frozen decoder.
/// Throws InvariantError if the model is not frozen or changes during the update.
ActorLoss latent_actor_update(LatentActor& actor, const cvae::CvaeModel& model, const CriticEnsemble& ens,
                              const Batch& batch, nn::Rng& rng);

struct RndConfig {
    int hidden = 32;
    int embed = 16;
    double lr = 1e-3;
    double clip = 5.0;  ///< normalized-input clip

    void validate() const;
};

/// Random network distillation over (s, z).
class RndPair {
public:
    RndPair() = default;
    RndPair(int input_dim, const RndConfig& config, nn::Rng& rng);

    int input_dim() const { return target_.input_dim(); }

    /// Normalized prediction error, >= 0.
    double intrinsic(const Eigen::VectorXd& s, const Eigen::VectorXd& z) const;
    Eigen::VectorXd intrinsic_batch(const Eigen::MatrixXd& X) const;
    /// Update running input stats, error scale and predictor. Returns mean predictor loss.
    double update(const Eigen::MatrixXd& S, const Eigen::MatrixXd& Z);

    const nn::Mlp& target() const { return target_; }
    const nn::Mlp& predictor() const { return predictor_; }
    /// For tests: make the predictor an exact copy of the target.
    void copy_target_into_predictor() { predictor_ = target_; }

    void save(io::Writer& w, std::ostream& out) const;
    void load(io::Reader& r, std::istream& in);

private:
    Eigen::MatrixXd normalize(const Eigen::MatrixXd& X) const;
    Eigen::VectorXd raw_error(const Eigen::MatrixXd& Xn) const;

    RndConfig config_;
    nn::Mlp target_;
    nn::Mlp predictor_;
    nn::AdamState opt_;
    // Running input statistics (parallel Welford merge).
    double in_count_ = 0.0;
    Eigen::VectorXd in_mean_;
    Eigen::VectorXd in_m2_;
    // Running statistics of raw errors seen in updates.
    double err_count_ = 0.0;
    double err_mean_ = 0.0;
    double err_m2_ = 0.0;
};

enum class ProbeSpace { Latent, Raw };

struct ProbeResult {
    double grad_variance = 0.0;  ///< trace of the covariance of the score-function estimator
    double q_variance = 0.0;     ///< Var[Q] under the sampling distribution
    double q_mean = 0.0;
    int dim = 0;
    int samples = 0;
};

using ScalarCritic = std::function<double(const Eigen::VectorXd& x)>;

/// REINFORCE estimator g = Q(x) (x - mu) / sigma^2 for x ~ N(mu, sigma^2 I) with theta = mu.
ProbeResult reinforce_variance_probe(const ScalarCritic& critic, const nn::GaussianHead& head, ProbeSpace space,
                                     int n_samples, std::uint64_t seed);

}  // namespace spaars::rl
