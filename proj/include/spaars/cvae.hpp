#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "spaars/bounds.hpp"
#include "spaars/envs.hpp"
#include "spaars/nn.hpp"

namespace spaars::cvae {

struct CvaeTrainConfig {
    double beta_max = 0.1;          ///< final KL weight, must be <= 1
    std::int64_t anneal_steps = 2000;  ///< gradient steps to ramp beta from 0 to beta_max
    double free_bits = 0.25;        ///< nats per latent dimension before the KL penalty applies
    int batch_size = 128;
    int epochs = 60;
    bool use_mean_batchnorm = true;
    int latent_dim = 0;             ///< 0 selects ceil(d / 2), min 1
    int hidden = 32;
    double lr = 1e-3;
    double batchnorm_momentum = 0.05;

    void validate() const;
};

/// beta after `step` gradient updates: linear 0 -> beta_max, flat afterwards.
double beta_at(const CvaeTrainConfig& config, std::int64_t step);

/// Running statistics normalizing encoder means.
struct MeanNorm {
    bool enabled = false;
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    static constexpr double kEps = 1e-3;

    Eigen::VectorXd scale() const { return (var.array() + kEps).rsqrt(); }
};

/// Encoder q(z|s,a), decoder Dec(z,s) (tanh-squashed into the action bounds)
/// and learned prior p(z|s). Once frozen, downstream modules may only read it.
class CvaeModel {
public:
    CvaeModel() = default;
    CvaeModel(int state_dim, int action_dim, int latent_dim, Bounds bounds, int hidden, nn::Rng& rng);

    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    int latent_dim() const { return latent_dim_; }
    const Bounds& bounds() const { return bounds_; }

    nn::GaussianHead encode(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const;
    Eigen::VectorXd decode(const Eigen::VectorXd& z, const Eigen::VectorXd& s) const;
    nn::GaussianHead prior(const Eigen::VectorXd& s) const;

    /// Encoder posterior means for column batches (normalized when enabled).
    Eigen::MatrixXd encode_mean_batch(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const;
    Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& S) const;
    /// Prior means and log-stds, k x B each.
    void prior_batch(const Eigen::MatrixXd& S, Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) const;

    /// Vector-Jacobian product through the decoder: returns (dDec/dz)^T * dA
    /// for every column. Also returns the decoded actions.
    Eigen::MatrixXd decode_vjp(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& S, const Eigen::MatrixXd& dA,
                               Eigen::MatrixXd* decoded = nullptr) const;

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }
    /// Hash over every parameter byte; used to detect mutation of a frozen model.
    std::uint64_t fingerprint() const;

    nn::Mlp& encoder() { return encoder_; }
    nn::Mlp& decoder() { return decoder_; }
    nn::Mlp& prior_net() { return prior_; }
    const nn::Mlp& encoder() const { return encoder_; }
    const nn::Mlp& decoder() const { return decoder_; }
    const nn::Mlp& prior_net() const { return prior_; }
    MeanNorm& mean_norm() { return mean_norm_; }
    const MeanNorm& mean_norm() const { return mean_norm_; }

    void save(std::ostream& out) const;
    static CvaeModel load(std::istream& in);
    void save_file(const std::string& path) const;
    static CvaeModel load_file(const std::string& path);

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    int latent_dim_ = 0;
    Bounds bounds_;
    nn::Mlp encoder_;
    nn::Mlp decoder_;
    nn::Mlp prior_;
    MeanNorm mean_norm_;
    bool frozen_ = false;
};

struct EpochMetrics {
    int epoch = 0;
    double reconstruction = 0.0;  ///< mean ||a - Dec(z, s)||^2 with sampled z
    double kl = 0.0;              ///< mean total KL(q || prior) before free bits
    double beta = 0.0;
    double loss = 0.0;
};

struct CvaeTrainResult {
    CvaeModel model;
    std::vector<EpochMetrics> metrics;
};

/// ELBO training with beta annealing and free bits. The returned model is frozen.
CvaeTrainResult train_cvae(const envs::OfflineDataset& dataset, const Bounds& action_bounds,
                           const CvaeTrainConfig& config, std::uint64_t seed);

int default_latent_dim(int action_dim);

struct ReconstructionError {
    double rms = 0.0;  ///< sqrt(mean ||a - Dec(Enc(s,a), s)||^2)
    double sup = 0.0;  ///< max ||a - Dec(Enc(s,a), s)||
};

/// Uses the posterior mean for Enc.
ReconstructionError reconstruction_error(const CvaeModel& model, const envs::OfflineDataset& dataset);

/// d x k Jacobian of Dec(., s) at z by central (or forward) finite differences.
Eigen::MatrixXd decoder_jacobian(const CvaeModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& s,
                                 bool central = true, double step = 1e-5);

/// Rank from singular values above rel_tol * largest.
int numeric_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-6);

struct CollapseReport {
    Eigen::VectorXd per_dim_kl;  ///< mean KL(q || prior) per latent dimension, nats
    double mi_proxy = 0.0;       ///< sum of per_dim_kl
    double eps_info = 0.0;
    bool collapsed = false;

    std::string to_json() const;
};

CollapseReport collapse_check(const CvaeModel& model, const envs::OfflineDataset& dataset, double eps_info);

/// Per-dimension KL(N(mq, sq^2) || N(mp, sp^2)) for log-std inputs.
Eigen::MatrixXd gaussian_kl(const Eigen::MatrixXd& mean_q, const Eigen::MatrixXd& log_std_q,
                            const Eigen::MatrixXd& mean_p, const Eigen::MatrixXd& log_std_p);

}  // namespace spaars::cvae
