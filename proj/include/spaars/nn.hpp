#pragma once

// Fixed-architecture MLPs with hand-written backprop, an Adam optimizer and a
// diagonal Gaussian head. Everything is double precision; batches are stored
// column-major (one sample per column).

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace spaars::nn {

using Rng = std::mt19937_64;

enum class Activation : std::uint8_t { Tanh = 0, Relu = 1, Identity = 2 };

std::string to_string(Activation a);

/// Parameter-shaped container; used for gradients and optimizer moments.
struct MlpGrad {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    MlpGrad& operator+=(const MlpGrad& other);
    MlpGrad& operator*=(double s);
    Eigen::VectorXd flat() const;
};

/// Post-activation outputs of every layer; layer_outputs[0] is the input.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> layer_outputs;
    const Eigen::MatrixXd& output() const { return layer_outputs.back(); }
};

struct BackwardResult {
    MlpGrad grad;               ///< summed over the batch columns
    Eigen::MatrixXd input_grad; ///< dL/dinput, one column per sample
};

class Mlp {
public:
    Mlp() = default;

    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Hidden layers use
    /// `hidden`, the last layer uses `output`.
    static Mlp make(std::vector<int> layer_sizes, Activation hidden, Activation output, Rng& rng,
                    double output_scale = 1.0);

    /// Explicit construction; validates shapes and finiteness.
    Mlp(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
        std::vector<Activation> activations);

    int input_dim() const { return layer_sizes_.front(); }
    int output_dim() const { return layer_sizes_.back(); }
    int num_layers() const { return static_cast<int>(weights_.size()); }
    const std::vector<int>& layer_sizes() const { return layer_sizes_; }
    const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
    const std::vector<Activation>& activations() const { return activations_; }
    std::vector<Eigen::MatrixXd>& weights() { return weights_; }
    std::vector<Eigen::VectorXd>& biases() { return biases_; }

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, ForwardCache& cache) const;

    /// Backprop dL/doutput through a cached forward pass.
    BackwardResult backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const;

    std::size_t num_params() const;
    Eigen::VectorXd flat_params() const;
    void set_flat_params(const Eigen::VectorXd& flat);
    MlpGrad zeros_like() const;
    bool all_finite() const;

    /// target <- rho * target + (1 - rho) * online
    void polyak_from(const Mlp& online, double rho);

    friend bool operator==(const Mlp& a, const Mlp& b);

private:
    void check_input(Eigen::Index rows) const;

    std::vector<int> layer_sizes_;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
    std::vector<Activation> activations_;
};

/// Scalar loss of a single output vector together with dL/doutput.
using LossFn = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd& output)>;

struct LossGradient {
    double loss = 0.0;
    MlpGrad grad;
};

/// Single-sample gradient of loss(forward(input)) w.r.t. every parameter.
LossGradient gradient(const Mlp& net, const LossFn& loss, const Eigen::VectorXd& input);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    MlpGrad m;
    MlpGrad v;
    std::int64_t step = 0;

    static AdamState for_params(const Mlp& net, AdamConfig config = {});
};

/// One Adam update; throws ConfigError on shape mismatch.
void adam_step(Mlp& net, const MlpGrad& grad, AdamState& state);

/// Adam on a single scalar (entropy temperatures).
struct ScalarAdam {
    AdamConfig config;
    double m = 0.0;
    double v = 0.0;
    std::int64_t step = 0;

    double update(double param, double grad);
};

/// Diagonal Gaussian with log-std clamped to [kLogStdMin, kLogStdMax].
struct GaussianHead {
    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    Eigen::VectorXd mean;
    Eigen::VectorXd log_std;

    GaussianHead() = default;
    GaussianHead(Eigen::VectorXd mean, Eigen::VectorXd log_std);

    int dim() const { return static_cast<int>(mean.size()); }
    Eigen::VectorXd stddev() const { return log_std.array().exp(); }

    /// Reparameterized draw: mean + std * noise.
    Eigen::VectorXd sample(const Eigen::VectorXd& noise) const;
    double log_prob(const Eigen::VectorXd& x) const;
};

Eigen::VectorXd standard_normal(int n, Rng& rng);
Eigen::MatrixXd standard_normal(int rows, int cols, Rng& rng);

/// Clamp a raw log-std matrix; `active` marks entries that were not clamped
/// (their gradient passes through).
Eigen::MatrixXd clamp_log_std(const Eigen::MatrixXd& raw, Eigen::MatrixXd* active = nullptr);

void save_mlp(std::ostream& out, const Mlp& net);
Mlp load_mlp(std::istream& in);
void save_adam(std::ostream& out, const AdamState& state);
AdamState load_adam(std::istream& in);

void save_mlp_file(const std::string& path, const Mlp& net);
Mlp load_mlp_file(const std::string& path);

}  // namespace spaars::nn
