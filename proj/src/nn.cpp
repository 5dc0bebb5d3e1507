#include "spaars/nn.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "spaars/error.hpp"
#include "spaars/io.hpp"

namespace spaars::nn {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, Activation a) {
    switch (a) {
        case Activation::Tanh: return pre.array().tanh().matrix();
        case Activation::Relu: return pre.cwiseMax(0.0);
        case Activation::Identity: return pre;
    }
    return pre;
}

// Derivative expressed through the post-activation output.
Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& out, Activation a) {
    switch (a) {
        case Activation::Tanh: return (1.0 - out.array().square()).matrix();
        case Activation::Relu: return (out.array() > 0.0).cast<double>().matrix();
        case Activation::Identity: return Eigen::MatrixXd::Ones(out.rows(), out.cols());
    }
    return Eigen::MatrixXd::Ones(out.rows(), out.cols());
}

void check_same_shape(const MlpGrad& a, const MlpGrad& b) {
    if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size())
        throw ConfigError("gradient layer count mismatch");
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
        if (a.weights[i].rows() != b.weights[i].rows() || a.weights[i].cols() != b.weights[i].cols() ||
            a.biases[i].size() != b.biases[i].size())
            throw ConfigError("gradient shape mismatch at layer " + std::to_string(i));
    }
}

}  // namespace

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Identity: return "identity";
    }
    return "?";
}

MlpGrad& MlpGrad::operator+=(const MlpGrad& other) {
    check_same_shape(*this, other);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i] += other.weights[i];
        biases[i] += other.biases[i];
    }
    return *this;
}

MlpGrad& MlpGrad::operator*=(double s) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i] *= s;
        biases[i] *= s;
    }
    return *this;
}

Eigen::VectorXd MlpGrad::flat() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    Eigen::VectorXd out(n);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.segment(at, weights[i].size()) = weights[i].reshaped();
        at += weights[i].size();
        out.segment(at, biases[i].size()) = biases[i];
        at += biases[i].size();
    }
    return out;
}

Mlp Mlp::make(std::vector<int> layer_sizes, Activation hidden, Activation output, Rng& rng,
              double output_scale) {
    if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
    std::vector<Activation> acts;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        if (fan_in <= 0 || fan_out <= 0) throw ConfigError("mlp layer sizes must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Eigen::MatrixXd m(fan_out, fan_in);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
        const bool last = l + 2 == layer_sizes.size();
        if (last) m *= output_scale;
        w.push_back(std::move(m));
        b.push_back(Eigen::VectorXd::Zero(fan_out));
        acts.push_back(last ? output : hidden);
    }
    return Mlp(std::move(w), std::move(b), std::move(acts));
}

Mlp::Mlp(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
         std::vector<Activation> activations)
    : weights_(std::move(weights)), biases_(std::move(biases)), activations_(std::move(activations)) {
    if (weights_.empty()) throw ConfigError("mlp needs at least one layer");
    if (weights_.size() != biases_.size() || weights_.size() != activations_.size())
        throw ConfigError("mlp weights/biases/activations count mismatch");
    layer_sizes_.push_back(static_cast<int>(weights_.front().cols()));
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (weights_[l].cols() != layer_sizes_.back())
            throw ConfigError("mlp weight shapes do not chain at layer " + std::to_string(l));
        if (biases_[l].size() != weights_[l].rows())
            throw ConfigError("mlp bias size mismatch at layer " + std::to_string(l));
        if (weights_[l].rows() <= 0) throw ConfigError("mlp layer with zero outputs");
        layer_sizes_.push_back(static_cast<int>(weights_[l].rows()));
    }
    if (!all_finite()) throw NumericError("mlp parameters must be finite");
}

void Mlp::check_input(Eigen::Index rows) const {
    if (layer_sizes_.empty()) throw ConfigError("mlp is empty");
    if (rows != layer_sizes_.front())
        throw ConfigError("mlp input dimension " + std::to_string(rows) + " != expected " +
                          std::to_string(layer_sizes_.front()));
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
    check_input(input.size());
    Eigen::VectorXd x = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Eigen::MatrixXd pre = weights_[l] * x + biases_[l];
        x = activate(pre, activations_[l]);
    }
    return x;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs) const {
    check_input(inputs.rows());
    Eigen::MatrixXd x = inputs;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Eigen::MatrixXd pre = weights_[l] * x;
        pre.colwise() += biases_[l];
        x = activate(pre, activations_[l]);
    }
    return x;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs, ForwardCache& cache) const {
    check_input(inputs.rows());
    cache.layer_outputs.clear();
    cache.layer_outputs.reserve(weights_.size() + 1);
    cache.layer_outputs.push_back(inputs);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Eigen::MatrixXd pre = weights_[l] * cache.layer_outputs.back();
        pre.colwise() += biases_[l];
        cache.layer_outputs.push_back(activate(pre, activations_[l]));
    }
    return cache.layer_outputs.back();
}

BackwardResult Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const {
    if (cache.layer_outputs.size() != weights_.size() + 1)
        throw ConfigError("forward cache does not belong to this network");
    const auto& out = cache.output();
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
        throw ConfigError("output gradient shape mismatch");
    BackwardResult r;
    r.grad.weights.resize(weights_.size());
    r.grad.biases.resize(weights_.size());
    Eigen::MatrixXd g = output_grad;
    for (std::size_t idx = weights_.size(); idx-- > 0;) {
        Eigen::MatrixXd delta = g.cwiseProduct(activation_grad(cache.layer_outputs[idx + 1], activations_[idx]));
        r.grad.weights[idx] = delta * cache.layer_outputs[idx].transpose();
        r.grad.biases[idx] = delta.rowwise().sum();
        g = weights_[idx].transpose() * delta;
    }
    r.input_grad = std::move(g);
    return r;
}

std::size_t Mlp::num_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
        n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
}

Eigen::VectorXd Mlp::flat_params() const {
    MlpGrad view{weights_, biases_};
    return view.flat();
}

void Mlp::set_flat_params(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != num_params())
        throw ConfigError("flat parameter vector has wrong length");
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        weights_[l].reshaped() = flat.segment(at, weights_[l].size());
        at += weights_[l].size();
        biases_[l] = flat.segment(at, biases_[l].size());
        at += biases_[l].size();
    }
}

MlpGrad Mlp::zeros_like() const {
    MlpGrad g;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        g.weights.push_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
        g.biases.push_back(Eigen::VectorXd::Zero(biases_[l].size()));
    }
    return g;
}

bool Mlp::all_finite() const {
    for (std::size_t l = 0; l < weights_.size(); ++l)
        if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    return true;
}

void Mlp::polyak_from(const Mlp& online, double rho) {
    if (online.layer_sizes_ != layer_sizes_) throw ConfigError("polyak: architecture mismatch");
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        weights_[l] = rho * weights_[l] + (1.0 - rho) * online.weights_[l];
        biases_[l] = rho * biases_[l] + (1.0 - rho) * online.biases_[l];
    }
}

bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layer_sizes_ != b.layer_sizes_ || a.activations_ != b.activations_) return false;
    for (std::size_t l = 0; l < a.weights_.size(); ++l)
        if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    return true;
}

LossGradient gradient(const Mlp& net, const LossFn& loss, const Eigen::VectorXd& input) {
    ForwardCache cache;
    const Eigen::MatrixXd out = net.forward_batch(input, cache);
    auto [value, dout] = loss(out.col(0));
    if (!std::isfinite(value) || !dout.allFinite()) throw NumericError("non-finite loss in gradient()");
    if (dout.size() != out.rows()) throw ConfigError("loss gradient size mismatch");
    LossGradient r;
    r.loss = value;
    r.grad = net.backward(cache, dout).grad;
    return r;
}

AdamState AdamState::for_params(const Mlp& net, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.m = net.zeros_like();
    s.v = net.zeros_like();
    return s;
}

void adam_step(Mlp& net, const MlpGrad& grad, AdamState& state) {
    const MlpGrad shape{net.weights(), net.biases()};
    check_same_shape(shape, grad);
    check_same_shape(shape, state.m);
    check_same_shape(shape, state.v);
    const auto& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
        param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    };
    for (std::size_t l = 0; l < grad.weights.size(); ++l) {
        update(net.weights()[l], grad.weights[l], state.m.weights[l], state.v.weights[l]);
        update(net.biases()[l], grad.biases[l], state.m.biases[l], state.v.biases[l]);
    }
}

double ScalarAdam::update(double param, double grad) {
    ++step;
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad * grad;
    const double mhat = m / (1.0 - std::pow(config.beta1, static_cast<double>(step)));
    const double vhat = v / (1.0 - std::pow(config.beta2, static_cast<double>(step)));
    return param - config.lr * mhat / (std::sqrt(vhat) + config.eps);
}

GaussianHead::GaussianHead(Eigen::VectorXd mean_, Eigen::VectorXd log_std_)
    : mean(std::move(mean_)), log_std(std::move(log_std_)) {
    if (mean.size() != log_std.size()) throw ConfigError("gaussian head: mean/log_std size mismatch");
    log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

Eigen::VectorXd GaussianHead::sample(const Eigen::VectorXd& noise) const {
    if (noise.size() != mean.size()) throw ConfigError("gaussian head: noise dimension mismatch");
    return mean + stddev().cwiseProduct(noise);
}

double GaussianHead::log_prob(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size()) throw ConfigError("gaussian head: sample dimension mismatch");
    const Eigen::ArrayXd z = (x - mean).array() / stddev().array();
    return -0.5 * z.square().sum() - log_std.sum() -
           0.5 * static_cast<double>(mean.size()) * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd standard_normal(int n, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

Eigen::MatrixXd standard_normal(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = nd(rng);
    return m;
}

Eigen::MatrixXd clamp_log_std(const Eigen::MatrixXd& raw, Eigen::MatrixXd* active) {
    if (active) {
        *active = ((raw.array() >= GaussianHead::kLogStdMin) && (raw.array() <= GaussianHead::kLogStdMax))
                      .cast<double>()
                      .matrix();
    }
    return raw.cwiseMax(GaussianHead::kLogStdMin).cwiseMin(GaussianHead::kLogStdMax);
}

namespace {
constexpr char kMlpMagic[5] = "SPNN";
constexpr char kAdamMagic[5] = "SPAD";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_mlp(std::ostream& out, const Mlp& net) {
    io::Writer w(out);
    w.put_magic(kMlpMagic, kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.num_layers()));
    for (int s : net.layer_sizes()) w.put<std::int32_t>(s);
    for (auto a : net.activations()) w.put<std::uint8_t>(static_cast<std::uint8_t>(a));
    for (int l = 0; l < net.num_layers(); ++l) {
        w.put_matrix(net.weights()[l]);
        w.put_vector(net.biases()[l]);
    }
}

Mlp load_mlp(std::istream& in) {
    io::Reader r(in);
    if (r.expect_magic(kMlpMagic) != kVersion) throw ConfigError("unsupported mlp checkpoint version");
    const auto layers = r.get<std::uint32_t>();
    if (layers == 0 || layers > 64) throw ConfigError("corrupt mlp checkpoint: layer count");
    std::vector<int> sizes(layers + 1);
    for (auto& s : sizes) s = r.get<std::int32_t>();
    std::vector<Activation> acts(layers);
    for (auto& a : acts) {
        const auto tag = r.get<std::uint8_t>();
        if (tag > 2) throw ConfigError("corrupt mlp checkpoint: activation tag");
        a = static_cast<Activation>(tag);
    }
    std::vector<Eigen::MatrixXd> w(layers);
    std::vector<Eigen::VectorXd> b(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        w[l] = r.get_matrix();
        b[l] = r.get_vector();
        if (w[l].cols() != sizes[l] || w[l].rows() != sizes[l + 1])
            throw ConfigError("corrupt mlp checkpoint: layer shape");
    }
    return Mlp(std::move(w), std::move(b), std::move(acts));
}

void save_adam(std::ostream& out, const AdamState& s) {
    io::Writer w(out);
    w.put_magic(kAdamMagic, kVersion);
    w.put(s.config.lr);
    w.put(s.config.beta1);
    w.put(s.config.beta2);
    w.put(s.config.eps);
    w.put<std::int64_t>(s.step);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m.weights.size()));
    for (std::size_t l = 0; l < s.m.weights.size(); ++l) {
        w.put_matrix(s.m.weights[l]);
        w.put_vector(s.m.biases[l]);
        w.put_matrix(s.v.weights[l]);
        w.put_vector(s.v.biases[l]);
    }
}

AdamState load_adam(std::istream& in) {
    io::Reader r(in);
    if (r.expect_magic(kAdamMagic) != kVersion) throw ConfigError("unsupported optimizer checkpoint version");
    AdamState s;
    s.config.lr = r.get<double>();
    s.config.beta1 = r.get<double>();
    s.config.beta2 = r.get<double>();
    s.config.eps = r.get<double>();
    s.step = r.get<std::int64_t>();
    const auto layers = r.get<std::uint32_t>();
    if (layers > 64) throw ConfigError("corrupt optimizer checkpoint");
    for (std::uint32_t l = 0; l < layers; ++l) {
        s.m.weights.push_back(r.get_matrix());
        s.m.biases.push_back(r.get_vector());
        s.v.weights.push_back(r.get_matrix());
        s.v.biases.push_back(r.get_vector());
    }
    return s;
}

void save_mlp_file(const std::string& path, const Mlp& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    save_mlp(out, net);
    if (!out) throw ConfigError("failed writing " + path);
}

Mlp load_mlp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return load_mlp(in);
}

}  // namespace spaars::nn
