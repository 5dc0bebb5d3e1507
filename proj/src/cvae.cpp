#include "spaars/cvae.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spaars/error.hpp"
#include "spaars/io.hpp"

namespace spaars::cvae {

void CvaeTrainConfig::validate() const {
    if (!(beta_max >= 0.0 && beta_max <= 1.0)) throw ConfigError("cvae: beta_max must lie in [0, 1]");
    if (anneal_steps < 0) throw ConfigError("cvae: anneal_steps must be >= 0");
    if (!(free_bits >= 0.0)) throw ConfigError("cvae: free_bits must be >= 0");
    if (batch_size <= 0 || epochs <= 0) throw ConfigError("cvae: batch_size and epochs must be positive");
    if (latent_dim < 0) throw ConfigError("cvae: latent_dim must be >= 0");
    if (hidden <= 0) throw ConfigError("cvae: hidden width must be positive");
    if (!(lr > 0.0)) throw ConfigError("cvae: lr must be positive");
    if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0))
        throw ConfigError("cvae: batchnorm_momentum must lie in (0, 1]");
}

double beta_at(const CvaeTrainConfig& config, std::int64_t step) {
    if (config.anneal_steps <= 0 || step >= config.anneal_steps) return config.beta_max;
    if (step <= 0) return 0.0;
    return config.beta_max * static_cast<double>(step) / static_cast<double>(config.anneal_steps);
}

int default_latent_dim(int action_dim) { return std::max(1, (action_dim + 1) / 2); }

namespace {

Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
    Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

Eigen::VectorXd stack(const Eigen::VectorXd& top, const Eigen::VectorXd& bottom) {
    Eigen::VectorXd out(top.size() + bottom.size());
    out << top, bottom;
    return out;
}

}  // namespace

CvaeModel::CvaeModel(int state_dim, int action_dim, int latent_dim, Bounds bounds, int hidden, nn::Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), latent_dim_(latent_dim), bounds_(std::move(bounds)) {
    if (state_dim <= 0 || action_dim <= 0 || latent_dim <= 0) throw ConfigError("cvae: dims must be positive");
    if (bounds_.dim() != action_dim) throw ConfigError("cvae: bounds dim != action dim");
    using nn::Activation;
    encoder_ = nn::Mlp::make({state_dim + action_dim, hidden, hidden, 2 * latent_dim}, Activation::Tanh,
                             Activation::Identity, rng);
    decoder_ = nn::Mlp::make({state_dim + latent_dim, hidden, hidden, action_dim}, Activation::Tanh,
                             Activation::Identity, rng);
    prior_ = nn::Mlp::make({state_dim, hidden, hidden, 2 * latent_dim}, Activation::Tanh, Activation::Identity,
                           rng, 0.1);
    mean_norm_.mean = Eigen::VectorXd::Zero(latent_dim);
    mean_norm_.var = Eigen::VectorXd::Ones(latent_dim);
}

nn::GaussianHead CvaeModel::encode(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    if (s.size() != state_dim_ || a.size() != action_dim_) throw ConfigError("cvae encode: dimension mismatch");
    const Eigen::VectorXd out = encoder_.forward(stack(s, a));
    Eigen::VectorXd mean = out.head(latent_dim_);
    if (mean_norm_.enabled) mean = (mean - mean_norm_.mean).cwiseProduct(mean_norm_.scale());
    return nn::GaussianHead(mean, out.tail(latent_dim_));
}

Eigen::VectorXd CvaeModel::decode(const Eigen::VectorXd& z, const Eigen::VectorXd& s) const {
    if (s.size() != state_dim_ || z.size() != latent_dim_) throw ConfigError("cvae decode: dimension mismatch");
    return bounds_.squash(decoder_.forward(stack(s, z)));
}

nn::GaussianHead CvaeModel::prior(const Eigen::VectorXd& s) const {
    if (s.size() != state_dim_) throw ConfigError("cvae prior: dimension mismatch");
    const Eigen::VectorXd out = prior_.forward(s);
    return nn::GaussianHead(out.head(latent_dim_), out.tail(latent_dim_));
}

Eigen::MatrixXd CvaeModel::encode_mean_batch(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const {
    if (S.rows() != state_dim_ || A.rows() != action_dim_ || S.cols() != A.cols())
        throw ConfigError("cvae encode: dimension mismatch");
    Eigen::MatrixXd mean = encoder_.forward_batch(stack(S, A)).topRows(latent_dim_);
    if (mean_norm_.enabled) {
        mean.colwise() -= mean_norm_.mean;
        mean = mean_norm_.scale().asDiagonal() * mean;
    }
    return mean;
}

Eigen::MatrixXd CvaeModel::decode_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& S) const {
    if (S.rows() != state_dim_ || Z.rows() != latent_dim_ || S.cols() != Z.cols())
        throw ConfigError("cvae decode: dimension mismatch");
    return bounds_.squash(decoder_.forward_batch(stack(S, Z)));
}

void CvaeModel::prior_batch(const Eigen::MatrixXd& S, Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) const {
    if (S.rows() != state_dim_) throw ConfigError("cvae prior: dimension mismatch");
    const Eigen::MatrixXd out = prior_.forward_batch(S);
    mean = out.topRows(latent_dim_);
    log_std = nn::clamp_log_std(out.bottomRows(latent_dim_));
}

Eigen::MatrixXd CvaeModel::decode_vjp(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& S, const Eigen::MatrixXd& dA,
                                      Eigen::MatrixXd* decoded) const {
    if (S.rows() != state_dim_ || Z.rows() != latent_dim_ || S.cols() != Z.cols() || dA.rows() != action_dim_ ||
        dA.cols() != Z.cols())
        throw ConfigError("cvae decode_vjp: dimension mismatch");
    nn::ForwardCache cache;
    const Eigen::MatrixXd pre = decoder_.forward_batch(stack(S, Z), cache);
    const Eigen::ArrayXXd t = pre.array().tanh();
    if (decoded) *decoded = bounds_.squash(pre);
    const Eigen::MatrixXd dpre = ((dA.array().colwise() * bounds_.half_range().array()) * (1.0 - t.square())).matrix();
    const nn::BackwardResult back = decoder_.backward(cache, dpre);
    return back.input_grad.bottomRows(latent_dim_);
}

std::uint64_t CvaeModel::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const double* data, Eigen::Index n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const nn::Mlp* net : {&encoder_, &decoder_, &prior_}) {
        for (int l = 0; l < net->num_layers(); ++l) {
            mix(net->weights()[l].data(), net->weights()[l].size());
            mix(net->biases()[l].data(), net->biases()[l].size());
        }
    }
    mix(mean_norm_.mean.data(), mean_norm_.mean.size());
    mix(mean_norm_.var.data(), mean_norm_.var.size());
    return h;
}

namespace {
constexpr char kCvaeMagic[5] = "SPCV";
constexpr std::uint32_t kCvaeVersion = 1;
}  // namespace

void CvaeModel::save(std::ostream& out) const {
    io::Writer w(out);
    w.put_magic(kCvaeMagic, kCvaeVersion);
    w.put<std::int32_t>(state_dim_);
    w.put<std::int32_t>(action_dim_);
    w.put<std::int32_t>(latent_dim_);
    w.put_vector(bounds_.low);
    w.put_vector(bounds_.high);
    nn::save_mlp(out, encoder_);
    nn::save_mlp(out, decoder_);
    nn::save_mlp(out, prior_);
    w.put<std::uint8_t>(mean_norm_.enabled ? 1 : 0);
    w.put_vector(mean_norm_.mean);
    w.put_vector(mean_norm_.var);
    w.put<std::uint8_t>(frozen_ ? 1 : 0);
}

CvaeModel CvaeModel::load(std::istream& in) {
    io::Reader r(in);
    if (r.expect_magic(kCvaeMagic) != kCvaeVersion) throw ConfigError("unsupported cvae checkpoint version");
    CvaeModel m;
    m.state_dim_ = r.get<std::int32_t>();
    m.action_dim_ = r.get<std::int32_t>();
    m.latent_dim_ = r.get<std::int32_t>();
    Eigen::VectorXd lo = r.get_vector();
    Eigen::VectorXd hi = r.get_vector();
    m.bounds_ = Bounds(lo, hi);
    m.encoder_ = nn::load_mlp(in);
    m.decoder_ = nn::load_mlp(in);
    m.prior_ = nn::load_mlp(in);
    m.mean_norm_.enabled = r.get<std::uint8_t>() != 0;
    m.mean_norm_.mean = r.get_vector();
    m.mean_norm_.var = r.get_vector();
    m.frozen_ = r.get<std::uint8_t>() != 0;
    if (m.encoder_.input_dim() != m.state_dim_ + m.action_dim_ || m.encoder_.output_dim() != 2 * m.latent_dim_ ||
        m.decoder_.input_dim() != m.state_dim_ + m.latent_dim_ || m.decoder_.output_dim() != m.action_dim_ ||
        m.prior_.input_dim() != m.state_dim_ || m.prior_.output_dim() != 2 * m.latent_dim_ ||
        m.bounds_.dim() != m.action_dim_ || m.mean_norm_.mean.size() != m.latent_dim_)
        throw ConfigError("cvae checkpoint: inconsistent dimensions");
    return m;
}

void CvaeModel::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    save(out);
    if (!out) throw ConfigError("failed writing " + path);
}

CvaeModel CvaeModel::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open cvae checkpoint " + path);
    return load(in);
}

Eigen::MatrixXd gaussian_kl(const Eigen::MatrixXd& mean_q, const Eigen::MatrixXd& log_std_q,
                            const Eigen::MatrixXd& mean_p, const Eigen::MatrixXd& log_std_p) {
    const Eigen::ArrayXXd var_q = (2.0 * log_std_q.array()).exp();
    const Eigen::ArrayXXd var_p = (2.0 * log_std_p.array()).exp();
    const Eigen::ArrayXXd diff = (mean_q - mean_p).array();
    return (log_std_p.array() - log_std_q.array() + (var_q + diff.square()) / (2.0 * var_p) - 0.5).matrix();
}

CvaeTrainResult train_cvae(const envs::OfflineDataset& dataset, const Bounds& action_bounds,
                           const CvaeTrainConfig& config, std::uint64_t seed) {
    config.validate();
    if (dataset.empty()) throw InputError("train_cvae: dataset is empty");
    if (dataset.actions.cols() != dataset.states.cols())
        throw InputError("train_cvae: inconsistent state/action counts");
    if (dataset.action_dim() != action_bounds.dim()) throw ConfigError("train_cvae: action bounds dim mismatch");

    const int sd = dataset.state_dim();
    const int d = dataset.action_dim();
    const int k = config.latent_dim > 0 ? config.latent_dim : default_latent_dim(d);
    nn::Rng rng(seed);
    CvaeTrainResult result;
    CvaeModel& model = result.model;
    model = CvaeModel(sd, d, k, action_bounds, config.hidden, rng);
    model.mean_norm().enabled = config.use_mean_batchnorm;

    const nn::AdamConfig adam{config.lr, 0.9, 0.999, 1e-8};
    auto enc_opt = nn::AdamState::for_params(model.encoder(), adam);
    auto dec_opt = nn::AdamState::for_params(model.decoder(), adam);
    auto pri_opt = nn::AdamState::for_params(model.prior_net(), adam);

    const int n = dataset.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const Eigen::ArrayXd half = action_bounds.half_range().array();
    std::int64_t step = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochMetrics em;
        em.epoch = epoch;
        double weight = 0.0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int b = std::min(config.batch_size, n - start);
            Eigen::MatrixXd S(sd, b), A(d, b);
            for (int j = 0; j < b; ++j) {
                const int idx = order[static_cast<std::size_t>(start + j)];
                S.col(j) = dataset.states.col(idx);
                A.col(j) = dataset.actions.col(idx);
            }

            nn::ForwardCache enc_cache, dec_cache, pri_cache;
            const Eigen::MatrixXd enc_out = model.encoder().forward_batch(stack(S, A), enc_cache);
            Eigen::MatrixXd mu = enc_out.topRows(k);
            Eigen::VectorXd norm_scale = Eigen::VectorXd::Ones(k);
            auto& mn = model.mean_norm();
            if (mn.enabled) {
                const Eigen::VectorXd bm = mu.rowwise().mean();
                const Eigen::VectorXd bv = (mu.colwise() - bm).array().square().rowwise().mean();
                mn.mean = (1.0 - config.batchnorm_momentum) * mn.mean + config.batchnorm_momentum * bm;
                mn.var = (1.0 - config.batchnorm_momentum) * mn.var + config.batchnorm_momentum * bv;
                norm_scale = mn.scale();
                mu.colwise() -= mn.mean;
                mu = norm_scale.asDiagonal() * mu;
            }
            Eigen::MatrixXd active_q, active_p;
            const Eigen::MatrixXd ls_q = nn::clamp_log_std(enc_out.bottomRows(k), &active_q);
            const Eigen::MatrixXd eps = nn::standard_normal(k, b, rng);
            const Eigen::MatrixXd sq = ls_q.array().exp().matrix();
            const Eigen::MatrixXd Z = mu + sq.cwiseProduct(eps);

            const Eigen::MatrixXd dec_pre = model.decoder().forward_batch(stack(S, Z), dec_cache);
            const Eigen::ArrayXXd t = dec_pre.array().tanh();
            const Eigen::MatrixXd A_hat = ((t.colwise() * half).colwise() + action_bounds.center().array()).matrix();
            const Eigen::MatrixXd diff = A_hat - A;
            const double rec = diff.colwise().squaredNorm().mean();

            const Eigen::MatrixXd pri_out = model.prior_net().forward_batch(S, pri_cache);
            const Eigen::MatrixXd mu_p = pri_out.topRows(k);
            const Eigen::MatrixXd ls_p = nn::clamp_log_std(pri_out.bottomRows(k), &active_p);
            const Eigen::MatrixXd kl = gaussian_kl(mu, ls_q, mu_p, ls_p);
            const Eigen::VectorXd kl_dim = kl.rowwise().mean();
            const double beta = beta_at(config, step);

            double kl_loss = 0.0;
            Eigen::VectorXd coef(k);
            for (int j = 0; j < k; ++j) {
                // Free bits: dimensions under the allowance contribute neither loss nor gradient.
                const bool over = kl_dim[j] > config.free_bits;
                kl_loss += over ? kl_dim[j] - config.free_bits : 0.0;
                coef[j] = over ? beta / b : 0.0;
            }
            const double loss = rec + beta * kl_loss;
            if (!std::isfinite(loss))
                throw NumericError("train_cvae: non-finite loss at epoch " + std::to_string(epoch));

            const Eigen::MatrixXd d_pre = ((diff.array().colwise() * half) * (1.0 - t.square()) * (2.0 / b)).matrix();
            const nn::BackwardResult dec_back = model.decoder().backward(dec_cache, d_pre);
            const Eigen::MatrixXd dZ = dec_back.input_grad.bottomRows(k);

            const Eigen::ArrayXXd var_p = (2.0 * ls_p.array()).exp();
            const Eigen::ArrayXXd var_q = sq.array().square();
            const Eigen::ArrayXXd dm = (mu - mu_p).array();
            const Eigen::ArrayXXd c = coef.replicate(1, b).array();

            Eigen::MatrixXd d_mu = (dZ.array() + c * dm / var_p).matrix();
            Eigen::MatrixXd d_lsq =
                ((dZ.array() * sq.array() * eps.array() + c * (var_q / var_p - 1.0)) * active_q.array()).matrix();
            Eigen::MatrixXd d_mup = (-c * dm / var_p).matrix();
            Eigen::MatrixXd d_lsp = (c * (1.0 - (var_q + dm.square()) / var_p) * active_p.array()).matrix();
            d_mu = norm_scale.asDiagonal() * d_mu;

            const nn::BackwardResult enc_back = model.encoder().backward(enc_cache, stack(d_mu, d_lsq));
            const nn::BackwardResult pri_back = model.prior_net().backward(pri_cache, stack(d_mup, d_lsp));
            nn::adam_step(model.decoder(), dec_back.grad, dec_opt);
            nn::adam_step(model.encoder(), enc_back.grad, enc_opt);
            nn::adam_step(model.prior_net(), pri_back.grad, pri_opt);
            ++step;

            em.reconstruction += rec * b;
            em.kl += kl_dim.sum() * b;
            em.loss += loss * b;
            weight += b;
            em.beta = beta;
        }
        em.reconstruction /= weight;
        em.kl /= weight;
        em.loss /= weight;
        result.metrics.push_back(em);
    }
    if (!model.encoder().all_finite() || !model.decoder().all_finite() || !model.prior_net().all_finite())
        throw NumericError("train_cvae: parameters became non-finite");
    model.freeze();
    return result;
}

ReconstructionError reconstruction_error(const CvaeModel& model, const envs::OfflineDataset& dataset) {
    if (dataset.empty()) throw InputError("reconstruction_error: dataset is empty");
    const Eigen::MatrixXd Z = model.encode_mean_batch(dataset.states, dataset.actions);
    const Eigen::MatrixXd A_hat = model.decode_batch(Z, dataset.states);
    const Eigen::VectorXd sq = (A_hat - dataset.actions).colwise().squaredNorm().transpose();
    ReconstructionError e;
    e.rms = std::sqrt(sq.mean());
    e.sup = std::sqrt(sq.maxCoeff());
    return e;
}

Eigen::MatrixXd decoder_jacobian(const CvaeModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& s,
                                 bool central, double step) {
    const int k = model.latent_dim();
    const int d = model.action_dim();
    Eigen::MatrixXd J(d, k);
    const Eigen::VectorXd base = model.decode(z, s);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd zp = z, zm = z;
        zp[j] += step;
        if (central) {
            zm[j] -= step;
            J.col(j) = (model.decode(zp, s) - model.decode(zm, s)) / (2.0 * step);
        } else {
            J.col(j) = (model.decode(zp, s) - base) / step;
        }
    }
    return J;
}

int numeric_rank(const Eigen::MatrixXd& m, double rel_tol) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > rel_tol * sv[0]) ++rank;
    return rank;
}

CollapseReport collapse_check(const CvaeModel& model, const envs::OfflineDataset& dataset, double eps_info) {
    if (dataset.empty()) throw InputError("collapse_check: dataset is empty");
    const int k = model.latent_dim();
    const Eigen::MatrixXd enc_out = model.encoder().forward_batch(stack(dataset.states, dataset.actions));
    Eigen::MatrixXd mu = enc_out.topRows(k);
    if (model.mean_norm().enabled) {
        mu.colwise() -= model.mean_norm().mean;
        mu = model.mean_norm().scale().asDiagonal() * mu;
    }
    const Eigen::MatrixXd ls_q = nn::clamp_log_std(enc_out.bottomRows(k));
    Eigen::MatrixXd mu_p, ls_p;
    model.prior_batch(dataset.states, mu_p, ls_p);
    CollapseReport r;
    r.per_dim_kl = gaussian_kl(mu, ls_q, mu_p, ls_p).rowwise().mean().cwiseMax(0.0);
    r.mi_proxy = r.per_dim_kl.sum();
    r.eps_info = eps_info;
    r.collapsed = r.mi_proxy < eps_info;
    return r;
}

std::string CollapseReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"kind\":\"collapse_report\",\"per_dim_kl\":[";
    for (Eigen::Index i = 0; i < per_dim_kl.size(); ++i) os << (i ? "," : "") << per_dim_kl[i];
    os << "],\"mi_proxy\":" << mi_proxy << ",\"eps_info\":" << eps_info
       << ",\"collapsed\":" << (collapsed ? "true" : "false") << "}";
    return os.str();
}

}  // namespace spaars::cvae
