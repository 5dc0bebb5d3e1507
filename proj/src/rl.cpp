#include "spaars/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spaars/error.hpp"

namespace spaars::rl {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
    Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

// log(1 - tanh(u)^2), stable for large |u|.
Eigen::ArrayXXd log_one_minus_tanh_sq(const Eigen::ArrayXXd& u) {
    const Eigen::ArrayXXd x = -2.0 * u;
    const Eigen::ArrayXXd softplus = x.max(0.0) + (-x.abs()).exp().log1p();
    return 2.0 * (std::log(2.0) - u - softplus);
}

// log pi for u = mean + std * eps pushed through scale * tanh(u); one value per column.
Eigen::VectorXd squashed_log_prob(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& log_std,
                                  const Eigen::MatrixXd& U, const Eigen::MatrixXd& log_scale) {
    const Eigen::ArrayXXd gauss = -0.5 * eps.array().square() - log_std.array() - 0.5 * kLog2Pi;
    const Eigen::ArrayXXd jac = log_scale.array() + log_one_minus_tanh_sq(U.array());
    return (gauss - jac).colwise().sum().transpose();
}

void check_batch(const Batch& b, const char* who) {
    if (b.size() == 0) throw InputError(std::string(who) + ": empty batch");
}

}  // namespace

std::string to_string(Source s) {
    switch (s) {
        case Source::Latent: return "latent";
        case Source::Raw: return "raw";
        case Source::Blend: return "blend";
        case Source::Dataset: return "dataset";
    }
    return "unknown";
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(int capacity, int state_dim, int action_dim, int latent_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim), latent_dim_(latent_dim) {
    if (capacity <= 0) throw ConfigError("replay buffer: capacity must be positive");
    ring_.reserve(static_cast<std::size_t>(std::min(capacity, 1 << 20)));
}

void ReplayBuffer::push(const Transition& t) {
    if (t.s.size() != state_dim_ || t.s_next.size() != state_dim_ || t.a.size() != action_dim_ ||
        (t.z.size() != 0 && t.z.size() != latent_dim_))
        throw ConfigError("replay buffer: transition dimension mismatch");
    if (static_cast<int>(ring_.size()) < capacity_) {
        ring_.push_back(t);
    } else {
        ring_[static_cast<std::size_t>(cursor_)] = t;
    }
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(int i) const {
    if (i < 0 || i >= size_) throw InputError("replay buffer: index out of range");
    const int oldest = size_ < capacity_ ? 0 : cursor_;
    return ring_[static_cast<std::size_t>((oldest + i) % capacity_)];
}

Batch ReplayBuffer::gather(const std::vector<int>& order) const {
    const int n = static_cast<int>(order.size());
    Batch b;
    b.S.resize(state_dim_, n);
    b.A.resize(action_dim_, n);
    b.Z = Eigen::MatrixXd::Zero(latent_dim_, n);
    b.r_ext.resize(n);
    b.r_int.resize(n);
    b.S_next.resize(state_dim_, n);
    b.done.resize(n);
    for (int j = 0; j < n; ++j) {
        const Transition& t = at(order[static_cast<std::size_t>(j)]);
        b.S.col(j) = t.s;
        b.A.col(j) = t.a;
        if (t.z.size() == latent_dim_ && latent_dim_ > 0) b.Z.col(j) = t.z;
        b.r_ext[j] = t.r_ext;
        b.r_int[j] = t.r_int;
        b.S_next.col(j) = t.s_next;
        b.done[j] = t.done ? 1.0 : 0.0;
    }
    return b;
}

Batch ReplayBuffer::sample(int n, nn::Rng& rng) const {
    if (empty()) throw InputError("replay buffer: cannot sample from an empty buffer");
    if (n <= 0) throw InputError("replay buffer: sample size must be positive");
    std::uniform_int_distribution<int> pick(0, size_ - 1);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int& i : idx) i = pick(rng);
    return gather(idx);
}

Batch ReplayBuffer::all() const { return recent(size_); }

Batch ReplayBuffer::recent(int n) const {
    n = std::clamp(n, 0, size_);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), size_ - n);
    return gather(idx);
}

void ReplayBuffer::save(io::Writer& w) const {
    w.put<std::int32_t>(capacity_);
    w.put<std::int32_t>(state_dim_);
    w.put<std::int32_t>(action_dim_);
    w.put<std::int32_t>(latent_dim_);
    w.put<std::int32_t>(size_);
    for (int i = 0; i < size_; ++i) {
        const Transition& t = at(i);
        w.put_vector(t.s);
        w.put_vector(t.a);
        w.put_vector(t.z);
        w.put<double>(t.r_ext);
        w.put<double>(t.r_int);
        w.put_vector(t.s_next);
        w.put<std::uint8_t>(t.done ? 1 : 0);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.source));
    }
}

void ReplayBuffer::load(io::Reader& r) {
    const int cap = r.get<std::int32_t>();
    const int sd = r.get<std::int32_t>();
    const int ad = r.get<std::int32_t>();
    const int ld = r.get<std::int32_t>();
    *this = ReplayBuffer(cap, sd, ad, ld);
    const int n = r.get<std::int32_t>();
    if (n < 0 || n > cap) throw ConfigError("replay checkpoint: bad size");
    for (int i = 0; i < n; ++i) {
        Transition t;
        t.s = r.get_vector();
        t.a = r.get_vector();
        t.z = r.get_vector();
        t.r_ext = r.get<double>();
        t.r_int = r.get<double>();
        t.s_next = r.get_vector();
        t.done = r.get<std::uint8_t>() != 0;
        t.source = static_cast<Source>(r.get<std::uint8_t>());
        push(t);
    }
}

// ---------------------------------------------------------------- critics

void CriticConfig::validate() const {
    if (members < 2) throw ConfigError("critic: ensemble needs K >= 2 members");
    if (min_subset < 1 || min_subset > members) throw ConfigError("critic: min_subset must lie in [1, K]");
    if (hidden <= 0 || !(lr > 0.0)) throw ConfigError("critic: hidden and lr must be positive");
    if (!(polyak >= 0.0 && polyak <= 1.0)) throw ConfigError("critic: polyak must lie in [0, 1]");
}

CriticEnsemble::CriticEnsemble(int state_dim, int action_dim, const CriticConfig& config, nn::Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), config_(config) {
    config.validate();
    for (int k = 0; k < config.members; ++k) {
        members_.push_back(nn::Mlp::make({state_dim + action_dim, config.hidden, config.hidden, 1},
                                         nn::Activation::Tanh, nn::Activation::Identity, rng));
        targets_.push_back(members_.back());
        opts_.push_back(nn::AdamState::for_params(members_.back(), {config.lr, 0.9, 0.999, 1e-8}));
    }
}

Eigen::MatrixXd CriticEnsemble::q_all(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const {
    const Eigen::MatrixXd X = stack(S, A);
    Eigen::MatrixXd out(size(), X.cols());
    for (int k = 0; k < size(); ++k) out.row(k) = members_[static_cast<std::size_t>(k)].forward_batch(X);
    return out;
}

Eigen::MatrixXd CriticEnsemble::q_all_target(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const {
    const Eigen::MatrixXd X = stack(S, A);
    Eigen::MatrixXd out(size(), X.cols());
    for (int k = 0; k < size(); ++k) out.row(k) = targets_[static_cast<std::size_t>(k)].forward_batch(X);
    return out;
}

ActionValue CriticEnsemble::member_value(int k, const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) const {
    if (S.rows() != state_dim_ || A.rows() != action_dim_) throw ConfigError("critic: dimension mismatch");
    nn::ForwardCache cache;
    const nn::Mlp& net = member(k);
    ActionValue v;
    v.q = net.forward_batch(stack(S, A), cache).row(0).transpose();
    const nn::BackwardResult back = net.backward(cache, Eigen::MatrixXd::Ones(1, S.cols()));
    v.dq_da = back.input_grad.bottomRows(action_dim_);
    return v;
}

ActionValue CriticEnsemble::min_pair(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A, nn::Rng& rng) const {
    const int i = std::uniform_int_distribution<int>(0, size() - 1)(rng);
    int j = std::uniform_int_distribution<int>(0, size() - 2)(rng);
    if (j >= i) ++j;
    ActionValue a = member_value(i, S, A);
    const ActionValue b = member_value(j, S, A);
    for (Eigen::Index c = 0; c < a.q.size(); ++c) {
        if (b.q[c] < a.q[c]) {
            a.q[c] = b.q[c];
            a.dq_da.col(c) = b.dq_da.col(c);
        }
    }
    return a;
}

Eigen::VectorXd CriticEnsemble::td_targets(const Batch& batch, const NextActionFn& next_action,
                                           const CriticUpdateConfig& config, nn::Rng& rng) const {
    check_batch(batch, "td_targets");
    Eigen::MatrixXd A_next;
    Eigen::VectorXd logp_next;
    next_action(batch.S_next, A_next, logp_next);
    if (A_next.rows() != action_dim_ || A_next.cols() != batch.size() || logp_next.size() != batch.size())
        throw ConfigError("td_targets: next-action callback returned wrong shapes");

    std::vector<int> ids(static_cast<std::size_t>(size()));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < config_.min_subset; ++i) {
        const int j = std::uniform_int_distribution<int>(i, size() - 1)(rng);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    const Eigen::MatrixXd X = stack(batch.S_next, A_next);
    Eigen::VectorXd q_min = Eigen::VectorXd::Constant(batch.size(), std::numeric_limits<double>::infinity());
    for (int i = 0; i < config_.min_subset; ++i)
        q_min = q_min.cwiseMin(
            targets_[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])].forward_batch(X).row(0).transpose());

    const Eigen::VectorXd soft = q_min - config.entropy_alpha * logp_next;
    Eigen::VectorXd y = batch.r_ext + config.intrinsic_weight * batch.r_int;
    y.array() += config.gamma * (1.0 - batch.done.array()) * soft.array();
    if (!y.allFinite()) throw NumericError("critic: non-finite TD target");
    return y;
}

std::vector<double> CriticEnsemble::regress(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A,
                                            const Eigen::VectorXd& targets) {
    const Eigen::MatrixXd X = stack(S, A);
    const double n = static_cast<double>(X.cols());
    std::vector<double> losses;
    for (int k = 0; k < size(); ++k) {
        nn::Mlp& net = members_[static_cast<std::size_t>(k)];
        nn::ForwardCache cache;
        const Eigen::RowVectorXd diff = net.forward_batch(X, cache).row(0) - targets.transpose();
        losses.push_back(diff.squaredNorm() / n);
        const nn::BackwardResult back = net.backward(cache, (2.0 / n) * diff);
        nn::adam_step(net, back.grad, opts_[static_cast<std::size_t>(k)]);
    }
    return losses;
}

void CriticEnsemble::polyak_update() {
    for (int k = 0; k < size(); ++k)
        targets_[static_cast<std::size_t>(k)].polyak_from(members_[static_cast<std::size_t>(k)], config_.polyak);
}

void CriticEnsemble::save(io::Writer& w, std::ostream& out) const {
    w.put<std::int32_t>(state_dim_);
    w.put<std::int32_t>(action_dim_);
    w.put<std::int32_t>(config_.members);
    w.put<std::int32_t>(config_.min_subset);
    w.put<std::int32_t>(config_.hidden);
    w.put<double>(config_.lr);
    w.put<double>(config_.polyak);
    for (int k = 0; k < size(); ++k) {
        nn::save_mlp(out, members_[static_cast<std::size_t>(k)]);
        nn::save_mlp(out, targets_[static_cast<std::size_t>(k)]);
        nn::save_adam(out, opts_[static_cast<std::size_t>(k)]);
    }
}

void CriticEnsemble::load(io::Reader& r, std::istream& in) {
    state_dim_ = r.get<std::int32_t>();
    action_dim_ = r.get<std::int32_t>();
    config_.members = r.get<std::int32_t>();
    config_.min_subset = r.get<std::int32_t>();
    config_.hidden = r.get<std::int32_t>();
    config_.lr = r.get<double>();
    config_.polyak = r.get<double>();
    config_.validate();
    members_.clear();
    targets_.clear();
    opts_.clear();
    for (int k = 0; k < config_.members; ++k) {
        members_.push_back(nn::load_mlp(in));
        targets_.push_back(nn::load_mlp(in));
        opts_.push_back(nn::load_adam(in));
    }
}

CriticLosses critic_update(CriticEnsemble& ens, const Batch& batch, const NextActionFn& next_action,
                           const CriticUpdateConfig& config, nn::Rng& rng) {
    const Eigen::VectorXd y = ens.td_targets(batch, next_action, config, rng);
    CriticLosses out;
    out.member_loss = ens.regress(batch.S, batch.A, y);
    out.mean_target = y.mean();
    ens.polyak_update();
    return out;
}

EnsembleStats ensemble_stats(const CriticEnsemble& ens, const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    if (ens.size() < 2) throw ConfigError("ensemble_stats: need K >= 2");
    const Eigen::VectorXd q = ens.q_all(s, a).col(0);
    EnsembleStats st;
    st.mean = q.mean();
    st.std = std::sqrt((q.array() - st.mean).square().mean());
    return st;
}

// ---------------------------------------------------------------- actors

void ActorConfig::validate() const {
    if (hidden <= 0) throw ConfigError("actor: hidden must be positive");
    if (!(lr >= 0.0) || !(alpha_lr >= 0.0)) throw ConfigError("actor: learning rates must be >= 0");
    if (!(init_alpha > 0.0)) throw ConfigError("actor: init_alpha must be positive");
}

SquashedGaussianActor::SquashedGaussianActor(int state_dim, int out_dim, const ActorConfig& config, nn::Rng& rng)
    : config_(config) {
    config.validate();
    net_ = nn::Mlp::make({state_dim, config.hidden, config.hidden, 2 * out_dim}, nn::Activation::Tanh,
                         nn::Activation::Identity, rng, 0.1);
    opt_ = nn::AdamState::for_params(net_, {config.lr, 0.9, 0.999, 1e-8});
    log_alpha_ = std::log(config.init_alpha);
    target_entropy_ = config.target_entropy != 0.0 ? config.target_entropy : -static_cast<double>(out_dim);
    alpha_opt_.config = {config.alpha_lr, 0.9, 0.999, 1e-8};
}

void SquashedGaussianActor::set_alpha(double a) {
    if (!(a > 0.0)) throw InputError("actor: temperature must be positive");
    log_alpha_ = std::log(a);
}

void SquashedGaussianActor::heads(const Eigen::MatrixXd& S, Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) const {
    if (S.rows() != state_dim()) throw ConfigError("actor: state dimension mismatch");
    const Eigen::MatrixXd out = net_.forward_batch(S);
    mean = out.topRows(out_dim());
    log_std = nn::clamp_log_std(out.bottomRows(out_dim()));
}

ActorLoss SquashedGaussianActor::sac_step(const Eigen::MatrixXd& S, const QGradFn& q_grad,
                                          const Eigen::MatrixXd& log_jacobian_scale, nn::Rng& rng) {
    const int n = out_dim();
    const int b = static_cast<int>(S.cols());
    nn::ForwardCache cache;
    const Eigen::MatrixXd out = net_.forward_batch(S, cache);
    Eigen::MatrixXd active;
    const Eigen::MatrixXd mean = out.topRows(n);
    const Eigen::MatrixXd log_std = nn::clamp_log_std(out.bottomRows(n), &active);
    const Eigen::MatrixXd sigma = log_std.array().exp().matrix();
    const Eigen::MatrixXd eps = nn::standard_normal(n, b, rng);
    const Eigen::MatrixXd U = mean + sigma.cwiseProduct(eps);
    const Eigen::ArrayXXd T = U.array().tanh();

    Eigen::VectorXd q;
    Eigen::MatrixXd dq_du;
    q_grad(S, U, q, dq_du);
    const Eigen::VectorXd logp = squashed_log_prob(eps, log_std, U, log_jacobian_scale);
    const double alpha = std::exp(log_alpha_);

    // L = mean(alpha log pi - Q). With eps fixed, the Gaussian term contributes
    // d/dmu = 0, d/dlog_std = -1; the squash correction contributes 2 tanh(u) per unit of du.
    const Eigen::ArrayXXd dL_du = (2.0 * alpha * T - dq_du.array()) / b;
    const Eigen::MatrixXd d_mean = dL_du.matrix();
    const Eigen::MatrixXd d_log_std =
        ((dL_du * sigma.array() * eps.array() - alpha / b) * active.array()).matrix();
    const nn::BackwardResult back = net_.backward(cache, stack(d_mean, d_log_std));
    nn::adam_step(net_, back.grad, opt_);

    ActorLoss res;
    res.log_prob = logp.mean();
    res.loss = alpha * res.log_prob - q.mean();
    if (!std::isfinite(res.loss)) throw NumericError("actor: non-finite SAC loss");
    if (config_.auto_alpha) {
        // Objective -log_alpha * (log pi + H_target).
        log_alpha_ = alpha_opt_.update(log_alpha_, -(res.log_prob + target_entropy_));
        log_alpha_ = std::clamp(log_alpha_, -12.0, 3.0);
    }
    res.alpha = std::exp(log_alpha_);
    return res;
}

void SquashedGaussianActor::save(io::Writer& w, std::ostream& out) const {
    nn::save_mlp(out, net_);
    nn::save_adam(out, opt_);
    w.put<double>(log_alpha_);
    w.put<double>(target_entropy_);
    w.put<std::uint8_t>(config_.auto_alpha ? 1 : 0);
    w.put<double>(alpha_opt_.config.lr);
    w.put<double>(alpha_opt_.m);
    w.put<double>(alpha_opt_.v);
    w.put<std::int64_t>(alpha_opt_.step);
}

void SquashedGaussianActor::load(io::Reader& r, std::istream& in) {
    net_ = nn::load_mlp(in);
    opt_ = nn::load_adam(in);
    log_alpha_ = r.get<double>();
    target_entropy_ = r.get<double>();
    config_.auto_alpha = r.get<std::uint8_t>() != 0;
    alpha_opt_.config.lr = r.get<double>();
    alpha_opt_.m = r.get<double>();
    alpha_opt_.v = r.get<double>();
    alpha_opt_.step = r.get<std::int64_t>();
}

RawActor::RawActor(int state_dim, const Bounds& bounds, const ActorConfig& config, nn::Rng& rng)
    : SquashedGaussianActor(state_dim, bounds.dim(), config, rng), bounds_(bounds) {}

Eigen::MatrixXd RawActor::mean_action(const Eigen::MatrixXd& S) const {
    Eigen::MatrixXd mean, log_std;
    heads(S, mean, log_std);
    return bounds_.squash(mean);
}

Eigen::VectorXd RawActor::mean_action(const Eigen::VectorXd& s) const {
    return mean_action(Eigen::MatrixXd(s)).col(0);
}

void RawActor::sample(const Eigen::MatrixXd& S, nn::Rng& rng, Eigen::MatrixXd& A, Eigen::VectorXd& logp) const {
    Eigen::MatrixXd mean, log_std;
    heads(S, mean, log_std);
    const Eigen::MatrixXd eps = nn::standard_normal(out_dim(), static_cast<int>(S.cols()), rng);
    const Eigen::MatrixXd U = mean + log_std.array().exp().matrix().cwiseProduct(eps);
    A = bounds_.squash(U);
    const Eigen::MatrixXd log_scale = bounds_.half_range().array().log().matrix().replicate(1, S.cols());
    logp = squashed_log_prob(eps, log_std, U, log_scale);
}

void RawActor::save(io::Writer& w, std::ostream& out) const {
    w.put_vector(bounds_.low);
    w.put_vector(bounds_.high);
    SquashedGaussianActor::save(w, out);
}

void RawActor::load(io::Reader& r, std::istream& in) {
    Eigen::VectorXd lo = r.get_vector();
    Eigen::VectorXd hi = r.get_vector();
    bounds_ = Bounds(lo, hi);
    SquashedGaussianActor::load(r, in);
}

double raw_actor_bc_loss(const RawActor& actor, const Batch& batch) {
    check_batch(batch, "bc loss");
    return (actor.mean_action(batch.S) - batch.A).colwise().squaredNorm().mean();
}

double raw_actor_bc_update(RawActor& actor, const Batch& batch) {
    check_batch(batch, "bc update");
    const int n = actor.out_dim();
    const double b = batch.size();
    nn::ForwardCache cache;
    const Eigen::MatrixXd out = actor.net_.forward_batch(batch.S, cache);
    const Eigen::ArrayXXd t = out.topRows(n).array().tanh();
    const Eigen::ArrayXd half = actor.bounds_.half_range().array();
    const Eigen::MatrixXd pred = ((t.colwise() * half).colwise() + actor.bounds_.center().array()).matrix();
    const Eigen::MatrixXd diff = pred - batch.A;
    const double loss = diff.colwise().squaredNorm().mean();
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(2 * n, batch.size());
    d_out.topRows(n) = (((diff.array().colwise() * half) * (1.0 - t.square())) * (2.0 / b)).matrix();
    const nn::BackwardResult back = actor.net_.backward(cache, d_out);
    nn::adam_step(actor.net_, back.grad, actor.opt_);
    return loss;
}

ActorLoss raw_actor_sac_update(RawActor& actor, const CriticEnsemble& ens, const Batch& batch, nn::Rng& rng) {
    check_batch(batch, "raw actor update");
    if (ens.action_dim() != actor.action_dim()) throw ConfigError("raw actor: critic action dim mismatch");
    const Bounds& bounds = actor.bounds_;
    const Eigen::ArrayXd half = bounds.half_range().array();
    auto q_grad = [&](const Eigen::MatrixXd& S, const Eigen::MatrixXd& U, Eigen::VectorXd& q, Eigen::MatrixXd& dq_du) {
        const Eigen::MatrixXd A = bounds.squash(U);
        const ActionValue av = ens.min_pair(S, A, rng);
        q = av.q;
        const Eigen::ArrayXXd t = U.array().tanh();
        dq_du = ((av.dq_da.array().colwise() * half) * (1.0 - t.square())).matrix();
    };
    const Eigen::MatrixXd log_scale = half.log().matrix().replicate(1, batch.size());
    return actor.sac_step(batch.S, q_grad, log_scale, rng);
}

LatentActor::LatentActor(int state_dim, int latent_dim, const ActorConfig& config, nn::Rng& rng)
    : SquashedGaussianActor(state_dim, latent_dim, config, rng) {}

void LatentActor::latent_from_u(const cvae::CvaeModel& model, const Eigen::MatrixXd& S, const Eigen::MatrixXd& U,
                                Eigen::MatrixXd& Z, Eigen::MatrixXd& dz_du) const {
    if (model.latent_dim() != latent_dim()) throw ConfigError("latent actor: latent dim mismatch with cvae");
    Eigen::MatrixXd pm, pls;
    model.prior_batch(S, pm, pls);
    const Eigen::ArrayXXd scale = kPriorBox * pls.array().exp();
    const Eigen::ArrayXXd t = U.array().tanh();
    Z = (pm.array() + scale * t).matrix();
    dz_du = (scale * (1.0 - t.square())).matrix();
}

Eigen::MatrixXd LatentActor::mean_latent(const cvae::CvaeModel& model, const Eigen::MatrixXd& S) const {
    Eigen::MatrixXd mean, log_std, Z, dz;
    heads(S, mean, log_std);
    latent_from_u(model, S, mean, Z, dz);
    return Z;
}

Eigen::VectorXd LatentActor::mean_latent(const cvae::CvaeModel& model, const Eigen::VectorXd& s) const {
    return mean_latent(model, Eigen::MatrixXd(s)).col(0);
}

void LatentActor::sample(const cvae::CvaeModel& model, const Eigen::MatrixXd& S, nn::Rng& rng, Eigen::MatrixXd& Z,
                         Eigen::VectorXd& logp) const {
    Eigen::MatrixXd mean, log_std, dz;
    heads(S, mean, log_std);
    const Eigen::MatrixXd eps = nn::standard_normal(out_dim(), static_cast<int>(S.cols()), rng);
    const Eigen::MatrixXd U = mean + log_std.array().exp().matrix().cwiseProduct(eps);
    latent_from_u(model, S, U, Z, dz);
    Eigen::MatrixXd pm, pls;
    model.prior_batch(S, pm, pls);
    logp = squashed_log_prob(eps, log_std, U, (pls.array() + std::log(kPriorBox)).matrix());
}

void LatentActor::save(io::Writer& w, std::ostream& out) const { SquashedGaussianActor::save(w, out); }
void LatentActor::load(io::Reader& r, std::istream& in) { SquashedGaussianActor::load(r, in); }

ActorLoss latent_actor_update(LatentActor& actor, const cvae::CvaeModel& model, const CriticEnsemble& ens,
                              const Batch& batch, nn::Rng& rng) {
    check_batch(batch, "latent actor update");
    if (!model.frozen()) throw InvariantError("latent actor update requires a frozen decoder");
    if (ens.action_dim() != model.action_dim()) throw ConfigError("latent actor: critic action dim mismatch");
    const std::uint64_t before = model.fingerprint();
    auto q_grad = [&](const Eigen::MatrixXd& S, const Eigen::MatrixXd& U, Eigen::VectorXd& q, Eigen::MatrixXd& dq_du) {
        Eigen::MatrixXd Z, dz_du;
        actor.latent_from_u(model, S, U, Z, dz_du);
        const Eigen::MatrixXd A = model.decode_batch(Z, S);
        const ActionValue av = ens.min_pair(S, A, rng);
        q = av.q;
        // Chain rule through the frozen decoder: dQ/dz = J_Dec^T dQ/da.
        dq_du = model.decode_vjp(Z, S, av.dq_da).cwiseProduct(dz_du);
    };
    Eigen::MatrixXd pm, pls;
    model.prior_batch(batch.S, pm, pls);
    const ActorLoss res = actor.sac_step(batch.S, q_grad, (pls.array() + std::log(LatentActor::kPriorBox)).matrix(), rng);
    if (model.fingerprint() != before) throw InvariantError("frozen decoder changed during latent actor update");
    return res;
}

// ---------------------------------------------------------------- RND

void RndConfig::validate() const {
    if (hidden <= 0 || embed <= 0) throw ConfigError("rnd: widths must be positive");
    if (!(lr > 0.0) || !(clip > 0.0)) throw ConfigError("rnd: lr and clip must be positive");
}

RndPair::RndPair(int input_dim, const RndConfig& config, nn::Rng& rng) : config_(config) {
    config.validate();
    target_ = nn::Mlp::make({input_dim, config.hidden, config.hidden, config.embed}, nn::Activation::Tanh,
                            nn::Activation::Identity, rng);
    predictor_ = nn::Mlp::make({input_dim, config.hidden, config.hidden, config.embed}, nn::Activation::Tanh,
                               nn::Activation::Identity, rng);
    opt_ = nn::AdamState::for_params(predictor_, {config.lr, 0.9, 0.999, 1e-8});
    in_mean_ = Eigen::VectorXd::Zero(input_dim);
    in_m2_ = Eigen::VectorXd::Zero(input_dim);
}

Eigen::MatrixXd RndPair::normalize(const Eigen::MatrixXd& X) const {
    if (in_count_ < 1.0) return X.cwiseMax(-config_.clip).cwiseMin(config_.clip);
    const Eigen::ArrayXd inv_std = ((in_m2_.array() / in_count_) + 1e-8).rsqrt();
    Eigen::MatrixXd Xn = ((X.colwise() - in_mean_).array().colwise() * inv_std).matrix();
    return Xn.cwiseMax(-config_.clip).cwiseMin(config_.clip);
}

Eigen::VectorXd RndPair::raw_error(const Eigen::MatrixXd& Xn) const {
    return (predictor_.forward_batch(Xn) - target_.forward_batch(Xn)).colwise().squaredNorm().transpose() /
           static_cast<double>(config_.embed);
}

Eigen::VectorXd RndPair::intrinsic_batch(const Eigen::MatrixXd& X) const {
    if (X.rows() != input_dim()) throw ConfigError("rnd: input dimension mismatch");
    const double scale = err_count_ >= 2.0 ? std::sqrt(err_m2_ / err_count_) : 1.0;
    return raw_error(normalize(X)) / std::max(scale, 1e-12);
}

double RndPair::intrinsic(const Eigen::VectorXd& s, const Eigen::VectorXd& z) const {
    Eigen::VectorXd x(s.size() + z.size());
    x << s, z;
    return intrinsic_batch(x)[0];
}

double RndPair::update(const Eigen::MatrixXd& S, const Eigen::MatrixXd& Z) {
    const Eigen::MatrixXd X = stack(S, Z);
    if (X.rows() != input_dim()) throw ConfigError("rnd: input dimension mismatch");
    const double nb = static_cast<double>(X.cols());
    if (nb == 0) throw InputError("rnd update: empty batch");

    // Chan et al. parallel merge of the batch moments into the running input stats.
    const Eigen::VectorXd bm = X.rowwise().mean();
    const Eigen::VectorXd bm2 = (X.colwise() - bm).array().square().rowwise().sum();
    const double total = in_count_ + nb;
    const Eigen::VectorXd delta = bm - in_mean_;
    in_mean_ += delta * (nb / total);
    in_m2_ += bm2 + delta.cwiseProduct(delta) * (in_count_ * nb / total);
    in_count_ = total;

    const Eigen::MatrixXd Xn = normalize(X);
    nn::ForwardCache cache;
    const Eigen::MatrixXd diff = predictor_.forward_batch(Xn, cache) - target_.forward_batch(Xn);
    const Eigen::VectorXd errs = diff.colwise().squaredNorm().transpose() / static_cast<double>(config_.embed);
    for (Eigen::Index i = 0; i < errs.size(); ++i) {
        err_count_ += 1.0;
        const double d = errs[i] - err_mean_;
        err_mean_ += d / err_count_;
        err_m2_ += d * (errs[i] - err_mean_);
    }
    const nn::BackwardResult back = predictor_.backward(cache, diff * (2.0 / (config_.embed * nb)));
    nn::adam_step(predictor_, back.grad, opt_);
    return errs.mean();
}

void RndPair::save(io::Writer& w, std::ostream& out) const {
    w.put<std::int32_t>(config_.hidden);
    w.put<std::int32_t>(config_.embed);
    w.put<double>(config_.lr);
    w.put<double>(config_.clip);
    nn::save_mlp(out, target_);
    nn::save_mlp(out, predictor_);
    nn::save_adam(out, opt_);
    w.put<double>(in_count_);
    w.put_vector(in_mean_);
    w.put_vector(in_m2_);
    w.put<double>(err_count_);
    w.put<double>(err_mean_);
    w.put<double>(err_m2_);
}

void RndPair::load(io::Reader& r, std::istream& in) {
    config_.hidden = r.get<std::int32_t>();
    config_.embed = r.get<std::int32_t>();
    config_.lr = r.get<double>();
    config_.clip = r.get<double>();
    target_ = nn::load_mlp(in);
    predictor_ = nn::load_mlp(in);
    opt_ = nn::load_adam(in);
    in_count_ = r.get<double>();
    in_mean_ = r.get_vector();
    in_m2_ = r.get_vector();
    err_count_ = r.get<double>();
    err_mean_ = r.get<double>();
    err_m2_ = r.get<double>();
}

// ---------------------------------------------------------------- variance probe

ProbeResult reinforce_variance_probe(const ScalarCritic& critic, const nn::GaussianHead& head, ProbeSpace space,
                                     int n_samples, std::uint64_t seed) {
    (void)space;  // the space only decides which critic the caller wraps
    if (n_samples < 100) throw InputError("variance probe: need at least 100 samples");
    const int n = head.dim();
    if (n == 0) throw ConfigError("variance probe: empty head");
    nn::Rng rng(seed);
    std::normal_distribution<double> normal;
    const Eigen::VectorXd sigma = head.stddev();
    Eigen::VectorXd g_mean = Eigen::VectorXd::Zero(n), g_m2 = Eigen::VectorXd::Zero(n);
    double q_mean = 0.0, q_m2 = 0.0;
    Eigen::VectorXd eps(n);
    for (int i = 1; i <= n_samples; ++i) {
        for (int j = 0; j < n; ++j) eps[j] = normal(rng);
        const Eigen::VectorXd x = head.mean + sigma.cwiseProduct(eps);
        const double q = critic(x);
        // Score w.r.t. the mean: (x - mu) / sigma^2 = eps / sigma.
        const Eigen::VectorXd g = q * eps.cwiseQuotient(sigma);
        const Eigen::VectorXd dg = g - g_mean;
        g_mean += dg / i;
        g_m2 += dg.cwiseProduct(g - g_mean);
        const double dq = q - q_mean;
        q_mean += dq / i;
        q_m2 += dq * (q - q_mean);
    }
    ProbeResult r;
    r.grad_variance = g_m2.sum() / (n_samples - 1);
    r.q_variance = q_m2 / (n_samples - 1);
    r.q_mean = q_mean;
    r.dim = n;
    r.samples = n_samples;
    return r;
}

}  // namespace spaars::rl
