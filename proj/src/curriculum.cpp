#include "spaars/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "spaars/error.hpp"
#include "spaars/io.hpp"

namespace spaars::curriculum {

using json = nlohmann::ordered_json;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Schedule: return "schedule";
        case Variant::Gate: return "gate";
        case Variant::LatentOnly: return "latent_only";
    }
    return "unknown";
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::CvaePretrain: return "CvaePretrain";
        case Phase::LatentExploration: return "LatentExploration";
        case Phase::Transition: return "Transition";
        case Phase::RawExploitation: return "RawExploitation";
        case Phase::GateActive: return "GateActive";
    }
    return "unknown";
}

std::string to_string(Mode m) { return m == Mode::Raw ? "raw" : "latent"; }

std::string to_string(GateReason r) {
    switch (r) {
        case GateReason::Warmup: return "warmup";
        case GateReason::MarginFail: return "margin_fail";
        case GateReason::Disagreement: return "disagreement";
        case GateReason::Fired: return "fired";
    }
    return "unknown";
}

Variant parse_variant(const std::string& s) {
    if (s == "schedule") return Variant::Schedule;
    if (s == "gate") return Variant::Gate;
    if (s == "latent_only") return Variant::LatentOnly;
    throw ConfigError("unknown variant '" + s + "' (expected schedule, gate or latent_only)");
}

// ---------------------------------------------------------------- plateau

void PlateauConfig::validate() const {
    if (window <= 0) throw ConfigError("plateau: window must be positive");
    if (!(tau > 0.0)) throw ConfigError("plateau: tau must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("plateau: ema_decay must lie in [0, 1)");
}

bool plateau_detect(PlateauTracker& tracker, double r_int_episode) {
    auto& h = tracker.ema_history;
    const double d = tracker.config.ema_decay;
    h.push_back(h.empty() ? r_int_episode : d * h.back() + (1.0 - d) * r_int_episode);
    const int t = static_cast<int>(h.size());
    const int w = tracker.config.window;
    if (t <= w) return false;
    const double now = h[static_cast<std::size_t>(t - 1)];
    const double then = h[static_cast<std::size_t>(t - 1 - w)];
    if (then == 0.0) return now == 0.0;
    return std::abs(now - then) / std::abs(then) < tracker.config.tau;
}

// ---------------------------------------------------------------- schedule and blend

double alpha_schedule(std::int64_t t0, std::int64_t ramp_steps, std::int64_t step) {
    if (ramp_steps <= 0) return step >= t0 ? 1.0 : 0.0;
    return std::clamp(static_cast<double>(step - t0) / static_cast<double>(ramp_steps), 0.0, 1.0);
}

Eigen::VectorXd blend(const Eigen::VectorXd& a_z, const Eigen::VectorXd& a_raw, double alpha, const Bounds& bounds) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("blend: alpha must lie in [0, 1]");
    if (a_z.size() != a_raw.size() || a_z.size() != bounds.dim()) throw ConfigError("blend: dimension mismatch");
    // Exact endpoints, independent of floating-point mixing.
    if (alpha == 0.0) return bounds.clip(a_z);
    if (alpha == 1.0) return bounds.clip(a_raw);
    return bounds.clip((1.0 - alpha) * a_z + alpha * a_raw);
}

// ---------------------------------------------------------------- gate

void GateConfig::validate() const {
    if (!(margin >= 0.0)) throw ConfigError("gate: margin must be >= 0");
    if (!(sigma_max > 0.0)) throw ConfigError("gate: sigma_max must be positive");
    if (commit < 1) throw ConfigError("gate: commitment H must be >= 1");
}

GateDecision gate_decide(const rl::EnsembleStats& raw, const rl::EnsembleStats& latent, const GateConfig& config,
                         std::int64_t steps_in_gate, std::int64_t t_warm) {
    GateDecision d;
    d.q_raw_mean = raw.mean;
    d.q_z_mean = latent.mean;
    d.sigma_raw = raw.std;
    d.mode = Mode::Latent;
    if (steps_in_gate < t_warm) {
        d.reason = GateReason::Warmup;
    } else if (!(raw.std < config.sigma_max)) {
        d.reason = GateReason::Disagreement;
    } else if (!(raw.mean - latent.mean > config.margin)) {
        d.reason = GateReason::MarginFail;
    } else {
        d.reason = GateReason::Fired;
        d.mode = Mode::Raw;
    }
    return d;
}

GateDecision gate_decide(const Eigen::VectorXd& s, const Eigen::VectorXd& a_z, const Eigen::VectorXd& a_raw,
                         const rl::CriticEnsemble& ens, const GateConfig& config, std::int64_t steps_in_gate,
                         std::int64_t t_warm) {
    return gate_decide(rl::ensemble_stats(ens, s, a_raw), rl::ensemble_stats(ens, s, a_z), config, steps_in_gate,
                       t_warm);
}

// ---------------------------------------------------------------- phase machine

void CurriculumConfig::validate() const {
    if (!(eps_bc > 0.0)) throw ConfigError("curriculum: eps_bc must be positive");
    if (!(bc_ema_decay >= 0.0 && bc_ema_decay < 1.0)) throw ConfigError("curriculum: bc_ema_decay must lie in [0, 1)");
    if (variant == Variant::Schedule && ramp_steps == 0) throw ConfigError("curriculum: ramp_steps must be positive");
    plateau.validate();
    gate.validate();
}

void phase_step(CurriculumState& state, const CurriculumConfig& config, std::int64_t ramp_steps,
                const PhaseSignals& signals) {
    switch (state.phase) {
        case Phase::CvaePretrain:
            state.phase = Phase::LatentExploration;
            state.phase_start = state.env_step;
            state.alpha = 0.0;
            break;
        case Phase::LatentExploration: {
            state.alpha = 0.0;
            // Both conditions: novelty has plateaued and pi_raw is a competent clone.
            if (!(signals.plateaued && signals.l_bc < config.eps_bc)) break;
            state.exit_met = true;
            if (config.variant == Variant::Schedule) {
                state.phase = Phase::Transition;
                state.phase_start = state.env_step;
            } else if (config.variant == Variant::Gate) {
                state.phase = Phase::GateActive;
                state.phase_start = state.env_step;
            }
            break;
        }
        case Phase::Transition:
            state.alpha = alpha_schedule(state.phase_start, ramp_steps, state.env_step);
            if (state.alpha >= 1.0) {
                state.alpha = 1.0;
                state.phase = Phase::RawExploitation;
                state.phase_start = state.env_step;
            }
            break;
        case Phase::RawExploitation:
            state.alpha = 1.0;
            break;
        case Phase::GateActive:
            break;
    }
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    (void)envs::make_env(env, seed);
    if (total_steps <= 0) throw ConfigError("train: total_steps must be positive");
    if (eval_interval < 0) throw ConfigError("train: eval_interval must be >= 0");
    if (eval_episodes <= 0) throw ConfigError("train: eval_episodes must be positive");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (replay_capacity < batch_size) throw ConfigError("train: replay_capacity must be >= batch_size");
    if (learning_starts < 0) throw ConfigError("train: learning_starts must be >= 0");
    if (!(intrinsic_weight >= 0.0)) throw ConfigError("train: intrinsic_weight must be >= 0");
    cvae.validate();
    critic.validate();
    latent_actor.validate();
    raw_actor.validate();
    rnd.validate();
    curriculum.validate();
    if (heatmaps && env != "pointmaze-sparse") throw ConfigError("train: heatmaps need the 2-D pointmaze-sparse env");
}

std::int64_t TrainConfig::resolved_ramp_steps() const {
    return curriculum.ramp_steps > 0 ? curriculum.ramp_steps : std::max<std::int64_t>(1, total_steps / 4);
}

std::int64_t TrainConfig::resolved_t_warm(int horizon) const {
    return curriculum.gate.t_warm >= 0 ? curriculum.gate.t_warm
                                       : 2LL * curriculum.plateau.window * static_cast<std::int64_t>(horizon);
}

namespace {

// Reads keys from a JSON object and rejects any key nobody asked for.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ~Fields() = default;

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json cvae_json(const cvae::CvaeTrainConfig& c) {
    return json{{"beta_max", c.beta_max},         {"anneal_steps", c.anneal_steps}, {"free_bits", c.free_bits},
                {"batch_size", c.batch_size},     {"epochs", c.epochs},             {"use_mean_batchnorm", c.use_mean_batchnorm},
                {"latent_dim", c.latent_dim},     {"hidden", c.hidden},             {"lr", c.lr},
                {"batchnorm_momentum", c.batchnorm_momentum}};
}

void read_cvae(const json& j, cvae::CvaeTrainConfig& c) {
    Fields f(j, "cvae");
    f.get("beta_max", c.beta_max);
    f.get("anneal_steps", c.anneal_steps);
    f.get("free_bits", c.free_bits);
    f.get("batch_size", c.batch_size);
    f.get("epochs", c.epochs);
    f.get("use_mean_batchnorm", c.use_mean_batchnorm);
    f.get("latent_dim", c.latent_dim);
    f.get("hidden", c.hidden);
    f.get("lr", c.lr);
    f.get("batchnorm_momentum", c.batchnorm_momentum);
    f.finish();
}

json actor_json(const rl::ActorConfig& c) {
    return json{{"hidden", c.hidden},       {"lr", c.lr},
                {"alpha_lr", c.alpha_lr},   {"init_alpha", c.init_alpha},
                {"auto_alpha", c.auto_alpha}, {"target_entropy", c.target_entropy}};
}

void read_actor(const json& j, rl::ActorConfig& c, const char* where) {
    Fields f(j, where);
    f.get("hidden", c.hidden);
    f.get("lr", c.lr);
    f.get("alpha_lr", c.alpha_lr);
    f.get("init_alpha", c.init_alpha);
    f.get("auto_alpha", c.auto_alpha);
    f.get("target_entropy", c.target_entropy);
    f.finish();
}

}  // namespace

std::string to_json(const TrainConfig& c) {
    const auto& cc = c.curriculum;
    json j{
        {"env", c.env},
        {"seed", c.seed},
        {"total_steps", c.total_steps},
        {"eval_interval", c.eval_interval},
        {"eval_episodes", c.eval_episodes},
        {"batch_size", c.batch_size},
        {"replay_capacity", c.replay_capacity},
        {"learning_starts", c.learning_starts},
        {"intrinsic_weight", c.intrinsic_weight},
        {"heatmaps", c.heatmaps},
        {"cvae", cvae_json(c.cvae)},
        {"critic",
         {{"members", c.critic.members},
          {"min_subset", c.critic.min_subset},
          {"hidden", c.critic.hidden},
          {"lr", c.critic.lr},
          {"polyak", c.critic.polyak}}},
        {"latent_actor", actor_json(c.latent_actor)},
        {"raw_actor", actor_json(c.raw_actor)},
        {"rnd", {{"hidden", c.rnd.hidden}, {"embed", c.rnd.embed}, {"lr", c.rnd.lr}, {"clip", c.rnd.clip}}},
        {"curriculum",
         {{"variant", to_string(cc.variant)},
          {"eps_bc", cc.eps_bc},
          {"bc_ema_decay", cc.bc_ema_decay},
          {"ramp_steps", cc.ramp_steps},
          {"plateau",
           {{"window", cc.plateau.window}, {"tau", cc.plateau.tau}, {"ema_decay", cc.plateau.ema_decay}}},
          {"gate",
           {{"margin", cc.gate.margin},
            {"sigma_max", cc.gate.sigma_max},
            {"t_warm", cc.gate.t_warm},
            {"commit", cc.gate.commit}}}}},
    };
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    TrainConfig c;
    Fields f(j, "config");
    f.get("env", c.env);
    f.get("seed", c.seed);
    f.get("total_steps", c.total_steps);
    f.get("eval_interval", c.eval_interval);
    f.get("eval_episodes", c.eval_episodes);
    f.get("batch_size", c.batch_size);
    f.get("replay_capacity", c.replay_capacity);
    f.get("learning_starts", c.learning_starts);
    f.get("intrinsic_weight", c.intrinsic_weight);
    f.get("heatmaps", c.heatmaps);
    if (const json* s = f.sub("cvae")) read_cvae(*s, c.cvae);
    if (const json* s = f.sub("critic")) {
        Fields g(*s, "critic");
        g.get("members", c.critic.members);
        g.get("min_subset", c.critic.min_subset);
        g.get("hidden", c.critic.hidden);
        g.get("lr", c.critic.lr);
        g.get("polyak", c.critic.polyak);
        g.finish();
    }
    if (const json* s = f.sub("latent_actor")) read_actor(*s, c.latent_actor, "latent_actor");
    if (const json* s = f.sub("raw_actor")) read_actor(*s, c.raw_actor, "raw_actor");
    if (const json* s = f.sub("rnd")) {
        Fields g(*s, "rnd");
        g.get("hidden", c.rnd.hidden);
        g.get("embed", c.rnd.embed);
        g.get("lr", c.rnd.lr);
        g.get("clip", c.rnd.clip);
        g.finish();
    }
    if (const json* s = f.sub("curriculum")) {
        auto& cc = c.curriculum;
        Fields g(*s, "curriculum");
        std::string variant = to_string(cc.variant);
        g.get("variant", variant);
        cc.variant = parse_variant(variant);
        g.get("eps_bc", cc.eps_bc);
        g.get("bc_ema_decay", cc.bc_ema_decay);
        g.get("ramp_steps", cc.ramp_steps);
        if (const json* p = g.sub("plateau")) {
            Fields h(*p, "curriculum.plateau");
            h.get("window", cc.plateau.window);
            h.get("tau", cc.plateau.tau);
            h.get("ema_decay", cc.plateau.ema_decay);
            h.finish();
        }
        if (const json* p = g.sub("gate")) {
            Fields h(*p, "curriculum.gate");
            h.get("margin", cc.gate.margin);
            h.get("sigma_max", cc.gate.sigma_max);
            h.get("t_warm", cc.gate.t_warm);
            h.get("commit", cc.gate.commit);
            h.finish();
        }
        g.finish();
    }
    f.finish();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- trainer

namespace {

constexpr std::uint64_t kEvalSeedOffset = 1000003;

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

Trainer::Trainer(const TrainConfig& config, const envs::OfflineDataset& dataset,
                 std::optional<cvae::CvaeModel> pretrained)
    : config_(config), rng_(config.seed) {
    config_.validate();
    env_ = envs::make_env(config_.env, config_.seed);
    const envs::EnvSpec& spec = env_->spec();
    envs::validate_dataset(dataset, spec);
    if (!dataset.meta.env.empty() && dataset.meta.env != spec.name &&
        dataset.meta.env.rfind(spec.name, 0) != 0)
        throw ConfigError("dataset was generated for '" + dataset.meta.env + "', config env is '" + spec.name + "'");

    if (pretrained) {
        model_ = std::move(*pretrained);
        if (model_.state_dim() != spec.state_dim || model_.action_dim() != spec.action_dim)
            throw ConfigError("pretrained cvae dims do not match env");
        model_.freeze();
    } else {
        model_ = cvae::train_cvae(dataset, spec.action_bounds, config_.cvae, config_.seed).model;
    }
    const int k = model_.latent_dim();

    critics_ = rl::CriticEnsemble(spec.state_dim, spec.action_dim, config_.critic, rng_);
    raw_actor_ = rl::RawActor(spec.state_dim, spec.action_bounds, config_.raw_actor, rng_);
    latent_actor_ = rl::LatentActor(spec.state_dim, k, config_.latent_actor, rng_);
    rnd_ = rl::RndPair(spec.state_dim + k, config_.rnd, rng_);
    buffer_ = rl::ReplayBuffer(config_.replay_capacity, spec.state_dim, spec.action_dim, k);
    phase1_buffer_ = rl::ReplayBuffer(config_.replay_capacity, spec.state_dim, spec.action_dim, k);
    ramp_steps_ = config_.resolved_ramp_steps();
    t_warm_ = config_.resolved_t_warm(spec.horizon);

    state_.plateau.config = config_.curriculum.plateau;
    state_.phase = Phase::CvaePretrain;
    note_phase();
    phase_step(state_, config_.curriculum, ramp_steps_, {});
    note_phase();
    obs_ = env_->reset();
}

void Trainer::note_phase() {
    if (result_.phases_seen.empty() || result_.phases_seen.back() != state_.phase)
        result_.phases_seen.push_back(state_.phase);
}

Eigen::VectorXd Trainer::policy_action(const Eigen::VectorXd& s, GateDecision* decision) const {
    const Eigen::VectorXd a_z = model_.decode(latent_actor_.mean_latent(model_, s), s);
    switch (state_.phase) {
        case Phase::CvaePretrain:
        case Phase::LatentExploration:
            return a_z;
        case Phase::Transition:
            return blend(a_z, raw_actor_.mean_action(s), state_.alpha, model_.bounds());
        case Phase::RawExploitation:
            return raw_actor_.mean_action(s);
        case Phase::GateActive: {
            const Eigen::VectorXd a_raw = raw_actor_.mean_action(s);
            const GateDecision d = gate_decide(s, a_z, a_raw, critics_, config_.curriculum.gate,
                                               state_.env_step - state_.phase_start, t_warm_);
            if (decision) *decision = d;
            return d.mode == Mode::Raw ? a_raw : a_z;
        }
    }
    return a_z;
}

double Trainer::evaluate(int episodes) {
    auto env = envs::make_env(config_.env, config_.seed + kEvalSeedOffset);
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        Eigen::VectorXd s = env->reset();
        for (;;) {
            const envs::StepResult r = env->step(policy_action(s));
            total += r.reward;
            if (r.terminal || r.truncated) break;
            s = r.state;
        }
    }
    return total / episodes;
}

void Trainer::step() {
    const Eigen::VectorXd s = obs_;
    const Eigen::MatrixXd S = s;
    Eigen::MatrixXd Z;
    Eigen::VectorXd logp;
    latent_actor_.sample(model_, S, rng_, Z, logp);
    const Eigen::VectorXd z = Z.col(0);
    const Eigen::VectorXd a_z = model_.decode(z, s);

    Eigen::VectorXd a = a_z;
    rl::Source source = rl::Source::Latent;
    GateDecision gate;
    bool gated = false;
    if (state_.phase == Phase::Transition || state_.phase == Phase::RawExploitation ||
        state_.phase == Phase::GateActive) {
        Eigen::MatrixXd A_raw;
        raw_actor_.sample(S, rng_, A_raw, logp);
        const Eigen::VectorXd a_raw = A_raw.col(0);
        if (state_.phase == Phase::GateActive) {
            gate = state_.commitment.next(config_.curriculum.gate.commit, [&] {
                return gate_decide(s, a_z, a_raw, critics_, config_.curriculum.gate,
                                   state_.env_step - state_.phase_start, t_warm_);
            });
            gated = true;
            a = gate.mode == Mode::Raw ? a_raw : a_z;
            source = gate.mode == Mode::Raw ? rl::Source::Raw : rl::Source::Latent;
        } else {
            a = blend(a_z, a_raw, state_.alpha, model_.bounds());
            source = state_.alpha >= 1.0 ? rl::Source::Raw : rl::Source::Blend;
        }
    }

    const envs::StepResult r = env_->step(a);
    const bool exploring = state_.phase == Phase::LatentExploration;
    const double r_int = exploring ? rnd_.intrinsic(s, z) : 0.0;

    rl::Transition t;
    t.s = s;
    t.a = a;
    if (source != rl::Source::Raw) t.z = z;
    t.r_ext = r.reward;
    t.r_int = r_int;
    t.s_next = r.state;
    t.done = r.terminal;
    t.source = source;
    buffer_.push(t);
    if (exploring) phase1_buffer_.push(t);

    episode_r_int_ += r_int;
    ++episode_len_;
    obs_ = r.state;
    if (r.terminal || r.truncated) {
        if (exploring) state_.plateaued = plateau_detect(state_.plateau, episode_r_int_ / episode_len_);
        episode_r_int_ = 0.0;
        episode_len_ = 0;
        obs_ = env_->reset();
    }
    ++state_.env_step;

    if (state_.env_step >= config_.learning_starts && buffer_.size() >= config_.batch_size) update_learners();

    const Phase before = state_.phase;
    PhaseSignals sig;
    sig.plateaued = state_.plateaued;
    sig.l_bc = state_.have_l_bc ? state_.l_bc : std::numeric_limits<double>::infinity();
    phase_step(state_, config_.curriculum, ramp_steps_, sig);
    if (before == Phase::LatentExploration && state_.exit_met && result_.phase1_exit_step < 0)
        result_.phase1_exit_step = state_.env_step;
    note_phase();

    log_step(gated ? &gate : nullptr, r.reward, r_int);

    if (config_.eval_interval > 0 && state_.env_step % config_.eval_interval == 0) {
        const double v = evaluate(config_.eval_episodes);
        result_.evals.push_back({state_.env_step, v});
        log_eval(v);
        if (config_.heatmaps && state_.phase == Phase::GateActive)
            result_.gate_snapshots.push_back(gate_sweep(config_.curriculum.gate.margin, config_.curriculum.gate.sigma_max));
    }
}

void Trainer::update_learners() {
    const rl::Batch b = buffer_.sample(config_.batch_size, rng_);
    const Phase phase = state_.phase;
    const bool exploring = phase == Phase::LatentExploration;

    // The soft-target entropy term is folded into logp_next (pre-multiplied by the
    // acting policy's temperature), so the update itself runs with entropy_alpha = 1.
    rl::NextActionFn next;
    auto latent_next = [this](const Eigen::MatrixXd& S2, Eigen::MatrixXd& A2, Eigen::VectorXd& lp) {
        Eigen::MatrixXd Z2;
        latent_actor_.sample(model_, S2, rng_, Z2, lp);
        A2 = model_.decode_batch(Z2, S2);
        lp *= latent_actor_.alpha();
    };
    auto raw_next = [this](const Eigen::MatrixXd& S2, Eigen::MatrixXd& A2, Eigen::VectorXd& lp) {
        raw_actor_.sample(S2, rng_, A2, lp);
        lp *= raw_actor_.alpha();
    };
    if (exploring) {
        next = latent_next;
    } else if (phase == Phase::GateActive) {
        next = [&](const Eigen::MatrixXd& S2, Eigen::MatrixXd& A2, Eigen::VectorXd& lp) {
            Eigen::MatrixXd Az, Ar;
            Eigen::VectorXd lz, lr;
            latent_next(S2, Az, lz);
            raw_next(S2, Ar, lr);
            const Eigen::VectorXd qz = critics_.q_all(S2, Az).colwise().mean().transpose();
            const Eigen::VectorXd qr = critics_.q_all(S2, Ar).colwise().mean().transpose();
            A2 = Az;
            lp = lz;
            for (Eigen::Index c = 0; c < S2.cols(); ++c) {
                if (qr[c] > qz[c]) {
                    A2.col(c) = Ar.col(c);
                    lp[c] = lr[c];
                }
            }
        };
    } else {
        next = raw_next;
    }

    rl::CriticUpdateConfig cu;
    cu.gamma = env_->spec().gamma;
    cu.intrinsic_weight = exploring && !state_.exit_met ? config_.intrinsic_weight : 0.0;
    cu.entropy_alpha = 1.0;
    rl::critic_update(critics_, b, next, cu, rng_);

    if (phase != Phase::RawExploitation) rl::latent_actor_update(latent_actor_, model_, critics_, b, rng_);

    if (exploring) {
        last_l_bc_ = rl::raw_actor_bc_update(raw_actor_, b);
        const double d = config_.curriculum.bc_ema_decay;
        state_.l_bc = state_.have_l_bc ? d * state_.l_bc + (1.0 - d) * last_l_bc_ : last_l_bc_;
        state_.have_l_bc = true;
        rnd_.update(b.S, b.Z);
    } else {
        rl::raw_actor_sac_update(raw_actor_, critics_, b, rng_);
    }
}

void Trainer::log_step(const GateDecision* gate, double r_ext, double r_int) {
    if (!metrics_) return;
    json j;
    j["kind"] = "step";
    j["step"] = state_.env_step;
    j["seed"] = config_.seed;
    j["phase"] = to_string(state_.phase);
    j["alpha"] = state_.alpha;
    const rl::Transition& last = buffer_.at(buffer_.size() - 1);
    j["mode"] = gate ? to_string(gate->mode) : rl::to_string(last.source);
    j["reason"] = gate ? json(to_string(gate->reason)) : json(nullptr);
    j["q_raw_mean"] = gate ? number_or_null(gate->q_raw_mean) : json(nullptr);
    j["q_z_mean"] = gate ? number_or_null(gate->q_z_mean) : json(nullptr);
    j["sigma_raw"] = gate ? number_or_null(gate->sigma_raw) : json(nullptr);
    j["r_ext"] = r_ext;
    j["r_int"] = r_int;
    j["r_int_ema"] = state_.plateau.ema();
    j["l_bc"] = state_.have_l_bc ? number_or_null(state_.l_bc) : json(nullptr);
    j["eval_return"] = nullptr;
    j["state"] = std::vector<double>(last.s.data(), last.s.data() + last.s.size());
    (*metrics_) << j.dump() << '\n';
}

void Trainer::log_eval(double value) {
    if (!metrics_) return;
    json j;
    j["kind"] = "eval";
    j["step"] = state_.env_step;
    j["seed"] = config_.seed;
    j["phase"] = to_string(state_.phase);
    j["alpha"] = state_.alpha;
    j["mode"] = nullptr;
    j["reason"] = nullptr;
    j["q_raw_mean"] = nullptr;
    j["q_z_mean"] = nullptr;
    j["sigma_raw"] = nullptr;
    j["r_ext"] = nullptr;
    j["r_int"] = nullptr;
    j["r_int_ema"] = state_.plateau.ema();
    j["l_bc"] = state_.have_l_bc ? number_or_null(state_.l_bc) : json(nullptr);
    j["eval_return"] = value;
    j["state"] = nullptr;
    (*metrics_) << j.dump() << '\n';
}

Eigen::MatrixXd Trainer::sweep_grid() const {
    const envs::EnvSpec& spec = env_->spec();
    if (spec.name == "pointmaze-sparse") {
        std::vector<Eigen::Vector4d> pts;
        for (double y = 0.125; y < envs::PointMaze::kSize; y += 0.25)
            for (double x = 0.125; x < envs::PointMaze::kSize; x += 0.25)
                if (envs::PointMaze::position_free(x, y)) pts.emplace_back(x, y, 0.0, 0.0);
        Eigen::MatrixXd g(4, static_cast<Eigen::Index>(pts.size()));
        for (std::size_t i = 0; i < pts.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = pts[i];
        return g;
    }
    if (spec.state_dim == 1 && spec.horizon > 1) {
        Eigen::MatrixXd g(1, 41);
        for (int i = 0; i < 41; ++i) g(0, i) = -1.0 + 0.05 * i;
        return g;
    }
    return Eigen::MatrixXd::Zero(spec.state_dim, 1);
}

GateSnapshot Trainer::gate_sweep(double margin, double sigma_max) const {
    GateSnapshot snap;
    snap.step = state_.env_step;
    snap.states = sweep_grid();
    GateConfig gc = config_.curriculum.gate;
    gc.margin = margin;
    gc.sigma_max = sigma_max;
    const Eigen::MatrixXd Z = latent_actor_.mean_latent(model_, snap.states);
    const Eigen::MatrixXd Az = model_.decode_batch(Z, snap.states);
    const Eigen::MatrixXd Ar = raw_actor_.mean_action(snap.states);
    const Eigen::MatrixXd qz = critics_.q_all(snap.states, Az);
    const Eigen::MatrixXd qr = critics_.q_all(snap.states, Ar);
    for (Eigen::Index c = 0; c < snap.states.cols(); ++c) {
        rl::EnsembleStats sr, sz;
        sr.mean = qr.col(c).mean();
        sr.std = std::sqrt((qr.col(c).array() - sr.mean).square().mean());
        sz.mean = qz.col(c).mean();
        sz.std = std::sqrt((qz.col(c).array() - sz.mean).square().mean());
        snap.fired.push_back(gate_decide(sr, sz, gc, 0, 0).mode == Mode::Raw);
    }
    return snap;
}

TrainResult Trainer::run() {
    while (state_.env_step < config_.total_steps) step();
    result_.final_eval_return = evaluate(config_.eval_episodes);
    return result_;
}

namespace {
constexpr char kCheckpointMagic[5] = "SPCK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    io::Writer w(out);
    w.put_magic(kCheckpointMagic, kCheckpointVersion);
    w.put_string(to_json(config_));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(state_.phase));
    w.put<double>(state_.alpha);
    w.put<std::int64_t>(state_.env_step);
    w.put<std::int64_t>(state_.phase_start);
    w.put<std::uint8_t>(state_.exit_met ? 1 : 0);
    w.put_vector(Eigen::Map<const Eigen::VectorXd>(state_.plateau.ema_history.data(),
                                                   static_cast<Eigen::Index>(state_.plateau.ema_history.size())));
    w.put<std::uint8_t>(state_.plateaued ? 1 : 0);
    w.put<double>(state_.l_bc);
    w.put<std::uint8_t>(state_.have_l_bc ? 1 : 0);
    w.put<std::int32_t>(state_.commitment.remaining);
    const GateDecision& h = state_.commitment.held;
    w.put<std::uint8_t>(static_cast<std::uint8_t>(h.mode));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(h.reason));
    w.put<double>(h.q_raw_mean);
    w.put<double>(h.q_z_mean);
    w.put<double>(h.sigma_raw);
    w.put_rng(rng_);
    w.put_vector(obs_);
    w.put<double>(episode_r_int_);
    w.put<std::int32_t>(episode_len_);
    w.put<double>(last_l_bc_);
    env_->save(w);
    model_.save(out);
    critics_.save(w, out);
    raw_actor_.save(w, out);
    latent_actor_.save(w, out);
    rnd_.save(w, out);
    buffer_.save(w);
    phase1_buffer_.save(w);
    w.put<std::uint64_t>(result_.evals.size());
    for (const auto& e : result_.evals) {
        w.put<std::int64_t>(e.step);
        w.put<double>(e.eval_return);
    }
    w.put<std::uint64_t>(result_.phases_seen.size());
    for (Phase p : result_.phases_seen) w.put<std::uint8_t>(static_cast<std::uint8_t>(p));
    w.put<std::int64_t>(result_.phase1_exit_step);
    if (!out) throw ConfigError("failed writing checkpoint " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path);
    io::Reader r(in);
    if (r.expect_magic(kCheckpointMagic) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    const TrainConfig saved = train_config_from_json(r.get_string());
    if (to_json(saved) != to_json(config_)) throw ConfigError("checkpoint was written with a different config");
    state_.phase = static_cast<Phase>(r.get<std::uint8_t>());
    state_.alpha = r.get<double>();
    state_.env_step = r.get<std::int64_t>();
    state_.phase_start = r.get<std::int64_t>();
    state_.exit_met = r.get<std::uint8_t>() != 0;
    const Eigen::VectorXd hist = r.get_vector();
    state_.plateau.ema_history.assign(hist.data(), hist.data() + hist.size());
    state_.plateaued = r.get<std::uint8_t>() != 0;
    state_.l_bc = r.get<double>();
    state_.have_l_bc = r.get<std::uint8_t>() != 0;
    state_.commitment.remaining = r.get<std::int32_t>();
    GateDecision& h = state_.commitment.held;
    h.mode = static_cast<Mode>(r.get<std::uint8_t>());
    h.reason = static_cast<GateReason>(r.get<std::uint8_t>());
    h.q_raw_mean = r.get<double>();
    h.q_z_mean = r.get<double>();
    h.sigma_raw = r.get<double>();
    r.get_rng(rng_);
    obs_ = r.get_vector();
    episode_r_int_ = r.get<double>();
    episode_len_ = r.get<std::int32_t>();
    last_l_bc_ = r.get<double>();
    env_->load(r);
    model_ = cvae::CvaeModel::load(in);
    critics_.load(r, in);
    raw_actor_.load(r, in);
    latent_actor_.load(r, in);
    rnd_.load(r, in);
    buffer_.load(r);
    phase1_buffer_.load(r);
    result_ = TrainResult{};
    const auto ne = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < ne; ++i) {
        EvalPoint e;
        e.step = r.get<std::int64_t>();
        e.eval_return = r.get<double>();
        result_.evals.push_back(e);
    }
    const auto np = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < np; ++i) result_.phases_seen.push_back(static_cast<Phase>(r.get<std::uint8_t>()));
    result_.phase1_exit_step = r.get<std::int64_t>();
}

TrainResult run_training(const TrainConfig& config, const envs::OfflineDataset& dataset, std::ostream* metrics,
                         std::optional<cvae::CvaeModel> pretrained) {
    Trainer trainer(config, dataset, std::move(pretrained));
    trainer.set_metrics(metrics);
    return trainer.run();
}

double jaccard(const std::vector<bool>& a, const std::vector<bool>& b) {
    if (a.size() != b.size()) throw ConfigError("jaccard: sets over different grids");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace spaars::curriculum
