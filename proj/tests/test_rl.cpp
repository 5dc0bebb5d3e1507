#include "doctest.h"

#include <cmath>

#include "spaars/error.hpp"
#include "spaars/rl.hpp"

using namespace spaars;
using namespace spaars::rl;

namespace {

// Single affine layer Q(s, a) = w . [s; a] + b.
nn::Mlp affine(const Eigen::RowVectorXd& w, double b) {
    return nn::Mlp({Eigen::MatrixXd(w)}, {Eigen::VectorXd::Constant(1, b)}, {nn::Activation::Identity});
}

void set_member(CriticEnsemble& ens, int k, const nn::Mlp& net) {
    ens.member(k) = net;
    ens.target(k) = net;
}

Batch make_batch(int n, int sd, int ad) {
    Batch b;
    b.S = Eigen::MatrixXd::Zero(sd, n);
    b.A = Eigen::MatrixXd::Zero(ad, n);
    b.Z = Eigen::MatrixXd::Zero(1, n);
    b.r_ext = Eigen::VectorXd::Zero(n);
    b.r_int = Eigen::VectorXd::Zero(n);
    b.S_next = Eigen::MatrixXd::Zero(sd, n);
    b.done = Eigen::VectorXd::Zero(n);
    return b;
}

}  // namespace

TEST_CASE("replay buffer is a FIFO ring") {
    ReplayBuffer buf(3, 1, 1, 1);
    for (int i = 0; i < 5; ++i) {
        Transition t;
        t.s = Eigen::VectorXd::Constant(1, i);
        t.a = Eigen::VectorXd::Constant(1, 10 + i);
        t.s_next = t.s;
        buf.push(t);
    }
    CHECK(buf.size() == 3);
    CHECK(buf.at(0).s[0] == 2.0);
    CHECK(buf.at(2).s[0] == 4.0);
    const Batch all = buf.all();
    CHECK(all.S(0, 0) == 2.0);
    CHECK(all.A(0, 2) == 14.0);
    CHECK(all.Z(0, 1) == 0.0);  // no latent stored: zero-filled
    CHECK(buf.recent(2).S(0, 0) == 3.0);
    CHECK_THROWS_AS(buf.at(3), InputError);
    nn::Rng rng(1);
    CHECK_THROWS_AS(ReplayBuffer(3, 1, 1, 1).sample(4, rng), InputError);
}

TEST_CASE("td target with terminal and discount by hand") {
    nn::Rng rng(2);
    CriticConfig cc;
    CriticEnsemble ens(1, 1, cc, rng);
    for (int k = 0; k < ens.size(); ++k) set_member(ens, k, affine(Eigen::RowVectorXd::Zero(2), 2.0));
    Batch b = make_batch(2, 1, 1);
    b.r_ext << 1.0, 1.0;
    b.r_int << 0.5, 0.5;
    b.done << 0.0, 1.0;
    const NextActionFn next = [](const Eigen::MatrixXd& S, Eigen::MatrixXd& A, Eigen::VectorXd& logp) {
        A = Eigen::MatrixXd::Zero(1, S.cols());
        logp = Eigen::VectorXd::Constant(S.cols(), -1.5);
    };
    CriticUpdateConfig uc;
    uc.gamma = 0.9;
    uc.intrinsic_weight = 0.2;
    uc.entropy_alpha = 0.1;
    const Eigen::VectorXd y = ens.td_targets(b, next, uc, rng);
    CHECK(y[0] == doctest::Approx(1.0 + 0.2 * 0.5 + 0.9 * (2.0 + 0.1 * 1.5)));
    CHECK(y[1] == doctest::Approx(1.0 + 0.2 * 0.5));
    uc.gamma = 0.0;
    CHECK(ens.td_targets(b, next, uc, rng)[0] == doctest::Approx(1.1));
    CHECK_THROWS_AS(ens.td_targets(make_batch(0, 1, 1), next, uc, rng), InputError);
}

TEST_CASE("td target takes the minimum over target members") {
    nn::Rng rng(3);
    CriticConfig cc;
    cc.members = 2;
    cc.min_subset = 2;
    CriticEnsemble ens(1, 1, cc, rng);
    set_member(ens, 0, affine(Eigen::RowVectorXd::Zero(2), 4.0));
    set_member(ens, 1, affine(Eigen::RowVectorXd::Zero(2), -1.0));
    Batch b = make_batch(1, 1, 1);
    const NextActionFn next = [](const Eigen::MatrixXd& S, Eigen::MatrixXd& A, Eigen::VectorXd& logp) {
        A = Eigen::MatrixXd::Zero(1, S.cols());
        logp = Eigen::VectorXd::Zero(S.cols());
    };
    CriticUpdateConfig uc;
    uc.gamma = 0.5;
    CHECK(ens.td_targets(b, next, uc, rng)[0] == doctest::Approx(-0.5));
}

TEST_CASE("ensemble stats use the population std") {
    nn::Rng rng(4);
    CriticConfig cc;
    cc.members = 2;
    CriticEnsemble ens(1, 1, cc, rng);
    set_member(ens, 0, affine(Eigen::RowVectorXd::Zero(2), 1.0));
    set_member(ens, 1, affine(Eigen::RowVectorXd::Zero(2), 3.0));
    const auto st = ensemble_stats(ens, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
    CHECK(st.mean == doctest::Approx(2.0));
    CHECK(st.std == doctest::Approx(1.0));
}

TEST_CASE("polyak update blends target toward online") {
    nn::Rng rng(5);
    CriticConfig cc;
    cc.polyak = 0.9;
    CriticEnsemble ens(2, 1, cc, rng);
    Eigen::VectorXd shifted = ens.member(0).flat_params();
    shifted.array() += 1.0;
    ens.member(0).set_flat_params(shifted);
    const Eigen::VectorXd t0 = ens.target(0).flat_params();
    ens.polyak_update();
    const Eigen::VectorXd expected = 0.9 * t0 + 0.1 * shifted;
    CHECK((ens.target(0).flat_params() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("regression moves every member toward the targets") {
    nn::Rng rng(6);
    CriticConfig cc;
    cc.lr = 1e-2;
    CriticEnsemble ens(1, 1, cc, rng);
    Eigen::MatrixXd S = Eigen::MatrixXd::Random(1, 32), A = Eigen::MatrixXd::Random(1, 32);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(32, 1.5);
    const std::vector<double> first = ens.regress(S, A, y);
    std::vector<double> last;
    for (int i = 0; i < 300; ++i) last = ens.regress(S, A, y);
    for (int k = 0; k < ens.size(); ++k) CHECK(last[static_cast<std::size_t>(k)] < 0.1 * first[static_cast<std::size_t>(k)]);
}

TEST_CASE("rnd: zero error for a perfect predictor, decays when trained, target frozen") {
    nn::Rng rng(7);
    RndConfig rc;
    RndPair rnd(3, rc, rng);
    const Eigen::VectorXd s = Eigen::Vector2d(0.3, -0.1), z = Eigen::VectorXd::Constant(1, 0.4);
    RndPair copy = rnd;
    copy.copy_target_into_predictor();
    CHECK(copy.intrinsic(s, z) == doctest::Approx(0.0));

    const Eigen::VectorXd target_before = rnd.target().flat_params();
    Eigen::MatrixXd S(2, 16), Z(1, 16);
    for (int i = 0; i < 16; ++i) {
        S.col(i) = s;
        Z.col(i) = z;
    }
    rnd.update(S, Z);
    const double early = rnd.intrinsic(s, z);
    for (int i = 0; i < 400; ++i) rnd.update(S, Z);
    CHECK(rnd.intrinsic(s, z) < 0.2 * early);
    CHECK(rnd.intrinsic(s, z) >= 0.0);
    CHECK(rnd.target().flat_params() == target_before);
    CHECK_THROWS_AS(rnd.update(Eigen::MatrixXd(2, 0), Eigen::MatrixXd(1, 0)), InputError);
}

TEST_CASE("bc loss vanishes when the batch holds the actor's own mean actions") {
    nn::Rng rng(8);
    RawActor actor(1, Bounds::symmetric(2, 1.0), ActorConfig{}, rng);
    Batch b = make_batch(8, 1, 2);
    b.S = Eigen::MatrixXd::Random(1, 8);
    b.A = actor.mean_action(b.S);
    CHECK(raw_actor_bc_loss(actor, b) == doctest::Approx(0.0).epsilon(1e-14));
    b.A.array() += 0.1;
    CHECK(raw_actor_bc_loss(actor, b) == doctest::Approx(0.01 * 2).epsilon(1e-6));
    CHECK_THROWS_AS(raw_actor_bc_loss(actor, make_batch(0, 1, 2)), InputError);
}

TEST_CASE("bc updates fit a fixed target action") {
    nn::Rng rng(9);
    ActorConfig ac;
    ac.lr = 1e-2;
    RawActor actor(1, Bounds::symmetric(1, 1.0), ac, rng);
    Batch b = make_batch(16, 1, 1);
    b.A.setConstant(0.4);
    for (int i = 0; i < 500; ++i) raw_actor_bc_update(actor, b);
    CHECK(actor.mean_action(Eigen::VectorXd(Eigen::VectorXd::Zero(1)))[0] == doctest::Approx(0.4).epsilon(0.02));
}

TEST_CASE("raw SAC climbs a linear critic and stays in bounds") {
    nn::Rng rng(10);
    CriticConfig cc;
    cc.members = 2;
    CriticEnsemble ens(1, 1, cc, rng);
    Eigen::RowVectorXd w(2);
    w << 0.0, 1.0;  // Q = a
    set_member(ens, 0, affine(w, 0.0));
    set_member(ens, 1, affine(w, 0.0));
    ActorConfig ac;
    ac.lr = 3e-3;
    ac.auto_alpha = false;
    ac.init_alpha = 0.01;
    RawActor actor(1, Bounds::symmetric(1, 1.0), ac, rng);
    Batch b = make_batch(32, 1, 1);
    const double before = actor.mean_action(Eigen::VectorXd(Eigen::VectorXd::Zero(1)))[0];
    for (int i = 0; i < 300; ++i) raw_actor_sac_update(actor, ens, b, rng);
    const double after = actor.mean_action(Eigen::VectorXd(Eigen::VectorXd::Zero(1)))[0];
    CHECK(after > before);
    CHECK(after > 0.8);
    CHECK(after <= 1.0);
    CHECK_THROWS_AS(raw_actor_sac_update(actor, ens, make_batch(0, 1, 1), rng), InputError);
}

TEST_CASE("squashed sample log-prob matches change of variables") {
    nn::Rng rng(11);
    RawActor actor(1, Bounds::symmetric(1, 2.0), ActorConfig{}, rng);
    const Eigen::MatrixXd S = Eigen::MatrixXd::Zero(1, 1);
    Eigen::MatrixXd mean, log_std;
    actor.heads(S, mean, log_std);
    Eigen::MatrixXd A;
    Eigen::VectorXd logp;
    actor.sample(S, rng, A, logp);
    const double u = std::atanh(A(0, 0) / 2.0);
    const double sd = std::exp(log_std(0, 0));
    const double gauss = -0.5 * std::pow((u - mean(0, 0)) / sd, 2) - std::log(sd) - 0.5 * std::log(2 * M_PI);
    const double jac = std::log(2.0 * (1.0 - std::tanh(u) * std::tanh(u)));
    CHECK(logp[0] == doctest::Approx(gauss - jac).epsilon(1e-6));
}

TEST_CASE("latent actor leaves the frozen decoder untouched and rejects unfrozen models") {
    nn::Rng rng(12);
    cvae::CvaeModel model(1, 1, 1, Bounds::symmetric(1, 1.0), 8, rng);
    CriticConfig cc;
    cc.members = 2;
    CriticEnsemble ens(1, 1, cc, rng);
    LatentActor actor(1, 1, ActorConfig{}, rng);
    Batch b = make_batch(8, 1, 1);
    CHECK_THROWS_AS(latent_actor_update(actor, model, ens, b, rng), InvariantError);
    model.freeze();
    const auto fp = model.fingerprint();
    const Eigen::VectorXd actor_before = actor.net().flat_params();
    latent_actor_update(actor, model, ens, b, rng);
    CHECK(model.fingerprint() == fp);
    CHECK(actor.net().flat_params() != actor_before);
}

TEST_CASE("latent actor ascends the critic through the decoder") {
    // Q = a; the actor should move z toward whichever end of the prior box decodes highest.
    nn::Rng rng(13);
    cvae::CvaeModel model(1, 1, 1, Bounds::symmetric(1, 1.0), 8, rng);
    model.mean_norm().enabled = false;
    model.freeze();
    CriticConfig cc;
    cc.members = 2;
    CriticEnsemble ens(1, 1, cc, rng);
    Eigen::RowVectorXd w(2);
    w << 0.0, 1.0;
    set_member(ens, 0, affine(w, 0.0));
    set_member(ens, 1, affine(w, 0.0));
    ActorConfig ac;
    ac.lr = 3e-3;
    ac.auto_alpha = false;
    ac.init_alpha = 0.01;
    LatentActor actor(1, 1, ac, rng);
    Batch b = make_batch(32, 1, 1);
    const Eigen::VectorXd s = Eigen::VectorXd::Zero(1);
    const double before = model.decode(actor.mean_latent(model, s), s)[0];
    for (int i = 0; i < 300; ++i) latent_actor_update(actor, model, ens, b, rng);
    const double after = model.decode(actor.mean_latent(model, s), s)[0];
    CHECK(after > before);
    // The mean latent never leaves the prior box.
    const auto p = model.prior(s);
    const double z = actor.mean_latent(model, s)[0];
    CHECK(std::abs(z - p.mean[0]) <= LatentActor::kPriorBox * std::exp(p.log_std[0]) + 1e-12);
}

TEST_CASE("variance probe: constant critic gives c^2 n / sigma^2") {
    nn::GaussianHead head;
    head.mean = Eigen::VectorXd::Zero(4);
    head.log_std = Eigen::VectorXd::Constant(4, std::log(0.5));
    const ScalarCritic c = [](const Eigen::VectorXd&) { return 2.0; };
    const ProbeResult r4 = reinforce_variance_probe(c, head, ProbeSpace::Raw, 100000, 1);
    CHECK(r4.grad_variance == doctest::Approx(4.0 * 4 / 0.25).epsilon(0.03));
    CHECK(r4.q_variance == doctest::Approx(0.0));
    nn::GaussianHead small;
    small.mean = Eigen::VectorXd::Zero(1);
    small.log_std = Eigen::VectorXd::Constant(1, std::log(0.5));
    const ProbeResult r1 = reinforce_variance_probe(c, small, ProbeSpace::Latent, 100000, 2);
    CHECK(r1.grad_variance / r4.grad_variance == doctest::Approx(0.25).epsilon(0.05));
    // Halving sigma quadruples the variance.
    small.log_std.setConstant(std::log(0.25));
    const ProbeResult r1s = reinforce_variance_probe(c, small, ProbeSpace::Latent, 100000, 2);
    CHECK(r1s.grad_variance / r1.grad_variance == doctest::Approx(4.0).epsilon(0.01));
    CHECK_THROWS_AS(reinforce_variance_probe(c, head, ProbeSpace::Raw, 99, 1), InputError);
}
