#include "doctest.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include "spaars/error.hpp"
#include "spaars/nn.hpp"
#include "support.hpp"

using namespace spaars;
using nn::Activation;

TEST_CASE("analytic gradients match central differences on random nets") {
    const testing::FdCheck fd = testing::fd_check_random_nets(50, 2024);
    CHECK(fd.nets == 50);
    CHECK(fd.params_checked > 500);
    CHECK(fd.worst_rel < 1e-4);
}

TEST_CASE("forward pass matches a hand computation") {
    Eigen::MatrixXd w1(2, 2), w2(1, 2);
    w1 << 1.0, -1.0, 0.5, 2.0;
    w2 << 2.0, -1.0;
    Eigen::VectorXd b1(2), b2(1);
    b1 << 0.0, 0.1;
    b2 << 0.5;
    const nn::Mlp net({w1, w2}, {b1, b2}, {Activation::Tanh, Activation::Identity});
    Eigen::VectorXd x(2);
    x << 0.3, -0.2;
    // tanh(0.5) and tanh(-0.15) through 2 h0 - h1 + 0.5
    CHECK(net.forward(x)(0) == doctest::Approx(1.5731193481433374).epsilon(1e-14));
}

TEST_CASE("relu and identity layers") {
    Eigen::MatrixXd w(2, 1);
    w << 1.0, -1.0;
    const nn::Mlp net({w}, {Eigen::VectorXd::Zero(2)}, {Activation::Relu});
    CHECK(net.forward(Eigen::VectorXd::Constant(1, 2.0)) == Eigen::Vector2d(2.0, 0.0));
}

TEST_CASE("constructor rejects mismatched shapes and non-finite weights") {
    Eigen::MatrixXd w(2, 3);
    w.setOnes();
    CHECK_THROWS_AS(nn::Mlp({w}, {Eigen::VectorXd::Zero(3)}, {Activation::Tanh}), ConfigError);
    w(0, 0) = std::nan("");
    CHECK_THROWS(nn::Mlp({w}, {Eigen::VectorXd::Zero(2)}, {Activation::Tanh}));
}

TEST_CASE("forward rejects wrong input size") {
    nn::Rng rng(1);
    const nn::Mlp net = nn::Mlp::make({3, 4, 2}, Activation::Tanh, Activation::Identity, rng);
    CHECK_THROWS(net.forward(Eigen::VectorXd::Zero(2)));
}

TEST_CASE("batch backward sums per-sample gradients") {
    nn::Rng rng(7);
    const nn::Mlp net = nn::Mlp::make({2, 5, 3}, Activation::Tanh, Activation::Identity, rng);
    const Eigen::MatrixXd X = nn::standard_normal(2, 4, rng);
    const Eigen::MatrixXd G = nn::standard_normal(3, 4, rng);
    nn::ForwardCache cache;
    net.forward_batch(X, cache);
    const Eigen::VectorXd batch = net.backward(cache, G).grad.flat();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(batch.size());
    for (int j = 0; j < 4; ++j) {
        nn::ForwardCache c;
        net.forward_batch(X.col(j), c);
        sum += net.backward(c, G.col(j)).grad.flat();
    }
    CHECK((batch - sum).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("first adam step moves each parameter by lr against the gradient sign") {
    nn::Rng rng(3);
    nn::Mlp net = nn::Mlp::make({2, 3, 1}, Activation::Tanh, Activation::Identity, rng);
    const Eigen::VectorXd before = net.flat_params();
    nn::MlpGrad g = net.zeros_like();
    for (auto& w : g.weights) w.setConstant(0.5);
    for (auto& b : g.biases) b.setConstant(-2.0);
    nn::AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.eps = 0.0;
    nn::AdamState st = nn::AdamState::for_params(net, cfg);
    nn::adam_step(net, g, st);
    // Bias-corrected moments are g and g^2 after one step, so the update is lr * sign(g).
    const Eigen::VectorXd delta = net.flat_params() - before;
    const Eigen::VectorXd gf = g.flat();
    for (Eigen::Index i = 0; i < delta.size(); ++i) CHECK(delta[i] == doctest::Approx(gf[i] > 0 ? -0.01 : 0.01));
    CHECK(st.step == 1);
}

TEST_CASE("adam rejects gradient shape mismatch") {
    nn::Rng rng(3);
    nn::Mlp net = nn::Mlp::make({2, 3, 1}, Activation::Tanh, Activation::Identity, rng);
    nn::Mlp other = nn::Mlp::make({2, 4, 1}, Activation::Tanh, Activation::Identity, rng);
    nn::AdamState st = nn::AdamState::for_params(net);
    CHECK_THROWS_AS(nn::adam_step(net, other.zeros_like(), st), ConfigError);
}

TEST_CASE("scalar adam matches the vector rule") {
    nn::ScalarAdam a;
    a.config.lr = 0.1;
    a.config.eps = 0.0;
    CHECK(a.update(1.0, 3.0) == doctest::Approx(0.9));
}

TEST_CASE("polyak average is exact") {
    nn::Rng rng(5);
    nn::Mlp target = nn::Mlp::make({2, 3, 1}, Activation::Tanh, Activation::Identity, rng);
    const nn::Mlp online = nn::Mlp::make({2, 3, 1}, Activation::Tanh, Activation::Identity, rng);
    const Eigen::VectorXd t0 = target.flat_params();
    target.polyak_from(online, 0.995);
    const Eigen::VectorXd expect = 0.995 * t0 + 0.005 * online.flat_params();
    CHECK((target.flat_params() - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gaussian head log-density and clamping") {
    const nn::GaussianHead h(Eigen::Vector2d(0.5, -1.0), Eigen::Vector2d(std::log(2.0), 0.0));
    const Eigen::Vector2d x(1.5, 0.0);
    // N(1.5; 0.5, 4) * N(0; -1, 1)
    const double expect = -0.5 * (0.25 + 1.0) - std::log(2.0) - std::log(2.0 * std::numbers::pi);
    CHECK(h.log_prob(x) == doctest::Approx(expect).epsilon(1e-14));
    const nn::GaussianHead c(Eigen::Vector2d::Zero(), Eigen::Vector2d(-9.0, 7.0));
    CHECK(c.log_std(0) == nn::GaussianHead::kLogStdMin);
    CHECK(c.log_std(1) == nn::GaussianHead::kLogStdMax);
    Eigen::MatrixXd active;
    nn::clamp_log_std(Eigen::Matrix<double, 1, 3>(-9.0, 0.0, 9.0), &active);
    CHECK(active(0, 0) == 0.0);
    CHECK(active(0, 1) == 1.0);
    CHECK(active(0, 2) == 0.0);
}

TEST_CASE("standard normal draws are reproducible from the seed") {
    nn::Rng a(11), b(11);
    CHECK(nn::standard_normal(3, 5, a) == nn::standard_normal(3, 5, b));
}

TEST_CASE("mlp and adam state survive a save/load round trip") {
    nn::Rng rng(9);
    nn::Mlp net = nn::Mlp::make({3, 6, 2}, Activation::Relu, Activation::Tanh, rng);
    std::stringstream ss;
    nn::save_mlp(ss, net);
    CHECK(nn::load_mlp(ss) == net);

    nn::AdamState st = nn::AdamState::for_params(net);
    nn::MlpGrad g = net.zeros_like();
    for (auto& w : g.weights) w.setConstant(0.1);
    nn::adam_step(net, g, st);
    std::stringstream s2;
    nn::save_adam(s2, st);
    const nn::AdamState back = nn::load_adam(s2);
    CHECK(back.step == st.step);
    CHECK(back.m.flat() == st.m.flat());
    CHECK(back.v.flat() == st.v.flat());
}

TEST_CASE("truncated model file is rejected") {
    nn::Rng rng(9);
    const nn::Mlp net = nn::Mlp::make({3, 6, 2}, Activation::Tanh, Activation::Tanh, rng);
    std::stringstream ss;
    nn::save_mlp(ss, net);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() / 2);
    std::stringstream cut(bytes);
    CHECK_THROWS(nn::load_mlp(cut));
}

TEST_CASE("identity and zero nets") {
    const nn::Mlp id({Eigen::Matrix2d::Identity()}, {Eigen::Vector2d::Zero()}, {Activation::Identity});
    CHECK(id.forward(Eigen::Vector2d(1.0, 2.0)) == Eigen::Vector2d(1.0, 2.0));
    const nn::Mlp zero({Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(2, 3)},
                       {Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)}, {Activation::Tanh, Activation::Identity});
    CHECK(zero.forward(Eigen::Vector2d(5.0, -7.0)) == Eigen::Vector2d::Zero());
}

TEST_CASE("gradient helper: minimum and broadcast input") {
    nn::Rng rng(4);
    const nn::Mlp lin = nn::Mlp::make({3, 2}, Activation::Identity, Activation::Identity, rng);
    const Eigen::Vector3d x(0.5, -1.0, 2.0);
    const Eigen::VectorXd y = lin.forward(x);
    const auto at_min = nn::gradient(
        lin, [&](const Eigen::VectorXd& o) { return std::make_pair(0.5 * (o - y).squaredNorm(), Eigen::VectorXd(o - y)); },
        x);
    CHECK(at_min.grad.flat().cwiseAbs().maxCoeff() == 0.0);

    const auto sum = nn::gradient(
        lin, [](const Eigen::VectorXd& o) { return std::make_pair(o.sum(), Eigen::VectorXd(Eigen::VectorXd::Ones(o.size()))); },
        x);
    // dL/dW = 1 x^T: every row of the weight gradient is the input.
    for (int r = 0; r < 2; ++r) CHECK(Eigen::VectorXd(sum.grad.weights[0].row(r).transpose()) == Eigen::VectorXd(x));
    CHECK(sum.grad.biases[0] == Eigen::VectorXd::Ones(2));

    CHECK_THROWS_AS(nn::gradient(lin,
                                 [](const Eigen::VectorXd& o) {
                                     return std::make_pair(std::nan(""), Eigen::VectorXd(o));
                                 },
                                 x),
                    NumericError);
}

TEST_CASE("optimizer fixed points and quadratic descent") {
    nn::Rng rng(8);
    nn::Mlp net = nn::Mlp::make({2, 3, 1}, Activation::Tanh, Activation::Identity, rng);
    const Eigen::VectorXd before = net.flat_params();
    nn::AdamState st = nn::AdamState::for_params(net);
    nn::adam_step(net, net.zeros_like(), st);
    CHECK(net.flat_params() == before);
    CHECK(st.step == 1);

    nn::AdamConfig frozen;
    frozen.lr = 0.0;
    nn::AdamState st0 = nn::AdamState::for_params(net, frozen);
    nn::MlpGrad g = net.zeros_like();
    for (auto& w : g.weights) w.setConstant(1.0);
    nn::adam_step(net, g, st0);
    CHECK(net.flat_params() == before);

    // Minimize (x - 3)^2 from x = 0 with the scalar rule: monotone approach.
    nn::ScalarAdam a;
    a.config.lr = 0.05;
    double x = 0.0, prev = 9.0;
    for (int i = 0; i < 200; ++i) {
        x = a.update(x, 2.0 * (x - 3.0));
        const double loss = (x - 3.0) * (x - 3.0);
        CHECK(loss <= prev + 1e-12);
        if (x > 2.5) break;
        prev = loss;
    }
    CHECK(x > 2.5);
}

TEST_CASE("gaussian sample, density at the mean and quadrature") {
    const nn::GaussianHead h(Eigen::Vector2d(0.3, -0.7), Eigen::Vector2d(0.2, -0.4));
    CHECK(h.sample(Eigen::Vector2d::Zero()) == h.mean);
    const nn::GaussianHead unit(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero());
    CHECK(unit.log_prob(Eigen::Vector2d::Zero()) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

    const nn::GaussianHead one(Eigen::VectorXd::Constant(1, 0.4), Eigen::VectorXd::Constant(1, -0.3));
    double mass = 0.0;
    const double dx = 1e-3;
    for (double x = -10.0; x <= 10.0; x += dx) mass += std::exp(one.log_prob(Eigen::VectorXd::Constant(1, x))) * dx;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}
