#pragma once

// Test-side oracles shared by the unit tests and the acceptance binary. Nothing here
// calls library update code; expected values come from first principles.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "spaars/nn.hpp"

namespace spaars::testing {

struct FdCheck {
    int nets = 0;
    long params_checked = 0;
    double worst_rel = 0.0;  ///< largest |analytic - numeric| / max(|analytic|, |numeric|, floor)
};

/// Central finite differences of L = 0.5 ||net(x) - y||^2 against backward() for `n_nets`
/// random architectures (1-3 hidden layers, widths 1-8, tanh / relu / identity mixes).
inline FdCheck fd_check_random_nets(int n_nets, std::uint64_t seed, double step = 1e-5) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> depth(1, 3), width(1, 8), act(0, 2);
    std::normal_distribution<double> nd(0.0, 1.0);
    constexpr double kFloor = 1e-3;  // absolute floor: tolerance 1e-4 * 1e-3 near zero
    FdCheck out;
    for (int n = 0; n < n_nets; ++n) {
        std::vector<int> sizes{width(rng)};
        const int hidden = depth(rng);
        for (int h = 0; h < hidden; ++h) sizes.push_back(width(rng));
        sizes.push_back(width(rng));
        const auto hid = static_cast<nn::Activation>(act(rng));
        const auto outp = static_cast<nn::Activation>(act(rng));
        nn::Mlp net = nn::Mlp::make(sizes, hid, outp, rng);
        // Non-zero biases so every parameter is exercised.
        for (auto& b : net.biases()) b = Eigen::VectorXd::NullaryExpr(b.size(), [&] { return 0.3 * nd(rng); });
        Eigen::VectorXd x(sizes.front()), y(sizes.back());
        // Redraw inputs until no ReLU pre-activation sits within reach of the FD step.
        for (bool near_kink = true; near_kink;) {
            for (auto& v : x) v = nd(rng);
            near_kink = false;
            Eigen::VectorXd h = x;
            for (int l = 0; l < net.num_layers(); ++l) {
                const Eigen::VectorXd pre = net.weights()[l] * h + net.biases()[l];
                if (net.activations()[l] == nn::Activation::Relu && pre.cwiseAbs().minCoeff() < 1e-3) near_kink = true;
                h = net.activations()[l] == nn::Activation::Tanh   ? Eigen::VectorXd(pre.array().tanh())
                    : net.activations()[l] == nn::Activation::Relu ? Eigen::VectorXd(pre.cwiseMax(0.0))
                                                                    : pre;
            }
        }
        for (auto& v : y) v = nd(rng);

        auto loss = [&](const nn::Mlp& m) { return 0.5 * (m.forward(x) - y).squaredNorm(); };
        nn::ForwardCache cache;
        const Eigen::MatrixXd out_val = net.forward_batch(x, cache);
        const nn::BackwardResult back = net.backward(cache, out_val - y);
        const Eigen::VectorXd analytic = back.grad.flat();
        Eigen::VectorXd theta = net.flat_params();
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            const double keep = theta[i];
            theta[i] = keep + step;
            net.set_flat_params(theta);
            const double up = loss(net);
            theta[i] = keep - step;
            net.set_flat_params(theta);
            const double down = loss(net);
            theta[i] = keep;
            net.set_flat_params(theta);
            const double numeric = (up - down) / (2.0 * step);
            const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), kFloor});
            out.worst_rel = std::max(out.worst_rel, std::abs(analytic[i] - numeric) / scale);
            ++out.params_checked;
        }
        // Input gradient through the same cache.
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + step;
            const double up = loss(net);
            x[i] = keep - step;
            const double down = loss(net);
            x[i] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double a = back.input_grad(i, 0);
            const double scale = std::max({std::abs(a), std::abs(numeric), kFloor});
            out.worst_rel = std::max(out.worst_rel, std::abs(a - numeric) / scale);
            ++out.params_checked;
        }
        ++out.nets;
    }
    return out;
}

/// r_bar(1) = x_1, r_bar(t) = decay r_bar(t-1) + (1 - decay) x_t.
inline std::vector<double> ema_sequence(const std::vector<double>& xs, double decay) {
    std::vector<double> out;
    for (double x : xs) out.push_back(out.empty() ? x : decay * out.back() + (1.0 - decay) * x);
    return out;
}

}  // namespace spaars::testing
