#pragma once

#include <Eigen/Core>

#include <utility>

#include "spaars/error.hpp"

namespace spaars {

/// Per-dimension box [low, high] with the tanh squashing used by every
/// bounded output (decoder actions, raw-policy actions).
struct Bounds {
    Eigen::VectorXd low;
    Eigen::VectorXd high;

    Bounds() = default;
    Bounds(Eigen::VectorXd lo, Eigen::VectorXd hi) : low(std::move(lo)), high(std::move(hi)) {
        if (low.size() != high.size()) throw ConfigError("bounds: low/high size mismatch");
        for (Eigen::Index i = 0; i < low.size(); ++i)
            if (!(low[i] < high[i])) throw ConfigError("bounds: low must be < high in every dimension");
    }

    static Bounds symmetric(int dim, double half) {
        return Bounds(Eigen::VectorXd::Constant(dim, -half), Eigen::VectorXd::Constant(dim, half));
    }

    int dim() const { return static_cast<int>(low.size()); }
    Eigen::VectorXd center() const { return 0.5 * (low + high); }
    Eigen::VectorXd half_range() const { return 0.5 * (high - low); }

    Eigen::VectorXd clip(const Eigen::VectorXd& x) const { return x.cwiseMax(low).cwiseMin(high); }

    Eigen::MatrixXd clip_columns(const Eigen::MatrixXd& x) const {
        return x.cwiseMax(low.replicate(1, x.cols())).cwiseMin(high.replicate(1, x.cols()));
    }

    bool contains(const Eigen::VectorXd& x) const {
        return x.size() == low.size() && (x.array() >= low.array()).all() &&
               (x.array() <= high.array()).all();
    }

    /// center + half_range * tanh(u), column-wise.
    Eigen::MatrixXd squash(const Eigen::MatrixXd& u) const {
        return (u.array().tanh().colwise() * half_range().array()).colwise() + center().array();
    }
};

}  // namespace spaars
