#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "meansparse/attacks.hpp"

namespace meansparse::testing {

// Every combination of kind, norm, radius, restarts and loss exercised by
// the feasibility checks.
inline std::vector<AttackSpec> attack_matrix(std::size_t steps = 5) {
    std::vector<AttackSpec> out;
    for (auto kind : {AttackKind::FGSM, AttackKind::PGD, AttackKind::MomentumPGD})
        for (auto norm : {Norm::Linf, Norm::L2}) {
            if (kind == AttackKind::FGSM && norm == Norm::L2) continue;
            const std::vector<double> radii = norm == Norm::Linf ? std::vector<double>{0.0, 1.0 / 255, 8.0 / 255, 0.3}
                                                                 : std::vector<double>{0.0, 0.1, 128.0 / 255, 3.0};
            for (double eps : radii)
                for (std::size_t restarts : {1u, 2u})
                    for (auto loss : {AttackLoss::CrossEntropy, AttackLoss::DLR}) {
                        AttackSpec a;
                        a.kind = kind;
                        a.norm = norm;
                        a.epsilon = eps;
                        a.steps = steps;
                        a.step_size = norm == Norm::Linf ? 2.0 / 255 : std::max(eps / 4.0, 0.01);
                        a.restarts = restarts;
                        a.loss = loss;
                        a.seed = 17;
                        out.push_back(a);
                    }
        }
    return out;
}

// Independent feasibility check: every value in [0,1] and every row within
// the radius (l-inf exact, l2 with 1e-9 relative slack).
inline bool independently_feasible(const Tensor& x, const Tensor& adv, Norm norm, double eps) {
    if (x.shape() != adv.shape()) return false;
    const std::size_t n = x.dim(0), d = x.numel() / n;
    for (std::size_t i = 0; i < n; ++i) {
        long double sq = 0.0L;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = adv[i * d + j];
            if (!(v >= 0.0 && v <= 1.0)) return false;
            const double delta = v - x[i * d + j];
            if (norm == Norm::Linf && !(std::abs(delta) <= eps)) return false;
            sq += static_cast<long double>(delta) * delta;
        }
        if (norm == Norm::L2 && !(std::sqrt(static_cast<double>(sq)) <= eps * (1.0 + 1e-9))) return false;
    }
    return true;
}

}  // namespace meansparse::testing
