#pragma once

#include <cmath>
#include <cstdint>

#include "cdc/nn.hpp"

namespace cdc {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. State arrays mirror the parameter layout.
template <typename T>
class Adam {
public:
    Adam(const Params<T>& like, AdamConfig cfg = {}) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

    void step(Params<T>& params, const Params<T>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].values;
            const auto& g = grads[i].values;
            auto& m = m_[i].values;
            auto& v = v_[i].values;
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                m[k] = static_cast<T>(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk);
                v[k] = static_cast<T>(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk);
                const double mhat = m[k] / c1;
                const double vhat = v[k] / c2;
                p[k] = static_cast<T>(p[k] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    Params<T> m_;
    Params<T> v_;
    std::int64_t t_ = 0;
};

}  // namespace cdc
