// Adam optimizer over a parameter list.
#pragma once

#include <cmath>
#include <vector>

#include "afp/error.hpp"
#include "afp/nn/layers.hpp"

namespace afp::nn {

template <typename T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(std::vector<Param<T>*> params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto* p : params) {
            if (p->m.size() != p->value.size()) {
                p->m.assign(p->value.size(), T(0));
                p->vv.assign(p->value.size(), T(0));
            }
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                double g = static_cast<double>(p->grad[i]);
                double m = beta1_ * static_cast<double>(p->m[i]) + (1 - beta1_) * g;
                double v = beta2_ * static_cast<double>(p->vv[i]) + (1 - beta2_) * g * g;
                p->m[i] = static_cast<T>(m);
                p->vv[i] = static_cast<T>(v);
                p->value[i] -= static_cast<T>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

} // namespace afp::nn
