#include "mflab/optim.hpp"

#include <cmath>

namespace mflab {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw DimensionError("Adam: params/grads count mismatch");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (m_.size() != params.size()) throw DimensionError("Adam: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) throw DimensionError("Adam: gradient shape mismatch");
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

EmaTracker::EmaTracker(double beta, const std::vector<Tensor*>& params) : beta_(beta) {
    for (const Tensor* p : params) shadow_.push_back(*p);
}

void EmaTracker::update(const std::vector<Tensor*>& params) {
    if (params.size() != shadow_.size()) throw DimensionError("EmaTracker: count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& s = shadow_[i];
        const Tensor& p = *params[i];
        for (std::size_t k = 0; k < s.size(); ++k)
            s[k] = beta_ * s[k] + (1.0 - beta_) * p[k];
    }
}

double EmaTracker::distance(const std::vector<Tensor*>& params) const {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& s = shadow_[i];
        const Tensor& p = *params[i];
        for (std::size_t k = 0; k < s.size(); ++k) {
            const double d = p[k] - s[k];
            sq += d * d;
        }
    }
    return std::sqrt(sq);
}

}  // namespace mflab
