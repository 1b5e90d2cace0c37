#pragma once

#include <vector>

#include "mflab/tensor.hpp"

namespace mflab {

/// Adam with bias correction. Parameters are addressed positionally, so the
/// caller must pass them in the same order on every step (nets guarantee a
/// stable order via for_each_param).
class Adam {
  public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Parameter shadow: shadow <- beta * shadow + (1 - beta) * param each step.
/// The shadow never feeds gradients; it is read only for evaluation weights.
class EmaTracker {
  public:
    EmaTracker(double beta, const std::vector<Tensor*>& params);
    void update(const std::vector<Tensor*>& params);
    const std::vector<Tensor>& shadow() const { return shadow_; }
    /// Euclidean distance between the parameter vector and its shadow.
    double distance(const std::vector<Tensor*>& params) const;
    double beta() const { return beta_; }

  private:
    double beta_;
    std::vector<Tensor> shadow_;
};

}  // namespace mflab
