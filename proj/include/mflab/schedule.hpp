#pragma once

#include <memory>
#include <string>

#include "mflab/tensor.hpp"

namespace mflab {

/// Interpolant schedule (alpha_t, sigma_t) on t in [0,1] together with its
/// derivatives. The noising path is z_t = alpha_t z_0 + sigma_t eps.
class Schedule {
  public:
    virtual ~Schedule() = default;
    virtual double alpha(double t) const = 0;
    virtual double sigma(double t) const = 0;
    virtual double alpha_dot(double t) const = 0;
    virtual double sigma_dot(double t) const = 0;
    virtual std::string name() const = 0;
};

/// alpha = 1 - t, sigma = t. The only schedule that ships; the base class
/// exists so a curved variant can slot in without touching callers.
class LinearSchedule final : public Schedule {
  public:
    double alpha(double t) const override { return 1.0 - t; }
    double sigma(double t) const override { return t; }
    double alpha_dot(double) const override { return -1.0; }
    double sigma_dot(double) const override { return 1.0; }
    std::string name() const override { return "linear"; }
};

void check_time_in_unit(double t, const char* what);

/// z_t = alpha_t z_0 + sigma_t eps, rows independent.
Tensor noise(const Tensor& z0, const Tensor& eps, double t, const Schedule& sched);

/// The conditional (one-point) velocity alpha'_t z_0 + sigma'_t eps; for the
/// linear schedule this is eps - z_0 at every t.
Tensor one_point_velocity(const Tensor& z0, const Tensor& eps, double t, const Schedule& sched);

}  // namespace mflab
