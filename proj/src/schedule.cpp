#include "mflab/schedule.hpp"

namespace mflab {

void check_time_in_unit(double t, const char* what) {
    if (!(t >= 0.0 && t <= 1.0))
        throw DomainError(std::string(what) + ": t = " + std::to_string(t) +
                          " outside [0, 1]");
}

Tensor noise(const Tensor& z0, const Tensor& eps, double t, const Schedule& sched) {
    check_time_in_unit(t, "noise");
    if (!z0.same_shape(eps)) throw DimensionError("noise: z0/eps shape mismatch");
    return add(scale(z0, sched.alpha(t)), scale(eps, sched.sigma(t)));
}

Tensor one_point_velocity(const Tensor& z0, const Tensor& eps, double t, const Schedule& sched) {
    if (!z0.same_shape(eps)) throw DimensionError("one_point_velocity: shape mismatch");
    return add(scale(z0, sched.alpha_dot(t)), scale(eps, sched.sigma_dot(t)));
}

}  // namespace mflab
