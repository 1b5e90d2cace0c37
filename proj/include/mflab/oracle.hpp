#pragma once

#include "mflab/dataset.hpp"
#include "mflab/schedule.hpp"

namespace mflab {

/// Exact Bayes posterior over atoms given a noised point: p(k | z_t) with the
/// implied per-atom noise eps_k = (z_t - alpha_t x_k) / sigma_t.
struct PosteriorTable {
    Tensor query;               // {1, d}
    double t = 0.0;
    std::vector<double> probs;  // per atom, sums to 1
    Tensor eps;                 // {K, d}
};

/// p(k | z_t) ∝ p_k exp(-||z_t - alpha_t x_k||^2 / (2 sigma_t^2)), evaluated
/// in log space with max subtraction. Requires sigma_t > 0, i.e. t in (0, 1].
PosteriorTable posterior(const Tensor& z_t, double t, const FiniteSupportDataset& ds,
                         const Schedule& sched);

/// Marginal (oracle) velocity: the posterior average of the one-point
/// velocity, sum_k p(k|z_t) (alpha'_t x_k + sigma'_t eps_k). Exact for finite
/// support. z may be a batch {n, d}; rows are independent queries.
Tensor oracle_velocity(const Tensor& z, double t, const FiniteSupportDataset& ds,
                       const Schedule& sched);

/// Integrate dz/du = oracle_velocity(z, u) from u = t_from down (or up) to
/// u = t_to with classical RK4 on `steps` substeps; returns the endpoint.
/// Field evaluations clamp u to at least 1e-12 (sigma_0 = 0 is singular).
Tensor oracle_flow(const Tensor& z, double t_from, double t_to,
                   const FiniteSupportDataset& ds, const Schedule& sched, std::size_t steps);

struct MeanFlowResult {
    Tensor h;      // average velocity over [s, t]
    Tensor z_end;  // the integrated state at time s
};

/// h(z_t, t, s) = (z_t - z_s) / (t - s) with z_s obtained by RK4 integration
/// of the exact field. Requires t > s.
MeanFlowResult oracle_meanflow_path(const Tensor& z_t, double t, double s,
                                    const FiniteSupportDataset& ds, const Schedule& sched,
                                    std::size_t steps = 256);

Tensor oracle_meanflow(const Tensor& z_t, double t, double s, const FiniteSupportDataset& ds,
                       const Schedule& sched, std::size_t steps = 256);

}  // namespace mflab
