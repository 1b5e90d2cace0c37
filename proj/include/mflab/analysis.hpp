#pragma once

#include <functional>

#include "mflab/metrics.hpp"
#include "mflab/oracle.hpp"
#include "mflab/training.hpp"

namespace mflab {

// ---- loss-decomposition verifier ----

/// One evaluation point for the decomposition: a noised atom z at time t,
/// paired with an earlier time s and the class label fed to the nets.
struct Probe {
    Tensor z;  // {1, d}
    double t = 0.0;
    double s = 0.0;
    int cls = 0;
};

/// Deterministic probe set: atoms chosen at random, times stratified over
/// t in {0.1, 0.3, 0.5, 0.7, 0.9} crossed with s in {t/4, t/2, 3t/4}, the
/// 15 combinations cycled until n probes exist.
std::vector<Probe> make_probes(const FiniteSupportDataset& ds, const Schedule& sched,
                               std::size_t n, std::uint64_t seed);

/// Per-probe pieces that do not depend on the velocity mix weight. All of
/// them are exact up to the integrator and finite-difference steps noted in
/// the field comments.
struct ProbeGeometry {
    Tensor z;  // {1, d}
    double t = 0.0, s = 0.0;
    int cls = 0;
    std::vector<double> probs;  // posterior over atoms
    Tensor dv_hat;              // {K, d}, one-point velocity minus oracle velocity
    Tensor v;                   // {1, d} oracle velocity (posterior mean)
    Tensor dv_phi;              // {1, d} teacher velocity minus oracle velocity
    Tensor h_theta;             // live net output
    Tensor h_oracle;            // RK-integrated average velocity
    Tensor a_matrix;            // {d, d}, I - (t - s) d_z h of the detached net
    Tensor b_term;              // {1, d}, (t - s)(d_t dh + (d_z dh) v), dh = h_oracle - h_detached
    double var_base = 0.0;      // sum_k p_k ||A dv_hat_k||^2
};

/// Scalars of the identity at one probe and one mix weight. The residual Y
/// is h_theta - (h_oracle + B + lambda A dv_phi); the left side is the
/// posterior-averaged squared error against the per-atom targets, built
/// independently from per-atom directional derivatives.
struct ProbeDecomp {
    double lhs = 0.0;
    double bias_term = 0.0;      // ||Y||^2
    double variance_term = 0.0;  // (1 - lambda)^2 var_base
    double cross_term = 0.0;     // sum_k p_k <Y, A dv_hat_k>, zero in exact arithmetic
    double gap = 0.0;            // |lhs - bias - variance|
    Tensor y;                    // {1, d}
};

struct LambdaBlock {
    double lambda = 0.0;
    std::vector<ProbeDecomp> probes;
    double max_gap = 0.0;
    double max_cross = 0.0;
    double max_variance = 0.0;
};

struct DecompositionReport {
    std::size_t dim = 0;
    std::size_t n_probes = 0;
    std::size_t rk_steps = 0;
    double fd_step = 0.0;
    double tolerance_gap = 1e-6;
    double tolerance_cross = 1e-10;
    std::vector<ProbeGeometry> geometry;  // one per probe
    std::vector<LambdaBlock> blocks;      // one per mix weight
    double max_gap = 0.0;
    double max_cross = 0.0;
    // residual of variance(lambda) - (1 - lambda)^2 variance(0), max over
    // probes and lambdas; exercises the quadratic scaling directly
    double max_variance_scaling_residual = 0.0;
};

/// Checks, per probe and mix weight, that the averaged squared error equals
/// a squared bias plus a posterior variance with no cross term. The left
/// side uses exact per-atom directional derivatives of the detached net; the
/// right side is assembled from the oracle average velocity, its finite-
/// difference derivatives (step fd_step), and column derivatives of the
/// detached net — the two sides share no intermediate.
DecompositionReport verify_prop1(const FlowMapNet& theta, const FlowMapNet& theta_minus,
                                 const VelocityNet& teacher, const FiniteSupportDataset& ds,
                                 const Schedule& sched, const std::vector<double>& lambdas,
                                 const std::vector<Probe>& probes, std::size_t rk_steps = 256,
                                 double fd_step = 1e-4);

/// JSON dump: per-probe geometry and per-lambda records plus the aggregates.
void save_decomposition_report(const std::string& path, const DecompositionReport& report);

// ---- finite-difference order study ----

/// Probe with the direction along which the transport derivative is taken.
struct DirectedProbe {
    Tensor z;  // {1, d}
    double t = 0.0;
    double s = 0.0;
    int cls = 0;
    Tensor w;  // {1, d}
};

/// Directions are the oracle velocity at each probe point.
std::vector<DirectedProbe> make_fd_probes(const FiniteSupportDataset& ds, const Schedule& sched,
                                          std::size_t n, std::uint64_t seed);

struct FdStudyRow {
    double dt = 0.0;
    double max_rel_err = 0.0;
    double fitted_order = 0.0;  // one log-log fit across the ladder, repeated per row
};

/// Value and directional-derivative callbacks of a generic map, batched over
/// rows; lets the study run on synthetic maps as well as nets.
using MapFn = std::function<Tensor(const Tensor& z, const Tensor& tcol, const Tensor& scol,
                                   const std::vector<int>& cls)>;
using MapJvpFn = std::function<Tensor(const Tensor& z, const Tensor& tcol, const Tensor& scol,
                                      const std::vector<int>& cls, const Tensor& dz,
                                      const Tensor& dtcol, const Tensor& dscol)>;

/// Compares the central-difference transport derivative against the exact
/// one over a strictly decreasing step ladder (>= 3 levels). Relative error
/// is per probe row, ||fd - exact|| / max(||exact||, 1e-9), maxed over rows.
std::vector<FdStudyRow> fd_order_study(const MapFn& value, const MapJvpFn& jvp,
                                       const std::vector<DirectedProbe>& probes,
                                       const std::vector<double>& dt_ladder);
std::vector<FdStudyRow> fd_order_study(const FlowMapNet& net,
                                       const std::vector<DirectedProbe>& probes,
                                       const std::vector<double>& dt_ladder);

void save_fd_study_csv(const std::string& path, const std::vector<FdStudyRow>& rows);

// ---- two-sample metrics ----

struct TwoSampleMetrics {
    double energy_distance = 0.0;
    double mmd_rbf = 0.0;
    double gauss_w2 = 0.0;
    double mmd_bandwidth = 0.0;
    bool covariance_regularized = false;  // 1e-8 ridge applied to a singular fit
};

/// Energy distance and RBF-MMD as V-statistics (diagonal included), plus the
/// closed-form 2-Wasserstein distance between Gaussian fits of the two sets.
/// Bitwise-identical sets give exactly zero on all three.
TwoSampleMetrics two_sample_metrics(const Tensor& samples_a, const Tensor& samples_b);

// ---- generation-cost budget ----

struct BudgetSpec {
    double decoder_gflops = 0.0;
    double backbone_gflops = 0.0;
    long nfe = 1;
};

/// total = decoder + nfe * backbone. One decode amortizes over the sampling
/// steps; the backbone runs once per step.
double budget(const BudgetSpec& spec);

// ---- instability telemetry ----

struct StageInstability {
    std::string stage;
    std::size_t steps = 0;
    double max_grad_norm = 0.0;
    long first_spike_iter = -1;  // first iteration with grad_norm above threshold
    bool diverged = false;       // sustained spike run or non-finite loss
    double final_loss = 0.0;
};

struct InstabilityReport {
    double threshold = 0.0;
    std::size_t patience = 0;
    std::vector<StageInstability> stages;  // in order of first appearance
};

InstabilityReport instability_summary(const std::vector<MetricsRow>& rows,
                                      double threshold = 1e4, std::size_t patience = 10);

}  // namespace mflab
