#pragma once

#include "mflab/dataset.hpp"
#include "mflab/metrics.hpp"
#include "mflab/network.hpp"
#include "mflab/optim.hpp"
#include "mflab/schedule.hpp"
#include "mflab/solvers.hpp"

namespace mflab {

enum class DerivMode { fd, jvp };
DerivMode parse_deriv_mode(const std::string& name);
std::string deriv_mode_name(DerivMode m);

struct TrainConfig {
    std::size_t batch_size = 128;
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_beta = 0.999;
    std::size_t iterations = 0;
    double t_min = 1e-3;
    double s_min = 0.0;                 // lower end of the s distribution
    double equal_time_fraction = 0.25;  // share of rows trained at s = t
    double lambda = 1.0;                // proxy-velocity mix: 1 teacher, 0 one-point
    DerivMode derivative = DerivMode::fd;
    double fd_delta = 0.005;            // half-step of the central difference
    double time_weight = 1.0;           // constant w(t) on the matching loss
    double grad_norm_limit = 1e4;
    std::size_t divergence_patience = 10;
    // consistency-stage specifics
    std::size_t cmt_grid_points = 16;
    std::size_t cmt_n_traj = 4;         // fresh teacher trajectories per iteration
    std::size_t cmt_pairs_per_traj = 30;  // sampled (i > j) pairs; 0 = all pairs

    void validate() const;
};

struct LossGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  // for_each_param order
    double grad_norm = 0.0;
};

// ---- flow matching ----

struct FmBatch {
    Tensor z0, eps, z_t, v_hat;  // {n, d}
    Tensor tcol;                 // {n, 1}
    std::vector<int> cls;
};

FmBatch sample_fm_batch(const FiniteSupportDataset& ds, const Schedule& sched,
                        const TrainConfig& cfg, Rng& rng);

/// Monte-Carlo velocity-matching loss: mean over rows of
/// w(t) ||v(z_t, t, c) - v_hat||^2, gradients by reverse mode.
LossGrads fm_loss(const VelocityNet& net, const FmBatch& batch,
                  const std::function<double(double)>& w_fn = {});

// ---- consistency mid-training ----

struct GridPair {
    std::size_t traj, i, j;  // grid indices with i > j
};

std::vector<GridPair> enumerate_pairs(std::size_t n_traj, std::size_t grid_points);
std::vector<GridPair> sample_pairs(std::size_t n_traj, std::size_t grid_points,
                                   std::size_t per_traj, Rng& rng);

struct CmtBatch {
    Tensor z, tcol, scol, target;  // rows assembled from trajectory pairs
    std::vector<int> cls;
};

CmtBatch assemble_cmt_batch(const std::vector<Trajectory>& trajs,
                            const std::vector<GridPair>& pairs);

/// Regression of the flow map onto trajectory slopes
/// (z_{t_i} - z_{t_j}) / (t_i - t_j); the target is plain data, no
/// stop-gradient machinery involved.
LossGrads cmt_loss(const FlowMapNet& net, const CmtBatch& batch);
LossGrads cmt_loss(const FlowMapNet& net, const std::vector<Trajectory>& trajs,
                   const std::vector<GridPair>& pairs);

// ---- mean-flow stage ----

struct MfBatch {
    Tensor z0, eps;  // {n, d}
    Tensor tcol, scol;
    std::vector<int> cls;
};

MfBatch sample_mf_batch(const FiniteSupportDataset& ds, const TrainConfig& cfg, Rng& rng);

/// Proxy velocity w_lambda = (1 - lambda) v_hat + lambda v_teacher(z_t, t).
/// lambda = 1 needs the teacher; lambda < 1 needs the one-point estimate.
Tensor build_w_lambda(const Tensor& z_t, const Tensor& tcol, const std::vector<int>& cls,
                      double lambda, const VelocityNet* teacher, const Tensor* v_hat);

/// Central finite difference of the detached flow map along the direction w:
/// [h(z + dt w, tc + dt, s) - h(z - dt w, tc - dt, s)] / (2 dt), with
/// tc = min(t, 1 - dt) so the upper stencil point stays inside [0, 1].
Tensor transport_derivative_fd(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                               const Tensor& scol, const std::vector<int>& cls,
                               const Tensor& w, double fd_delta);

/// Exact counterpart: forward-mode derivative in direction [w, 1, 0].
Tensor transport_derivative_jvp(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                                const Tensor& scol, const std::vector<int>& cls,
                                const Tensor& w);

/// All pieces of the regression target, built entirely in the plain lane so
/// no gradient can flow through them.
struct TargetTerms {
    Tensor z_t;        // {n, d}
    Tensor w_lambda;   // proxy velocity
    Tensor transport;  // (d_z h) w + d_t h of the detached net
    Tensor target;     // w_lambda - (t - s) * transport
};

TargetTerms build_mf_target(const FlowMapNet& frozen, const VelocityNet* teacher,
                            const MfBatch& batch, const Schedule& sched,
                            const TrainConfig& cfg);

/// Squared error against the detached target; gradients reach only the live
/// parameters. The detached copy is the current parameters (not the EMA).
LossGrads mf_loss(const FlowMapNet& net, const MfBatch& batch, const Schedule& sched,
                  const TrainConfig& cfg, const VelocityNet* teacher);

// ---- stage loops ----

std::vector<Tensor*> collect_params(VelocityNet& net);
std::vector<Tensor*> collect_params(FlowMapNet& net);

/// Adam + EMA loop over fm_loss. Throws DivergenceError on NaN loss or a
/// sustained gradient-norm blowup (metrics flushed first).
void train_velocity_stage(VelocityNet& net, EmaTracker& ema, const FiniteSupportDataset& ds,
                          const Schedule& sched, const TrainConfig& cfg, Rng& rng,
                          MetricsWriter* metrics, const std::string& stage_name);

void train_cmt_stage(FlowMapNet& net, EmaTracker& ema, const VelocityNet& teacher,
                     const std::vector<double>& cls_probs, const TrainConfig& cfg, Rng& rng,
                     MetricsWriter* metrics, const std::string& stage_name);

void train_mf_stage(FlowMapNet& net, EmaTracker& ema, const VelocityNet* teacher,
                    const FiniteSupportDataset& ds, const Schedule& sched,
                    const TrainConfig& cfg, Rng& rng, MetricsWriter* metrics,
                    const std::string& stage_name);

}  // namespace mflab
