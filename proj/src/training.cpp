#include "mflab/training.hpp"

#include <chrono>
#include <cmath>

namespace mflab {

DerivMode parse_deriv_mode(const std::string& name) {
    if (name == "fd") return DerivMode::fd;
    if (name == "jvp") return DerivMode::jvp;
    throw ConfigError("unknown derivative mode: " + name);
}

std::string deriv_mode_name(DerivMode m) { return m == DerivMode::fd ? "fd" : "jvp"; }

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("TrainConfig: lambda outside [0, 1]");
    if (!(fd_delta >= 1e-4 && fd_delta <= 0.05))
        throw ConfigError("TrainConfig: fd_delta outside [1e-4, 0.05]");
    if (!(equal_time_fraction >= 0.0 && equal_time_fraction <= 1.0))
        throw ConfigError("TrainConfig: equal_time_fraction outside [0, 1]");
    if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("TrainConfig: t_min outside (0, 1)");
    if (!(s_min >= 0.0 && s_min <= t_min))
        throw ConfigError("TrainConfig: s_min outside [0, t_min]");
    if (!(ema_beta > 0.0 && ema_beta < 1.0)) throw ConfigError("TrainConfig: ema_beta outside (0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("TrainConfig: adam betas outside [0, 1)");
    if (cmt_grid_points < 2) throw ConfigError("TrainConfig: cmt_grid_points must be >= 2");
    if (cmt_n_traj == 0) throw ConfigError("TrainConfig: cmt_n_traj must be positive");
    if (divergence_patience == 0) throw ConfigError("TrainConfig: divergence_patience must be positive");
}

namespace {

double grads_norm(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const Tensor& g : grads) sq += squared_norm(g).item();
    return std::sqrt(sq);
}

}  // namespace

// ---- flow matching ----

FmBatch sample_fm_batch(const FiniteSupportDataset& ds, const Schedule& sched,
                        const TrainConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.batch_size, d = ds.dim;
    FmBatch b;
    b.z0 = Tensor({n, d});
    b.eps = Tensor({n, d});
    b.z_t = Tensor({n, d});
    b.v_hat = Tensor({n, d});
    b.tcol = Tensor({n, 1});
    b.cls.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = sample_atom(ds, rng);
        b.cls[i] = ds.labels[k];
        for (std::size_t j = 0; j < d; ++j) {
            b.z0.at(i, j) = ds.atoms.at(k, j);
            b.eps.at(i, j) = rng.normal();
        }
        const double t = rng.uniform(cfg.t_min, 1.0);
        b.tcol[i] = t;
        const double a = sched.alpha(t), sg = sched.sigma(t);
        const double ad = sched.alpha_dot(t), sd = sched.sigma_dot(t);
        for (std::size_t j = 0; j < d; ++j) {
            b.z_t.at(i, j) = a * b.z0.at(i, j) + sg * b.eps.at(i, j);
            b.v_hat.at(i, j) = ad * b.z0.at(i, j) + sd * b.eps.at(i, j);
        }
    }
    return b;
}

LossGrads fm_loss(const VelocityNet& net, const FmBatch& batch,
                  const std::function<double(double)>& w_fn) {
    const std::size_t n = batch.z_t.rows();
    Tensor w_row({n});
    for (std::size_t i = 0; i < n; ++i) w_row[i] = w_fn ? w_fn(batch.tcol[i]) : 1.0;

    Tape tape;
    std::vector<Var> leaves;
    TapeCtx ctx{&tape, &leaves};
    const auto p = lift_params(ctx, net.p);
    Var v = velocity_apply(ctx, net.cfg, p, tape.constant(batch.z_t),
                           tape.constant(batch.tcol), batch.cls);
    Var res = sub(v, tape.constant(batch.v_hat));
    Var loss = scale(sum_all(scale_rows(mul(res, res), w_row)),
                     1.0 / static_cast<double>(n));
    tape.backward(loss);

    LossGrads out;
    out.loss = tape.value(loss).item();
    if (std::isnan(out.loss)) throw DivergenceError("fm_loss: NaN loss", -1);
    for (const Var& leaf : leaves) out.grads.push_back(tape.adjoint(leaf));
    out.grad_norm = grads_norm(out.grads);
    return out;
}

// ---- consistency mid-training ----

std::vector<GridPair> enumerate_pairs(std::size_t n_traj, std::size_t grid_points) {
    std::vector<GridPair> pairs;
    for (std::size_t k = 0; k < n_traj; ++k)
        for (std::size_t i = 1; i < grid_points; ++i)
            for (std::size_t j = 0; j < i; ++j) pairs.push_back({k, i, j});
    return pairs;
}

std::vector<GridPair> sample_pairs(std::size_t n_traj, std::size_t grid_points,
                                   std::size_t per_traj, Rng& rng) {
    if (grid_points < 2) throw ConfigError("sample_pairs: grid too small");
    std::vector<GridPair> pairs;
    for (std::size_t k = 0; k < n_traj; ++k) {
        for (std::size_t c = 0; c < per_traj; ++c) {
            std::size_t i = rng.index(grid_points);
            std::size_t j = rng.index(grid_points);
            while (i == j) {
                i = rng.index(grid_points);
                j = rng.index(grid_points);
            }
            if (i < j) std::swap(i, j);
            pairs.push_back({k, i, j});
        }
    }
    return pairs;
}

CmtBatch assemble_cmt_batch(const std::vector<Trajectory>& trajs,
                            const std::vector<GridPair>& pairs) {
    if (trajs.empty()) throw ConfigError("assemble_cmt_batch: no trajectories");
    if (pairs.empty()) throw ConfigError("assemble_cmt_batch: no pairs");
    const std::size_t n = pairs.size(), d = trajs.front().states.front().size();
    CmtBatch b;
    b.z = Tensor({n, d});
    b.tcol = Tensor({n, 1});
    b.scol = Tensor({n, 1});
    b.target = Tensor({n, d});
    b.cls.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const GridPair& pr = pairs[r];
        if (pr.traj >= trajs.size()) throw ConfigError("assemble_cmt_batch: pair trajectory index out of range");
        const Trajectory& tr = trajs[pr.traj];
        if (pr.i >= tr.grid.size() || pr.j >= tr.grid.size())
            throw ConfigError("assemble_cmt_batch: pair grid index out of range");
        if (pr.i <= pr.j)
            throw ConfigError("assemble_cmt_batch: pair sampler must yield i > j");
        const double ti = tr.grid.times[pr.i], tj = tr.grid.times[pr.j];
        b.tcol[r] = ti;
        b.scol[r] = tj;
        b.cls[r] = tr.label;
        for (std::size_t c = 0; c < d; ++c) {
            b.z.at(r, c) = tr.states[pr.i][c];
            b.target.at(r, c) = (tr.states[pr.i][c] - tr.states[pr.j][c]) / (ti - tj);
        }
    }
    return b;
}

LossGrads cmt_loss(const FlowMapNet& net, const CmtBatch& batch) {
    const std::size_t n = batch.z.rows();
    Tape tape;
    std::vector<Var> leaves;
    TapeCtx ctx{&tape, &leaves};
    const auto p = lift_params(ctx, net.p);
    Var h = flowmap_apply(ctx, net.cfg, p, tape.constant(batch.z), tape.constant(batch.tcol),
                          tape.constant(batch.scol), batch.cls);
    Var res = sub(h, tape.constant(batch.target));
    Var loss = scale(sum_all(mul(res, res)), 1.0 / static_cast<double>(n));
    tape.backward(loss);

    LossGrads out;
    out.loss = tape.value(loss).item();
    if (std::isnan(out.loss)) throw DivergenceError("cmt_loss: NaN loss", -1);
    for (const Var& leaf : leaves) out.grads.push_back(tape.adjoint(leaf));
    out.grad_norm = grads_norm(out.grads);
    return out;
}

LossGrads cmt_loss(const FlowMapNet& net, const std::vector<Trajectory>& trajs,
                   const std::vector<GridPair>& pairs) {
    return cmt_loss(net, assemble_cmt_batch(trajs, pairs));
}

// ---- mean-flow stage ----

MfBatch sample_mf_batch(const FiniteSupportDataset& ds, const TrainConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.batch_size, d = ds.dim;
    MfBatch b;
    b.z0 = Tensor({n, d});
    b.eps = Tensor({n, d});
    b.tcol = Tensor({n, 1});
    b.scol = Tensor({n, 1});
    b.cls.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = sample_atom(ds, rng);
        b.cls[i] = ds.labels[k];
        for (std::size_t j = 0; j < d; ++j) {
            b.z0.at(i, j) = ds.atoms.at(k, j);
            b.eps.at(i, j) = rng.normal();
        }
        const double t = rng.uniform(cfg.t_min, 1.0);
        b.tcol[i] = t;
        const bool equal = rng.uniform() < cfg.equal_time_fraction;
        b.scol[i] = equal ? t : rng.uniform(cfg.s_min, t);
    }
    return b;
}

Tensor build_w_lambda(const Tensor& z_t, const Tensor& tcol, const std::vector<int>& cls,
                      double lambda, const VelocityNet* teacher, const Tensor* v_hat) {
    if (lambda > 0.0 && teacher == nullptr)
        throw ConfigError("build_w_lambda: lambda > 0 requires a teacher velocity net");
    if (lambda < 1.0 && v_hat == nullptr)
        throw ConfigError("build_w_lambda: lambda < 1 requires the one-point velocity");
    if (lambda == 0.0) return *v_hat;
    Tensor v_phi = eval_velocity(*teacher, z_t, tcol, cls);
    if (lambda == 1.0) return v_phi;
    return add(scale(*v_hat, 1.0 - lambda), scale(v_phi, lambda));
}

Tensor transport_derivative_fd(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                               const Tensor& scol, const std::vector<int>& cls,
                               const Tensor& w, double fd_delta) {
    if (fd_delta <= 0.0) throw ConfigError("transport_derivative_fd: fd_delta must be positive");
    const std::size_t n = z.rows();
    Tensor t_hi({n, 1}), t_lo({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const double tc = std::min(tcol[i], 1.0 - fd_delta);
        t_hi[i] = tc + fd_delta;
        t_lo[i] = tc - fd_delta;
    }
    const Tensor dz = scale(w, fd_delta);
    const Tensor h_hi = flowmap_raw(net, add(z, dz), t_hi, scol, cls);
    const Tensor h_lo = flowmap_raw(net, sub(z, dz), t_lo, scol, cls);
    return scale(sub(h_hi, h_lo), 1.0 / (2.0 * fd_delta));
}

Tensor transport_derivative_jvp(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                                const Tensor& scol, const std::vector<int>& cls,
                                const Tensor& w) {
    return flowmap_jvp(net, z, tcol, scol, cls, w, Tensor::full({z.rows(), 1}, 1.0),
                       Tensor::zeros({z.rows(), 1}));
}

TargetTerms build_mf_target(const FlowMapNet& frozen, const VelocityNet* teacher,
                            const MfBatch& batch, const Schedule& sched,
                            const TrainConfig& cfg) {
    const std::size_t n = batch.z0.rows(), d = batch.z0.cols();
    TargetTerms t;
    t.z_t = Tensor({n, d});
    Tensor v_hat({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = batch.tcol[i];
        const double a = sched.alpha(ti), sg = sched.sigma(ti);
        const double ad = sched.alpha_dot(ti), sd = sched.sigma_dot(ti);
        for (std::size_t j = 0; j < d; ++j) {
            t.z_t.at(i, j) = a * batch.z0.at(i, j) + sg * batch.eps.at(i, j);
            v_hat.at(i, j) = ad * batch.z0.at(i, j) + sd * batch.eps.at(i, j);
        }
    }
    t.w_lambda = build_w_lambda(t.z_t, batch.tcol, batch.cls, cfg.lambda, teacher, &v_hat);
    t.transport = (cfg.derivative == DerivMode::fd)
                      ? transport_derivative_fd(frozen, t.z_t, batch.tcol, batch.scol,
                                                batch.cls, t.w_lambda, cfg.fd_delta)
                      : transport_derivative_jvp(frozen, t.z_t, batch.tcol, batch.scol,
                                                 batch.cls, t.w_lambda);
    Tensor dt_vals({n});
    for (std::size_t i = 0; i < n; ++i) dt_vals[i] = batch.tcol[i] - batch.scol[i];
    t.target = sub(t.w_lambda, scale_rows(t.transport, dt_vals));
    return t;
}

LossGrads mf_loss(const FlowMapNet& net, const MfBatch& batch, const Schedule& sched,
                  const TrainConfig& cfg, const VelocityNet* teacher) {
    // The detached copy is the live net itself: the target below is built in
    // the plain lane, so nothing in it can reach the tape.
    const TargetTerms terms = build_mf_target(net, teacher, batch, sched, cfg);
    const std::size_t n = batch.z0.rows();

    Tape tape;
    std::vector<Var> leaves;
    TapeCtx ctx{&tape, &leaves};
    const auto p = lift_params(ctx, net.p);
    Var h = flowmap_apply(ctx, net.cfg, p, tape.constant(terms.z_t),
                          tape.constant(batch.tcol), tape.constant(batch.scol), batch.cls);
    Var res = sub(h, tape.constant(terms.target));
    Var loss = scale(sum_all(mul(res, res)), 1.0 / static_cast<double>(n));
    tape.backward(loss);

    LossGrads out;
    out.loss = tape.value(loss).item();
    if (std::isnan(out.loss)) throw DivergenceError("mf_loss: NaN loss", -1);
    for (const Var& leaf : leaves) out.grads.push_back(tape.adjoint(leaf));
    out.grad_norm = grads_norm(out.grads);
    return out;
}

// ---- stage loops ----

std::vector<Tensor*> collect_params(VelocityNet& net) {
    std::vector<Tensor*> out;
    net.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<Tensor*> collect_params(FlowMapNet& net) {
    std::vector<Tensor*> out;
    net.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

namespace {

class StageLoop {
  public:
    StageLoop(const TrainConfig& cfg, std::vector<Tensor*> params, EmaTracker& ema,
              MetricsWriter* metrics, std::string stage_name)
        : cfg_(cfg),
          params_(std::move(params)),
          ema_(ema),
          metrics_(metrics),
          stage_(std::move(stage_name)),
          opt_(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
          start_(std::chrono::steady_clock::now()) {}

    void step(std::size_t iter, const LossGrads& lg) {
        if (!std::isfinite(lg.loss)) fail("non-finite loss", iter);
        opt_.step(params_, lg.grads);
        ema_.update(params_);
        if (metrics_) {
            const auto now = std::chrono::steady_clock::now();
            MetricsRow row;
            row.stage = stage_;
            row.iter = static_cast<long>(iter);
            row.loss = lg.loss;
            row.grad_norm = lg.grad_norm;
            row.ema_dist = ema_.distance(params_);
            row.wall_ms = static_cast<long>(
                std::chrono::duration_cast<std::chrono::milliseconds>(now - start_).count());
            metrics_->append(row);
        }
        if (lg.grad_norm > cfg_.grad_norm_limit) {
            if (++spike_run_ >= cfg_.divergence_patience)
                fail("gradient norm above " + format_double(cfg_.grad_norm_limit) + " for " +
                         std::to_string(spike_run_) + " consecutive steps",
                     iter);
        } else {
            spike_run_ = 0;
        }
    }

  private:
    [[noreturn]] void fail(const std::string& why, std::size_t iter) {
        if (metrics_) metrics_->flush();
        throw DivergenceError(stage_ + ": " + why, static_cast<long>(iter));
    }

    const TrainConfig& cfg_;
    std::vector<Tensor*> params_;
    EmaTracker& ema_;
    MetricsWriter* metrics_;
    std::string stage_;
    Adam opt_;
    std::chrono::steady_clock::time_point start_;
    std::size_t spike_run_ = 0;
};

}  // namespace

void train_velocity_stage(VelocityNet& net, EmaTracker& ema, const FiniteSupportDataset& ds,
                          const Schedule& sched, const TrainConfig& cfg, Rng& rng,
                          MetricsWriter* metrics, const std::string& stage_name) {
    cfg.validate();
    ds.validate();
    const double wconst = cfg.time_weight;
    const auto w_fn = [wconst](double) { return wconst; };
    StageLoop loop(cfg, collect_params(net), ema, metrics, stage_name);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const FmBatch batch = sample_fm_batch(ds, sched, cfg, rng);
        loop.step(it, fm_loss(net, batch, w_fn));
    }
    if (metrics) metrics->flush();
}

void train_cmt_stage(FlowMapNet& net, EmaTracker& ema, const VelocityNet& teacher,
                     const std::vector<double>& cls_probs, const TrainConfig& cfg, Rng& rng,
                     MetricsWriter* metrics, const std::string& stage_name) {
    cfg.validate();
    const TimeGrid grid = uniform_grid(cfg.t_min, 1.0, cfg.cmt_grid_points);
    StageLoop loop(cfg, collect_params(net), ema, metrics, stage_name);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto trajs = make_cmt_trajectories(teacher, grid, cfg.cmt_n_traj, cls_probs, rng);
        const auto pairs =
            (cfg.cmt_pairs_per_traj == 0)
                ? enumerate_pairs(cfg.cmt_n_traj, grid.size())
                : sample_pairs(cfg.cmt_n_traj, grid.size(), cfg.cmt_pairs_per_traj, rng);
        loop.step(it, cmt_loss(net, trajs, pairs));
    }
    if (metrics) metrics->flush();
}

void train_mf_stage(FlowMapNet& net, EmaTracker& ema, const VelocityNet* teacher,
                    const FiniteSupportDataset& ds, const Schedule& sched,
                    const TrainConfig& cfg, Rng& rng, MetricsWriter* metrics,
                    const std::string& stage_name) {
    cfg.validate();
    ds.validate();
    if (cfg.lambda > 0.0 && teacher == nullptr)
        throw ConfigError(stage_name + ": lambda > 0 requires a teacher checkpoint");
    StageLoop loop(cfg, collect_params(net), ema, metrics, stage_name);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const MfBatch batch = sample_mf_batch(ds, cfg, rng);
        loop.step(it, mf_loss(net, batch, sched, cfg, teacher));
    }
    if (metrics) metrics->flush();
}

}  // namespace mflab
