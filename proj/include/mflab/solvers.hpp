#pragma once

#include <memory>

#include "mflab/network.hpp"
#include "mflab/oracle.hpp"

namespace mflab {

struct TimeGrid {
    std::vector<double> times;  // strictly increasing, within [0, 1]

    std::size_t size() const { return times.size(); }
    void validate() const;
};

TimeGrid uniform_grid(double lo, double hi, std::size_t n_points);

/// One PF-ODE solution recorded on a grid. states[i] pairs with
/// grid.times[i]; the run itself integrates downward from the last grid time.
struct Trajectory {
    TimeGrid grid;
    std::vector<Tensor> states;  // each {1, d}
    int label = 0;
};

// ---- velocity fields (instantaneous) ----

class VelocityField {
  public:
    virtual ~VelocityField() = default;
    /// Batched: z is {n, d}; returns {n, d}.
    virtual Tensor eval(const Tensor& z, double t) const = 0;
};

class OracleVelocityField final : public VelocityField {
  public:
    OracleVelocityField(const FiniteSupportDataset& ds, const Schedule& sched)
        : ds_(&ds), sched_(&sched) {}
    Tensor eval(const Tensor& z, double t) const override {
        return oracle_velocity(z, t, *ds_, *sched_);
    }

  private:
    const FiniteSupportDataset* ds_;
    const Schedule* sched_;
};

class NetVelocityField final : public VelocityField {
  public:
    NetVelocityField(const VelocityNet& net, std::vector<int> cls)
        : net_(&net), cls_(std::move(cls)) {}
    NetVelocityField(const VelocityNet& net, int cls) : net_(&net), broadcast_cls_(cls) {}
    Tensor eval(const Tensor& z, double t) const override;

  private:
    const VelocityNet* net_;
    std::vector<int> cls_;
    int broadcast_cls_ = -1;
};

class FnVelocityField final : public VelocityField {
  public:
    explicit FnVelocityField(std::function<Tensor(const Tensor&, double)> fn)
        : fn_(std::move(fn)) {}
    Tensor eval(const Tensor& z, double t) const override { return fn_(z, t); }

  private:
    std::function<Tensor(const Tensor&, double)> fn_;
};

// ---- flow-map fields (interval-averaged) ----

class FlowMapField {
  public:
    virtual ~FlowMapField() = default;
    virtual Tensor eval(const Tensor& z, double t, double s) const = 0;
};

class NetFlowMapField final : public FlowMapField {
  public:
    NetFlowMapField(const FlowMapNet& net, std::vector<int> cls)
        : net_(&net), cls_(std::move(cls)) {}
    NetFlowMapField(const FlowMapNet& net, int cls) : net_(&net), broadcast_cls_(cls) {}
    Tensor eval(const Tensor& z, double t, double s) const override;

  private:
    const FlowMapNet* net_;
    std::vector<int> cls_;
    int broadcast_cls_ = -1;
};

class OracleFlowMapField final : public FlowMapField {
  public:
    OracleFlowMapField(const FiniteSupportDataset& ds, const Schedule& sched,
                       std::size_t steps = 256)
        : ds_(&ds), sched_(&sched), steps_(steps) {}
    Tensor eval(const Tensor& z, double t, double s) const override;

  private:
    const FiniteSupportDataset* ds_;
    const Schedule* sched_;
    std::size_t steps_;
};

class FnFlowMapField final : public FlowMapField {
  public:
    explicit FnFlowMapField(std::function<Tensor(const Tensor&, double, double)> fn)
        : fn_(std::move(fn)) {}
    Tensor eval(const Tensor& z, double t, double s) const override { return fn_(z, t, s); }

  private:
    std::function<Tensor(const Tensor&, double, double)> fn_;
};

// ---- integrators and samplers ----

enum class OdeMethod { euler, heun, rk4 };
OdeMethod parse_ode_method(const std::string& name);
std::string ode_method_name(OdeMethod m);

/// Integrate dz/dt = field(z, t) downward across the grid (from the last time
/// to the first), recording the state at every grid point.
Trajectory solve_pfode(const VelocityField& field, const Tensor& z_init, const TimeGrid& grid,
                       OdeMethod method, int label = 0);

/// Convenience: uniform grid from t_start down to t_end with n_steps steps.
/// Requires t_start > t_end.
Trajectory solve_pfode(const VelocityField& field, const Tensor& z_init, double t_start,
                       double t_end, std::size_t n_steps, OdeMethod method, int label = 0);

/// n-step flow-map sampling: across consecutive step-time pairs (t, s),
/// z <- z - (t - s) h(z, t, s). step_times must start at 1 and decrease
/// strictly; the number of network evaluations equals the number of pairs.
Tensor sample_flowmap(const FlowMapField& field, const Tensor& z_noise,
                      const std::vector<double>& step_times);
Tensor sample_flowmap(const FlowMapNet& net, const Tensor& z_noise,
                      const std::vector<double>& step_times, const std::vector<int>& cls);

/// Teacher trajectories for consistency mid-training: n_traj fresh Gaussian
/// noise draws with categorical class labels, integrated with Euler on the
/// grid (one batched run, then split per trajectory).
std::vector<Trajectory> make_cmt_trajectories(const VelocityNet& teacher, const TimeGrid& grid,
                                              std::size_t n_traj,
                                              const std::vector<double>& class_probs, Rng& rng);

/// CSV dump: columns traj_id, i, t_i, then one column per state component.
void save_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajs);

}  // namespace mflab
