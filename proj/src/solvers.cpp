#include "mflab/solvers.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace mflab {

void TimeGrid::validate() const {
    if (times.size() < 2) throw ConfigError("TimeGrid: need at least two points");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < 0.0 || times[i] > 1.0)
            throw DomainError("TimeGrid: time outside [0, 1]");
        if (i > 0 && times[i] <= times[i - 1])
            throw OrderingError("TimeGrid: times must be strictly increasing");
    }
}

TimeGrid uniform_grid(double lo, double hi, std::size_t n_points) {
    if (n_points < 2) throw ConfigError("uniform_grid: need at least two points");
    TimeGrid g;
    for (std::size_t i = 0; i < n_points; ++i) {
        const double f = static_cast<double>(i) / static_cast<double>(n_points - 1);
        g.times.push_back(lo + f * (hi - lo));
    }
    g.times.back() = hi;  // kill accumulation error at the endpoint
    g.validate();
    return g;
}

Tensor NetVelocityField::eval(const Tensor& z, double t) const {
    const std::vector<int> cls =
        cls_.empty() ? std::vector<int>(z.rows(), broadcast_cls_) : cls_;
    return eval_velocity(*net_, z, const_col(z.rows(), t), cls);
}

Tensor NetFlowMapField::eval(const Tensor& z, double t, double s) const {
    const std::vector<int> cls =
        cls_.empty() ? std::vector<int>(z.rows(), broadcast_cls_) : cls_;
    return eval_flowmap(*net_, z, const_col(z.rows(), t), const_col(z.rows(), s), cls);
}

Tensor OracleFlowMapField::eval(const Tensor& z, double t, double s) const {
    Tensor out({z.rows(), z.cols()});
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const Tensor h = oracle_meanflow(row_of(z, i), t, s, *ds_, *sched_, steps_);
        for (std::size_t j = 0; j < z.cols(); ++j) out.at(i, j) = h[j];
    }
    return out;
}

OdeMethod parse_ode_method(const std::string& name) {
    if (name == "euler") return OdeMethod::euler;
    if (name == "heun") return OdeMethod::heun;
    if (name == "rk4") return OdeMethod::rk4;
    throw ConfigError("unknown ODE method: " + name);
}

std::string ode_method_name(OdeMethod m) {
    switch (m) {
        case OdeMethod::euler: return "euler";
        case OdeMethod::heun: return "heun";
        case OdeMethod::rk4: return "rk4";
    }
    return "?";
}

namespace {

Tensor ode_step(const VelocityField& field, const Tensor& z, double t_from, double t_to,
                OdeMethod method) {
    const double h = t_to - t_from;
    switch (method) {
        case OdeMethod::euler: {
            return add(z, scale(field.eval(z, t_from), h));
        }
        case OdeMethod::heun: {
            const Tensor k1 = field.eval(z, t_from);
            const Tensor zp = add(z, scale(k1, h));
            const Tensor k2 = field.eval(zp, t_to);
            return add(z, scale(add(k1, k2), h / 2.0));
        }
        case OdeMethod::rk4: {
            const Tensor k1 = field.eval(z, t_from);
            const Tensor k2 = field.eval(add(z, scale(k1, h / 2.0)), t_from + h / 2.0);
            const Tensor k3 = field.eval(add(z, scale(k2, h / 2.0)), t_from + h / 2.0);
            const Tensor k4 = field.eval(add(z, scale(k3, h)), t_to);
            return add(z, scale(add(add(k1, k4), scale(add(k2, k3), 2.0)), h / 6.0));
        }
    }
    throw ConfigError("ode_step: bad method");
}

}  // namespace

Trajectory solve_pfode(const VelocityField& field, const Tensor& z_init, const TimeGrid& grid,
                       OdeMethod method, int label) {
    grid.validate();
    Trajectory traj;
    traj.grid = grid;
    traj.label = label;
    traj.states.assign(grid.size(), Tensor{});
    Tensor z = z_init;
    traj.states[grid.size() - 1] = z;
    for (std::size_t i = grid.size() - 1; i-- > 0;) {
        z = ode_step(field, z, grid.times[i + 1], grid.times[i], method);
        if (!z.all_finite())
            throw DivergenceError("solve_pfode: non-finite state",
                                  static_cast<long>(grid.size() - 1 - i));
        traj.states[i] = z;
    }
    return traj;
}

Trajectory solve_pfode(const VelocityField& field, const Tensor& z_init, double t_start,
                       double t_end, std::size_t n_steps, OdeMethod method, int label) {
    if (!(t_start > t_end)) throw OrderingError("solve_pfode: requires t_start > t_end");
    if (n_steps < 1) throw ConfigError("solve_pfode: n_steps must be >= 1");
    return solve_pfode(field, z_init, uniform_grid(t_end, t_start, n_steps + 1), method, label);
}

Tensor sample_flowmap(const FlowMapField& field, const Tensor& z_noise,
                      const std::vector<double>& step_times) {
    if (step_times.size() < 2)
        throw OrderingError("sample_flowmap: need at least two step times");
    if (std::abs(step_times.front() - 1.0) > 1e-12)
        throw OrderingError("sample_flowmap: step times must start at 1");
    for (std::size_t i = 0; i < step_times.size(); ++i) {
        if (step_times[i] < 0.0 || step_times[i] > 1.0)
            throw DomainError("sample_flowmap: step time outside [0, 1]");
        if (i > 0 && step_times[i] >= step_times[i - 1])
            throw OrderingError("sample_flowmap: step times must strictly decrease");
    }
    Tensor z = z_noise;
    for (std::size_t i = 0; i + 1 < step_times.size(); ++i) {
        const double t = step_times[i], s = step_times[i + 1];
        z = sub(z, scale(field.eval(z, t, s), t - s));
        if (!z.all_finite())
            throw DivergenceError("sample_flowmap: non-finite state", static_cast<long>(i));
    }
    return z;
}

Tensor sample_flowmap(const FlowMapNet& net, const Tensor& z_noise,
                      const std::vector<double>& step_times, const std::vector<int>& cls) {
    NetFlowMapField field(net, cls);
    return sample_flowmap(field, z_noise, step_times);
}

std::vector<Trajectory> make_cmt_trajectories(const VelocityNet& teacher, const TimeGrid& grid,
                                              std::size_t n_traj,
                                              const std::vector<double>& class_probs,
                                              Rng& rng) {
    grid.validate();
    if (n_traj == 0) throw ConfigError("make_cmt_trajectories: n_traj must be positive");
    if (class_probs.empty()) throw ConfigError("make_cmt_trajectories: empty class distribution");

    std::vector<int> labels;
    for (std::size_t i = 0; i < n_traj; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        int pick = static_cast<int>(class_probs.size()) - 1;
        for (std::size_t c = 0; c < class_probs.size(); ++c) {
            acc += class_probs[c];
            if (u < acc) {
                pick = static_cast<int>(c);
                break;
            }
        }
        labels.push_back(pick);
    }
    Tensor z = normal_tensor(rng, {n_traj, teacher.cfg.dim});

    NetVelocityField field(teacher, labels);
    // One batched downward Euler run over the grid; snapshots split per row.
    std::vector<Tensor> snaps(grid.size());
    snaps[grid.size() - 1] = z;
    for (std::size_t i = grid.size() - 1; i-- > 0;) {
        z = ode_step(field, z, grid.times[i + 1], grid.times[i], OdeMethod::euler);
        if (!z.all_finite())
            throw DivergenceError("make_cmt_trajectories: non-finite state",
                                  static_cast<long>(grid.size() - 1 - i));
        snaps[i] = z;
    }
    std::vector<Trajectory> out(n_traj);
    for (std::size_t k = 0; k < n_traj; ++k) {
        out[k].grid = grid;
        out[k].label = labels[k];
        out[k].states.reserve(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) out[k].states.push_back(row_of(snaps[i], k));
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void save_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("save_trajectories_csv: cannot write " + path);
    const std::size_t d = trajs.empty() ? 0 : trajs.front().states.front().size();
    out << "traj_id,i,t_i";
    for (std::size_t j = 0; j < d; ++j) out << ",z" << j;
    out << "\n";
    for (std::size_t k = 0; k < trajs.size(); ++k) {
        const Trajectory& tr = trajs[k];
        for (std::size_t i = 0; i < tr.grid.size(); ++i) {
            out << k << "," << i << "," << fmt_double(tr.grid.times[i]);
            for (std::size_t j = 0; j < tr.states[i].size(); ++j)
                out << "," << fmt_double(tr.states[i][j]);
            out << "\n";
        }
    }
}

}  // namespace mflab
