#include "mflab/oracle.hpp"

#include <cmath>
#include <limits>

namespace mflab {

namespace {

void check_oracle_time(double t, const char* what) {
    if (!(t > 0.0 && t <= 1.0))
        throw DomainError(std::string(what) + ": t = " + std::to_string(t) +
                          " outside (0, 1] (posterior degenerates at sigma_t = 0)");
}

}  // namespace

PosteriorTable posterior(const Tensor& z_t, double t, const FiniteSupportDataset& ds,
                         const Schedule& sched) {
    check_oracle_time(t, "posterior");
    if (z_t.rows() != 1 || z_t.cols() != ds.dim)
        throw DimensionError("posterior: query must be a single row of dataset dimension");
    const double a = sched.alpha(t);
    const double sg = sched.sigma(t);
    const std::size_t K = ds.size(), d = ds.dim;

    PosteriorTable table;
    table.query = z_t;
    table.t = t;
    table.eps = Tensor({K, d});
    std::vector<double> logw(K, -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < K; ++k) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = (z_t[j] - a * ds.atoms.at(k, j)) / sg;
            table.eps.at(k, j) = e;
            sq += e * e;
        }
        if (ds.weights[k] > 0.0) logw[k] = std::log(ds.weights[k]) - 0.5 * sq;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double lw : logw) m = std::max(m, lw);
    table.probs.resize(K);
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        table.probs[k] = std::isinf(m) ? 0.0 : std::exp(logw[k] - m);
        norm += table.probs[k];
    }
    for (double& p : table.probs) p /= norm;
    return table;
}

Tensor oracle_velocity(const Tensor& z, double t, const FiniteSupportDataset& ds,
                       const Schedule& sched) {
    check_oracle_time(t, "oracle_velocity");
    if (z.cols() != ds.dim) throw DimensionError("oracle_velocity: dimension mismatch");
    const double ad = sched.alpha_dot(t);
    const double sd = sched.sigma_dot(t);
    const std::size_t n = z.rows(), d = ds.dim;
    Tensor v({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const PosteriorTable p = posterior(row_of(z, i), t, ds, sched);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < ds.size(); ++k)
                acc += p.probs[k] * (ad * ds.atoms.at(k, j) + sd * p.eps.at(k, j));
            v.at(i, j) = acc;
        }
    }
    return v;
}

Tensor oracle_flow(const Tensor& z, double t_from, double t_to,
                   const FiniteSupportDataset& ds, const Schedule& sched, std::size_t steps) {
    if (steps < 1) throw ConfigError("oracle_flow: steps must be >= 1");
    const auto field = [&](const Tensor& state, double u) {
        return oracle_velocity(state, std::max(u, 1e-12), ds, sched);
    };
    Tensor state = z;
    const double h = (t_to - t_from) / static_cast<double>(steps);
    double u = t_from;
    for (std::size_t i = 0; i < steps; ++i) {
        const Tensor k1 = field(state, u);
        const Tensor k2 = field(add(state, scale(k1, h / 2.0)), u + h / 2.0);
        const Tensor k3 = field(add(state, scale(k2, h / 2.0)), u + h / 2.0);
        const Tensor k4 = field(add(state, scale(k3, h)), u + h);
        Tensor incr = add(add(k1, k4), scale(add(k2, k3), 2.0));
        state = add(state, scale(incr, h / 6.0));
        u = t_from + h * static_cast<double>(i + 1);
    }
    return state;
}

MeanFlowResult oracle_meanflow_path(const Tensor& z_t, double t, double s,
                                    const FiniteSupportDataset& ds, const Schedule& sched,
                                    std::size_t steps) {
    if (!(t > s)) throw OrderingError("oracle_meanflow: requires t > s");
    if (t > 1.0 || s < 0.0) throw DomainError("oracle_meanflow: times outside [0, 1]");
    MeanFlowResult r;
    r.z_end = oracle_flow(z_t, t, s, ds, sched, steps);
    r.h = scale(sub(z_t, r.z_end), 1.0 / (t - s));
    return r;
}

Tensor oracle_meanflow(const Tensor& z_t, double t, double s, const FiniteSupportDataset& ds,
                       const Schedule& sched, std::size_t steps) {
    return oracle_meanflow_path(z_t, t, s, ds, sched, steps).h;
}

}  // namespace mflab
