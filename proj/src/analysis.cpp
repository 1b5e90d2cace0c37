#include "mflab/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mflab {

namespace {

constexpr double kTimeGrid[5] = {0.1, 0.3, 0.5, 0.7, 0.9};
constexpr double kSpanFractions[3] = {0.25, 0.5, 0.75};

// (t, s) pair for probe i: the 15 stratified combinations, cycled.
std::pair<double, double> probe_times(std::size_t i) {
    const std::size_t combo = i % 15;
    const double t = kTimeGrid[combo / 3];
    return {t, t * kSpanFractions[combo % 3]};
}

Tensor noised_atom(const FiniteSupportDataset& ds, const Schedule& sched, double t, Rng& rng,
                   std::size_t* atom_out) {
    const std::size_t k = rng.index(ds.atoms.rows());
    if (atom_out) *atom_out = k;
    Tensor eps({1, ds.dim});
    for (std::size_t j = 0; j < ds.dim; ++j) eps[j] = rng.normal();
    return noise(ds.atom(k), eps, t, sched);
}

// y = M x for a {d, d} matrix and a row vector, returned as a row.
Tensor matvec_row(const Tensor& m, const Tensor& x) {
    const std::size_t d = m.rows();
    Tensor out({1, d});
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += m.at(i, j) * x[j];
        out[i] = acc;
    }
    return out;
}

double dot_rows(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double sq_norm(const Tensor& a) { return dot_rows(a, a); }

}  // namespace

std::vector<Probe> make_probes(const FiniteSupportDataset& ds, const Schedule& sched,
                               std::size_t n, std::uint64_t seed) {
    ds.validate();
    Rng rng(seed, "decomp-probes");
    std::vector<Probe> probes;
    probes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [t, s] = probe_times(i);
        std::size_t atom = 0;
        Probe p;
        p.z = noised_atom(ds, sched, t, rng, &atom);
        p.t = t;
        p.s = s;
        p.cls = ds.labels[atom];
        probes.push_back(std::move(p));
    }
    return probes;
}

DecompositionReport verify_prop1(const FlowMapNet& theta, const FlowMapNet& theta_minus,
                                 const VelocityNet& teacher, const FiniteSupportDataset& ds,
                                 const Schedule& sched, const std::vector<double>& lambdas,
                                 const std::vector<Probe>& probes, std::size_t rk_steps,
                                 double fd_step) {
    ds.validate();
    if (probes.empty()) throw ConfigError("verify_prop1: empty probe set");
    if (lambdas.empty()) throw ConfigError("verify_prop1: empty lambda list");
    if (fd_step <= 0.0) throw ConfigError("verify_prop1: fd_step must be positive");
    const std::size_t d = ds.dim, n_atoms = ds.atoms.rows();

    DecompositionReport report;
    report.dim = d;
    report.n_probes = probes.size();
    report.rk_steps = rk_steps;
    report.fd_step = fd_step;
    report.geometry.reserve(probes.size());
    report.blocks.resize(lambdas.size());
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        report.blocks[li].lambda = lambdas[li];
        report.blocks[li].probes.reserve(probes.size());
    }

    // Batched-row helpers for forward-mode passes at one probe point.
    const auto rep_rows = [d](const Tensor& row, std::size_t n) {
        Tensor out({n, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) = row[j];
        return out;
    };

    for (const Probe& probe : probes) {
        const double t = probe.t, s = probe.s, span = t - s;
        if (!(s < t)) throw OrderingError("verify_prop1: probe requires s < t");
        const std::vector<int> cls1(1, probe.cls);

        ProbeGeometry g;
        g.z = probe.z;
        g.t = t;
        g.s = s;
        g.cls = probe.cls;

        // Posterior over atoms and the per-atom one-point velocities.
        const PosteriorTable post = posterior(probe.z, t, ds, sched);
        g.probs = post.probs;
        const double ad = sched.alpha_dot(t), sd = sched.sigma_dot(t);
        Tensor v_hat({n_atoms, d});
        g.v = Tensor::zeros({1, d});
        for (std::size_t k = 0; k < n_atoms; ++k)
            for (std::size_t j = 0; j < d; ++j) {
                v_hat.at(k, j) = ad * ds.atoms.at(k, j) + sd * post.eps.at(k, j);
                g.v[j] += post.probs[k] * v_hat.at(k, j);
            }
        g.dv_hat = Tensor({n_atoms, d});
        for (std::size_t k = 0; k < n_atoms; ++k)
            for (std::size_t j = 0; j < d; ++j) g.dv_hat.at(k, j) = v_hat.at(k, j) - g.v[j];

        const Tensor v_phi = eval_velocity(teacher, probe.z, t, probe.cls);
        g.dv_phi = sub(v_phi, g.v);

        // Net outputs at the probe.
        g.h_theta = eval_flowmap(theta, probe.z, t, s, probe.cls);
        const Tensor h_detached = eval_flowmap(theta_minus, probe.z, t, s, probe.cls);

        // Column derivatives of the detached net: d rows sharing the probe
        // state, tangent = identity, so output-tangent row j is column j of
        // the state Jacobian (transposed into rows).
        const std::vector<int> cls_d(d, probe.cls);
        const Tensor z_rep_d = rep_rows(probe.z, d);
        const Tensor jac_rows = flowmap_jvp(theta_minus, z_rep_d, const_col(d, t),
                                            const_col(d, s), cls_d, Tensor::identity(d),
                                            Tensor::zeros({d, 1}), Tensor::zeros({d, 1}));
        Tensor j_net({d, d});
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) j_net.at(i, j) = jac_rows.at(j, i);

        g.a_matrix = Tensor({d, d});
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                g.a_matrix.at(i, j) = (i == j ? 1.0 : 0.0) - span * j_net.at(i, j);

        // Oracle average velocity and its derivative columns by central
        // differences on the integrated path.
        g.h_oracle = oracle_meanflow(probe.z, t, s, ds, sched, rk_steps);
        Tensor j_oracle({d, d});
        for (std::size_t j = 0; j < d; ++j) {
            Tensor z_hi = probe.z, z_lo = probe.z;
            z_hi[j] += fd_step;
            z_lo[j] -= fd_step;
            const Tensor h_hi = oracle_meanflow(z_hi, t, s, ds, sched, rk_steps);
            const Tensor h_lo = oracle_meanflow(z_lo, t, s, ds, sched, rk_steps);
            for (std::size_t i = 0; i < d; ++i)
                j_oracle.at(i, j) = (h_hi[i] - h_lo[i]) / (2.0 * fd_step);
        }

        // Time derivative of net and oracle by the same central difference.
        const Tensor ht_net_hi = flowmap_raw(theta_minus, probe.z, const_col(1, t + fd_step),
                                             const_col(1, s), cls1);
        const Tensor ht_net_lo = flowmap_raw(theta_minus, probe.z, const_col(1, t - fd_step),
                                             const_col(1, s), cls1);
        const Tensor ht_or_hi = oracle_meanflow(probe.z, t + fd_step, s, ds, sched, rk_steps);
        const Tensor ht_or_lo = oracle_meanflow(probe.z, t - fd_step, s, ds, sched, rk_steps);

        g.b_term = Tensor({1, d});
        const Tensor jz_net_v = matvec_row(j_net, g.v);
        const Tensor jz_or_v = matvec_row(j_oracle, g.v);
        for (std::size_t j = 0; j < d; ++j) {
            const double dt_dh = (ht_or_hi[j] - ht_or_lo[j]) / (2.0 * fd_step) -
                                 (ht_net_hi[j] - ht_net_lo[j]) / (2.0 * fd_step);
            g.b_term[j] = span * (dt_dh + (jz_or_v[j] - jz_net_v[j]));
        }

        // Posterior variance pieces, shared across mix weights.
        std::vector<Tensor> a_dv(n_atoms);
        g.var_base = 0.0;
        for (std::size_t k = 0; k < n_atoms; ++k) {
            a_dv[k] = matvec_row(g.a_matrix, row_of(g.dv_hat, k));
            g.var_base += post.probs[k] * sq_norm(a_dv[k]);
        }
        const Tensor a_dv_phi = matvec_row(g.a_matrix, g.dv_phi);

        // Left side per mix weight: per-atom targets from exact directional
        // derivatives of the detached net, batched over atoms.
        const Tensor z_rep_k = rep_rows(probe.z, n_atoms);
        const std::vector<int> cls_k(n_atoms, probe.cls);
        const Tensor ones_k = Tensor::full({n_atoms, 1}, 1.0);
        const Tensor zeros_k = Tensor::zeros({n_atoms, 1});

        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            const double lam = lambdas[li];
            Tensor w({n_atoms, d});
            for (std::size_t k = 0; k < n_atoms; ++k)
                for (std::size_t j = 0; j < d; ++j)
                    w.at(k, j) = (1.0 - lam) * v_hat.at(k, j) + lam * v_phi[j];
            const Tensor transport =
                flowmap_jvp(theta_minus, z_rep_k, const_col(n_atoms, t), const_col(n_atoms, s),
                            cls_k, w, ones_k, zeros_k);

            ProbeDecomp rec;
            for (std::size_t k = 0; k < n_atoms; ++k) {
                double sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double target = w.at(k, j) - span * transport.at(k, j);
                    const double r = g.h_theta[j] - target;
                    sq += r * r;
                }
                rec.lhs += post.probs[k] * sq;
            }

            rec.y = Tensor({1, d});
            for (std::size_t j = 0; j < d; ++j)
                rec.y[j] = g.h_theta[j] - (g.h_oracle[j] + g.b_term[j] + lam * a_dv_phi[j]);
            rec.bias_term = sq_norm(rec.y);
            rec.variance_term = (1.0 - lam) * (1.0 - lam) * g.var_base;
            rec.cross_term = 0.0;
            for (std::size_t k = 0; k < n_atoms; ++k)
                rec.cross_term += post.probs[k] * dot_rows(rec.y, a_dv[k]);
            rec.gap = std::abs(rec.lhs - rec.bias_term - rec.variance_term);

            LambdaBlock& block = report.blocks[li];
            block.max_gap = std::max(block.max_gap, rec.gap);
            block.max_cross = std::max(block.max_cross, std::abs(rec.cross_term));
            block.max_variance = std::max(block.max_variance, rec.variance_term);
            const double scaling_residual =
                std::abs(rec.variance_term - (1.0 - lam) * (1.0 - lam) * g.var_base);
            report.max_variance_scaling_residual =
                std::max(report.max_variance_scaling_residual, scaling_residual);
            report.max_gap = std::max(report.max_gap, rec.gap);
            report.max_cross = std::max(report.max_cross, std::abs(rec.cross_term));
            block.probes.push_back(std::move(rec));
        }
        report.geometry.push_back(std::move(g));
    }
    return report;
}

namespace {

nlohmann::ordered_json tensor_json(const Tensor& t) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void save_decomposition_report(const std::string& path, const DecompositionReport& report) {
    nlohmann::ordered_json doc;
    doc["dim"] = report.dim;
    doc["n_probes"] = report.n_probes;
    doc["rk_steps"] = report.rk_steps;
    doc["fd_step"] = report.fd_step;
    doc["tolerance_gap"] = report.tolerance_gap;
    doc["tolerance_cross"] = report.tolerance_cross;
    doc["max_gap"] = report.max_gap;
    doc["max_cross"] = report.max_cross;
    doc["max_variance_scaling_residual"] = report.max_variance_scaling_residual;

    nlohmann::ordered_json probes = nlohmann::ordered_json::array();
    for (const ProbeGeometry& g : report.geometry) {
        nlohmann::ordered_json p;
        p["t"] = g.t;
        p["s"] = g.s;
        p["cls"] = g.cls;
        p["z"] = tensor_json(g.z);
        p["posterior"] = g.probs;
        p["oracle_velocity"] = tensor_json(g.v);
        p["dv_phi"] = tensor_json(g.dv_phi);
        p["dv_hat"] = tensor_json(g.dv_hat);
        p["h_theta"] = tensor_json(g.h_theta);
        p["h_oracle"] = tensor_json(g.h_oracle);
        p["a_matrix"] = tensor_json(g.a_matrix);
        p["b_term"] = tensor_json(g.b_term);
        p["var_base"] = g.var_base;
        probes.push_back(std::move(p));
    }
    doc["probes"] = std::move(probes);

    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const LambdaBlock& b : report.blocks) {
        nlohmann::ordered_json jb;
        jb["lambda"] = b.lambda;
        jb["max_gap"] = b.max_gap;
        jb["max_cross"] = b.max_cross;
        jb["max_variance"] = b.max_variance;
        nlohmann::ordered_json recs = nlohmann::ordered_json::array();
        for (const ProbeDecomp& r : b.probes) {
            nlohmann::ordered_json jr;
            jr["lhs"] = r.lhs;
            jr["bias_term"] = r.bias_term;
            jr["variance_term"] = r.variance_term;
            jr["cross_term"] = r.cross_term;
            jr["gap"] = r.gap;
            jr["y"] = tensor_json(r.y);
            recs.push_back(std::move(jr));
        }
        jb["records"] = std::move(recs);
        blocks.push_back(std::move(jb));
    }
    doc["lambda_blocks"] = std::move(blocks);

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
}

// ---- finite-difference order study ----

std::vector<DirectedProbe> make_fd_probes(const FiniteSupportDataset& ds, const Schedule& sched,
                                          std::size_t n, std::uint64_t seed) {
    ds.validate();
    Rng rng(seed, "fd-probes");
    std::vector<DirectedProbe> probes;
    probes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [t, s] = probe_times(i);
        DirectedProbe p;
        p.z = noised_atom(ds, sched, t, rng, nullptr);
        p.t = t;
        p.s = s;
        p.cls = ds.labels[rng.index(ds.atoms.rows())];
        p.w = oracle_velocity(p.z, t, ds, sched);
        probes.push_back(std::move(p));
    }
    return probes;
}

namespace {

struct ProbeBatch {
    Tensor z, w;        // {n, d}
    Tensor tcol, scol;  // {n, 1}
    std::vector<int> cls;
};

ProbeBatch pack_probes(const std::vector<DirectedProbe>& probes) {
    if (probes.empty()) throw ConfigError("fd_order_study: empty probe set");
    const std::size_t n = probes.size(), d = probes.front().z.size();
    ProbeBatch b;
    b.z = Tensor({n, d});
    b.w = Tensor({n, d});
    b.tcol = Tensor({n, 1});
    b.scol = Tensor({n, 1});
    b.cls.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const DirectedProbe& p = probes[i];
        if (p.z.size() != d || p.w.size() != d)
            throw DimensionError("fd_order_study: ragged probe dimensions");
        for (std::size_t j = 0; j < d; ++j) {
            b.z.at(i, j) = p.z[j];
            b.w.at(i, j) = p.w[j];
        }
        b.tcol[i] = p.t;
        b.scol[i] = p.s;
        b.cls[i] = p.cls;
    }
    return b;
}

void check_ladder(const std::vector<double>& ladder) {
    if (ladder.size() < 3) throw ConfigError("fd_order_study: ladder needs at least 3 levels");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (ladder[i] <= 0.0) throw ConfigError("fd_order_study: ladder steps must be positive");
        if (i > 0 && ladder[i] >= ladder[i - 1])
            throw ConfigError("fd_order_study: ladder must be strictly decreasing");
    }
}

double max_relative_row_error(const Tensor& approx, const Tensor& exact) {
    double worst = 0.0;
    for (std::size_t i = 0; i < exact.rows(); ++i) {
        double diff = 0.0, ref = 0.0;
        for (std::size_t j = 0; j < exact.cols(); ++j) {
            const double e = approx.at(i, j) - exact.at(i, j);
            diff += e * e;
            ref += exact.at(i, j) * exact.at(i, j);
        }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(ref), 1e-9));
    }
    return worst;
}

// Least-squares slope of log(err) against log(dt); errors floored at 1e-16
// so an exactly-reproduced derivative does not take log of zero.
double fit_order(const std::vector<FdStudyRow>& rows) {
    const std::size_t n = rows.size();
    double mx = 0.0, my = 0.0;
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = std::log(rows[i].dt);
        ys[i] = std::log(std::max(rows[i].max_rel_err, 1e-16));
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace

std::vector<FdStudyRow> fd_order_study(const MapFn& value, const MapJvpFn& jvp,
                                       const std::vector<DirectedProbe>& probes,
                                       const std::vector<double>& dt_ladder) {
    check_ladder(dt_ladder);
    const ProbeBatch b = pack_probes(probes);
    const std::size_t n = probes.size();
    const Tensor exact = jvp(b.z, b.tcol, b.scol, b.cls, b.w, Tensor::full({n, 1}, 1.0),
                             Tensor::zeros({n, 1}));

    std::vector<FdStudyRow> rows;
    for (const double dt : dt_ladder) {
        // Same stencil as the training-time derivative: states stepped along
        // w, centre time clamped so the upper evaluation stays inside [0, 1].
        Tensor t_hi({n, 1}), t_lo({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            const double tc = std::min(b.tcol[i], 1.0 - dt);
            t_hi[i] = tc + dt;
            t_lo[i] = tc - dt;
        }
        const Tensor dz = scale(b.w, dt);
        const Tensor h_hi = value(add(b.z, dz), t_hi, b.scol, b.cls);
        const Tensor h_lo = value(sub(b.z, dz), t_lo, b.scol, b.cls);
        const Tensor approx = scale(sub(h_hi, h_lo), 1.0 / (2.0 * dt));
        rows.push_back({dt, max_relative_row_error(approx, exact), 0.0});
    }
    const double order = fit_order(rows);
    for (FdStudyRow& r : rows) r.fitted_order = order;
    return rows;
}

std::vector<FdStudyRow> fd_order_study(const FlowMapNet& net,
                                       const std::vector<DirectedProbe>& probes,
                                       const std::vector<double>& dt_ladder) {
    check_ladder(dt_ladder);
    const ProbeBatch b = pack_probes(probes);
    const Tensor exact = transport_derivative_jvp(net, b.z, b.tcol, b.scol, b.cls, b.w);
    std::vector<FdStudyRow> rows;
    for (const double dt : dt_ladder) {
        const Tensor approx = transport_derivative_fd(net, b.z, b.tcol, b.scol, b.cls, b.w, dt);
        rows.push_back({dt, max_relative_row_error(approx, exact), 0.0});
    }
    const double order = fit_order(rows);
    for (FdStudyRow& r : rows) r.fitted_order = order;
    return rows;
}

void save_fd_study_csv(const std::string& path, const std::vector<FdStudyRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "dt,max_rel_err,fitted_order\n";
    for (const FdStudyRow& r : rows)
        out << format_double(r.dt) << "," << format_double(r.max_rel_err) << ","
            << format_double(r.fitted_order) << "\n";
}

// ---- two-sample metrics ----

namespace {

double row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double sq = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        const double diff = a.at(i, c) - b.at(j, c);
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

double mean_pairwise_distance(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) acc += row_distance(a, i, b, j);
    return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

double mean_kernel(const Tensor& a, const Tensor& b, double inv_two_sigma_sq) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double dist = row_distance(a, i, b, j);
            acc += std::exp(-dist * dist * inv_two_sigma_sq);
        }
    return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

// Median pairwise distance of a pooled subsample (strided so it stays cheap
// on large sets; deterministic).
double median_heuristic_bandwidth(const Tensor& a, const Tensor& b) {
    constexpr std::size_t kCap = 512;
    const std::size_t d = a.cols();
    std::vector<const Tensor*> srcs = {&a, &b};
    Tensor pool({std::min(a.rows(), kCap) + std::min(b.rows(), kCap), d});
    std::size_t r = 0;
    for (const Tensor* src : srcs) {
        const std::size_t take = std::min(src->rows(), kCap);
        const std::size_t stride = std::max<std::size_t>(1, src->rows() / take);
        for (std::size_t i = 0; i < take; ++i, ++r)
            for (std::size_t c = 0; c < d; ++c) pool.at(r, c) = src->at(i * stride, c);
    }
    std::vector<double> dists;
    dists.reserve(pool.rows() * (pool.rows() - 1) / 2);
    for (std::size_t i = 0; i < pool.rows(); ++i)
        for (std::size_t j = i + 1; j < pool.rows(); ++j)
            dists.push_back(row_distance(pool, i, pool, j));
    if (dists.empty()) return 1.0;
    const std::size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                     dists.end());
    return std::max(dists[mid], 1e-12);
}

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EMatrix sym_sqrt(const EMatrix& m) {
    Eigen::SelfAdjointEigenSolver<EMatrix> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = std::sqrt(std::max(lam[i], 0.0));
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

TwoSampleMetrics two_sample_metrics(const Tensor& samples_a, const Tensor& samples_b) {
    if (samples_a.size() == 0 || samples_b.size() == 0)
        throw ConfigError("two_sample_metrics: empty sample set");
    if (samples_a.cols() != samples_b.cols())
        throw DimensionError("two_sample_metrics: dimension mismatch");
    samples_a.require_finite("two_sample_metrics: samples_a");
    samples_b.require_finite("two_sample_metrics: samples_b");

    TwoSampleMetrics m;
    const double cross = mean_pairwise_distance(samples_a, samples_b);
    const double within_a = mean_pairwise_distance(samples_a, samples_a);
    const double within_b = mean_pairwise_distance(samples_b, samples_b);
    m.energy_distance = 2.0 * cross - within_a - within_b;

    m.mmd_bandwidth = median_heuristic_bandwidth(samples_a, samples_b);
    const double inv2s2 = 1.0 / (2.0 * m.mmd_bandwidth * m.mmd_bandwidth);
    const double mmd_sq = mean_kernel(samples_a, samples_a, inv2s2) +
                          mean_kernel(samples_b, samples_b, inv2s2) -
                          2.0 * mean_kernel(samples_a, samples_b, inv2s2);
    m.mmd_rbf = std::sqrt(std::max(mmd_sq, 0.0));

    // Gaussian fits (population covariance). Bitwise-equal moments short-
    // circuit to an exact zero: the closed form is identically zero there
    // and the matrix square roots would only add roundoff.
    const std::size_t d = samples_a.cols();
    const auto moments = [d](const Tensor& x) {
        const double n = static_cast<double>(x.rows());
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t c = 0; c < d; ++c) mu[static_cast<Eigen::Index>(c)] += x.at(i, c);
        mu /= n;
        EMatrix cov = EMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < x.rows(); ++i) {
            Eigen::VectorXd row(static_cast<Eigen::Index>(d));
            for (std::size_t c = 0; c < d; ++c) row[static_cast<Eigen::Index>(c)] = x.at(i, c);
            const Eigen::VectorXd centered = row - mu;
            cov += centered * centered.transpose();
        }
        cov /= n;
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = moments(samples_a);
    auto [mu_b, cov_b] = moments(samples_b);

    const bool same_moments = (mu_a - mu_b).cwiseAbs().maxCoeff() == 0.0 &&
                              (cov_a - cov_b).cwiseAbs().maxCoeff() == 0.0;
    if (same_moments) {
        m.gauss_w2 = 0.0;
        return m;
    }

    const auto min_eig = [](const EMatrix& c) {
        Eigen::SelfAdjointEigenSolver<EMatrix> es(c);
        return es.eigenvalues().minCoeff();
    };
    if (min_eig(cov_a) < 1e-12 || min_eig(cov_b) < 1e-12) {
        const double ridge = 1e-8;
        cov_a += ridge * EMatrix::Identity(cov_a.rows(), cov_a.cols());
        cov_b += ridge * EMatrix::Identity(cov_b.rows(), cov_b.cols());
        m.covariance_regularized = true;
    }

    const EMatrix sqrt_b = sym_sqrt(cov_b);
    const EMatrix inner = sym_sqrt(sqrt_b * cov_a * sqrt_b);
    const double w2_sq = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
                         2.0 * inner.trace();
    m.gauss_w2 = std::sqrt(std::max(w2_sq, 0.0));
    return m;
}

// ---- generation-cost budget ----

double budget(const BudgetSpec& spec) {
    if (spec.decoder_gflops < 0.0 || spec.backbone_gflops < 0.0)
        throw ConfigError("budget: costs must be nonnegative");
    if (spec.nfe < 1) throw ConfigError("budget: nfe must be at least 1");
    return spec.decoder_gflops + static_cast<double>(spec.nfe) * spec.backbone_gflops;
}

// ---- instability telemetry ----

InstabilityReport instability_summary(const std::vector<MetricsRow>& rows, double threshold,
                                      std::size_t patience) {
    InstabilityReport report;
    report.threshold = threshold;
    report.patience = patience;
    std::vector<std::size_t> spike_runs;
    for (const MetricsRow& row : rows) {
        std::size_t idx = report.stages.size();
        for (std::size_t i = 0; i < report.stages.size(); ++i)
            if (report.stages[i].stage == row.stage) {
                idx = i;
                break;
            }
        if (idx == report.stages.size()) {
            StageInstability st;
            st.stage = row.stage;
            report.stages.push_back(std::move(st));
            spike_runs.push_back(0);
        }
        StageInstability& st = report.stages[idx];
        ++st.steps;
        st.max_grad_norm = std::max(st.max_grad_norm, row.grad_norm);
        st.final_loss = row.loss;
        if (!std::isfinite(row.loss)) st.diverged = true;
        if (row.grad_norm > threshold) {
            if (st.first_spike_iter < 0) st.first_spike_iter = row.iter;
            if (++spike_runs[idx] >= patience) st.diverged = true;
        } else {
            spike_runs[idx] = 0;
        }
    }
    return report;
}

}  // namespace mflab
