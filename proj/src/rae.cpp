#include "mflab/rae.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "mflab/optim.hpp"

namespace mflab {

FrozenEncoder FrozenEncoder::make(std::size_t d_x, std::size_t d_z, std::uint64_t seed,
                                  bool use_tanh) {
    if (d_z < d_x) throw ConfigError("FrozenEncoder: d_z must be >= d_x (lifting map)");
    FrozenEncoder enc;
    enc.d_x = d_x;
    enc.d_z = d_z;
    enc.seed = seed;
    enc.use_tanh = use_tanh;

    Rng rng(seed, "encoder-lift");
    Eigen::MatrixXd g(static_cast<Eigen::Index>(d_z), static_cast<Eigen::Index>(d_x));
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(
                                                static_cast<Eigen::Index>(d_z),
                                                static_cast<Eigen::Index>(d_x));
    // Canonical sign: make the R diagonal nonnegative so the lift depends only
    // on the seed, not on QR implementation details.
    Eigen::MatrixXd r = q.transpose() * g;
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;

    enc.lift = Tensor({d_z, d_x});
    for (std::size_t i = 0; i < d_z; ++i)
        for (std::size_t j = 0; j < d_x; ++j)
            enc.lift.at(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return enc;
}

Tensor FrozenEncoder::encode(const Tensor& x) const {
    if (x.cols() != d_x) throw DimensionError("encode: input width mismatch");
    Tensor z = matmul_nt(x, lift);  // x . lift^T
    if (use_tanh) z = vtanh(z);
    return z;
}

Tensor FrozenEncoder::project_back(const Tensor& z) const {
    if (z.cols() != d_z) throw DimensionError("project_back: input width mismatch");
    Tensor v = z;
    if (use_tanh) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] <= -1.0 || v[i] >= 1.0)
                throw DomainError("project_back: value outside tanh range");
            v[i] = std::atanh(v[i]);
        }
    }
    return matmul(v, lift);  // orthonormal columns: pseudo-inverse is lift^T
}

std::uint64_t FrozenEncoder::param_hash() const {
    std::string bytes(reinterpret_cast<const char*>(lift.data()),
                      lift.size() * sizeof(double));
    return fnv1a64(bytes);
}

std::pair<DecoderNet, DecoderTrainReport> train_decoder(const FiniteSupportDataset& data_ds,
                                                        const FrozenEncoder& enc,
                                                        const DecoderConfig& cfg, Rng& rng) {
    data_ds.validate();
    MlpConfig mcfg;
    mcfg.in = enc.d_z;
    mcfg.hidden = cfg.hidden;
    mcfg.out = enc.d_x;
    mcfg.depth = cfg.depth;
    DecoderNet dec = make_mlp(mcfg, rng);

    const Tensor x = data_ds.atoms;       // {K, d_x}
    const Tensor z = enc.encode(x);       // {K, d_z}
    const double n_rows = static_cast<double>(x.rows());

    std::vector<Tensor*> params;
    dec.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
    Adam opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    DecoderTrainReport report;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Tape tape;
        std::vector<Var> leaves;
        TapeCtx ctx{&tape, &leaves};
        const auto lifted = lift_params(ctx, dec.p);
        Var out = mlp_apply(ctx, lifted, tape.constant(z));
        Var res = sub(out, tape.constant(x));
        Var loss = scale(sum_all(mul(res, res)), 1.0 / n_rows);
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (const Var& v : leaves) grads.push_back(tape.adjoint(v));
        opt.step(params, grads);
        report.iterations_run = it + 1;
    }
    report.final_rmse = reconstruction_rmse(dec, enc, data_ds);
    report.converged = report.final_rmse <= cfg.target_rmse;
    return {std::move(dec), report};
}

Tensor decode(const DecoderNet& dec, const Tensor& z) { return eval_mlp(dec, z); }

double reconstruction_rmse(const DecoderNet& dec, const FrozenEncoder& enc,
                           const FiniteSupportDataset& data_ds) {
    const Tensor x = data_ds.atoms;
    const Tensor xh = decode(dec, enc.encode(x));
    const Tensor diff = sub(xh, x);
    return std::sqrt(squared_norm(diff).item() / static_cast<double>(diff.size()));
}

}  // namespace mflab
