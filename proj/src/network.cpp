#include "mflab/network.hpp"

#include <cmath>

#include "mflab/schedule.hpp"

namespace mflab {

Tensor TimeEmbedding::omega_row() const {
    Tensor w({1, num_frequencies});
    for (std::size_t k = 0; k < num_frequencies; ++k)
        w[k] = 2.0 * M_PI * static_cast<double>(k + 1) / max_period;
    return w;
}

namespace {

void visit_layers(const std::string& prefix, std::vector<LayerT<Tensor>>& layers,
                  const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        fn(prefix + "." + std::to_string(i) + ".W", layers[i].W);
        fn(prefix + "." + std::to_string(i) + ".b", layers[i].b);
    }
}

}  // namespace

void VelocityNet::for_each_param(const ParamVisitor& fn) {
    visit_layers("trunk", p.trunk, fn);
    fn("embed_t.W", p.embed_t.W);
    fn("embed_t.b", p.embed_t.b);
    fn("class_table", p.class_table);
}

void VelocityNet::for_each_param(const ConstParamVisitor& fn) const {
    const_cast<VelocityNet*>(this)->for_each_param(
        [&fn](const std::string& n, Tensor& t) { fn(n, t); });
}

void FlowMapNet::for_each_param(const ParamVisitor& fn) {
    visit_layers("trunk", p.trunk, fn);
    fn("embed_t.W", p.embed_t.W);
    fn("embed_t.b", p.embed_t.b);
    fn("embed_dt.W", p.embed_dt.W);
    fn("embed_dt.b", p.embed_dt.b);
    fn("class_table", p.class_table);
}

void FlowMapNet::for_each_param(const ConstParamVisitor& fn) const {
    const_cast<FlowMapNet*>(this)->for_each_param(
        [&fn](const std::string& n, Tensor& t) { fn(n, t); });
}

void Mlp::for_each_param(const ParamVisitor& fn) { visit_layers("layers", p.layers, fn); }

void Mlp::for_each_param(const ConstParamVisitor& fn) const {
    const_cast<Mlp*>(this)->for_each_param(
        [&fn](const std::string& n, Tensor& t) { fn(n, t); });
}

Tensor trunc_normal(Rng& rng, std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        double x;
        do {
            x = rng.normal();
        } while (std::abs(x) > 2.0);
        t[i] = stddev * x;
    }
    return t;
}

namespace {

constexpr double kInitStd = 0.02;

std::vector<LayerT<Tensor>> make_trunk(const NetConfig& cfg, Rng& rng) {
    if (cfg.depth < 2) throw ConfigError("NetConfig: depth must be >= 2");
    std::vector<std::size_t> widths;
    widths.push_back(cfg.dim);
    for (std::size_t i = 0; i + 1 < cfg.depth; ++i) widths.push_back(cfg.hidden);
    widths.push_back(cfg.dim);
    std::vector<LayerT<Tensor>> trunk;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool final_layer = (i + 2 == widths.size());
        LayerT<Tensor> l;
        l.W = (final_layer && cfg.zero_final) ? Tensor::zeros({widths[i], widths[i + 1]})
                                              : trunc_normal(rng, {widths[i], widths[i + 1]}, kInitStd);
        l.b = Tensor::zeros({widths[i + 1]});
        trunk.push_back(std::move(l));
    }
    return trunk;
}

LayerT<Tensor> make_embed_layer(const NetConfig& cfg, Rng& rng) {
    LayerT<Tensor> l;
    l.W = trunc_normal(rng, {cfg.embed.feature_width(), cfg.hidden}, kInitStd);
    l.b = Tensor::zeros({cfg.hidden});
    return l;
}

}  // namespace

VelocityNet make_velocity_net(const NetConfig& cfg, Rng& rng) {
    VelocityNet net;
    net.cfg = cfg;
    net.p.trunk = make_trunk(cfg, rng);
    net.p.embed_t = make_embed_layer(cfg, rng);
    net.p.class_table = trunc_normal(rng, {cfg.num_classes, cfg.hidden}, kInitStd);
    return net;
}

FlowMapNet make_flowmap_net(const NetConfig& cfg, Rng& rng) {
    FlowMapNet net;
    net.cfg = cfg;
    net.p.trunk = make_trunk(cfg, rng);
    net.p.embed_t = make_embed_layer(cfg, rng);
    net.p.embed_dt = make_embed_layer(cfg, rng);
    net.p.class_table = trunc_normal(rng, {cfg.num_classes, cfg.hidden}, kInitStd);
    return net;
}

Mlp make_mlp(const MlpConfig& cfg, Rng& rng) {
    if (cfg.in == 0 || cfg.out == 0 || cfg.depth < 1)
        throw ConfigError("MlpConfig: in/out widths and depth must be positive");
    std::vector<std::size_t> widths;
    widths.push_back(cfg.in);
    for (std::size_t i = 0; i + 1 < cfg.depth; ++i) widths.push_back(cfg.hidden);
    widths.push_back(cfg.out);
    Mlp net;
    net.cfg = cfg;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        LayerT<Tensor> l;
        l.W = trunc_normal(rng, {widths[i], widths[i + 1]}, kInitStd);
        l.b = Tensor::zeros({widths[i + 1]});
        net.p.layers.push_back(std::move(l));
    }
    return net;
}

FlowMapNet flowmap_from_velocity(const VelocityNet& teacher, Rng& rng) {
    FlowMapNet net = make_flowmap_net(teacher.cfg, rng);
    net.p.trunk = teacher.p.trunk;
    net.p.embed_t = teacher.p.embed_t;
    net.p.class_table = teacher.p.class_table;
    return net;
}

namespace {

void check_batch(const NetConfig& cfg, const Tensor& z, const Tensor& tcol,
                 const std::vector<int>& cls, const char* what) {
    if (z.cols() != cfg.dim) throw DimensionError(std::string(what) + ": z width mismatch");
    if (tcol.size() != z.rows() || tcol.cols() != 1)
        throw DimensionError(std::string(what) + ": time column shape mismatch");
    if (cls.size() != z.rows())
        throw DimensionError(std::string(what) + ": class list length mismatch");
    for (int c : cls)
        if (c < 0 || static_cast<std::size_t>(c) >= cfg.num_classes)
            throw ConfigError(std::string(what) + ": class id out of range");
}

}  // namespace

Tensor const_col(std::size_t n, double value) { return Tensor::full({n, 1}, value); }

Tensor eval_velocity(const VelocityNet& net, const Tensor& z, const Tensor& tcol,
                     const std::vector<int>& cls) {
    check_batch(net.cfg, z, tcol, cls, "eval_velocity");
    for (std::size_t i = 0; i < tcol.size(); ++i) check_time_in_unit(tcol[i], "eval_velocity");
    PlainCtx ctx;
    return velocity_apply(ctx, net.cfg, net.p, z, tcol, cls);
}

Tensor eval_velocity(const VelocityNet& net, const Tensor& z, double t, int cls) {
    return eval_velocity(net, z, const_col(z.rows(), t),
                         std::vector<int>(z.rows(), cls));
}

Tensor flowmap_raw(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                   const Tensor& scol, const std::vector<int>& cls) {
    PlainCtx ctx;
    return flowmap_apply(ctx, net.cfg, net.p, z, tcol, scol, cls);
}

Tensor eval_flowmap(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                    const Tensor& scol, const std::vector<int>& cls) {
    check_batch(net.cfg, z, tcol, cls, "eval_flowmap");
    if (!scol.same_shape(tcol)) throw DimensionError("eval_flowmap: s column shape mismatch");
    for (std::size_t i = 0; i < tcol.size(); ++i) {
        check_time_in_unit(tcol[i], "eval_flowmap");
        check_time_in_unit(scol[i], "eval_flowmap");
        if (scol[i] > tcol[i])
            throw OrderingError("eval_flowmap: s > t at row " + std::to_string(i));
    }
    return flowmap_raw(net, z, tcol, scol, cls);
}

Tensor eval_flowmap(const FlowMapNet& net, const Tensor& z, double t, double s, int cls) {
    return eval_flowmap(net, z, const_col(z.rows(), t), const_col(z.rows(), s),
                        std::vector<int>(z.rows(), cls));
}

Tensor flowmap_as_velocity(const FlowMapNet& net, const Tensor& z, double t, int cls) {
    return eval_flowmap(net, z, t, t, cls);
}

Tensor flowmap_jvp(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                   const Tensor& scol, const std::vector<int>& cls, const Tensor& dz,
                   const Tensor& dtcol, const Tensor& dscol) {
    DualCtx ctx;
    const auto p = lift_params(ctx, net.p);
    DualBatch out = flowmap_apply(ctx, net.cfg, p, DualBatch::seeded(z, dz),
                                  DualBatch::seeded(tcol, dtcol),
                                  DualBatch::seeded(scol, dscol), cls);
    return out.tangent;
}

Tensor eval_mlp(const Mlp& net, const Tensor& x) {
    if (x.cols() != net.cfg.in) throw DimensionError("eval_mlp: input width mismatch");
    PlainCtx ctx;
    return mlp_apply(ctx, net.p, x);
}

}  // namespace mflab
