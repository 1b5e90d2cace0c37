#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mflab/dual.hpp"
#include "mflab/rng.hpp"
#include "mflab/tape.hpp"
#include "mflab/tensor.hpp"

namespace mflab {

/// Sinusoidal scalar embedding with a linear frequency ladder
/// omega_k = 2 pi k / max_period, k = 1..num_frequencies.
/// The default cap (max_period 20 -> omega_max ~ 10 rad) keeps the network's
/// time derivatives gentle enough for clean second-order finite-difference
/// convergence, while the base frequency alone already separates times at
/// 1e-4 resolution on [0, 1].
struct TimeEmbedding {
    std::size_t num_frequencies = 32;
    double max_period = 20.0;

    std::size_t feature_width() const { return 2 * num_frequencies; }
    Tensor omega_row() const;  // {1, num_frequencies}
};

struct NetConfig {
    std::size_t dim = 16;         // z dimension (input == output width)
    std::size_t hidden = 256;
    std::size_t depth = 4;        // total linear layers, >= 2
    std::size_t num_classes = 9;  // includes one spare unconditional id
    TimeEmbedding embed;
    bool zero_final = true;       // zero-init the last layer (output 0 at init)
};

// ---- lane-generic parameter bundles ----
// V is Tensor (plain), DualBatch (forward mode), or Var (reverse mode).

template <class V>
struct LayerT {
    V W;  // {in, out}
    V b;  // {out}
};

template <class V>
struct MlpParamsT {
    std::vector<LayerT<V>> layers;
};

template <class V>
struct VelocityParamsT {
    std::vector<LayerT<V>> trunk;  // dim -> hidden -> ... -> dim
    LayerT<V> embed_t;             // {2K, hidden}
    V class_table;                 // {num_classes, hidden}
};

template <class V>
struct FlowMapParamsT {
    std::vector<LayerT<V>> trunk;
    LayerT<V> embed_t;
    LayerT<V> embed_dt;  // conditioning on the interval length t - s
    V class_table;
};

// ---- evaluation contexts ----
// A context lifts raw Tensors into a lane. The same apply() template then
// produces values, exact JVPs, or a gradient tape depending on the context.

struct PlainCtx {
    using V = Tensor;
    Tensor constant(const Tensor& t) const { return t; }
    Tensor param(const Tensor& t) const { return t; }
};

struct DualCtx {
    using V = DualBatch;
    DualBatch constant(const Tensor& t) const { return DualBatch::constant(t); }
    DualBatch param(const Tensor& t) const { return DualBatch::constant(t); }
};

struct TapeCtx {
    using V = Var;
    Tape* tape = nullptr;
    std::vector<Var>* params = nullptr;  // leaves recorded in lift order
    Var constant(const Tensor& t) const { return tape->constant(t); }
    Var param(const Tensor& t) const {
        Var v = tape->leaf(t);
        if (params) params->push_back(v);
        return v;
    }
};

// Lift order matches for_each_param order exactly; gradient readout relies
// on that pairing.

template <class Ctx>
LayerT<typename Ctx::V> lift_layer(Ctx& ctx, const LayerT<Tensor>& l) {
    return {ctx.param(l.W), ctx.param(l.b)};
}

template <class Ctx>
MlpParamsT<typename Ctx::V> lift_params(Ctx& ctx, const MlpParamsT<Tensor>& p) {
    MlpParamsT<typename Ctx::V> out;
    for (const auto& l : p.layers) out.layers.push_back(lift_layer(ctx, l));
    return out;
}

template <class Ctx>
VelocityParamsT<typename Ctx::V> lift_params(Ctx& ctx, const VelocityParamsT<Tensor>& p) {
    VelocityParamsT<typename Ctx::V> out;
    for (const auto& l : p.trunk) out.trunk.push_back(lift_layer(ctx, l));
    out.embed_t = lift_layer(ctx, p.embed_t);
    out.class_table = ctx.param(p.class_table);
    return out;
}

template <class Ctx>
FlowMapParamsT<typename Ctx::V> lift_params(Ctx& ctx, const FlowMapParamsT<Tensor>& p) {
    FlowMapParamsT<typename Ctx::V> out;
    for (const auto& l : p.trunk) out.trunk.push_back(lift_layer(ctx, l));
    out.embed_t = lift_layer(ctx, p.embed_t);
    out.embed_dt = lift_layer(ctx, p.embed_dt);
    out.class_table = ctx.param(p.class_table);
    return out;
}

// ---- lane-generic forward passes ----

template <class Ctx, class V = typename Ctx::V>
V time_features(Ctx& ctx, const TimeEmbedding& emb, const V& tcol) {
    V ang = matmul(tcol, ctx.constant(emb.omega_row()));  // {n, K}
    return concat_cols(vsin(ang), vcos(ang));             // {n, 2K}
}

template <class V>
V affine(const LayerT<V>& l, const V& x) {
    return add_bias(matmul(x, l.W), l.b);
}

template <class Ctx, class V = typename Ctx::V>
V mlp_apply(Ctx&, const MlpParamsT<V>& p, const V& x) {
    V h = x;
    for (std::size_t i = 0; i + 1 < p.layers.size(); ++i) h = vsilu(affine(p.layers[i], h));
    return affine(p.layers.back(), h);
}

// Conditioning = class-table row + time embedding (+ interval embedding for
// the flow map), summed and added to the first layer's pre-activation.

template <class Ctx, class V = typename Ctx::V>
V velocity_apply(Ctx& ctx, const NetConfig& cfg, const VelocityParamsT<V>& p, const V& z,
                 const V& tcol, const std::vector<int>& cls) {
    V cond = add(affine(p.embed_t, time_features(ctx, cfg.embed, tcol)),
                 gather_rows(p.class_table, cls));
    V x = vsilu(add(affine(p.trunk[0], z), cond));
    for (std::size_t i = 1; i + 1 < p.trunk.size(); ++i) x = vsilu(affine(p.trunk[i], x));
    return affine(p.trunk.back(), x);
}

template <class Ctx, class V = typename Ctx::V>
V flowmap_apply(Ctx& ctx, const NetConfig& cfg, const FlowMapParamsT<V>& p, const V& z,
                const V& tcol, const V& scol, const std::vector<int>& cls) {
    V cond = add(affine(p.embed_t, time_features(ctx, cfg.embed, tcol)),
                 gather_rows(p.class_table, cls));
    cond = add(cond, affine(p.embed_dt, time_features(ctx, cfg.embed, sub(tcol, scol))));
    V x = vsilu(add(affine(p.trunk[0], z), cond));
    for (std::size_t i = 1; i + 1 < p.trunk.size(); ++i) x = vsilu(affine(p.trunk[i], x));
    return affine(p.trunk.back(), x);
}

// ---- concrete networks (plain-lane parameter owners) ----

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Tensor&)>;

struct VelocityNet {
    NetConfig cfg;
    VelocityParamsT<Tensor> p;
    void for_each_param(const ParamVisitor& fn);
    void for_each_param(const ConstParamVisitor& fn) const;
};

struct FlowMapNet {
    NetConfig cfg;
    FlowMapParamsT<Tensor> p;
    void for_each_param(const ParamVisitor& fn);
    void for_each_param(const ConstParamVisitor& fn) const;
};

struct MlpConfig {
    std::size_t in = 0, hidden = 64, out = 0, depth = 3;
};

struct Mlp {
    MlpConfig cfg;
    MlpParamsT<Tensor> p;
    void for_each_param(const ParamVisitor& fn);
    void for_each_param(const ConstParamVisitor& fn) const;
};

/// Truncated-normal init: resample until within 2 standard deviations.
Tensor trunc_normal(Rng& rng, std::vector<std::size_t> shape, double stddev);

VelocityNet make_velocity_net(const NetConfig& cfg, Rng& rng);
FlowMapNet make_flowmap_net(const NetConfig& cfg, Rng& rng);
Mlp make_mlp(const MlpConfig& cfg, Rng& rng);

/// Flow-map network initialized from a trained velocity teacher: trunk, time
/// embedding, and class table are copied; the interval embedding keeps its
/// own fresh initialization (the teacher has no analogue of it).
FlowMapNet flowmap_from_velocity(const VelocityNet& teacher, Rng& rng);

// ---- plain-lane evaluation with contract checks ----

Tensor eval_velocity(const VelocityNet& net, const Tensor& z, const Tensor& tcol,
                     const std::vector<int>& cls);
Tensor eval_velocity(const VelocityNet& net, const Tensor& z, double t, int cls);

Tensor eval_flowmap(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                    const Tensor& scol, const std::vector<int>& cls);
Tensor eval_flowmap(const FlowMapNet& net, const Tensor& z, double t, double s, int cls);

/// h at a degenerate interval (s = t) is the instantaneous velocity.
Tensor flowmap_as_velocity(const FlowMapNet& net, const Tensor& z, double t, int cls);

/// Unchecked forward pass; finite-difference stencils legitimately step to
/// time arguments outside the ordered region, so they bypass the s <= t gate.
Tensor flowmap_raw(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                   const Tensor& scol, const std::vector<int>& cls);

/// Exact directional derivative of the flow map in direction (dz, dt, ds),
/// per batch row, by one forward-mode pass.
Tensor flowmap_jvp(const FlowMapNet& net, const Tensor& z, const Tensor& tcol,
                   const Tensor& scol, const std::vector<int>& cls, const Tensor& dz,
                   const Tensor& dtcol, const Tensor& dscol);

Tensor eval_mlp(const Mlp& net, const Tensor& x);

/// Column {n,1} tensor filled with a constant (broadcast helper for times).
Tensor const_col(std::size_t n, double value);

}  // namespace mflab
