#include "mflab/tape.hpp"

#include <cmath>

namespace mflab {

const Tensor& Var::value() const { return tape_->value_of(node_); }

Var Tape::leaf(const Tensor& v) { return push(v, {}); }

Var Tape::constant(const Tensor& v) { return push(v, {}); }

const Tensor& Tape::value(const Var& v) const { return value_of(v.node()); }

const Tensor& Tape::adjoint(const Var& v) const {
    return nodes_[static_cast<std::size_t>(v.node())].adjoint;
}

Var Tape::push(Tensor value, std::function<void(Tape&)> back) {
    Node n;
    n.adjoint = Tensor::zeros(value.shape());
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw ConfigError("backward: loss lives on a different tape");
    if (value(loss).size() != 1) throw ConfigError("backward: loss is not a scalar");
    nodes_[static_cast<std::size_t>(loss.node())].adjoint[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back(*this);
    }
}

namespace {

void accum(Tape& tape, int node, const Tensor& g) {
    Tensor& a = tape.adjoint_rw(node);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
}

void check_same_tape(const Var& a, const Var& b, const char* op) {
    if (a.tape() != b.tape()) throw ConfigError(std::string(op) + ": operands on different tapes");
}

// Each primitive records the index its output node is about to receive
// (t.size() before the push) so the backward closure can read its adjoint.

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_tape(a, b, "add");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(add(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, g);
        accum(tp, ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_tape(a, b, "sub");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(sub(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, g);
        accum(tp, ib, scale(g, -1.0));
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_tape(a, b, "mul");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(mul(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, mul(g, tp.value_of(ib)));
        accum(tp, ib, mul(g, tp.value_of(ia)));
    });
}

Var scale(const Var& a, double c) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(scale(a.value(), c), [ia, io, c](Tape& tp) {
        accum(tp, ia, scale(tp.adjoint_rw(io), c));
    });
}

Var matmul(const Var& a, const Var& b) {
    check_same_tape(a, b, "matmul");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(matmul(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, matmul_nt(g, tp.value_of(ib)));  // dA = G B^T
        accum(tp, ib, matmul_tn(tp.value_of(ia), g));  // dB = A^T G
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    check_same_tape(a, b, "matmul_nt");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(matmul_nt(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, matmul(g, tp.value_of(ib)));     // dA = G B
        accum(tp, ib, matmul_tn(g, tp.value_of(ia)));  // dB = G^T A
    });
}

Var matmul_tn(const Var& a, const Var& b) {
    check_same_tape(a, b, "matmul_tn");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    return t.push(matmul_tn(a.value(), b.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, matmul_nt(tp.value_of(ib), g));  // dA = B G^T
        accum(tp, ib, matmul(tp.value_of(ia), g));     // dB = A G
    });
}

Var add_bias(const Var& a, const Var& bias) {
    check_same_tape(a, bias, "add_bias");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = bias.node(), io = static_cast<int>(t.size());
    return t.push(add_bias(a.value(), bias.value()), [ia, ib, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, g);
        Tensor colsum = Tensor::zeros({g.cols()});
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) colsum[j] += g.at(i, j);
        accum(tp, ib, colsum);
    });
}

Var scale_rows(const Var& a, const Tensor& w) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(scale_rows(a.value(), w), [ia, io, w](Tape& tp) {
        accum(tp, ia, scale_rows(tp.adjoint_rw(io), w));
    });
}

Var vtanh(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(vtanh(a.value()), [ia, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        const Tensor& y = tp.value_of(io);
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - y[i] * y[i];
        accum(tp, ia, d);
    });
}

Var vsilu(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(vsilu(a.value()), [ia, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        const Tensor& x = tp.value_of(ia);
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            d[i] *= s * (1.0 + x[i] * (1.0 - s));
        }
        accum(tp, ia, d);
    });
}

Var vsin(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(vsin(a.value()), [ia, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, mul(g, vcos(tp.value_of(ia))));
    });
}

Var vcos(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(vcos(a.value()), [ia, io](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, scale(mul(g, vsin(tp.value_of(ia))), -1.0));
    });
}

Var sum_all(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(sum_all(a.value()), [ia, io](Tape& tp) {
        const double g = tp.adjoint_rw(io)[0];
        accum(tp, ia, Tensor::full(tp.value_of(ia).shape(), g));
    });
}

Var mean_all(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(mean_all(a.value()), [ia, io](Tape& tp) {
        const Tensor& x = tp.value_of(ia);
        const double g = tp.adjoint_rw(io)[0] / static_cast<double>(x.size());
        accum(tp, ia, Tensor::full(x.shape(), g));
    });
}

Var squared_norm(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(squared_norm(a.value()), [ia, io](Tape& tp) {
        const double g = tp.adjoint_rw(io)[0];
        accum(tp, ia, scale(tp.value_of(ia), 2.0 * g));
    });
}

Var concat_cols(const Var& a, const Var& b) {
    check_same_tape(a, b, "concat_cols");
    Tape& t = *a.tape();
    const int ia = a.node(), ib = b.node(), io = static_cast<int>(t.size());
    const std::size_t ca = a.value().cols();
    return t.push(concat_cols(a.value(), b.value()), [ia, ib, io, ca](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        accum(tp, ia, slice_cols(g, 0, ca));
        accum(tp, ib, slice_cols(g, ca, g.cols()));
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    Tape& t = *a.tape();
    const int ia = a.node(), io = static_cast<int>(t.size());
    return t.push(slice_cols(a.value(), begin, end), [ia, io, begin, end](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        Tensor wide = Tensor::zeros(tp.value_of(ia).shape());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < end - begin; ++j) wide.at(i, begin + j) = g.at(i, j);
        accum(tp, ia, wide);
    });
}

Var gather_rows(const Var& table, const std::vector<int>& idx) {
    Tape& t = *table.tape();
    const int ia = table.node(), io = static_cast<int>(t.size());
    return t.push(gather_rows(table.value(), idx), [ia, io, idx](Tape& tp) {
        const Tensor& g = tp.adjoint_rw(io);
        Tensor scat = Tensor::zeros(tp.value_of(ia).shape());
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                scat.at(static_cast<std::size_t>(idx[i]), j) += g.at(i, j);
        accum(tp, ia, scat);
    });
}

GradResult grad(const std::vector<Tensor>& params,
                const std::function<Var(Tape&, const std::vector<Var>&)>& build) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    const Var loss = build(tape, leaves);
    tape.backward(loss);
    GradResult out;
    out.value = tape.value(loss).item();
    out.grads.reserve(params.size());
    for (const Var& v : leaves) out.grads.push_back(tape.adjoint(v));
    return out;
}

}  // namespace mflab
