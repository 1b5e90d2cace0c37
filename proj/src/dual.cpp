#include "mflab/dual.hpp"

#include <cmath>

namespace mflab {

DualBatch add(const DualBatch& a, const DualBatch& b) {
    return {add(a.primal, b.primal), add(a.tangent, b.tangent)};
}

DualBatch sub(const DualBatch& a, const DualBatch& b) {
    return {sub(a.primal, b.primal), sub(a.tangent, b.tangent)};
}

DualBatch mul(const DualBatch& a, const DualBatch& b) {
    return {mul(a.primal, b.primal),
            add(mul(a.tangent, b.primal), mul(a.primal, b.tangent))};
}

DualBatch scale(const DualBatch& a, double c) {
    return {scale(a.primal, c), scale(a.tangent, c)};
}

DualBatch matmul(const DualBatch& a, const DualBatch& b) {
    return {matmul(a.primal, b.primal),
            add(matmul(a.tangent, b.primal), matmul(a.primal, b.tangent))};
}

DualBatch matmul_nt(const DualBatch& a, const DualBatch& b) {
    return {matmul_nt(a.primal, b.primal),
            add(matmul_nt(a.tangent, b.primal), matmul_nt(a.primal, b.tangent))};
}

DualBatch matmul_tn(const DualBatch& a, const DualBatch& b) {
    return {matmul_tn(a.primal, b.primal),
            add(matmul_tn(a.tangent, b.primal), matmul_tn(a.primal, b.tangent))};
}

DualBatch add_bias(const DualBatch& a, const DualBatch& bias) {
    return {add_bias(a.primal, bias.primal), add_bias(a.tangent, bias.tangent)};
}

DualBatch scale_rows(const DualBatch& a, const Tensor& w) {
    return {scale_rows(a.primal, w), scale_rows(a.tangent, w)};
}

DualBatch vtanh(const DualBatch& a) {
    Tensor y = vtanh(a.primal);
    Tensor t = a.tangent;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= 1.0 - y[i] * y[i];
    return {std::move(y), std::move(t)};
}

DualBatch vsilu(const DualBatch& a) {
    Tensor y = a.primal;
    Tensor t = a.tangent;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double x = y[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        y[i] = x * s;
        t[i] *= s * (1.0 + x * (1.0 - s));
    }
    return {std::move(y), std::move(t)};
}

DualBatch vsin(const DualBatch& a) {
    return {vsin(a.primal), mul(a.tangent, vcos(a.primal))};
}

DualBatch vcos(const DualBatch& a) {
    return {vcos(a.primal), scale(mul(a.tangent, vsin(a.primal)), -1.0)};
}

DualBatch sum_all(const DualBatch& a) { return {sum_all(a.primal), sum_all(a.tangent)}; }

DualBatch mean_all(const DualBatch& a) { return {mean_all(a.primal), mean_all(a.tangent)}; }

DualBatch squared_norm(const DualBatch& a) {
    return {squared_norm(a.primal), Tensor::scalar(2.0 * dot(a.primal, a.tangent))};
}

DualBatch concat_cols(const DualBatch& a, const DualBatch& b) {
    return {concat_cols(a.primal, b.primal), concat_cols(a.tangent, b.tangent)};
}

DualBatch slice_cols(const DualBatch& a, std::size_t begin, std::size_t end) {
    return {slice_cols(a.primal, begin, end), slice_cols(a.tangent, begin, end)};
}

DualBatch gather_rows(const DualBatch& table, const std::vector<int>& idx) {
    return {gather_rows(table.primal, idx), gather_rows(table.tangent, idx)};
}

Tensor jvp(const std::function<DualBatch(const DualBatch&)>& fn, const Tensor& point,
           const Tensor& direction) {
    return fn(DualBatch::seeded(point, direction)).tangent;
}

}  // namespace mflab
