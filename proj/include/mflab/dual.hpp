#pragma once

#include <functional>

#include "mflab/tensor.hpp"

namespace mflab {

/// Forward-mode pair: a value and the directional derivative carried along
/// with it. Pushing a DualBatch through a function yields the exact JVP in
/// the seeded direction.
struct DualBatch {
    Tensor primal;
    Tensor tangent;

    /// Lift a value with zero tangent (constants, detached parameters).
    static DualBatch constant(const Tensor& v) { return {v, Tensor::zeros(v.shape())}; }
    /// Lift a value with a chosen direction.
    static DualBatch seeded(const Tensor& v, const Tensor& dir) {
        if (!v.same_shape(dir)) throw DimensionError("DualBatch: direction shape mismatch");
        return {v, dir};
    }
};

// ---- primitive operations (forward-mode lane) ----
// Same names and semantics as the plain-Tensor lane in tensor.hpp.

DualBatch add(const DualBatch& a, const DualBatch& b);
DualBatch sub(const DualBatch& a, const DualBatch& b);
DualBatch mul(const DualBatch& a, const DualBatch& b);
DualBatch scale(const DualBatch& a, double c);
DualBatch matmul(const DualBatch& a, const DualBatch& b);
DualBatch matmul_nt(const DualBatch& a, const DualBatch& b);
DualBatch matmul_tn(const DualBatch& a, const DualBatch& b);
DualBatch add_bias(const DualBatch& a, const DualBatch& bias);
DualBatch scale_rows(const DualBatch& a, const Tensor& w);
DualBatch vtanh(const DualBatch& a);
DualBatch vsilu(const DualBatch& a);
DualBatch vsin(const DualBatch& a);
DualBatch vcos(const DualBatch& a);
DualBatch sum_all(const DualBatch& a);
DualBatch mean_all(const DualBatch& a);
DualBatch squared_norm(const DualBatch& a);
DualBatch concat_cols(const DualBatch& a, const DualBatch& b);
DualBatch slice_cols(const DualBatch& a, std::size_t begin, std::size_t end);
DualBatch gather_rows(const DualBatch& table, const std::vector<int>& idx);

/// Directional derivative of fn at `point` in `direction`, by one forward pass.
Tensor jvp(const std::function<DualBatch(const DualBatch&)>& fn, const Tensor& point,
           const Tensor& direction);

}  // namespace mflab
