// Tensor primitives and the three evaluation lanes (plain, forward-mode,
// reverse-mode). The reverse-mode gradients are checked against central
// finite differences of the plain lane; the forward-mode derivatives against
// both finite differences and the tape. One composite functional touches
// every primitive so nothing escapes the sweep.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mflab/dual.hpp"
#include "mflab/rng.hpp"
#include "mflab/tape.hpp"
#include "mflab/tensor.hpp"
#include "test_support.hpp"

using namespace mflab;
namespace ts = mflab::test;

namespace {

// Composite functional over four parameter tensors and one input, written
// once against the shared primitive names so all three lanes can run it.
// Shapes: p0 {3,4}, p1 {4}, p2 {2,4}, p3 {2,4}; x {3,3}; result scalar.
template <class V>
V composite(const std::vector<V>& p, const V& x) {
    V a = add_bias(matmul(x, p[0]), p[1]);                  // {3,4}
    V t = vtanh(slice_cols(a, 0, 2));                       // {3,2}
    V sl = vsilu(slice_cols(a, 2, 4));                      // {3,2}
    V cat = concat_cols(t, sl);                             // {3,4}
    V g = gather_rows(p[2], {1, 0, 1});                     // {3,4}
    V m = mul(cat, g);                                      // {3,4}
    V s = add(vsin(m), vcos(scale(m, 0.5)));                // {3,4}
    V q = matmul_nt(s, p[3]);                               // {3,2}
    V r = matmul_tn(q, x);                                  // {2,3}
    V sr = scale_rows(r, Tensor({2}, {1.25, -0.5}));        // {2,3}
    V u = sub(sr, scale(sr, 0.125));                        // {2,3}
    V loss = add(squared_norm(u), mean_all(q));
    return add(loss, scale(sum_all(cat), 0.01));
}

std::vector<Tensor> random_composite_params(Rng& rng) {
    return {normal_tensor(rng, {3, 4}), normal_tensor(rng, {4}), normal_tensor(rng, {2, 4}),
            normal_tensor(rng, {2, 4})};
}

}  // namespace

TEST_CASE("tensor shapes, accessors, and constructors") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.at(1, 2) == 6.0);
    CHECK(Tensor::scalar(4.5).item() == 4.5);
    CHECK(Tensor::full({2, 2}, 3.0)[3] == 3.0);

    Tensor eye = Tensor::identity(3);
    CHECK(eye.at(0, 0) == 1.0);
    CHECK(eye.at(2, 1) == 0.0);

    Tensor v = Tensor::vec({1, 2});
    CHECK(v.ndim() == 1);
    CHECK(v.rows() == 1);  // rank-1 counts as a single row
    CHECK(v.cols() == 2);

    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), DimensionError);
    CHECK_THROWS_AS(Tensor::row({1, 2}).item(), DimensionError);
}

TEST_CASE("finiteness checks flag NaN and Inf") {
    Tensor ok({2}, {1.0, 2.0});
    CHECK(ok.all_finite());
    Tensor bad({2}, {1.0, std::nan("")});
    CHECK(!bad.all_finite());
    CHECK_THROWS_AS(bad.require_finite("probe"), DivergenceError);
    Tensor inf({1}, {HUGE_VAL});
    CHECK(!inf.all_finite());
}

TEST_CASE("matmul against a hand-multiplied example") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(58).epsilon(1e-15));
    CHECK(c.at(0, 1) == doctest::Approx(64).epsilon(1e-15));
    CHECK(c.at(1, 0) == doctest::Approx(139).epsilon(1e-15));
    CHECK(c.at(1, 1) == doctest::Approx(154).epsilon(1e-15));
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("transposed matmuls agree with explicit transposes") {
    Rng rng(11, "matmul-variants");
    Tensor a = normal_tensor(rng, {3, 4});
    Tensor b = normal_tensor(rng, {5, 4});
    Tensor bt({4, 5});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) bt.at(j, i) = b.at(i, j);
    // accumulation order differs between the fused and explicit forms, so
    // agreement is to rounding, not bitwise
    CHECK(ts::max_abs_diff(matmul_nt(a, b), matmul(a, bt)) < 1e-13);

    Tensor c = normal_tensor(rng, {3, 2});
    Tensor at({4, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) at.at(j, i) = a.at(i, j);
    CHECK(ts::max_abs_diff(matmul_tn(a, c), matmul(at, c)) < 1e-13);
}

TEST_CASE("rowwise helpers: bias broadcast, row scaling, slicing") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor biased = add_bias(a, Tensor({3}, {10, 20, 30}));
    CHECK(biased.at(1, 2) == 36.0);
    CHECK_THROWS_AS(add_bias(a, Tensor({2}, {1, 2})), DimensionError);

    Tensor scaled = scale_rows(a, Tensor({2}, {2.0, -1.0}));
    CHECK(scaled.at(0, 1) == 4.0);
    CHECK(scaled.at(1, 0) == -4.0);
    CHECK_THROWS_AS(scale_rows(a, Tensor({3}, {1, 2, 3})), DimensionError);

    Tensor mid = slice_cols(a, 1, 3);
    CHECK(mid.cols() == 2);
    CHECK(mid.at(1, 0) == 5.0);
    Tensor back = concat_cols(slice_cols(a, 0, 1), mid);
    CHECK(ts::max_abs_diff(back, a) == 0.0);
    CHECK_THROWS_AS(slice_cols(a, 2, 1), DimensionError);

    Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor picked = gather_rows(table, {2, 0});
    CHECK(picked.at(0, 1) == 6.0);
    CHECK(picked.at(1, 0) == 1.0);
    CHECK_THROWS_AS(gather_rows(table, {3}), DimensionError);
}

TEST_CASE("reductions and scalar helpers") {
    Tensor a({2, 2}, {1, -2, 3, -4});
    CHECK(sum_all(a).item() == -2.0);
    CHECK(mean_all(a).item() == -0.5);
    CHECK(squared_norm(a).item() == 30.0);
    CHECK(dot(a, a) == 30.0);
    CHECK(l2_norm(a) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-15));
    CHECK(max_abs(a) == 4.0);
    CHECK(row_of(a, 1).at(0, 0) == 3.0);
}

TEST_CASE("two-layer MLP forward pass matches hand arithmetic") {
    // mlp_apply: silu on hidden layers, affine at the end.
    MlpParamsT<Tensor> p;
    p.layers.push_back({Tensor({2, 2}, {1.0, 0.5, -0.25, 0.75}), Tensor({2}, {0.1, -0.2})});
    p.layers.push_back({Tensor({2, 1}, {0.6, -0.4}), Tensor({1}, {0.05})});
    Tensor x = Tensor::row({0.3, -0.7});
    PlainCtx ctx;
    Tensor out = mlp_apply(ctx, p, x);

    auto silu = [](double v) { return v / (1.0 + std::exp(-v)); };
    const double pre0 = 0.3 * 1.0 + (-0.7) * (-0.25) + 0.1;
    const double pre1 = 0.3 * 0.5 + (-0.7) * 0.75 - 0.2;
    const double expected = silu(pre0) * 0.6 + silu(pre1) * (-0.4) + 0.05;
    CHECK(out.at(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("reverse-mode gradients match finite differences of the plain lane") {
    // ~128 probed entries across four parameter draws; every primitive is on
    // the path between the leaves and the loss.
    Tensor x({3, 3}, {0.3, -0.2, 0.5, 0.1, 0.4, -0.6, -0.3, 0.2, 0.15});
    for (std::uint64_t draw = 0; draw < 4; ++draw) {
        Rng rng(100 + draw, "composite-params");
        std::vector<Tensor> params = random_composite_params(rng);

        GradResult res = grad(params, [&](Tape& tape, const std::vector<Var>& vars) {
            return composite<Var>(vars, tape.constant(x));
        });
        CHECK(res.value == composite<Tensor>(params, x).item());

        std::vector<Tensor*> ptrs;
        for (Tensor& p : params) ptrs.push_back(&p);
        std::vector<Tensor> fd = ts::fd_param_grads(
            ptrs, [&] { return composite<Tensor>(params, x).item(); }, 1e-5);
        CHECK(ts::max_rel_entry_gap(res.grads, fd) < 1e-5);
    }
}

TEST_CASE("forward-mode tangents are linear in the seeded direction") {
    Rng rng(7, "jvp-linearity");
    std::vector<Tensor> params = random_composite_params(rng);
    Tensor x = normal_tensor(rng, {3, 3});
    Tensor u = normal_tensor(rng, {3, 3});
    Tensor w = normal_tensor(rng, {3, 3});

    auto fn = [&](const DualBatch& zx) {
        std::vector<DualBatch> cp;
        for (const Tensor& p : params) cp.push_back(DualBatch::constant(p));
        return composite<DualBatch>(cp, zx);
    };
    const double a = 1.75, b = -0.4;
    Tensor mixed = jvp(fn, x, add(scale(u, a), scale(w, b)));
    Tensor parts = add(scale(jvp(fn, x, u), a), scale(jvp(fn, x, w), b));
    CHECK(ts::max_abs_diff(mixed, parts) < 1e-12);
}

TEST_CASE("forward and reverse derivatives of the same functional agree") {
    Rng rng(8, "jvp-vs-grad");
    std::vector<Tensor> params = random_composite_params(rng);
    Tensor x = normal_tensor(rng, {3, 3});
    Tensor w = normal_tensor(rng, {3, 3});

    // d/dx through the tape: x is the only leaf, parameters enter as constants.
    GradResult res = grad({x}, [&](Tape& tape, const std::vector<Var>& vars) {
        std::vector<Var> cp;
        for (const Tensor& p : params) cp.push_back(tape.constant(p));
        return composite<Var>(cp, vars[0]);
    });
    const double pairing = dot(res.grads[0], w);

    auto fn = [&](const DualBatch& zx) {
        std::vector<DualBatch> cp;
        for (const Tensor& p : params) cp.push_back(DualBatch::constant(p));
        return composite<DualBatch>(cp, zx);
    };
    const double forward = jvp(fn, x, w).item();
    CHECK(std::abs(pairing - forward) <= 1e-10 * std::max(1.0, std::abs(forward)));

    // and both agree with a central difference along w
    auto value_at = [&](double step) {
        std::vector<Tensor> cp;
        for (const Tensor& p : params) cp.push_back(p);
        return composite<Tensor>(cp, add(x, scale(w, step))).item();
    };
    const double fd = (value_at(1e-5) - value_at(-1e-5)) / 2e-5;
    CHECK(std::abs(fd - forward) <= 1e-6 * std::max(1.0, std::abs(forward)));
}

TEST_CASE("tape contracts: constants, scalar losses, tape identity") {
    Tape tape;
    Var a = tape.leaf(Tensor::row({1.0, 2.0}));
    Var c = tape.constant(Tensor::row({3.0, 4.0}));
    Var loss = squared_norm(add(a, c));
    tape.backward(loss);
    // d/da ||a + c||^2 = 2 (a + c)
    CHECK(tape.adjoint(a).at(0, 0) == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(tape.adjoint(a).at(0, 1) == doctest::Approx(12.0).epsilon(1e-15));

    Tape other;
    Var b = other.leaf(Tensor::row({1.0, 1.0}));
    CHECK_THROWS_AS(add(a, b), ConfigError);          // operands on different tapes
    CHECK_THROWS_AS(tape.backward(add(a, a)), ConfigError);  // non-scalar loss

    // adjoints are zero-shaped before any backward pass
    Tape fresh;
    Var leaf = fresh.leaf(Tensor::row({5.0}));
    CHECK(fresh.adjoint(leaf)[0] == 0.0);
}

TEST_CASE("dual lane matches the plain lane on primal values") {
    Rng rng(9, "dual-primal");
    std::vector<Tensor> params = random_composite_params(rng);
    Tensor x = normal_tensor(rng, {3, 3});
    std::vector<DualBatch> cp;
    for (const Tensor& p : params) cp.push_back(DualBatch::constant(p));
    DualBatch out = composite<DualBatch>(cp, DualBatch::constant(x));
    CHECK(out.primal.item() == composite<Tensor>(params, x).item());
    CHECK(max_abs(out.tangent) == 0.0);  // all-constant inputs carry no tangent
    CHECK_THROWS_AS(DualBatch::seeded(x, Tensor::row({1.0})), DimensionError);
}
