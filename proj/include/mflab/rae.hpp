#pragma once

#include "mflab/dataset.hpp"
#include "mflab/network.hpp"
#include "mflab/rng.hpp"

namespace mflab {

/// Frozen lifting encoder: a seeded orthonormal lift from data dimension d_x
/// into a wider latent dimension d_z, optionally followed by a fixed tanh.
/// Never trained; fully reconstructible from (d_x, d_z, seed, tanh flag).
struct FrozenEncoder {
    std::size_t d_x = 2;
    std::size_t d_z = 16;
    std::uint64_t seed = 0;
    bool use_tanh = false;
    Tensor lift;  // {d_z, d_x}, orthonormal columns

    static FrozenEncoder make(std::size_t d_x, std::size_t d_z, std::uint64_t seed,
                              bool use_tanh = false);

    /// Rows {n, d_x} -> {n, d_z}; an isometry in the linear case.
    Tensor encode(const Tensor& x) const;
    /// Pseudo-inverse projection {n, d_z} -> {n, d_x}; exact left inverse of
    /// encode on its range.
    Tensor project_back(const Tensor& z) const;

    /// Bitwise hash of the lift matrix (frozenness checks).
    std::uint64_t param_hash() const;
};

using DecoderNet = Mlp;

struct DecoderConfig {
    std::size_t hidden = 64;
    std::size_t depth = 3;
    std::size_t iterations = 3000;
    double lr = 1e-3;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double target_rmse = 1e-3;
};

struct DecoderTrainReport {
    std::size_t iterations_run = 0;
    double final_rmse = 0.0;  // over training atoms, per-coordinate RMS
    bool converged = false;   // final_rmse <= target_rmse
};

/// Fit the decoder to invert encode() on the dataset atoms by squared-error
/// regression. Non-convergence is reported, not thrown.
std::pair<DecoderNet, DecoderTrainReport> train_decoder(const FiniteSupportDataset& data_ds,
                                                        const FrozenEncoder& enc,
                                                        const DecoderConfig& cfg, Rng& rng);

Tensor decode(const DecoderNet& dec, const Tensor& z);

double reconstruction_rmse(const DecoderNet& dec, const FrozenEncoder& enc,
                           const FiniteSupportDataset& data_ds);

}  // namespace mflab
