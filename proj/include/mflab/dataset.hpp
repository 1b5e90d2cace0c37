#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mflab/rng.hpp"
#include "mflab/tensor.hpp"

namespace mflab {

/// Weighted atoms with class labels: the training distribution is the finite
/// mixture sum_k p_k delta(x_k). Finite support is what makes the Bayes
/// posterior, the marginal velocity, and the mean flow exactly computable.
struct FiniteSupportDataset {
    std::size_t dim = 0;
    Tensor atoms;                 // {K, dim}, one atom per row
    std::vector<double> weights;  // sum to 1
    std::vector<int> labels;      // class index per atom, >= 0

    std::size_t size() const { return weights.size(); }
    Tensor atom(std::size_t k) const { return row_of(atoms, k); }
    int num_classes() const;
    /// Throws ConfigError if any structural invariant fails.
    void validate() const;
};

/// Sub-dataset of one class, weights renormalized.
FiniteSupportDataset filter_label(const FiniteSupportDataset& ds, int label);

/// Per-class probability masses, indexed by label.
std::vector<double> class_probs(const FiniteSupportDataset& ds);

/// Draw an atom index from the weight distribution.
std::size_t sample_atom(const FiniteSupportDataset& ds, Rng& rng);

/// Equal-weight quantization of a 2-D Gaussian mixture: `modes` centers evenly
/// spaced on a circle, `n_atoms` draws total, label = mode index. Different
/// seeds give independent quantizations (train vs held-out).
FiniteSupportDataset make_mixture_dataset(std::size_t modes, std::size_t n_atoms,
                                          std::uint64_t seed, double radius = 4.0,
                                          double sigma = 0.35);

/// Single atom at `x` with weight 1, label 0.
FiniteSupportDataset single_atom_dataset(const Tensor& x);

FiniteSupportDataset load_dataset(const std::string& path);
void save_dataset(const FiniteSupportDataset& ds, const std::string& path);

/// New dataset with every atom pushed through `lift` (rows in, rows out);
/// weights and labels carried over. Used to move data-space atoms into the
/// latent space where the generative models live.
FiniteSupportDataset map_atoms(const FiniteSupportDataset& ds,
                               const std::function<Tensor(const Tensor&)>& lift);

}  // namespace mflab
