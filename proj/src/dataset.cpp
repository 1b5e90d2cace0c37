#include "mflab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace mflab {

int FiniteSupportDataset::num_classes() const {
    int m = -1;
    for (int l : labels) m = std::max(m, l);
    return m + 1;
}

void FiniteSupportDataset::validate() const {
    if (dim == 0) throw ConfigError("dataset: dim must be positive");
    if (weights.empty()) throw ConfigError("dataset: at least one atom required");
    if (atoms.ndim() != 2 || atoms.rows() != weights.size() || atoms.cols() != dim)
        throw ConfigError("dataset: atom matrix shape disagrees with dim/weights");
    if (labels.size() != weights.size())
        throw ConfigError("dataset: labels length disagrees with weights");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("dataset: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("dataset: weights sum to " + std::to_string(sum) + ", not 1");
    for (int l : labels)
        if (l < 0) throw ConfigError("dataset: negative class label");
}

FiniteSupportDataset filter_label(const FiniteSupportDataset& ds, int label) {
    std::vector<std::size_t> keep;
    double mass = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k) {
        if (ds.labels[k] == label) {
            keep.push_back(k);
            mass += ds.weights[k];
        }
    }
    if (keep.empty()) throw ConfigError("filter_label: no atoms with label " + std::to_string(label));
    FiniteSupportDataset out;
    out.dim = ds.dim;
    out.atoms = Tensor({keep.size(), ds.dim});
    for (std::size_t i = 0; i < keep.size(); ++i) {
        for (std::size_t j = 0; j < ds.dim; ++j) out.atoms.at(i, j) = ds.atoms.at(keep[i], j);
        out.weights.push_back(ds.weights[keep[i]] / mass);
        out.labels.push_back(label);
    }
    return out;
}

std::vector<double> class_probs(const FiniteSupportDataset& ds) {
    std::vector<double> p(static_cast<std::size_t>(ds.num_classes()), 0.0);
    for (std::size_t k = 0; k < ds.size(); ++k)
        p[static_cast<std::size_t>(ds.labels[k])] += ds.weights[k];
    return p;
}

std::size_t sample_atom(const FiniteSupportDataset& ds, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k) {
        acc += ds.weights[k];
        if (u < acc) return k;
    }
    return ds.size() - 1;  // guard against accumulated rounding at u ~ 1
}

FiniteSupportDataset make_mixture_dataset(std::size_t modes, std::size_t n_atoms,
                                          std::uint64_t seed, double radius, double sigma) {
    if (modes == 0 || n_atoms == 0)
        throw ConfigError("make_mixture_dataset: modes and n_atoms must be positive");
    Rng rng(seed, "mixture-quantize");
    FiniteSupportDataset ds;
    ds.dim = 2;
    ds.atoms = Tensor({n_atoms, 2});
    const double w = 1.0 / static_cast<double>(n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i) {
        const std::size_t m = rng.index(modes);
        const double ang = 2.0 * M_PI * static_cast<double>(m) / static_cast<double>(modes);
        ds.atoms.at(i, 0) = radius * std::cos(ang) + sigma * rng.normal();
        ds.atoms.at(i, 1) = radius * std::sin(ang) + sigma * rng.normal();
        ds.weights.push_back(w);
        ds.labels.push_back(static_cast<int>(m));
    }
    ds.validate();
    return ds;
}

FiniteSupportDataset single_atom_dataset(const Tensor& x) {
    FiniteSupportDataset ds;
    ds.dim = x.size();
    ds.atoms = Tensor({1, ds.dim});
    for (std::size_t j = 0; j < ds.dim; ++j) ds.atoms[j] = x[j];
    ds.weights = {1.0};
    ds.labels = {0};
    return ds;
}

FiniteSupportDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_dataset: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("load_dataset: ") + e.what(), 0);
    }
    FiniteSupportDataset ds;
    ds.dim = j.at("dim").get<std::size_t>();
    const auto& atoms = j.at("atoms");
    ds.atoms = Tensor({atoms.size(), ds.dim});
    for (std::size_t k = 0; k < atoms.size(); ++k) {
        if (atoms[k].size() != ds.dim)
            throw ConfigError("load_dataset: atom " + std::to_string(k) + " has wrong dimension");
        for (std::size_t c = 0; c < ds.dim; ++c) ds.atoms.at(k, c) = atoms[k][c].get<double>();
    }
    ds.weights = j.at("weights").get<std::vector<double>>();
    ds.labels = j.at("labels").get<std::vector<int>>();
    ds.validate();
    return ds;
}

void save_dataset(const FiniteSupportDataset& ds, const std::string& path) {
    ds.validate();
    nlohmann::ordered_json j;
    j["dim"] = ds.dim;
    nlohmann::ordered_json atoms = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < ds.size(); ++k) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t c = 0; c < ds.dim; ++c) row.push_back(ds.atoms.at(k, c));
        atoms.push_back(std::move(row));
    }
    j["atoms"] = std::move(atoms);
    j["weights"] = ds.weights;
    j["labels"] = ds.labels;
    std::ofstream out(path);
    if (!out) throw ConfigError("save_dataset: cannot write " + path);
    out << j.dump(2) << "\n";
}

FiniteSupportDataset map_atoms(const FiniteSupportDataset& ds,
                               const std::function<Tensor(const Tensor&)>& lift) {
    FiniteSupportDataset out = ds;
    out.atoms = lift(ds.atoms);
    out.dim = out.atoms.cols();
    out.validate();
    return out;
}

}  // namespace mflab
