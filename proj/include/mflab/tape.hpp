#pragma once

#include <functional>
#include <vector>

#include "mflab/tensor.hpp"

namespace mflab {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
  public:
    Var() = default;
    const Tensor& value() const;
    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    bool valid() const { return tape_ != nullptr; }

  private:
    friend class Tape;
    Var(Tape* tape, int node) : tape_(tape), node_(node) {}
    Tape* tape_ = nullptr;
    int node_ = -1;
};

/// Reverse-mode tape. Records primitive applications in execution order;
/// backward() replays them in reverse, accumulating adjoints. Nodes created
/// via constant() take part in values but their adjoints are never read —
/// that is how stop-gradient targets enter a loss.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(const Tensor& v);      // differentiable input (parameter)
    Var constant(const Tensor& v);  // value without gradient tracking

    const Tensor& value(const Var& v) const;
    /// Adjoint of a node after backward(); zeros shaped like the value before.
    const Tensor& adjoint(const Var& v) const;

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must
    /// be scalar (shape {1}).
    void backward(const Var& loss);

    std::size_t size() const { return nodes_.size(); }

    // --- used by the primitive implementations ---
    Var push(Tensor value, std::function<void(Tape&)> back);
    Tensor& adjoint_rw(int node) { return nodes_[static_cast<std::size_t>(node)].adjoint; }
    const Tensor& value_of(int node) const {
        return nodes_[static_cast<std::size_t>(node)].value;
    }

  private:
    struct Node {
        Tensor value;
        Tensor adjoint;                  // allocated at creation, zero until backward
        std::function<void(Tape&)> back; // empty for leaves/constants
    };
    std::vector<Node> nodes_;
};

// ---- primitive operations (reverse-mode lane) ----
// Same names and semantics as the plain-Tensor lane in tensor.hpp.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);
Var add_bias(const Var& a, const Var& bias);
Var scale_rows(const Var& a, const Tensor& w);   // w is non-differentiable weighting
Var vtanh(const Var& a);
Var vsilu(const Var& a);
Var vsin(const Var& a);
Var vcos(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var squared_norm(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var gather_rows(const Var& table, const std::vector<int>& idx);

/// Value and parameter gradients of a scalar function built from primitives.
struct GradResult {
    double value;
    std::vector<Tensor> grads;  // one per parameter, same shapes
};

/// Runs `build` on a fresh tape with the parameters lifted to leaves, checks
/// the result is scalar, and returns the loss value plus d(loss)/d(param).
GradResult grad(const std::vector<Tensor>& params,
                const std::function<Var(Tape&, const std::vector<Var>&)>& build);

}  // namespace mflab
