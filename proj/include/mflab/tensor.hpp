#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "mflab/errors.hpp"

namespace mflab {

/// Dense row-major double tensor. Rank 1 or 2 in practice; shape {1} plays scalar.
/// Values are immutable by convention once an operation has produced them: ops
/// return fresh tensors instead of mutating inputs (the optimizer is the one
/// deliberate exception, it owns its parameter storage).
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor row(std::initializer_list<double> v);     // shape {1, n}
    static Tensor identity(std::size_t n);                  // shape {n, n}
    static Tensor vec(std::initializer_list<double> v);     // shape {n}

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    /// Rows/cols of a rank-2 tensor; a rank-1 tensor counts as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    /// Throws DivergenceError if any entry is NaN/Inf.
    void require_finite(const char* what, long step = -1) const;

    double item() const;  // value of a scalar tensor

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// ---- primitive operations (plain lane) ----
// The same names exist for the Dual (forward-mode) and Var (reverse-mode tape)
// lanes so that network code written once evaluates in all three.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);           // (m,k)x(k,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);        // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);        // a^T * b
Tensor add_bias(const Tensor& a, const Tensor& bias);      // row-wise bias broadcast
Tensor scale_rows(const Tensor& a, const Tensor& w);       // out[i,:] = w[i] * a[i,:]
Tensor vtanh(const Tensor& a);
Tensor vsilu(const Tensor& a);
Tensor vsin(const Tensor& a);
Tensor vcos(const Tensor& a);
Tensor sum_all(const Tensor& a);                           // shape {1}
Tensor mean_all(const Tensor& a);                          // shape {1}
Tensor squared_norm(const Tensor& a);                      // shape {1}
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);

Tensor row_of(const Tensor& a, std::size_t r);             // shape {1, cols}
double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double max_abs(const Tensor& a);

}  // namespace mflab
