#include "mflab/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

namespace mflab {

namespace {

std::size_t shape_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap as_mat(const Tensor& t) {
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                       static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_count(shape_))
        throw DimensionError("Tensor: data length does not match shape");
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
    return Tensor({1, v.size()}, std::vector<double>(v));
}

Tensor Tensor::vec(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 0;
    return shape_.size() == 2 ? shape_[1] : shape_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_finite(const char* what, long step) const {
    if (!all_finite())
        throw DivergenceError(std::string("non-finite values in ") + what, step);
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item: tensor is not a scalar");
    return data_[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: incompatible shapes");
    Tensor out({a.rows(), b.cols()});
    MatMap(out.data(), static_cast<Eigen::Index>(a.rows()),
           static_cast<Eigen::Index>(b.cols())) = as_mat(a) * as_mat(b);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw DimensionError("matmul_nt: incompatible shapes");
    Tensor out({a.rows(), b.rows()});
    MatMap(out.data(), static_cast<Eigen::Index>(a.rows()),
           static_cast<Eigen::Index>(b.rows())) = as_mat(a) * as_mat(b).transpose();
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw DimensionError("matmul_tn: incompatible shapes");
    Tensor out({a.cols(), b.cols()});
    MatMap(out.data(), static_cast<Eigen::Index>(a.cols()),
           static_cast<Eigen::Index>(b.cols())) = as_mat(a).transpose() * as_mat(b);
    return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    if (bias.ndim() != 1 || bias.size() != a.cols())
        throw DimensionError("add_bias: bias width mismatch");
    Tensor out = a;
    const std::size_t n = a.rows(), c = a.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
    return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& w) {
    if (w.size() != a.rows())
        throw DimensionError("scale_rows: weight length must equal row count");
    Tensor out = a;
    const std::size_t n = a.rows(), c = a.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= w[i];
    return out;
}

Tensor vtanh(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

Tensor vsilu(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-out[i]));
        out[i] *= s;
    }
    return out;
}

Tensor vsin(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(out[i]);
    return out;
}

Tensor vcos(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(out[i]);
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return Tensor::scalar(s);
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("mean_all: empty tensor");
    return Tensor::scalar(sum_all(a).item() / static_cast<double>(a.size()));
}

Tensor squared_norm(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return Tensor::scalar(s);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw DimensionError("concat_cols: row count mismatch");
    const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a[i * ca + j];
        for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b[i * cb + j];
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.ndim() != 2 || begin > end || end > a.cols())
        throw DimensionError("slice_cols: bad column range");
    const std::size_t n = a.rows(), c = a.cols(), w = end - begin;
    Tensor out({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * c + begin + j];
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
    if (table.ndim() != 2) throw DimensionError("gather_rows: table must be rank 2");
    const std::size_t c = table.cols();
    Tensor out({idx.size(), c});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= table.rows())
            throw DimensionError("gather_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] = table.at(static_cast<std::size_t>(idx[i]), j);
    }
    return out;
}

Tensor row_of(const Tensor& a, std::size_t r) {
    if (a.ndim() != 2 || r >= a.rows()) throw DimensionError("row_of: bad row");
    Tensor out({1, a.cols()});
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] = a.at(r, j);
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

}  // namespace mflab
