// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdris::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    Tensor reshaped(Shape shape) const;
    void fill(double v);

private:
    Shape shape_;
    std::vector<double> data_;
};

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad();
};

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::size_t size() const { return node_->value.size(); }

    void zero_grad();
    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Reverse sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires them.
void backward(const Var& root);

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);

/// x[..., n] + bias[n]
Var add_bias(const Var& x, const Var& bias);
/// x[b, ...] * s[b], one scalar per leading index.
Var scale_leading(const Var& x, const Var& s);

/// a[..., k] · b[k, n] -> [..., n]; leading axes of a are flattened into rows.
Var matmul(const Var& a, const Var& b);
/// a[B, m, k] · b[B, k, n] -> [B, m, n]
Var bmm(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& axes);
/// Swap the last two axes.
Var transpose(const Var& a);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
/// out[..., j] = a[..., index[j]]; backward scatters and sums.
Var gather_last(const Var& a, std::vector<std::size_t> index);

Var sum(const Var& a);
Var mean(const Var& a);

/// Softmax along the last axis.
Var softmax_rows(const Var& a);

inline constexpr double kLayerNormStdFloor = 1e-5;
/// Normalizes along the last axis with std floored at kLayerNormStdFloor, then
/// applies gain[n] and bias[n].
Var layer_norm(const Var& x, const Var& gain, const Var& bias);

inline constexpr double kPivotTolerance = 1e-12;
/// Batched real inverse of a[..., n, n] by LU with partial pivoting.
/// Throws SingularMatrixError when a pivot falls below kPivotTolerance times
/// the largest absolute entry of the matrix.
Var inverse(const Var& a);

/// Complex tensor as two real channels.
struct ComplexPair {
    Var re;
    Var im;

    const Shape& shape() const { return re.shape(); }
};

ComplexPair cadd(const ComplexPair& a, const ComplexPair& b);
/// (ar br - ai bi, ar bi + ai br). Rank-2 operands use matmul, rank-3 use bmm.
ComplexPair cmatmul(const ComplexPair& a, const ComplexPair& b);
/// Inverse through the real block system [[Re, -Im], [Im, Re]].
ComplexPair cinverse(const ComplexPair& a);

/// Central finite-difference check of d(scalar f)/d(inputs).
struct GradcheckResult {
    std::size_t checked = 0;
    std::size_t passed = 0;
    double max_rel_error = 0.0;
};

/// Relative error is |a - n| / max(|a|, |n|, abs_floor); entries where both
/// derivatives are below abs_floor count as passing.
double relative_error(double analytic, double numeric, double abs_floor = 1e-8);

/// `f` must rebuild the graph from the current parameter values each call.
/// When `max_entries` is nonzero, that many entries are sampled uniformly
/// (with the given seed) across all inputs instead of checking every entry.
GradcheckResult gradcheck(const std::function<Var()>& f, std::vector<Var> inputs,
                          double step = 1e-6, double tol = 1e-5,
                          std::size_t max_entries = 0, unsigned long long seed = 0,
                          double abs_floor = 1e-8);

}  // namespace bdris::ad
