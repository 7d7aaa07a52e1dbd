// SPDX-License-Identifier: Apache-2.0
#include "bdris/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace bdris::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

template <typename Msg>
void require(bool cond, Msg&& what) {
    if (!cond) throw ShapeError(what());
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(bw);
    }
    return Var(std::move(node));
}

// Parent accessors inside backward closures.
Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void accumulate(Node& target, std::span<const double> g) {
    if (!target.requires_grad) return;
    auto dst = target.ensure_grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
    std::size_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= s[i];
    return p;
}

}  // namespace

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t numel(const Shape& shape) { return prod(shape, 0, shape.size()); }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto e : shape_) require(e >= 1, [&] { return "tensor extents must be positive: " + to_string(shape_); });
    data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto e : shape_) require(e >= 1, [&] { return "tensor extents must be positive: " + to_string(shape_); });
    require(numel(shape_) == data_.size(), [&] { return "data length does not match shape " + to_string(shape_); });
}

Tensor Tensor::reshaped(Shape shape) const {
    require(numel(shape) == data_.size(), [&] { return "cannot reshape " + to_string(shape_) + " to " + to_string(shape); });
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Node::ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

void Var::zero_grad() {
    if (node_->grad.shape() == node_->value.shape()) node_->grad.fill(0.0);
}

void backward(const Var& root) {
    require(root.size() == 1, [&] { return "backward root must be a scalar, got " + to_string(root.shape()); });
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.shape() == n->value.shape()) n->backward(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require(a.shape() == b.shape(), [&] { return "add: " + to_string(a.shape()) + " vs " + to_string(b.shape()); });
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        accumulate(parent(self, 0), self.grad.data());
        accumulate(parent(self, 1), self.grad.data());
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.shape() == b.shape(), [&] { return "sub: " + to_string(a.shape()) + " vs " + to_string(b.shape()); });
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        accumulate(parent(self, 0), self.grad.data());
        Node& pb = parent(self, 1);
        if (!pb.requires_grad) return;
        auto dst = pb.ensure_grad().data();
        auto g = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.shape() == b.shape(), [&] { return "mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()); });
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        auto g = self.grad.data();
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto dst = pa.ensure_grad().data();
            auto bv = pb.value.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv[i];
        }
        if (pb.requires_grad) {
            auto dst = pb.ensure_grad().data();
            auto av = pa.value.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return make_node(std::move(out), {a}, [s](Node& self) {
        Node& pa = parent(self, 0);
        auto dst = pa.ensure_grad().data();
        auto g = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += s;
    return make_node(std::move(out), {a}, [](Node& self) { accumulate(parent(self, 0), self.grad.data()); });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        auto dst = pa.ensure_grad().data();
        auto g = self.grad.data();
        auto x = pa.value.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) dst[i] += g[i];
    });
}

Var add_bias(const Var& x, const Var& bias) {
    require(x.shape().size() >= 1 && bias.shape().size() == 1 && bias.dim(0) == x.shape().back(), [&] { return "add_bias: " + to_string(x.shape()) + " with bias " + to_string(bias.shape()); });
    const std::size_t n = bias.dim(0);
    const std::size_t rows = x.size() / n;
    Tensor out = x.value();
    double* o = out.ptr();
    const double* b = bias.value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) o[r * n + j] += b[j];
    return make_node(std::move(out), {x, bias}, [n, rows](Node& self) {
        accumulate(parent(self, 0), self.grad.data());
        Node& pb = parent(self, 1);
        if (!pb.requires_grad) return;
        double* dst = pb.ensure_grad().ptr();
        const double* g = self.grad.ptr();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) dst[j] += g[r * n + j];
    });
}

Var scale_leading(const Var& x, const Var& s) {
    require(x.shape().size() >= 1 && s.shape().size() == 1 && s.dim(0) == x.dim(0), [&] { return "scale_leading: " + to_string(x.shape()) + " with " + to_string(s.shape()); });
    const std::size_t lead = x.dim(0);
    const std::size_t inner = x.size() / lead;
    Tensor out = x.value();
    double* o = out.ptr();
    const double* sv = s.value().ptr();
    for (std::size_t b = 0; b < lead; ++b)
        for (std::size_t i = 0; i < inner; ++i) o[b * inner + i] *= sv[b];
    return make_node(std::move(out), {x, s}, [lead, inner](Node& self) {
        const double* g = self.grad.ptr();
        Node& px = parent(self, 0);
        Node& ps = parent(self, 1);
        if (px.requires_grad) {
            double* dst = px.ensure_grad().ptr();
            const double* sv = ps.value.ptr();
            for (std::size_t b = 0; b < lead; ++b)
                for (std::size_t i = 0; i < inner; ++i) dst[b * inner + i] += g[b * inner + i] * sv[b];
        }
        if (ps.requires_grad) {
            double* dst = ps.ensure_grad().ptr();
            const double* xv = px.value.ptr();
            for (std::size_t b = 0; b < lead; ++b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < inner; ++i) acc += g[b * inner + i] * xv[b * inner + i];
                dst[b] += acc;
            }
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    require(a.shape().size() >= 2 && b.shape().size() == 2 && a.shape().back() == b.dim(0), [&] { return "matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()); });
    const std::size_t k = b.dim(0), n = b.dim(1);
    const std::size_t rows = a.size() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    MapMat(out.ptr(), rows, n).noalias() = CMapMat(a.value().ptr(), rows, k) * CMapMat(b.value().ptr(), k, n);
    return make_node(std::move(out), {a, b}, [rows, k, n](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        CMapMat g(self.grad.ptr(), rows, n);
        if (pa.requires_grad)
            MapMat(pa.ensure_grad().ptr(), rows, k).noalias() += g * CMapMat(pb.value.ptr(), k, n).transpose();
        if (pb.requires_grad)
            MapMat(pb.ensure_grad().ptr(), k, n).noalias() += CMapMat(pa.value.ptr(), rows, k).transpose() * g;
    });
}

Var bmm(const Var& a, const Var& b) {
    require(a.shape().size() == 3 && b.shape().size() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1), [&] { return "bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()); });
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor out({batch, m, n});
    for (std::size_t i = 0; i < batch; ++i)
        MapMat(out.ptr() + i * m * n, m, n).noalias() =
            CMapMat(a.value().ptr() + i * m * k, m, k) * CMapMat(b.value().ptr() + i * k * n, k, n);
    return make_node(std::move(out), {a, b}, [batch, m, k, n](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            CMapMat g(self.grad.ptr() + i * m * n, m, n);
            if (pa.requires_grad)
                MapMat(pa.ensure_grad().ptr() + i * m * k, m, k).noalias() +=
                    g * CMapMat(pb.value.ptr() + i * k * n, k, n).transpose();
            if (pb.requires_grad)
                MapMat(pb.ensure_grad().ptr() + i * k * n, k, n).noalias() +=
                    CMapMat(pa.value.ptr() + i * m * k, m, k).transpose() * g;
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_node(std::move(out), {a}, [](Node& self) { accumulate(parent(self, 0), self.grad.data()); });
}

namespace {

// Source offset for every destination element of a permutation.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes, Shape& out) {
    const std::size_t r = in.size();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    out.resize(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = in[axes[i]];
        src_stride[i] = in_stride[axes[i]];
    }
    const std::size_t total = numel(in);
    std::vector<std::size_t> map(total);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t d = 0; d < total; ++d) {
        map[d] = src;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            src += src_stride[ax];
            if (idx[ax] < out[ax]) break;
            src -= src_stride[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

}  // namespace

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
    const Shape& in = a.shape();
    require(axes.size() == in.size(), [&] { return "permute: axis count mismatch"; });
    std::vector<bool> used(in.size(), false);
    for (auto ax : axes) {
        require(ax < in.size() && !used[ax], [&] { return "permute: invalid axes"; });
        used[ax] = true;
    }
    Shape out_shape;
    auto map = std::make_shared<std::vector<std::size_t>>(permutation_map(in, axes, out_shape));
    Tensor out(out_shape);
    const double* src = a.value().ptr();
    double* dst = out.ptr();
    for (std::size_t d = 0; d < map->size(); ++d) dst[d] = src[(*map)[d]];
    return make_node(std::move(out), {a}, [map](Node& self) {
        Node& pa = parent(self, 0);
        double* g_in = pa.ensure_grad().ptr();
        const double* g = self.grad.ptr();
        for (std::size_t d = 0; d < map->size(); ++d) g_in[(*map)[d]] += g[d];
    });
}

Var transpose(const Var& a) {
    require(a.shape().size() >= 2, [&] { return "transpose needs rank >= 2"; });
    std::vector<std::size_t> axes(a.shape().size());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    require(!parts.empty(), [&] { return "concat: no inputs"; });
    const Shape& s0 = parts[0].shape();
    require(axis < s0.size(), [&] { return "concat: axis out of range"; });
    Shape out_shape = s0;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == s0.size(), [&] { return "concat: rank mismatch"; });
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis) require(s[i] == s0[i], [&] { return "concat: extent mismatch " + to_string(s) + " vs " + to_string(s0); });
        out_shape[axis] += s[axis];
    }
    const std::size_t outer = prod(s0, 0, axis);
    const std::size_t inner = prod(s0, axis + 1, s0.size());
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    const std::size_t row = out_shape[axis] * inner;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const double* src = parts[pi].value().ptr();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src + o * widths[pi], widths[pi], out.ptr() + o * row + offset);
        offset += widths[pi];
    }
    return make_node(std::move(out), parts, [outer, row, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
            Node& p = parent(self, pi);
            if (p.requires_grad) {
                double* dst = p.ensure_grad().ptr();
                const double* g = self.grad.ptr();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[pi]; ++j) dst[o * widths[pi] + j] += g[o * row + off + j];
            }
            off += widths[pi];
        }
    });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    require(axis < s.size() && begin < end && end <= s[axis], [&] { return "slice: invalid range on " + to_string(s); });
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    const std::size_t outer = prod(s, 0, axis);
    const std::size_t inner = prod(s, axis + 1, s.size());
    const std::size_t in_row = s[axis] * inner;
    const std::size_t width = (end - begin) * inner;
    const std::size_t off = begin * inner;
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.value().ptr() + o * in_row + off, width, out.ptr() + o * width);
    return make_node(std::move(out), {a}, [outer, in_row, width, off](Node& self) {
        double* dst = parent(self, 0).ensure_grad().ptr();
        const double* g = self.grad.ptr();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < width; ++j) dst[o * in_row + off + j] += g[o * width + j];
    });
}

Var gather_last(const Var& a, std::vector<std::size_t> index) {
    const std::size_t n = a.shape().back();
    for (auto i : index) require(i < n, [&] { return "gather_last: index out of range"; });
    const std::size_t rows = a.size() / n;
    const std::size_t m = index.size();
    require(m >= 1, [&] { return "gather_last: empty index"; });
    Shape out_shape = a.shape();
    out_shape.back() = m;
    Tensor out(out_shape);
    const double* src = a.value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < m; ++j) out[r * m + j] = src[r * n + index[j]];
    return make_node(std::move(out), {a}, [rows, n, m, index = std::move(index)](Node& self) {
        double* dst = parent(self, 0).ensure_grad().ptr();
        const double* g = self.grad.ptr();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < m; ++j) dst[r * n + index[j]] += g[r * m + j];
    });
}

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return make_node(Tensor::scalar(acc), {a}, [](Node& self) {
        const double g = self.grad[0];
        for (auto& v : parent(self, 0).ensure_grad().data()) v += g;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var softmax_rows(const Var& a) {
    const std::size_t n = a.shape().back();
    const std::size_t rows = a.size() / n;
    Tensor out(a.shape());
    const double* x = a.value().ptr();
    double* y = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * n;
        double* yr = y + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    return make_node(std::move(out), {a}, [rows, n](Node& self) {
        double* dst = parent(self, 0).ensure_grad().ptr();
        const double* g = self.grad.ptr();
        const double* y = self.value.ptr();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) dst[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
    const std::size_t n = x.shape().back();
    require(gain.shape() == Shape{n} && bias.shape() == Shape{n}, [&] { return "layer_norm: affine parameters must have shape [" + std::to_string(n) + "]"; });
    const std::size_t rows = x.size() / n;
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto sigma = std::make_shared<std::vector<double>>(rows);
    auto floored = std::make_shared<std::vector<char>>(rows);
    Tensor out(x.shape());
    const double* xv = x.value().ptr();
    const double* g = gain.value().ptr();
    const double* b = bias.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        double sd = std::sqrt(var);
        (*floored)[r] = sd < kLayerNormStdFloor;
        if ((*floored)[r]) sd = kLayerNormStdFloor;
        (*sigma)[r] = sd;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xr[j] - mu) / sd;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = h * g[j] + b[j];
        }
    }
    return make_node(std::move(out), {x, gain, bias}, [rows, n, xhat, sigma, floored](Node& self) {
        const double* gy = self.grad.ptr();
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        const double* gain_v = pg.value.ptr();
        if (pg.requires_grad) {
            double* dg = pg.ensure_grad().ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) dg[j] += gy[r * n + j] * (*xhat)[r * n + j];
        }
        if (pb.requires_grad) {
            double* db = pb.ensure_grad().ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) db[j] += gy[r * n + j];
        }
        if (!px.requires_grad) return;
        double* dx = px.ensure_grad().ptr();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double dh = gy[r * n + j] * gain_v[j];
                m1 += dh;
                m2 += dh * (*xhat)[r * n + j];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            if ((*floored)[r]) m2 = 0.0;
            const double inv_sd = 1.0 / (*sigma)[r];
            for (std::size_t j = 0; j < n; ++j) {
                const double dh = gy[r * n + j] * gain_v[j];
                dx[r * n + j] += inv_sd * (dh - m1 - (*xhat)[r * n + j] * m2);
            }
        }
    });
}

namespace {

// In-place LU with partial pivoting; `a` is n*n row-major.
void lu_inverse(const double* a, double* inv, std::size_t n) {
    std::vector<double> lu(a, a + n * n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double scale = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(lu[i]));
    const double tol = kPivotTolerance * (scale > 0.0 ? scale : 1.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(lu[r * n + c]) > std::abs(lu[piv * n + c])) piv = r;
        if (std::abs(lu[piv * n + c]) <= tol) throw SingularMatrixError("matrix is singular within pivot tolerance");
        if (piv != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu[c * n + j], lu[piv * n + j]);
            std::swap(perm[c], perm[piv]);
        }
        const double d = lu[c * n + c];
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = (lu[r * n + c] /= d);
            for (std::size_t j = c + 1; j < n; ++j) lu[r * n + j] -= f * lu[c * n + j];
        }
    }
    // Solve L U x = P e_j for every column j.
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = perm[i] == j ? 1.0 : 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < i; ++k) col[i] -= lu[i * n + k] * col[k];
        for (std::size_t i = n; i-- > 0;) {
            for (std::size_t k = i + 1; k < n; ++k) col[i] -= lu[i * n + k] * col[k];
            col[i] /= lu[i * n + i];
        }
        for (std::size_t i = 0; i < n; ++i) inv[i * n + j] = col[i];
    }
}

}  // namespace

Var inverse(const Var& a) {
    const Shape& s = a.shape();
    require(s.size() >= 2 && s[s.size() - 1] == s[s.size() - 2], [&] { return "inverse: needs square trailing matrices, got " + to_string(s); });
    const std::size_t n = s.back();
    const std::size_t batch = a.size() / (n * n);
    Tensor out(s);
    for (std::size_t b = 0; b < batch; ++b) lu_inverse(a.value().ptr() + b * n * n, out.ptr() + b * n * n, n);
    return make_node(std::move(out), {a}, [batch, n](Node& self) {
        double* dst = parent(self, 0).ensure_grad().ptr();
        // dL/dA = -Y^T G Y^T with Y = A^{-1}
        RowMat tmp(n, n);
        for (std::size_t b = 0; b < batch; ++b) {
            CMapMat y(self.value.ptr() + b * n * n, n, n);
            CMapMat g(self.grad.ptr() + b * n * n, n, n);
            tmp.noalias() = g * y.transpose();
            MapMat(dst + b * n * n, n, n).noalias() -= y.transpose() * tmp;
        }
    });
}

ComplexPair cadd(const ComplexPair& a, const ComplexPair& b) { return {add(a.re, b.re), add(a.im, b.im)}; }

ComplexPair cmatmul(const ComplexPair& a, const ComplexPair& b) {
    require(a.re.shape() == a.im.shape() && b.re.shape() == b.im.shape(), [&] { return "cmatmul: re/im shape mismatch"; });
    const bool batched = a.re.shape().size() == 3;
    auto mm = [batched](const Var& x, const Var& y) { return batched ? bmm(x, y) : matmul(x, y); };
    return {sub(mm(a.re, b.re), mm(a.im, b.im)), add(mm(a.re, b.im), mm(a.im, b.re))};
}

ComplexPair cinverse(const ComplexPair& a) {
    const Shape& s = a.re.shape();
    require(s == a.im.shape(), [&] { return "cinverse: re/im shape mismatch"; });
    require(s.size() >= 2 && s[s.size() - 1] == s[s.size() - 2], [&] { return "cinverse: needs square matrices"; });
    const std::size_t r = s.size();
    const std::size_t n = s.back();
    // [[Re, -Im], [Im, Re]]^{-1} = [[Xr, -Xi], [Xi, Xr]]; the first block column holds the answer.
    Var top = concat({a.re, scale(a.im, -1.0)}, r - 1);
    Var bottom = concat({a.im, a.re}, r - 1);
    Var inv = inverse(concat({top, bottom}, r - 2));
    Var left = slice(inv, r - 1, 0, n);
    return {slice(left, r - 2, 0, n), slice(left, r - 2, n, 2 * n)};
}

double relative_error(double analytic, double numeric, double abs_floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck(const std::function<Var()>& f, std::vector<Var> inputs, double step, double tol,
                          std::size_t max_entries, unsigned long long seed, double abs_floor) {
    for (auto& in : inputs) in.zero_grad();
    Var root = f();
    backward(root);

    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t j = 0; j < inputs[i].size(); ++j) entries.emplace_back(i, j);
    if (max_entries > 0 && entries.size() > max_entries) {
        std::mt19937_64 rng(seed);
        std::shuffle(entries.begin(), entries.end(), rng);
        entries.resize(max_entries);
    }

    GradcheckResult res;
    for (auto [i, j] : entries) {
        Var& in = inputs[i];
        const double analytic = in.grad().empty() ? 0.0 : in.grad()[j];
        double& x = in.mutable_value()[j];
        const double orig = x;
        x = orig + step;
        const double fp = f().value()[0];
        x = orig - step;
        const double fm = f().value()[0];
        x = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = relative_error(analytic, numeric, abs_floor);
        ++res.checked;
        if (err < tol) ++res.passed;
        res.max_rel_error = std::max(res.max_rel_error, err);
    }
    return res;
}

}  // namespace bdris::ad
