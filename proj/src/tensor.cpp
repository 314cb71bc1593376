// SPDX-License-Identifier: Apache-2.0
#include "thinner/tensor.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace thinner {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_mac_count = 0;

void require_rank2(const Tensor& x, const char* op) {
    if (x.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

// Adds src into the parent's gradient if that parent takes gradients.
void accumulate(detail::Node& parent, std::span<const double> src) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) parent.grad[i] += src[i];
}

} // namespace

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void detail::Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor payload of " + std::to_string(values.size()) +
                             " values does not fit shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("matrix: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is " + shape_str(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is " + shape_str(shape()));
    return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
double Tensor::at(std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
    return node_->data.at(r * cols() + c);
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item(): tensor is " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
const std::string& Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void Tensor::backward() const {
    if (size() != 1) {
        throw DimensionError("backward() without a seed needs a single-element output, got " +
                             shape_str(shape()));
    }
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
    if (seed.size() != size()) throw DimensionError("backward(): seed size mismatch");
    if (!node_->requires_grad) return;
    node_->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];
    GradTape::record(*this).replay();
}

// ---- GradTape -----------------------------------------------------------

GradTape GradTape::record(const Tensor& root) {
    GradTape tape;
    if (!root.defined() || !root.node_->requires_grad) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node_.get(), 0);
    seen.insert(root.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            tape.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

void GradTape::replay() const {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node& node = **it;
        if (!node.backward_fn || node.grad.empty()) continue;
        node.backward_fn(node);
    }
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t mac_count() noexcept { return t_mac_count; }
void reset_mac_count() noexcept { t_mac_count = 0; }

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      std::string op, std::function<void(detail::Node&)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = std::move(op);
    if (t_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
            return t.defined() && t.requires_grad();
        });
        if (any) {
            node->requires_grad = true;
            for (auto& in : inputs) {
                if (in.defined()) node->parents.push_back(in.node_);
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
        accumulate(*self.parents[0], self.grad);
        accumulate(*self.parents[1], self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& self) {
        accumulate(*self.parents[0], self.grad);
        auto& rhs = *self.parents[1];
        if (!rhs.requires_grad) return;
        rhs.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) rhs.grad[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& self) {
        auto& lhs = *self.parents[0];
        auto& rhs = *self.parents[1];
        if (lhs.requires_grad) {
            lhs.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) lhs.grad[i] += self.grad[i] * rhs.data[i];
        }
        if (rhs.requires_grad) {
            rhs.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) rhs.grad[i] += self.grad[i] * lhs.data[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
    return make_op_result(x.shape(), std::move(out), {x}, "scale", [factor](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& x, double value) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + value;
    return make_op_result(x.shape(), std::move(out), {x}, "add_scalar", [](detail::Node& self) {
        accumulate(*self.parents[0], self.grad);
    });
}

Tensor add_row_vector(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_row_vector");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    if (bias.size() != c || (bias.rank() == 2 && bias.shape()[0] != 1) || bias.rank() > 2) {
        throw DimensionError("add_row_vector: bias " + shape_str(bias.shape()) +
                             " does not match rows of " + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.data()[j];
    return make_op_result(x.shape(), std::move(out), {x, bias}, "add_row_vector",
                          [r, c](detail::Node& self) {
                              accumulate(*self.parents[0], self.grad);
                              auto& b = *self.parents[1];
                              if (!b.requires_grad) return;
                              b.ensure_grad();
                              for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j) b.grad[j] += self.grad[i * c + j];
                          });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    return make_op_result(x.shape(), std::move(out), {x}, "gelu", [](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = in.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            in.grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    t_mac_count += static_cast<std::uint64_t>(m) * k * n;
    return make_op_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](detail::Node& self) {
        auto& lhs = *self.parents[0];
        auto& rhs = *self.parents[1];
        const double* g = self.grad.data();
        if (lhs.requires_grad) {
            lhs.ensure_grad();
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = rhs.data.data() + p * n;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    lhs.grad[i * k + p] += acc;
                }
        }
        if (rhs.requires_grad) {
            rhs.ensure_grad();
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = lhs.data[i * k + p];
                    double* brow = rhs.grad.data() + p * n;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: feature widths disagree for " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
            out[i * n + j] = acc;
        }
    t_mac_count += static_cast<std::uint64_t>(m) * k * n;
    return make_op_result({m, n}, std::move(out), {a, b}, "matmul_nt", [m, k, n](detail::Node& self) {
        auto& lhs = *self.parents[0];
        auto& rhs = *self.parents[1];
        const double* g = self.grad.data();
        if (lhs.requires_grad) {
            lhs.ensure_grad();
            // dA = dC * B
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = g[i * n + j];
                    const double* brow = rhs.data.data() + j * k;
                    double* arow = lhs.grad.data() + i * k;
                    for (std::size_t p = 0; p < k; ++p) arow[p] += gv * brow[p];
                }
        }
        if (rhs.requires_grad) {
            rhs.ensure_grad();
            // dB = dC^T * A
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = g[i * n + j];
                    const double* arow = lhs.data.data() + i * k;
                    double* brow = rhs.grad.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) brow[p] += gv * arow[p];
                }
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
    return make_op_result({c, r}, std::move(out), {x}, "transpose", [r, c](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[j * r + i];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor y = matmul(x, w);
    return bias.defined() ? add_row_vector(y, bias) : y;
}

// ---- normalization --------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("softmax_rows: scalar input");
    const std::size_t c = x.shape().back();
    if (c == 0) throw DimensionError("softmax_rows: empty last axis in " + shape_str(x.shape()));
    const std::size_t r = x.size() / c;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = x.data().data() + i * c;
        double* o = out.data() + i * c;
        const double mx = *std::max_element(in, in + c);
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw ParameterError("softmax_rows: row " + std::to_string(i) + " is fully masked");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < c; ++j) o[j] /= total;
    }
    return make_op_result(x.shape(), std::move(out), {x}, "softmax_rows", [r, c](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
    const std::size_t c = x.shape().back();
    if (c == 0) throw DimensionError("layer_norm: empty last axis");
    if (gain.size() != c || bias.size() != c) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match width " + std::to_string(c));
    }
    const std::size_t r = x.size() / c;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = x.data().data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += in[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (in[j] - mean) * inv_std[i];
            out[i * c + j] = gain.data()[j] * xhat[i * c + j] + bias.data()[j];
        }
    }
    return make_op_result(
        x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            auto& in = *self.parents[0];
            auto& g = *self.parents[1];
            auto& b = *self.parents[2];
            if (g.requires_grad) g.ensure_grad();
            if (b.requires_grad) b.ensure_grad();
            if (in.requires_grad) in.ensure_grad();
            const double n = static_cast<double>(c);
            for (std::size_t i = 0; i < r; ++i) {
                const double* dy = self.grad.data() + i * c;
                const double* xh = xhat.data() + i * c;
                double sum_dxh = 0.0;
                double sum_dxh_xh = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = dy[j] * g.data[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[j];
                    if (g.requires_grad) g.grad[j] += dy[j] * xh[j];
                    if (b.requires_grad) b.grad[j] += dy[j];
                }
                if (!in.requires_grad) continue;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = dy[j] * g.data[j];
                    in.grad[i * c + j] += inv_std[i] / n * (n * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                }
            }
        });
}

// ---- row/column plumbing --------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
    require_rank2(x, "gather_rows");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= r) {
            throw IndexError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                             std::to_string(r) + " rows");
        }
        if (i > 0 && idx[i] <= idx[i - 1]) {
            throw IndexError("gather_rows: indices must be strictly increasing (position " +
                             std::to_string(i) + ")");
        }
    }
    std::vector<std::size_t> rows(idx.begin(), idx.end());
    std::vector<double> out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data().data() + rows[i] * c, c, out.data() + i * c);
    return make_op_result({idx.size(), c}, std::move(out), {x}, "gather_rows",
                          [rows = std::move(rows), c](detail::Node& self) {
                              auto& in = *self.parents[0];
                              in.ensure_grad();
                              for (std::size_t i = 0; i < rows.size(); ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                      in.grad[rows[i] * c + j] += self.grad[i * c + j];
                          });
}

Tensor index_rows(const Tensor& table, std::span<const std::size_t> idx) {
    require_rank2(table, "index_rows");
    const std::size_t r = table.rows();
    const std::size_t c = table.cols();
    std::vector<std::size_t> rows(idx.begin(), idx.end());
    std::vector<double> out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= r) {
            throw IndexError("index_rows: index " + std::to_string(rows[i]) + " out of range for " +
                             std::to_string(r) + " rows");
        }
        std::copy_n(table.data().data() + rows[i] * c, c, out.data() + i * c);
    }
    return make_op_result({idx.size(), c}, std::move(out), {table}, "index_rows",
                          [rows = std::move(rows), c](detail::Node& self) {
                              auto& in = *self.parents[0];
                              in.ensure_grad();
                              for (std::size_t i = 0; i < rows.size(); ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                      in.grad[rows[i] * c + j] += self.grad[i * c + j];
                          });
}

Tensor apply_mask(const Tensor& x, std::span<const double> mask) {
    if (mask.size() != x.size()) throw DimensionError("apply_mask: mask size mismatch");
    std::vector<double> m(mask.begin(), mask.end());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * m[i];
    return make_op_result(x.shape(), std::move(out), {x}, "apply_mask",
                          [m = std::move(m)](detail::Node& self) {
                              auto& in = *self.parents[0];
                              in.ensure_grad();
                              for (std::size_t i = 0; i < m.size(); ++i) in.grad[i] += self.grad[i] * m[i];
                          });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t c = x.cols();
    std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                            x.data().begin() + static_cast<std::ptrdiff_t>(end * c));
    return make_op_result({end - begin, c}, std::move(out), {x}, "slice_rows",
                          [begin, c](detail::Node& self) {
                              auto& in = *self.parents[0];
                              in.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  in.grad[begin * c + i] += self.grad[i];
                          });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_cols");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    if (begin > end || end > c) {
        throw IndexError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(x.data().data() + i * c + begin, w, out.data() + i * w);
    return make_op_result({r, w}, std::move(out), {x}, "slice_cols", [r, c, w, begin](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) in.grad[i * c + begin + j] += self.grad[i * w + j];
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank2(a, "concat_rows");
    require_rank2(b, "concat_rows");
    if (a.cols() != b.cols()) {
        throw DimensionError("concat_rows: widths disagree " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    const std::size_t split = a.size();
    return make_op_result({a.rows() + b.rows(), a.cols()}, std::move(out), {a, b}, "concat_rows",
                          [split](detail::Node& self) {
                              std::span<const double> g(self.grad);
                              accumulate(*self.parents[0], g.subspan(0, split));
                              accumulate(*self.parents[1], g.subspan(split));
                          });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != r) throw DimensionError("concat_cols: row counts disagree");
        offsets.push_back(total);
        total += p.cols();
    }
    std::vector<double> out(r * total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = parts[k].cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(parts[k].data().data() + i * w, w, out.data() + i * total + offsets[k]);
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_op_result({r, total}, std::move(out), std::move(inputs), "concat_cols",
                          [r, total, offsets](detail::Node& self) {
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                  auto& in = *self.parents[k];
                                  if (!in.requires_grad) continue;
                                  in.ensure_grad();
                                  const std::size_t w = in.shape[1];
                                  for (std::size_t i = 0; i < r; ++i)
                                      for (std::size_t j = 0; j < w; ++j)
                                          in.grad[i * w + j] += self.grad[i * total + offsets[k] + j];
                              }
                          });
}

Tensor mean_rows(const Tensor& x) {
    require_rank2(x, "mean_rows");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    if (r == 0) throw DimensionError("mean_rows: zero tokens");
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += x.data()[i * c + j];
    for (auto& v : out) v /= static_cast<double>(r);
    return make_op_result({1, c}, std::move(out), {x}, "mean_rows", [r, c](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[j] * inv;
    });
}

Tensor row_sums(const Tensor& x) {
    require_rank2(x, "row_sums");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += x.data()[i * c + j];
    return make_op_result({r, 1}, std::move(out), {x}, "row_sums", [r, c](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[i];
    });
}

Tensor div_rows_guarded(const Tensor& x, const Tensor& denom) {
    require_rank2(x, "div_rows_guarded");
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    if (denom.size() != r) {
        throw DimensionError("div_rows_guarded: denominator " + shape_str(denom.shape()) +
                             " does not match " + shape_str(x.shape()));
    }
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const double d = denom.data()[i];
        if (d == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] / d;
    }
    return make_op_result(x.shape(), std::move(out), {x, denom}, "div_rows_guarded",
                          [r, c](detail::Node& self) {
                              auto& num = *self.parents[0];
                              auto& den = *self.parents[1];
                              if (num.requires_grad) num.ensure_grad();
                              if (den.requires_grad) den.ensure_grad();
                              for (std::size_t i = 0; i < r; ++i) {
                                  const double d = den.data[i];
                                  if (d == 0.0) continue;
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < c; ++j) {
                                      const double g = self.grad[i * c + j];
                                      if (num.requires_grad) num.grad[i * c + j] += g / d;
                                      acc += g * num.data[i * c + j];
                                  }
                                  if (den.requires_grad) den.grad[i] -= acc / (d * d);
                              }
                          });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return make_op_result({}, {total}, {x}, "sum", [](detail::Node& self) {
        auto& in = *self.parents[0];
        in.ensure_grad();
        for (auto& g : in.grad) g += self.grad[0];
    });
}

// ---- gradient routing -----------------------------------------------------

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

Tensor straight_through(const Tensor& forward_values, const Tensor& soft) {
    require_same_shape(forward_values, soft, "straight_through");
    std::vector<double> out(forward_values.data().begin(), forward_values.data().end());
    return make_op_result(soft.shape(), std::move(out), {soft}, "straight_through",
                          [](detail::Node& self) { accumulate(*self.parents[0], self.grad); });
}

// ---- losses ---------------------------------------------------------------

Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t label) {
    const std::size_t c = logits.size();
    if (c == 0) throw DimensionError("cross_entropy_with_logits: empty logits");
    if (label >= c) {
        throw DataError("cross_entropy_with_logits: label " + std::to_string(label) +
                        " out of range for " + std::to_string(c) + " classes");
    }
    const auto z = logits.data();
    const double mx = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    std::vector<double> probs(c);
    for (std::size_t j = 0; j < c; ++j) {
        probs[j] = std::exp(z[j] - mx);
        total += probs[j];
    }
    for (auto& p : probs) p /= total;
    const double loss = std::log(total) + mx - z[label];
    return make_op_result({}, {loss}, {logits}, "cross_entropy",
                          [probs = std::move(probs), label](detail::Node& self) {
                              auto& in = *self.parents[0];
                              in.ensure_grad();
                              for (std::size_t j = 0; j < probs.size(); ++j)
                                  in.grad[j] += self.grad[0] * (probs[j] - (j == label ? 1.0 : 0.0));
                          });
}

} // namespace thinner
