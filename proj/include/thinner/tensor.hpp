// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to a graph node. Copying a Tensor copies the
// handle; the numeric payload is immutable once an op has produced it, with
// two exceptions: gradient accumulation during backward(), and in-place
// parameter updates by the optimizer through mutable_data().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace thinner {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Builds a rank-2 tensor from nested rows; all rows must share a length.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    /// Writable payload for parameter updates. Never use on op outputs that
    /// are still referenced by a live graph.
    std::span<double> mutable_data();
    double at(std::size_t i) const;
    double at(std::size_t r, std::size_t c) const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Seeds d(this)/d(this) = 1 (scalar outputs only) and replays the tape.
    void backward() const;
    /// Same as backward() with an explicit upstream gradient of this tensor's shape.
    void backward(std::span<const double> seed) const;

    /// New leaf holding a copy of the values, disconnected from any graph.
    Tensor detach() const;

    const std::string& op_name() const;
    const detail::Node* node() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend struct detail::Node;
    friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>, std::string,
                                 std::function<void(detail::Node&)>);
    friend class GradTape;
};

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::string op = "leaf";

    void ensure_grad();
};
} // namespace detail

/// Nodes reachable from a root, ordered so every node appears after all of
/// its inputs. Replaying in reverse visits each node exactly once.
class GradTape {
public:
    static GradTape record(const Tensor& root);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::span<detail::Node* const> nodes() const noexcept { return nodes_; }

    void replay() const;

private:
    std::vector<detail::Node*> nodes_;
};

// Gradient recording is thread-local and on by default.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Forward multiply-accumulate counter for matmuls, thread-local.
std::uint64_t mac_count() noexcept;
void reset_mac_count() noexcept;

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      std::string op, std::function<void(detail::Node&)> backward_fn);

// ---- elementwise -------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// x[r, c] + bias[c]; bias may be rank 1 {c} or rank 2 {1, c}.
Tensor add_row_vector(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);

// ---- linear algebra ----------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x * w (+ bias when defined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

// ---- normalization -----------------------------------------------------
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- row/column plumbing -----------------------------------------------
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
/// Row lookup that allows repeats and any order (embedding tables).
Tensor index_rows(const Tensor& table, std::span<const std::size_t> idx);
/// Elementwise product with a constant mask (no gradient to the mask).
Tensor apply_mask(const Tensor& x, std::span<const double> mask);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
/// Arithmetic mean over the row axis of a rank-2 tensor; shape {1, cols}.
Tensor mean_rows(const Tensor& x);
/// Per-row sums of a rank-2 tensor; shape {rows, 1}.
Tensor row_sums(const Tensor& x);
/// x[r, :] / denom[r]; rows whose denominator is exactly zero yield zeros
/// and pass no gradient.
Tensor div_rows_guarded(const Tensor& x, const Tensor& denom);
Tensor sum(const Tensor& x);

// ---- gradient routing --------------------------------------------------
/// Forward value of x, no gradient to x.
Tensor stop_gradient(const Tensor& x);
/// Forward value `forward_values` exactly; backward passes the upstream
/// gradient unchanged to `soft`.
Tensor straight_through(const Tensor& forward_values, const Tensor& soft);

// ---- losses ------------------------------------------------------------
/// Softmax cross-entropy of a single logit row against an integer label.
Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t label);

} // namespace thinner
