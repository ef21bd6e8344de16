#pragma once

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Var is a handle to a node in a dynamically built DAG. Operations below
// create new nodes that remember their parents and a backward rule; calling
// backward() on a scalar node propagates gradients to every reachable node
// that requires them. Nodes whose parents all have requires_grad == false
// drop their parents immediately, so evaluation without trainable leaves
// builds no graph.
//
// The op vocabulary is fixed: exactly what the DVQ-VAE and the code/duration
// transformers need.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "t2s/tensor.hpp"

namespace t2s::ad {

// While any guard is alive on a thread, new ops on that thread record no
// parents or backward rules (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

template <typename Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads. Empty for leaves.
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor<Real>(value.shape());
    }
};

template <typename Real>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<Real> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

    const Tensor<Real>& value() const { return node_->value; }
    // Leaves only: optimizers and finite-difference probes write through this.
    Tensor<Real>& mutable_value() { return node_->value; }
    const Tensor<Real>& grad() const;
    void zero_grad();

    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    std::size_t size() const { return node_->value.size(); }
    Real item() const { return node_->value.item(); }

    const std::shared_ptr<Node<Real>>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node<Real>> node_;
};

// Leaf that does not require a gradient.
template <typename Real>
Var<Real> constant(Tensor<Real> value) {
    return Var<Real>(std::move(value), false);
}

// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
// node. Interior gradients are recomputed per call; leaf gradients accumulate
// across calls until zero_grad().
template <typename Real>
void backward(const Var<Real>& root);

// ---- linear algebra -------------------------------------------------------

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
// a · bᵀ
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> transpose(const Var<Real>& a);

// ---- elementwise ----------------------------------------------------------
// Binary ops require equal shapes, or b holding a single value (broadcast).

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s);
template <typename Real>
Var<Real> add_scalar(const Var<Real>& a, Real s);
template <typename Real>
Var<Real> relu(const Var<Real>& a);
template <typename Real>
Var<Real> sigmoid(const Var<Real>& a);

// x[T×d] + bias[d] on every row.
template <typename Real>
Var<Real> add_row(const Var<Real>& x, const Var<Real>& bias);
// Row t of x[T×d] multiplied by w[t]; w holds T values.
template <typename Real>
Var<Real> scale_rows(const Var<Real>& x, const Var<Real>& w);

// ---- reductions and losses ------------------------------------------------

template <typename Real>
Var<Real> sum(const Var<Real>& a);
template <typename Real>
Var<Real> mean(const Var<Real>& a);

template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gain, const Var<Real>& bias, Real eps = Real(1e-5));

// Mean over rows of -log softmax(logits)[target].
template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::span<const std::uint32_t> targets);

// Mean over elements of the Huber-style smooth L1 penalty on a - b.
template <typename Real>
Var<Real> smooth_l1(const Var<Real>& a, const Var<Real>& b, Real beta = Real(1));

// Mean over elements of (a - b)².
template <typename Real>
Var<Real> mse(const Var<Real>& a, const Var<Real>& b);

// Mean over rows of the squared Euclidean row distance ‖a_i − b_i‖².
template <typename Real>
Var<Real> mean_sq_row_dist(const Var<Real>& a, const Var<Real>& b);

// ---- gradient routing -----------------------------------------------------

// Forward value identical to a; contributes no gradient to a.
template <typename Real>
Var<Real> stop_gradient(const Var<Real>& a);

// Forward value is `value`; the incoming gradient is passed to a unchanged.
// This is z + sg(value − z) without the rounding of the explicit sum.
template <typename Real>
Var<Real> pass_through(const Var<Real>& a, Tensor<Real> value);

// ---- row/column plumbing --------------------------------------------------

// out[s] = Σ_{t : ids[t] == s} x[t]; out has num_segments rows.
template <typename Real>
Var<Real> segment_sum(const Var<Real>& x, std::span<const std::uint32_t> ids, std::size_t num_segments);

// out[i] = table[index[i]].
template <typename Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const std::uint32_t> index);

template <typename Real>
Var<Real> slice_rows(const Var<Real>& x, std::size_t begin, std::size_t end);
template <typename Real>
Var<Real> slice_cols(const Var<Real>& x, std::size_t begin, std::size_t end);
template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts);
template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts);

// Row-wise softmax of x[Tq×Tk]. Entry (i, j) is excluded when causal and
// j > i, or when key_mask is non-empty and key_mask[j] == 0. Excluded entries
// are exactly zero in the output. A row with no admissible key is all zero.
template <typename Real>
Var<Real> masked_softmax_rows(const Var<Real>& x, bool causal, std::span<const std::uint8_t> key_mask = {});

// ---- transformer block ----------------------------------------------------

template <typename Real>
struct AttentionParams {
    std::size_t heads = 1;
    Var<Real> ln1_gain, ln1_bias;
    Var<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Var<Real> ln2_gain, ln2_bias;
    Var<Real> w1, b1, w2, b2;
};

// Pre-norm transformer block:
//   h = x + MHA(LN1(x));  out = h + W2·relu(W1·LN2(h) + b1) + b2
// When causal, query t attends only to keys ≤ t. key_mask (optional) removes
// keys from every query's support.
template <typename Real>
Var<Real> attention_block(const Var<Real>& x, const AttentionParams<Real>& p, bool causal,
                          std::span<const std::uint8_t> key_mask = {});

}  // namespace t2s::ad
