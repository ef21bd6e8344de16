#include "t2s/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "t2s/kernels.hpp"

namespace t2s::ad {

namespace {

thread_local int no_grad_depth = 0;

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <typename Real, typename Fn>
Var<Real> make_op(Tensor<Real> value, std::vector<Var<Real>> parents, Fn&& rule) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    if (no_grad_depth == 0)
        for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::forward<Fn>(rule);
    }
    return Var<Real>(std::move(n));
}

// Gradient buffer of parent i, or nullptr when that parent needs none.
template <typename Real>
Real* pgrad(Node<Real>& self, std::size_t i) {
    auto& p = *self.parents[i];
    return p.requires_grad ? p.grad.data() : nullptr;
}

template <typename Real>
const Tensor<Real>& pval(const Node<Real>& self, std::size_t i) {
    return self.parents[i]->value;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

template <typename Real>
void require_matrix(const Var<Real>& a, const char* op) {
    require(a.shape().size() == 2, std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename Real>
bool broadcasts(const Var<Real>& a, const Var<Real>& b, const char* op) {
    if (a.shape() == b.shape()) return false;
    if (b.size() == 1) return true;
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

template <typename Real>
Var<Real>::Var(Tensor<Real> value, bool requires_grad) : node_(std::make_shared<Node<Real>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
}

template <typename Real>
const Tensor<Real>& Var<Real>::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

template <typename Real>
void Var<Real>::zero_grad() {
    node_->ensure_grad();
    node_->grad.fill(Real{0});
}

template <typename Real>
void backward(const Var<Real>& root) {
    if (!root) throw ContractError("backward: empty root");
    if (root.size() != 1)
        throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> seen;
    std::vector<std::pair<Node<Real>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<Real>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node<Real>* n : order) {
        if (n->backward)
            n->grad = Tensor<Real>(n->value.shape());
        else
            n->ensure_grad();
    }
    root.node()->grad[0] += Real{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

// ---- linear algebra -------------------------------------------------------

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    require(b.rows() == k, "matmul: inner dimensions differ: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
    Tensor<Real> out(Shape{m, n});
    kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_op<Real>(std::move(out), {a, b}, [m, k, n](Node<Real>& self) {
        const Real* g = self.grad.data();
        if (Real* da = pgrad(self, 0)) kernels::gemm_nt(g, pval(self, 1).data(), da, m, n, k);
        if (Real* db = pgrad(self, 1)) kernels::gemm_tn(pval(self, 0).data(), g, db, k, m, n);
    });
}

template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    require(b.cols() == k, "matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " · " +
                               shape_str(b.shape()) + "ᵀ");
    Tensor<Real> out(Shape{m, n});
    kernels::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_op<Real>(std::move(out), {a, b}, [m, k, n](Node<Real>& self) {
        const Real* g = self.grad.data();
        if (Real* da = pgrad(self, 0)) kernels::gemm_nn(g, pval(self, 1).data(), da, m, n, k);
        if (Real* db = pgrad(self, 1)) kernels::gemm_tn(g, pval(self, 0).data(), db, n, m, k);
    });
}

template <typename Real>
Var<Real> transpose(const Var<Real>& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<Real> out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
    return make_op<Real>(std::move(out), {a}, [m, n](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da[i * n + j] += self.grad[j * m + i];
    });
}

// ---- elementwise ----------------------------------------------------------

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    const bool bc = broadcasts(a, b, "add");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[bc ? 0 : i];
    return make_op<Real>(std::move(out), {a, b}, [bc](Node<Real>& self) {
        const std::size_t n = self.grad.size();
        if (Real* da = pgrad(self, 0))
            for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i];
        if (Real* db = pgrad(self, 1))
            for (std::size_t i = 0; i < n; ++i) db[bc ? 0 : i] += self.grad[i];
    });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    const bool bc = broadcasts(a, b, "sub");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[bc ? 0 : i];
    return make_op<Real>(std::move(out), {a, b}, [bc](Node<Real>& self) {
        const std::size_t n = self.grad.size();
        if (Real* da = pgrad(self, 0))
            for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i];
        if (Real* db = pgrad(self, 1))
            for (std::size_t i = 0; i < n; ++i) db[bc ? 0 : i] -= self.grad[i];
    });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    const bool bc = broadcasts(a, b, "mul");
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[bc ? 0 : i];
    return make_op<Real>(std::move(out), {a, b}, [bc](Node<Real>& self) {
        const std::size_t n = self.grad.size();
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        if (Real* da = pgrad(self, 0))
            for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i] * bv[bc ? 0 : i];
        if (Real* db = pgrad(self, 1))
            for (std::size_t i = 0; i < n; ++i) db[bc ? 0 : i] += self.grad[i] * av[i];
    });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
    Tensor<Real> out = a.value();
    for (auto& v : out.values()) v *= s;
    return make_op<Real>(std::move(out), {a}, [s](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += s * self.grad[i];
    });
}

template <typename Real>
Var<Real> add_scalar(const Var<Real>& a, Real s) {
    Tensor<Real> out = a.value();
    for (auto& v : out.values()) v += s;
    return make_op<Real>(std::move(out), {a}, [](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
    });
}

template <typename Real>
Var<Real> relu(const Var<Real>& a) {
    Tensor<Real> out = a.value();
    for (auto& v : out.values()) v = v > Real{0} ? v : Real{0};
    return make_op<Real>(std::move(out), {a}, [](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        const auto& x = pval(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x[i] > Real{0}) da[i] += self.grad[i];
    });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& a) {
    Tensor<Real> out = a.value();
    for (auto& v : out.values()) {
        if (v >= Real{0}) {
            v = Real{1} / (Real{1} + std::exp(-v));
        } else {
            const Real e = std::exp(v);
            v = e / (Real{1} + e);
        }
    }
    return make_op<Real>(std::move(out), {a}, [](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const Real y = self.value[i];
            da[i] += self.grad[i] * y * (Real{1} - y);
        }
    });
}

template <typename Real>
Var<Real> add_row(const Var<Real>& x, const Var<Real>& bias) {
    const std::size_t t = x.rows(), d = x.cols();
    require(bias.size() == d, "add_row: bias " + shape_str(bias.shape()) + " vs rows of " + shape_str(x.shape()));
    Tensor<Real> out = x.value();
    const Real* b = bias.value().data();
    for (std::size_t r = 0; r < t; ++r) {
        Real* row = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += b[j];
    }
    return make_op<Real>(std::move(out), {x, bias}, [t, d](Node<Real>& self) {
        const Real* g = self.grad.data();
        if (Real* dx = pgrad(self, 0))
            for (std::size_t i = 0; i < t * d; ++i) dx[i] += g[i];
        if (Real* db = pgrad(self, 1))
            for (std::size_t r = 0; r < t; ++r)
                for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
    });
}

template <typename Real>
Var<Real> scale_rows(const Var<Real>& x, const Var<Real>& w) {
    const std::size_t t = x.rows(), d = x.cols();
    require(w.size() == t, "scale_rows: weights " + shape_str(w.shape()) + " vs " + shape_str(x.shape()));
    Tensor<Real> out = x.value();
    for (std::size_t r = 0; r < t; ++r) {
        const Real s = w.value()[r];
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= s;
    }
    return make_op<Real>(std::move(out), {x, w}, [t, d](Node<Real>& self) {
        const Real* g = self.grad.data();
        const auto& xv = pval(self, 0);
        const auto& wv = pval(self, 1);
        Real* dx = pgrad(self, 0);
        Real* dw = pgrad(self, 1);
        for (std::size_t r = 0; r < t; ++r) {
            Real acc{0};
            for (std::size_t j = 0; j < d; ++j) {
                if (dx) dx[r * d + j] += g[r * d + j] * wv[r];
                acc += g[r * d + j] * xv[r * d + j];
            }
            if (dw) dw[r] += acc;
        }
    });
}

// ---- reductions and losses ------------------------------------------------

template <typename Real>
Var<Real> sum(const Var<Real>& a) {
    Real acc{0};
    for (Real v : a.value().values()) acc += v;
    return make_op<Real>(Tensor<Real>::scalar(acc), {a}, [](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        const std::size_t n = self.parents[0]->value.size();
        for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[0];
    });
}

template <typename Real>
Var<Real> mean(const Var<Real>& a) {
    return scale(sum(a), Real{1} / static_cast<Real>(a.size()));
}

template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gain, const Var<Real>& bias, Real eps) {
    const std::size_t t = x.rows(), d = x.cols();
    require(d >= 1, "layer_norm: empty rows");
    require(gain.size() == d && bias.size() == d,
            "layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) + " vs " +
                shape_str(x.shape()));
    Tensor<Real> out(x.shape());
    std::vector<Real> xhat(t * d);
    std::vector<Real> inv_std(t);
    const Real* g = gain.value().data();
    const Real* b = bias.value().data();
    for (std::size_t r = 0; r < t; ++r) {
        const Real* row = x.value().data() + r * d;
        Real mu{0};
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<Real>(d);
        Real var{0};
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<Real>(d);
        const Real inv = Real{1} / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const Real xh = (row[j] - mu) * inv;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * g[j] + b[j];
        }
    }
    return make_op<Real>(std::move(out), {x, gain, bias},
                         [t, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Real>& self) {
                             const Real* gy = self.grad.data();
                             const Real* gv = pval(self, 1).data();
                             Real* dx = pgrad(self, 0);
                             Real* dg = pgrad(self, 1);
                             Real* db = pgrad(self, 2);
                             std::vector<Real> dxh(d);
                             for (std::size_t r = 0; r < t; ++r) {
                                 const Real* gr = gy + r * d;
                                 const Real* xr = xhat.data() + r * d;
                                 if (dg)
                                     for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * xr[j];
                                 if (db)
                                     for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
                                 if (!dx) continue;
                                 Real s1{0}, s2{0};
                                 for (std::size_t j = 0; j < d; ++j) {
                                     dxh[j] = gr[j] * gv[j];
                                     s1 += dxh[j];
                                     s2 += dxh[j] * xr[j];
                                 }
                                 const Real scale_r = inv_std[r] / static_cast<Real>(d);
                                 for (std::size_t j = 0; j < d; ++j)
                                     dx[r * d + j] +=
                                         scale_r * (static_cast<Real>(d) * dxh[j] - s1 - xr[j] * s2);
                             }
                         });
}

template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::span<const std::uint32_t> targets) {
    const std::size_t n = logits.rows(), k = logits.cols();
    require(targets.size() == n, "softmax_cross_entropy: " + std::to_string(targets.size()) +
                                     " targets for logits " + shape_str(logits.shape()));
    for (std::size_t i = 0; i < n; ++i)
        if (targets[i] >= k)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " outside [0, " +
                             std::to_string(k) + ")");
    std::vector<Real> prob(n * k);
    Real total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const Real* row = logits.value().data() + i * k;
        const Real mx = *std::max_element(row, row + k);
        Real z{0};
        for (std::size_t j = 0; j < k; ++j) {
            prob[i * k + j] = std::exp(row[j] - mx);
            z += prob[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) prob[i * k + j] /= z;
        total += (mx + std::log(z)) - row[targets[i]];
    }
    std::vector<std::uint32_t> tg(targets.begin(), targets.end());
    return make_op<Real>(Tensor<Real>::scalar(total / static_cast<Real>(n)), {logits},
                         [n, k, prob = std::move(prob), tg = std::move(tg)](Node<Real>& self) {
                             Real* dl = pgrad(self, 0);
                             const Real g = self.grad[0] / static_cast<Real>(n);
                             for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < k; ++j) dl[i * k + j] += g * prob[i * k + j];
                                 dl[i * k + tg[i]] -= g;
                             }
                         });
}

template <typename Real>
Var<Real> smooth_l1(const Var<Real>& a, const Var<Real>& b, Real beta) {
    if (a.shape() != b.shape())
        throw DimensionError("smooth_l1: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (!(beta > Real{0})) throw ConfigError("smooth_l1: beta must be positive");
    const std::size_t n = a.size();
    Real total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const Real d = a.value()[i] - b.value()[i];
        const Real ad = std::abs(d);
        total += ad < beta ? Real(0.5) * d * d / beta : ad - Real(0.5) * beta;
    }
    return make_op<Real>(Tensor<Real>::scalar(total / static_cast<Real>(n)), {a, b}, [n, beta](Node<Real>& self) {
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        Real* da = pgrad(self, 0);
        Real* db = pgrad(self, 1);
        const Real g = self.grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real d = av[i] - bv[i];
            Real dd;
            if (std::abs(d) < beta)
                dd = d / beta;
            else
                dd = d > Real{0} ? Real{1} : Real{-1};
            if (da) da[i] += g * dd;
            if (db) db[i] -= g * dd;
        }
    });
}

template <typename Real>
Var<Real> mse(const Var<Real>& a, const Var<Real>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.size();
    Real total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const Real d = a.value()[i] - b.value()[i];
        total += d * d;
    }
    return make_op<Real>(Tensor<Real>::scalar(total / static_cast<Real>(n)), {a, b}, [n](Node<Real>& self) {
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        Real* da = pgrad(self, 0);
        Real* db = pgrad(self, 1);
        const Real g = Real{2} * self.grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real d = av[i] - bv[i];
            if (da) da[i] += g * d;
            if (db) db[i] -= g * d;
        }
    });
}

template <typename Real>
Var<Real> mean_sq_row_dist(const Var<Real>& a, const Var<Real>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mean_sq_row_dist: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t n = a.size();
    const Real rows = static_cast<Real>(a.rows());
    Real total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const Real d = a.value()[i] - b.value()[i];
        total += d * d;
    }
    return make_op<Real>(Tensor<Real>::scalar(total / rows), {a, b}, [n, rows](Node<Real>& self) {
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        Real* da = pgrad(self, 0);
        Real* db = pgrad(self, 1);
        const Real g = Real{2} * self.grad[0] / rows;
        for (std::size_t i = 0; i < n; ++i) {
            const Real d = av[i] - bv[i];
            if (da) da[i] += g * d;
            if (db) db[i] -= g * d;
        }
    });
}

// ---- gradient routing -----------------------------------------------------

template <typename Real>
Var<Real> stop_gradient(const Var<Real>& a) {
    return constant(a.value());
}

template <typename Real>
Var<Real> pass_through(const Var<Real>& a, Tensor<Real> value) {
    if (value.shape() != a.shape())
        throw DimensionError("pass_through: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(value.shape()));
    return make_op<Real>(std::move(value), {a}, [](Node<Real>& self) {
        Real* da = pgrad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
    });
}

// ---- row/column plumbing --------------------------------------------------

template <typename Real>
Var<Real> segment_sum(const Var<Real>& x, std::span<const std::uint32_t> ids, std::size_t num_segments) {
    const std::size_t t = x.rows(), d = x.cols();
    require(ids.size() == t, "segment_sum: " + std::to_string(ids.size()) + " ids for " + shape_str(x.shape()));
    Tensor<Real> out(Shape{num_segments, d});
    for (std::size_t r = 0; r < t; ++r) {
        if (ids[r] >= num_segments)
            throw IndexError("segment_sum: id " + std::to_string(ids[r]) + " >= " + std::to_string(num_segments));
        for (std::size_t j = 0; j < d; ++j) out[ids[r] * d + j] += x.value()[r * d + j];
    }
    std::vector<std::uint32_t> id(ids.begin(), ids.end());
    return make_op<Real>(std::move(out), {x}, [t, d, id = std::move(id)](Node<Real>& self) {
        Real* dx = pgrad(self, 0);
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += self.grad[id[r] * d + j];
    });
}

template <typename Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const std::uint32_t> index) {
    const std::size_t n = index.size(), d = table.cols(), k = table.rows();
    Tensor<Real> out(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        if (index[i] >= k)
            throw IndexError("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(k));
        std::copy_n(table.value().data() + index[i] * d, d, out.data() + i * d);
    }
    std::vector<std::uint32_t> idx(index.begin(), index.end());
    return make_op<Real>(std::move(out), {table}, [n, d, idx = std::move(idx)](Node<Real>& self) {
        Real* dt = pgrad(self, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) dt[idx[i] * d + j] += self.grad[i * d + j];
    });
}

template <typename Real>
Var<Real> slice_rows(const Var<Real>& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.cols();
    if (begin > end || end > x.rows())
        throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
    Tensor<Real> out(Shape{end - begin, d});
    std::copy_n(x.value().data() + begin * d, (end - begin) * d, out.data());
    return make_op<Real>(std::move(out), {x}, [begin, d](Node<Real>& self) {
        Real* dx = pgrad(self, 0) + begin * d;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    });
}

template <typename Real>
Var<Real> slice_cols(const Var<Real>& x, std::size_t begin, std::size_t end) {
    const std::size_t t = x.rows(), d = x.cols(), w = end - begin;
    if (begin > end || end > d)
        throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
    Tensor<Real> out(Shape{t, w});
    for (std::size_t r = 0; r < t; ++r) std::copy_n(x.value().data() + r * d + begin, w, out.data() + r * w);
    return make_op<Real>(std::move(out), {x}, [t, d, w, begin](Node<Real>& self) {
        Real* dx = pgrad(self, 0);
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t j = 0; j < w; ++j) dx[r * d + begin + j] += self.grad[r * w + j];
    });
}

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.cols() == d, "concat_rows: column mismatch " + shape_str(p.shape()) + " vs " +
                                   shape_str(parts[0].shape()));
        total += p.rows();
    }
    Tensor<Real> out(Shape{total, d});
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy_n(p.value().data(), p.size(), out.data() + off);
        off += p.size();
    }
    return make_op<Real>(std::move(out), std::vector<Var<Real>>(parts.begin(), parts.end()),
                         [offsets = std::move(offsets)](Node<Real>& self) {
                             for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                 Real* dp = pgrad(self, i);
                                 if (!dp) continue;
                                 const std::size_t n = self.parents[i]->value.size();
                                 for (std::size_t j = 0; j < n; ++j) dp[j] += self.grad[offsets[i] + j];
                             }
                         });
}

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t t = parts[0].rows();
    std::size_t width = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        require(p.rows() == t, "concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                                   shape_str(parts[0].shape()));
        offsets.push_back(width);
        width += p.cols();
    }
    Tensor<Real> out(Shape{t, width});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::size_t w = parts[i].cols();
        for (std::size_t r = 0; r < t; ++r)
            std::copy_n(parts[i].value().data() + r * w, w, out.data() + r * width + offsets[i]);
    }
    return make_op<Real>(std::move(out), std::vector<Var<Real>>(parts.begin(), parts.end()),
                         [t, width, offsets = std::move(offsets)](Node<Real>& self) {
                             for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                 Real* dp = pgrad(self, i);
                                 if (!dp) continue;
                                 const std::size_t w = self.parents[i]->value.cols();
                                 for (std::size_t r = 0; r < t; ++r)
                                     for (std::size_t j = 0; j < w; ++j)
                                         dp[r * w + j] += self.grad[r * width + offsets[i] + j];
                             }
                         });
}

template <typename Real>
Var<Real> masked_softmax_rows(const Var<Real>& x, bool causal, std::span<const std::uint8_t> key_mask) {
    const std::size_t tq = x.rows(), tk = x.cols();
    require(key_mask.empty() || key_mask.size() == tk,
            "masked_softmax_rows: key mask of " + std::to_string(key_mask.size()) + " for " + shape_str(x.shape()));
    Tensor<Real> out(Shape{tq, tk});
    for (std::size_t i = 0; i < tq; ++i) {
        const Real* row = x.value().data() + i * tk;
        Real* y = out.data() + i * tk;
        auto admissible = [&](std::size_t j) { return !(causal && j > i) && (key_mask.empty() || key_mask[j]); };
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < tk; ++j)
            if (admissible(j)) mx = std::max(mx, row[j]);
        if (mx == -std::numeric_limits<Real>::infinity()) continue;
        Real z{0};
        for (std::size_t j = 0; j < tk; ++j)
            if (admissible(j)) {
                y[j] = std::exp(row[j] - mx);
                z += y[j];
            }
        for (std::size_t j = 0; j < tk; ++j) y[j] /= z;
    }
    return make_op<Real>(std::move(out), {x}, [tq, tk](Node<Real>& self) {
        Real* dx = pgrad(self, 0);
        for (std::size_t i = 0; i < tq; ++i) {
            const Real* y = self.value.data() + i * tk;
            const Real* g = self.grad.data() + i * tk;
            Real dot{0};
            for (std::size_t j = 0; j < tk; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < tk; ++j) dx[i * tk + j] += y[j] * (g[j] - dot);
        }
    });
}

// ---- transformer block ----------------------------------------------------

template <typename Real>
Var<Real> attention_block(const Var<Real>& x, const AttentionParams<Real>& p, bool causal,
                          std::span<const std::uint8_t> key_mask) {
    const std::size_t d = x.cols();
    if (p.heads == 0 || d % p.heads != 0)
        throw ConfigError("attention_block: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(p.heads) + " heads");
    require(p.wq.rows() == d, "attention_block: projection " + shape_str(p.wq.shape()) + " vs input " +
                                  shape_str(x.shape()));
    const std::size_t dh = d / p.heads;
    const Real inv_sqrt = Real{1} / std::sqrt(static_cast<Real>(dh));

    const Var<Real> a = layer_norm(x, p.ln1_gain, p.ln1_bias);
    const Var<Real> q = add_row(matmul(a, p.wq), p.bq);
    const Var<Real> k = add_row(matmul(a, p.wk), p.bk);
    const Var<Real> v = add_row(matmul(a, p.wv), p.bv);

    std::vector<Var<Real>> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t lo = h * dh, hi = lo + dh;
        const Var<Real> qh = p.heads == 1 ? q : slice_cols(q, lo, hi);
        const Var<Real> kh = p.heads == 1 ? k : slice_cols(k, lo, hi);
        const Var<Real> vh = p.heads == 1 ? v : slice_cols(v, lo, hi);
        const Var<Real> attn = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), causal, key_mask);
        heads.push_back(matmul(attn, vh));
    }
    const Var<Real> mixed = p.heads == 1 ? heads[0] : concat_cols<Real>(heads);
    const Var<Real> h1 = add(x, add_row(matmul(mixed, p.wo), p.bo));

    const Var<Real> b = layer_norm(h1, p.ln2_gain, p.ln2_bias);
    const Var<Real> ff = add_row(matmul(relu(add_row(matmul(b, p.w1), p.b1)), p.w2), p.b2);
    return add(h1, ff);
}

// ---- instantiation --------------------------------------------------------

#define T2S_INSTANTIATE_AD(R)                                                                           \
    template class Var<R>;                                                                              \
    template void backward<R>(const Var<R>&);                                                           \
    template Var<R> matmul<R>(const Var<R>&, const Var<R>&);                                            \
    template Var<R> matmul_nt<R>(const Var<R>&, const Var<R>&);                                         \
    template Var<R> transpose<R>(const Var<R>&);                                                        \
    template Var<R> add<R>(const Var<R>&, const Var<R>&);                                               \
    template Var<R> sub<R>(const Var<R>&, const Var<R>&);                                               \
    template Var<R> mul<R>(const Var<R>&, const Var<R>&);                                               \
    template Var<R> scale<R>(const Var<R>&, R);                                                         \
    template Var<R> add_scalar<R>(const Var<R>&, R);                                                    \
    template Var<R> relu<R>(const Var<R>&);                                                             \
    template Var<R> sigmoid<R>(const Var<R>&);                                                          \
    template Var<R> add_row<R>(const Var<R>&, const Var<R>&);                                           \
    template Var<R> scale_rows<R>(const Var<R>&, const Var<R>&);                                        \
    template Var<R> sum<R>(const Var<R>&);                                                              \
    template Var<R> mean<R>(const Var<R>&);                                                             \
    template Var<R> layer_norm<R>(const Var<R>&, const Var<R>&, const Var<R>&, R);                      \
    template Var<R> softmax_cross_entropy<R>(const Var<R>&, std::span<const std::uint32_t>);            \
    template Var<R> smooth_l1<R>(const Var<R>&, const Var<R>&, R);                                      \
    template Var<R> mse<R>(const Var<R>&, const Var<R>&);                                               \
    template Var<R> mean_sq_row_dist<R>(const Var<R>&, const Var<R>&);                                  \
    template Var<R> stop_gradient<R>(const Var<R>&);                                                    \
    template Var<R> pass_through<R>(const Var<R>&, Tensor<R>);                                          \
    template Var<R> segment_sum<R>(const Var<R>&, std::span<const std::uint32_t>, std::size_t);         \
    template Var<R> gather_rows<R>(const Var<R>&, std::span<const std::uint32_t>);                      \
    template Var<R> slice_rows<R>(const Var<R>&, std::size_t, std::size_t);                             \
    template Var<R> slice_cols<R>(const Var<R>&, std::size_t, std::size_t);                             \
    template Var<R> concat_rows<R>(std::span<const Var<R>>);                                            \
    template Var<R> concat_cols<R>(std::span<const Var<R>>);                                            \
    template Var<R> masked_softmax_rows<R>(const Var<R>&, bool, std::span<const std::uint8_t>);         \
    template Var<R> attention_block<R>(const Var<R>&, const AttentionParams<R>&, bool,                  \
                                       std::span<const std::uint8_t>);

T2S_INSTANTIATE_AD(float)
T2S_INSTANTIATE_AD(double)

#undef T2S_INSTANTIATE_AD

}  // namespace t2s::ad
