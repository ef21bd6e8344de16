#include "t2s/nn.hpp"

#include <cmath>
#include <numbers>

namespace t2s::nn {

template <typename Real>
ad::Var<Real> ParamSet<Real>::add(std::string name, Tensor<Real> init) {
    for (const auto& [n, v] : entries_)
        if (n == name) throw ConfigError("duplicate parameter name " + name);
    ad::Var<Real> leaf(std::move(init), true);
    entries_.emplace_back(std::move(name), leaf);
    return leaf;
}

template <typename Real>
void ParamSet<Real>::zero_grad() {
    for (auto& [n, v] : entries_) v.zero_grad();
}

template <typename Real>
std::size_t ParamSet<Real>::num_values() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.size();
    return n;
}

template <typename Real>
ad::Var<Real>* ParamSet<Real>::find(const std::string& name) {
    for (auto& [n, v] : entries_)
        if (n == name) return &v;
    return nullptr;
}

template <typename Real>
void ParamSet<Real>::accumulate_grads_from(const ParamSet& other) {
    if (other.entries_.size() != entries_.size()) throw ContractError("accumulate_grads_from: layout mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& dst = entries_[i].second.node()->grad;
        const auto& src = other.entries_[i].second.grad();
        entries_[i].second.node()->ensure_grad();
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
}

template <typename Real>
double ParamSet<Real>::grad_norm() const {
    double acc = 0.0;
    for (const auto& [n, v] : entries_)
        for (Real g : v.grad().values()) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
}

template <typename Real>
void ParamSet<Real>::scale_grads(Real s) {
    for (auto& [n, v] : entries_) {
        v.node()->ensure_grad();
        for (auto& g : v.node()->grad.values()) g *= s;
    }
}

template <typename Real>
Tensor<Real> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor<Real> t(Shape{fan_in, fan_out});
    for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
    return t;
}

template <typename Real>
Linear<Real> make_linear(ParamSet<Real>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         double gain) {
    Linear<Real> l;
    l.weight = ps.add(name + ".weight", xavier_uniform<Real>(in, out, rng, gain));
    l.bias = ps.add(name + ".bias", Tensor<Real>(Shape{out}));
    return l;
}

template <typename Real>
LayerNorm<Real> make_layer_norm(ParamSet<Real>& ps, const std::string& name, std::size_t d) {
    return {ps.add(name + ".gain", Tensor<Real>(Shape{d}, Real{1})), ps.add(name + ".bias", Tensor<Real>(Shape{d}))};
}

template <typename Real>
ad::AttentionParams<Real> make_attention(ParamSet<Real>& ps, const std::string& name, std::size_t d,
                                         std::size_t heads, std::size_t ff, Rng& rng) {
    if (heads == 0 || d % heads != 0)
        throw ConfigError(name + ": width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                          " heads");
    ad::AttentionParams<Real> p;
    p.heads = heads;
    auto ln1 = make_layer_norm(ps, name + ".ln1", d);
    p.ln1_gain = ln1.gain;
    p.ln1_bias = ln1.bias;
    auto q = make_linear(ps, name + ".q", d, d, rng);
    auto k = make_linear(ps, name + ".k", d, d, rng);
    auto v = make_linear(ps, name + ".v", d, d, rng);
    auto o = make_linear(ps, name + ".o", d, d, rng);
    p.wq = q.weight, p.bq = q.bias;
    p.wk = k.weight, p.bk = k.bias;
    p.wv = v.weight, p.bv = v.bias;
    p.wo = o.weight, p.bo = o.bias;
    auto ln2 = make_layer_norm(ps, name + ".ln2", d);
    p.ln2_gain = ln2.gain;
    p.ln2_bias = ln2.bias;
    auto f1 = make_linear(ps, name + ".ff1", d, ff, rng);
    auto f2 = make_linear(ps, name + ".ff2", ff, d, rng);
    p.w1 = f1.weight, p.b1 = f1.bias;
    p.w2 = f2.weight, p.b2 = f2.bias;
    return p;
}

template <typename Real>
Tensor<Real> positional_encoding(std::size_t rows, std::size_t d, std::size_t offset) {
    Tensor<Real> pe(Shape{rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(r + offset);
        for (std::size_t j = 0; j < d; ++j) {
            const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
            const double angle = pos / std::pow(10000.0, expo);
            pe.at(r, j) = static_cast<Real>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

template <typename Real>
void AdamW<Real>::step(ParamSet<Real>& params, double lr) {
    auto& entries = params.entries();
    if (m_.empty()) {
        for (const auto& [n, v] : entries) {
            m_.emplace_back(v.size(), 0.0);
            v_.emplace_back(v.size(), 0.0);
        }
    }
    if (m_.size() != entries.size()) throw ContractError("AdamW: parameter layout changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& var = entries[i].second;
        auto& w = var.mutable_value();
        const auto& g = var.grad();
        const bool decay = w.rank() >= 2;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            double wj = w[j];
            if (decay) wj -= lr * cfg_.weight_decay * wj;
            wj -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
            w[j] = static_cast<Real>(wj);
        }
    }
}

double warmup_cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak, double floor_ratio) {
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return peak;
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return peak * (floor_ratio + (1.0 - floor_ratio) * cosine);
}

double warmup_linear_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak) {
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return peak;
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
    return peak * (1.0 - progress);
}

#define T2S_INSTANTIATE_NN(R)                                                                                   \
    template class ParamSet<R>;                                                                                 \
    template class AdamW<R>;                                                                                    \
    template Tensor<R> xavier_uniform<R>(std::size_t, std::size_t, Rng&, double);                               \
    template Linear<R> make_linear<R>(ParamSet<R>&, const std::string&, std::size_t, std::size_t, Rng&, double); \
    template LayerNorm<R> make_layer_norm<R>(ParamSet<R>&, const std::string&, std::size_t);                    \
    template ad::AttentionParams<R> make_attention<R>(ParamSet<R>&, const std::string&, std::size_t,            \
                                                      std::size_t, std::size_t, Rng&);                          \
    template Tensor<R> positional_encoding<R>(std::size_t, std::size_t, std::size_t);

T2S_INSTANTIATE_NN(float)
T2S_INSTANTIATE_NN(double)

#undef T2S_INSTANTIATE_NN

}  // namespace t2s::nn
