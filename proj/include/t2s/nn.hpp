#pragma once

// Parameter containers, layer builders, positional encoding and the AdamW
// optimizer shared by both models.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "t2s/autodiff.hpp"
#include "t2s/tensor.hpp"

namespace t2s::nn {

using Rng = std::mt19937_64;

// Ordered, named collection of trainable leaves. Order is registration order
// and is what checkpoints and the optimizer iterate over.
template <typename Real>
class ParamSet {
public:
    ad::Var<Real> add(std::string name, Tensor<Real> init);

    void zero_grad();
    std::size_t num_values() const;
    const std::vector<std::pair<std::string, ad::Var<Real>>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, ad::Var<Real>>>& entries() { return entries_; }
    ad::Var<Real>* find(const std::string& name);

    // Adds every gradient of `other` (same layout) into this set's gradients.
    void accumulate_grads_from(const ParamSet& other);
    double grad_norm() const;
    void scale_grads(Real s);

private:
    std::vector<std::pair<std::string, ad::Var<Real>>> entries_;
};

template <typename Real>
Tensor<Real> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0);

template <typename Real>
struct Linear {
    ad::Var<Real> weight;  // [in × out]
    ad::Var<Real> bias;    // [out]

    ad::Var<Real> operator()(const ad::Var<Real>& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

template <typename Real>
Linear<Real> make_linear(ParamSet<Real>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         double gain = 1.0);

template <typename Real>
struct LayerNorm {
    ad::Var<Real> gain, bias;

    ad::Var<Real> operator()(const ad::Var<Real>& x) const { return ad::layer_norm(x, gain, bias); }
};

template <typename Real>
LayerNorm<Real> make_layer_norm(ParamSet<Real>& ps, const std::string& name, std::size_t d);

template <typename Real>
ad::AttentionParams<Real> make_attention(ParamSet<Real>& ps, const std::string& name, std::size_t d,
                                         std::size_t heads, std::size_t ff, Rng& rng);

// Sinusoidal encoding: PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(…).
// Rows are positions offset, offset+1, …
template <typename Real>
Tensor<Real> positional_encoding(std::size_t rows, std::size_t d, std::size_t offset = 0);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay applies to matrices only; vectors (biases, norm
// gains) are left undecayed.
template <typename Real>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamSet<Real>& params, double lr);
    std::uint64_t steps() const { return t_; }

private:
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Linear warm-up to peak, then cosine decay to floor_ratio·peak at total.
double warmup_cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak,
                        double floor_ratio = 0.0);
// Linear warm-up to peak, then linear decay to zero at total.
double warmup_linear_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak);

}  // namespace t2s::nn
