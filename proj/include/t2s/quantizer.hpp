#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "t2s/autodiff.hpp"
#include "t2s/tensor.hpp"

namespace t2s::vq {

// K code vectors with exponential-moving-average statistics. Codes and EMA
// state are kept in double regardless of the model precision so that EMA
// recursions are reproducible to the last bit.
class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t size, std::size_t dim, double decay = 0.99, double eps = 1e-5);

    std::size_t size() const { return size_; }
    std::size_t dim() const { return dim_; }
    double decay() const { return decay_; }
    double eps() const { return eps_; }
    void set_decay(double decay);

    std::span<const double> code(std::size_t k) const { return {codes_.data() + k * dim_, dim_}; }
    const std::vector<double>& codes() const { return codes_; }
    const std::vector<double>& ema_cluster_size() const { return cluster_size_; }
    const std::vector<double>& ema_embed_sum() const { return embed_sum_; }

    // Replaces code k by v and resets its EMA statistics to (1, v).
    void reset_code(std::size_t k, std::span<const double> v);

    // Laplace-smoothed cluster size used to turn EMA sums into code vectors:
    //   (N_k + eps) / (n + K·eps) · n,  n = Σ_j N_j.
    double smoothed_count(std::size_t k) const;

    // Overwrites all state; used by checkpoint loading.
    void restore(std::vector<double> codes, std::vector<double> cluster_size, std::vector<double> embed_sum,
                 bool initialized = true);

    bool initialized() const { return initialized_; }
    void mark_initialized() { initialized_ = true; }

private:
    friend void recompute_codes(Codebook&);

    std::size_t size_ = 0;
    std::size_t dim_ = 0;
    double decay_ = 0.99;
    double eps_ = 1e-5;
    bool initialized_ = false;
    std::vector<double> codes_;         // [K × dim]
    std::vector<double> cluster_size_;  // [K]
    std::vector<double> embed_sum_;     // [K × dim]
};

// codes[k] = embed_sum[k] / smoothed_count(k) for every k with a positive
// smoothed count.
void recompute_codes(Codebook& cb);

template <typename Real>
struct QuantizationResult {
    std::vector<std::uint32_t> indices;
    Tensor<Real> quantized;  // [N × d_c], row i == codes[indices[i]]
    double embed_loss = 0.0;   // mean_i ‖z_i − sg(ẑ_i)‖²
    double commit_loss = 0.0;  // mean_i ‖sg(z_i) − ẑ_i‖²
    double utilization = 0.0;  // distinct indices / K
};

// Nearest code per row of z, lowest index on ties.
template <typename Real>
QuantizationResult<Real> quantize(const Tensor<Real>& z, const Codebook& cb);

// Forward value is `quantized`; the gradient reaches z unchanged.
template <typename Real>
ad::Var<Real> straight_through(const ad::Var<Real>& z, const Tensor<Real>& quantized);

// One EMA step over the assignments of a batch, then codes are recomputed:
//   N_k ← λ·N_k + (1−λ)·count_k,   m_k ← λ·m_k + (1−λ)·Σ_{i: idx_i = k} z_i.
template <typename Real>
void ema_update(Codebook& cb, const Tensor<Real>& z, std::span<const std::uint32_t> indices);

// Every code whose EMA cluster size is below threshold is replaced by a
// uniformly drawn row of batch_z. Returns the number of codes restarted.
template <typename Real>
std::size_t restart_dead_codes(Codebook& cb, const Tensor<Real>& batch_z, double threshold, std::mt19937_64& rng);

// Initializes codes from rows sampled (with replacement when there are fewer
// rows than codes) from the first batch of latents.
template <typename Real>
void init_from_latents(Codebook& cb, const Tensor<Real>& latents, std::mt19937_64& rng);

double utilization(std::span<const std::uint32_t> indices, std::size_t codebook_size);

}  // namespace t2s::vq
