#include "t2s/quantizer.hpp"

#include <algorithm>
#include <string>

#include "t2s/kernels.hpp"

namespace t2s::vq {

Codebook::Codebook(std::size_t size, std::size_t dim, double decay, double eps)
    : size_(size), dim_(dim), decay_(decay), eps_(eps) {
    if (size == 0 || dim == 0) throw ConfigError("codebook needs K >= 1 and d_c >= 1");
    set_decay(decay);
    codes_.assign(size * dim, 0.0);
    cluster_size_.assign(size, 1.0);
    embed_sum_.assign(size * dim, 0.0);
}

void Codebook::set_decay(double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
    decay_ = decay;
}

void Codebook::reset_code(std::size_t k, std::span<const double> v) {
    if (k >= size_) throw CodebookError("code index " + std::to_string(k) + " >= " + std::to_string(size_));
    if (v.size() != dim_) throw DimensionError("reset_code: vector of " + std::to_string(v.size()) + " vs d_c " +
                                               std::to_string(dim_));
    std::copy(v.begin(), v.end(), codes_.begin() + k * dim_);
    std::copy(v.begin(), v.end(), embed_sum_.begin() + k * dim_);
    cluster_size_[k] = 1.0;
}

double Codebook::smoothed_count(std::size_t k) const {
    double n = 0.0;
    for (double c : cluster_size_) n += c;
    return (cluster_size_[k] + eps_) / (n + static_cast<double>(size_) * eps_) * n;
}

void Codebook::restore(std::vector<double> codes, std::vector<double> cluster_size, std::vector<double> embed_sum,
                       bool initialized) {
    if (codes.size() != size_ * dim_ || embed_sum.size() != size_ * dim_ || cluster_size.size() != size_)
        throw DimensionError("codebook restore: state does not match K=" + std::to_string(size_) +
                             ", d_c=" + std::to_string(dim_));
    codes_ = std::move(codes);
    cluster_size_ = std::move(cluster_size);
    embed_sum_ = std::move(embed_sum);
    initialized_ = initialized;
}

void recompute_codes(Codebook& cb) {
    double n = 0.0;
    for (double c : cb.cluster_size_) n += c;
    const double denom = n + static_cast<double>(cb.size_) * cb.eps_;
    for (std::size_t k = 0; k < cb.size_; ++k) {
        const double smoothed = (cb.cluster_size_[k] + cb.eps_) / denom * n;
        if (!(smoothed > 0.0)) continue;
        for (std::size_t j = 0; j < cb.dim_; ++j) cb.codes_[k * cb.dim_ + j] = cb.embed_sum_[k * cb.dim_ + j] / smoothed;
    }
}

template <typename Real>
QuantizationResult<Real> quantize(const Tensor<Real>& z, const Codebook& cb) {
    const std::size_t n = z.rows(), d = z.cols();
    if (d != cb.dim())
        throw DimensionError("quantize: latent width " + std::to_string(d) + " vs codebook d_c " +
                             std::to_string(cb.dim()));
    QuantizationResult<Real> r;
    r.indices.resize(n);
    std::vector<double> dist2(n);
    kernels::nearest_rows(z.data(), n, cb.codes().data(), cb.size(), d, r.indices, dist2);
    r.quantized = Tensor<Real>(Shape{n, d});
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = cb.code(r.indices[i]);
        for (std::size_t j = 0; j < d; ++j) r.quantized[i * d + j] = static_cast<Real>(c[j]);
        total += dist2[i];
    }
    const double mean = n ? total / static_cast<double>(n) : 0.0;
    r.embed_loss = mean;
    r.commit_loss = mean;
    r.utilization = utilization(r.indices, cb.size());
    return r;
}

template <typename Real>
ad::Var<Real> straight_through(const ad::Var<Real>& z, const Tensor<Real>& quantized) {
    return ad::pass_through(z, quantized);
}

template <typename Real>
void ema_update(Codebook& cb, const Tensor<Real>& z, std::span<const std::uint32_t> indices) {
    const std::size_t k = cb.size(), d = cb.dim();
    if (z.rows() != indices.size() || (z.size() && z.cols() != d))
        throw DimensionError("ema_update: latents " + shape_str(z.shape()) + " with " +
                             std::to_string(indices.size()) + " assignments");
    std::vector<double> counts(k, 0.0);
    std::vector<double> sums(k * d, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::uint32_t c = indices[i];
        if (c >= k) throw CodebookError("ema_update: code index " + std::to_string(c) + " >= " + std::to_string(k));
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += static_cast<double>(z[i * d + j]);
    }
    const double lam = cb.decay();
    auto cluster = cb.ema_cluster_size();
    auto embed = cb.ema_embed_sum();
    for (std::size_t c = 0; c < k; ++c) {
        cluster[c] = lam * cluster[c] + (1.0 - lam) * counts[c];
        for (std::size_t j = 0; j < d; ++j) embed[c * d + j] = lam * embed[c * d + j] + (1.0 - lam) * sums[c * d + j];
    }
    cb.restore(cb.codes(), std::move(cluster), std::move(embed));
    recompute_codes(cb);
}

template <typename Real>
std::size_t restart_dead_codes(Codebook& cb, const Tensor<Real>& batch_z, double threshold, std::mt19937_64& rng) {
    const std::size_t n = batch_z.rows(), d = cb.dim();
    if (n == 0 || batch_z.size() == 0) throw EmptyInputError("restart_dead_codes: empty batch");
    if (batch_z.cols() != d)
        throw DimensionError("restart_dead_codes: latents " + shape_str(batch_z.shape()) + " vs d_c " +
                             std::to_string(d));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> v(d);
    std::size_t restarted = 0;
    for (std::size_t c = 0; c < cb.size(); ++c) {
        if (cb.ema_cluster_size()[c] >= threshold) continue;
        const std::size_t r = pick(rng);
        for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<double>(batch_z[r * d + j]);
        cb.reset_code(c, v);
        ++restarted;
    }
    return restarted;
}

template <typename Real>
void init_from_latents(Codebook& cb, const Tensor<Real>& latents, std::mt19937_64& rng) {
    const std::size_t n = latents.rows(), d = cb.dim();
    if (n == 0 || latents.size() == 0) throw EmptyInputError("codebook init: no latents");
    if (latents.cols() != d)
        throw DimensionError("codebook init: latents " + shape_str(latents.shape()) + " vs d_c " + std::to_string(d));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> v(d);
    for (std::size_t c = 0; c < cb.size(); ++c) {
        const std::size_t r = c < n ? order[c] : pick(rng);
        for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<double>(latents[r * d + j]);
        cb.reset_code(c, v);
    }
    cb.mark_initialized();
}

double utilization(std::span<const std::uint32_t> indices, std::size_t codebook_size) {
    if (codebook_size == 0) return 0.0;
    std::vector<char> used(codebook_size, 0);
    std::size_t distinct = 0;
    for (auto i : indices)
        if (i < codebook_size && !used[i]) {
            used[i] = 1;
            ++distinct;
        }
    return static_cast<double>(distinct) / static_cast<double>(codebook_size);
}

#define T2S_INSTANTIATE_VQ(R)                                                                               \
    template QuantizationResult<R> quantize<R>(const Tensor<R>&, const Codebook&);                          \
    template ad::Var<R> straight_through<R>(const ad::Var<R>&, const Tensor<R>&);                          \
    template void ema_update<R>(Codebook&, const Tensor<R>&, std::span<const std::uint32_t>);               \
    template std::size_t restart_dead_codes<R>(Codebook&, const Tensor<R>&, double, std::mt19937_64&);      \
    template void init_from_latents<R>(Codebook&, const Tensor<R>&, std::mt19937_64&);

T2S_INSTANTIATE_VQ(float)
T2S_INSTANTIATE_VQ(double)

#undef T2S_INSTANTIATE_VQ

}  // namespace t2s::vq
