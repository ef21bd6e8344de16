#include "t2s/dynamic_sampler.hpp"

#include <cmath>

namespace t2s::dyn {

template <typename Real>
InfoMlp<Real> make_info_mlp(nn::ParamSet<Real>& ps, const std::string& name, std::size_t d_h, nn::Rng& rng) {
    return {nn::make_linear(ps, name + ".hidden", d_h, d_h, rng), nn::make_linear(ps, name + ".out", d_h, 1, rng)};
}

template <typename Real>
ad::Var<Real> info_weights(const ad::Var<Real>& h, const InfoMlp<Real>& mlp) {
    if (h.shape().size() != 2 || h.cols() != mlp.hidden.weight.rows())
        throw DimensionError("info_weights: input " + shape_str(h.shape()) + " vs MLP width " +
                             std::to_string(mlp.hidden.weight.rows()));
    const ad::Var<Real> inner = ad::add(ad::relu(mlp.hidden(h)), h);
    return ad::sigmoid(mlp.out(inner));
}

template <typename Real>
std::vector<std::uint32_t> segment(std::span<const Real> weights, double threshold) {
    if (weights.empty()) throw EmptyInputError("segment: no frames");
    if (!(threshold > 0.0)) throw ConfigError("segment: threshold must be positive");
    std::vector<std::uint32_t> s(weights.size());
    double running = 0.0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
        running += static_cast<double>(weights[t]);
        s[t] = static_cast<std::uint32_t>(std::floor(running / threshold));
    }
    return s;
}

Segmentation compact(std::span<const std::uint32_t> markers) {
    Segmentation seg;
    seg.ids.resize(markers.size());
    for (std::size_t t = 0; t < markers.size(); ++t) {
        if (t > 0 && markers[t] < markers[t - 1]) throw ContractError("compact: markers must be non-decreasing");
        if (t == 0 || markers[t] != markers[t - 1]) seg.durations.push_back(0);
        seg.ids[t] = static_cast<std::uint32_t>(seg.durations.size() - 1);
        ++seg.durations.back();
    }
    return seg;
}

template <typename Real>
Downsampled<Real> downsample(const ad::Var<Real>& h, const ad::Var<Real>& weights,
                             std::span<const std::uint32_t> markers) {
    if (markers.size() != h.rows() || weights.size() != h.rows())
        throw DimensionError("downsample: " + std::to_string(markers.size()) + " markers and " +
                             std::to_string(weights.size()) + " weights for " + shape_str(h.shape()));
    Downsampled<Real> out;
    out.segments = compact(markers);
    out.latents = ad::segment_sum(ad::scale_rows(h, weights), out.segments.ids, out.segments.count());
    return out;
}

namespace {

std::vector<std::uint32_t> expand_index(std::size_t rows, std::span<const std::uint32_t> durations) {
    if (durations.size() != rows)
        throw DimensionError("length_regulate: " + std::to_string(durations.size()) + " durations for " +
                             std::to_string(rows) + " rows");
    std::vector<std::uint32_t> idx;
    for (std::size_t s = 0; s < durations.size(); ++s) {
        if (durations[s] == 0) throw DurationError("length_regulate: duration of row " + std::to_string(s) + " is 0");
        idx.insert(idx.end(), durations[s], static_cast<std::uint32_t>(s));
    }
    return idx;
}

}  // namespace

template <typename Real>
Tensor<Real> length_regulate(const Tensor<Real>& z, std::span<const std::uint32_t> durations) {
    const std::size_t rows = z.rank() == 2 ? z.rows() : (z.size() ? 1 : 0);
    const auto idx = expand_index(rows, durations);
    const std::size_t d = z.cols();
    Tensor<Real> out(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(z.data() + idx[i] * d, d, out.data() + i * d);
    return out;
}

template <typename Real>
ad::Var<Real> length_regulate(const ad::Var<Real>& z, std::span<const std::uint32_t> durations) {
    const auto idx = expand_index(z.rows(), durations);
    return ad::gather_rows(z, std::span<const std::uint32_t>(idx));
}

template <typename Real>
ad::Var<Real> budget_loss(const ad::Var<Real>& weights, std::size_t frames, double rate) {
    if (!(rate > 0.0)) throw ConfigError("budget_loss: rate must be positive");
    const Real allowance = static_cast<Real>(static_cast<double>(frames) / rate);
    return ad::relu(ad::add_scalar(ad::sum(weights), -allowance));
}

template <typename Real>
ad::Var<Real> budget_loss(std::span<const ad::Var<Real>> weights, std::span<const std::size_t> frames, double rate) {
    if (weights.empty() || weights.size() != frames.size())
        throw DimensionError("budget_loss: batch of " + std::to_string(weights.size()) + " weights and " +
                             std::to_string(frames.size()) + " lengths");
    std::vector<ad::Var<Real>> terms;
    for (std::size_t i = 0; i < weights.size(); ++i) terms.push_back(budget_loss(weights[i], frames[i], rate));
    return ad::mean(ad::concat_rows<Real>(terms));
}

#define T2S_INSTANTIATE_DYN(R)                                                                                    \
    template InfoMlp<R> make_info_mlp<R>(nn::ParamSet<R>&, const std::string&, std::size_t, nn::Rng&);            \
    template ad::Var<R> info_weights<R>(const ad::Var<R>&, const InfoMlp<R>&);                                    \
    template std::vector<std::uint32_t> segment<R>(std::span<const R>, double);                                   \
    template Downsampled<R> downsample<R>(const ad::Var<R>&, const ad::Var<R>&, std::span<const std::uint32_t>);  \
    template Tensor<R> length_regulate<R>(const Tensor<R>&, std::span<const std::uint32_t>);                      \
    template ad::Var<R> length_regulate<R>(const ad::Var<R>&, std::span<const std::uint32_t>);                    \
    template ad::Var<R> budget_loss<R>(const ad::Var<R>&, std::size_t, double);                                   \
    template ad::Var<R> budget_loss<R>(std::span<const ad::Var<R>>, std::span<const std::size_t>, double);

T2S_INSTANTIATE_DYN(float)
T2S_INSTANTIATE_DYN(double)

#undef T2S_INSTANTIATE_DYN

}  // namespace t2s::dyn
