#pragma once

// Information-weighted variable-rate downsampling and its inverse.
//
//   I = σ(W₃(relu(W₂H + B₂) + H) + B₃)          per-frame information weight
//   S_t = floor(cumsum(I)_t / O)                 segment marker per frame
//   Z_s = Σ_{t : S_t = s} H_t · I_t,  D_s = |{t : S_t = s}|
//
// Segmentation is piecewise constant in I, so gradients reach I only through
// the I_t factor of the weighted sum (and through the budget loss); the
// assignment of frames to segments is treated as a constant in backward.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2s/autodiff.hpp"
#include "t2s/nn.hpp"

namespace t2s::dyn {

template <typename Real>
struct InfoMlp {
    nn::Linear<Real> hidden;  // d_h → d_h
    nn::Linear<Real> out;     // d_h → 1
};

template <typename Real>
InfoMlp<Real> make_info_mlp(nn::ParamSet<Real>& ps, const std::string& name, std::size_t d_h, nn::Rng& rng);

// Per-frame weights of h[T×d_h] as a [T×1] column, each in (0, 1).
template <typename Real>
ad::Var<Real> info_weights(const ad::Var<Real>& h, const InfoMlp<Real>& mlp);

// Raw segment markers floor(cumsum(I)/O). Non-decreasing; may skip values
// when some I_t ≥ O.
template <typename Real>
std::vector<std::uint32_t> segment(std::span<const Real> weights, double threshold = 1.0);

struct Segmentation {
    std::vector<std::uint32_t> ids;        // per frame, compacted to 0..M-1
    std::vector<std::uint32_t> durations;  // per segment, Σ == T

    std::size_t count() const { return durations.size(); }
};

// Relabels raw markers to consecutive ids and counts frames per segment.
Segmentation compact(std::span<const std::uint32_t> markers);

template <typename Real>
struct Downsampled {
    ad::Var<Real> latents;  // [M × d_h]
    Segmentation segments;
};

template <typename Real>
Downsampled<Real> downsample(const ad::Var<Real>& h, const ad::Var<Real>& weights,
                             std::span<const std::uint32_t> markers);

// Row s of z repeated durations[s] times, in order.
template <typename Real>
Tensor<Real> length_regulate(const Tensor<Real>& z, std::span<const std::uint32_t> durations);
template <typename Real>
ad::Var<Real> length_regulate(const ad::Var<Real>& z, std::span<const std::uint32_t> durations);

// max(0, Σ I − T/R) for one sequence.
template <typename Real>
ad::Var<Real> budget_loss(const ad::Var<Real>& weights, std::size_t frames, double rate);

// Mean of the per-sequence budget terms.
template <typename Real>
ad::Var<Real> budget_loss(std::span<const ad::Var<Real>> weights, std::span<const std::size_t> frames, double rate);

}  // namespace t2s::dyn
