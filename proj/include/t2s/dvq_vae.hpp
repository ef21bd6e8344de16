#pragma once

// Dynamic VQ-VAE: encoder (frame embedding → transformer → information-
// weighted downsampling) → codebook → decoder (length regulator →
// transformer → output projection), its composite loss and training loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2s/autodiff.hpp"
#include "t2s/dynamic_sampler.hpp"
#include "t2s/nn.hpp"
#include "t2s/quantizer.hpp"

namespace t2s::dvq {

struct DvqVaeConfig {
    std::size_t input_dim = 8;
    std::size_t hidden_dim = 64;
    std::size_t code_dim = 64;
    std::size_t codebook_size = 64;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;

    double embed_weight = 0.1;   // weight of ‖Z − sg[Ẑ]‖²
    double commit_weight = 1.0;  // λ1
    double budget_weight = 0.5;  // λ2
    double aux_weight = 1.0;     // λ3
    double rate = 4.0;           // R
    double threshold = 1.0;      // O
    double smooth_l1_beta = 1.0;

    double learning_rate = 1e-3;
    double lr_floor = 0.05;  // cosine decays to lr_floor · learning_rate
    std::size_t warmup = 100;
    std::size_t iterations = 3000;
    std::size_t batch_size = 8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;

    double ema_decay = 0.99;
    bool restart_dead_codes = true;
    double restart_threshold = 1.0;

    // Full-size settings: width 512, 1024 codes, 6 layers, rate 12.
    static DvqVaeConfig full_scale();
    void validate() const;
};

struct EncodeResult {
    std::vector<std::uint32_t> code_indices;  // [M]
    std::vector<std::uint32_t> durations;     // [M], Σ == T
    std::vector<float> info_weights;          // [T]
    Tensor<float> latents;                    // [M × d_c], pre-quantization
};

struct Example {
    Tensor<float> frames;                  // [T × d]
    std::vector<std::uint32_t> condition;  // optional conditioning tokens
};

// λ3 hook: given input frames, reconstruction and condition tokens, returns a
// scalar auxiliary loss. The default contributes nothing.
using AuxiliaryLoss =
    std::function<ad::Var<float>(const Tensor<float>&, const ad::Var<float>&, std::span<const std::uint32_t>)>;

struct LossTerms {
    double total = 0.0;
    double reconstruction = 0.0;
    double embed = 0.0;
    double commit = 0.0;
    double budget = 0.0;
    double auxiliary = 0.0;
    double info_sum = 0.0;  // mean Σ I per sequence
    std::size_t frames = 0;
    std::size_t codes = 0;
    double utilization = 0.0;
};

struct BatchLoss {
    ad::Var<float> loss;
    LossTerms terms;
    // Pre-quantization latents and their code assignments over the batch,
    // stacked; used for the EMA update and dead-code restarts.
    Tensor<float> latents;
    std::vector<std::uint32_t> indices;
};

class DvqVae {
public:
    DvqVae(const DvqVaeConfig& cfg, std::uint64_t seed);

    const DvqVaeConfig& config() const { return cfg_; }
    nn::ParamSet<float>& params() { return params_; }
    const nn::ParamSet<float>& params() const { return params_; }
    vq::Codebook& codebook() { return codebook_; }
    const vq::Codebook& codebook() const { return codebook_; }

    EncodeResult encode(const Tensor<float>& frames) const;
    Tensor<float> decode(std::span<const std::uint32_t> codes, std::span<const std::uint32_t> durations) const;

    // Encoder half up to (and including) downsampling; differentiable.
    struct Encoded {
        ad::Var<float> hidden;   // H [T × d_h]
        ad::Var<float> weights;  // I [T × 1]
        ad::Var<float> latents;  // Z [M × d_c]
        dyn::Segmentation segments;
    };
    Encoded encode_graph(const Tensor<float>& frames) const;
    ad::Var<float> decode_graph(const ad::Var<float>& quantized, std::span<const std::uint32_t> durations) const;

    // Average over the batch of per-sequence L_re + L_embed + λ1·L_commit +
    // λ2·L_budget + λ3·L_aux.
    BatchLoss total_loss(std::span<const Example> batch, const AuxiliaryLoss& aux = {}) const;

private:
    DvqVaeConfig cfg_;
    nn::ParamSet<float> params_;
    vq::Codebook codebook_;

    nn::Linear<float> embed_;
    nn::LayerNorm<float> embed_norm_;
    std::vector<ad::AttentionParams<float>> encoder_;
    nn::LayerNorm<float> encoder_norm_;
    dyn::InfoMlp<float> info_;
    std::optional<nn::Linear<float>> to_code_;
    nn::Linear<float> decoder_in_;
    std::vector<ad::AttentionParams<float>> decoder_;
    nn::LayerNorm<float> decoder_norm_;
    nn::Linear<float> output_;
};

// L_re = smooth_l1(x, x_re) + smooth_l1(V(x), V(x_re)), V = frame differences.
// The velocity term is skipped when T == 1.
ad::Var<float> reconstruction_loss(const ad::Var<float>& x, const ad::Var<float>& x_re, float beta = 1.0f);

struct TrainRecord {
    std::size_t iteration = 0;
    LossTerms terms;
    double rate = 0.0;  // frames / codes over the batch
    double learning_rate = 0.0;
    std::size_t restarts = 0;
};

std::string to_json_line(const TrainRecord& r);

struct TrainOptions {
    std::uint64_t seed = 0;
    AuxiliaryLoss aux;
    // Called after every iteration; return false to stop early.
    std::function<bool(const TrainRecord&)> on_record;
};

struct TrainResult {
    DvqVae model;
    std::vector<TrainRecord> log;
};

TrainResult train(std::span<const Example> dataset, const DvqVaeConfig& cfg, const TrainOptions& opts);

// Reconstruction loss of decode(encode(x)) against x, averaged over the set.
double evaluate_reconstruction(const DvqVae& model, std::span<const Example> data);

}  // namespace t2s::dvq
