#pragma once

// Stage 2: a causal code transformer over [condition tokens; codes] that
// predicts the next code (or End), and a causal duration transformer that
// predicts each code's duration.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "t2s/autodiff.hpp"
#include "t2s/nn.hpp"

namespace t2s::gpt {

struct GptConfig {
    std::size_t vocab_size = 16;     // condition tokens
    std::size_t codebook_size = 64;  // K; End token id is K
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t code_layers = 2;
    std::size_t duration_layers = 1;
    double dropout = 0.0;  // only 0 is supported
    std::size_t max_condition = 16;
    std::size_t max_codes = 48;
    std::size_t max_duration = 32;  // duration embedding buckets 1..max_duration, plus overflow

    double learning_rate = 1e-3;
    double lr_floor = 0.05;
    std::size_t warmup = 100;
    std::size_t iterations = 2000;
    std::size_t batch_size = 16;
    double weight_decay = 0.01;
    double grad_clip = 1.0;

    std::uint32_t end_token() const { return static_cast<std::uint32_t>(codebook_size); }
    static GptConfig full_scale();
    void validate() const;
};

struct GptExample {
    std::vector<std::uint32_t> condition;  // [N_y]
    std::vector<std::uint32_t> codes;      // [M], no End
    std::vector<std::uint32_t> durations;  // [M]
};

struct Forward {
    ad::Var<float> hidden;     // H_code [(N_y + M) × d_model]
    ad::Var<float> logits;     // [(M + 1) × (K + 1)]; row i predicts code i, row M predicts End
    ad::Var<float> durations;  // [M × 1], real-valued
};

struct LossTerms {
    double total = 0.0;
    double code_nll = 0.0;
    double duration_mse = 0.0;
};

struct BatchLoss {
    ad::Var<float> loss;
    LossTerms terms;
};

struct Sampling {
    enum class Mode { greedy, top_k, temperature };
    Mode mode = Mode::greedy;
    std::size_t top_k = 5;
    double temperature = 1.0;
};

struct Generation {
    std::vector<std::uint32_t> codes;      // without End
    std::vector<std::uint32_t> durations;  // rounded, ≥ 1
    std::vector<float> raw_durations;
    bool ended = false;      // End was emitted
    bool truncated = false;  // max_len reached first

    // Codes followed by End when it was emitted.
    std::vector<std::uint32_t> indices_with_end(std::uint32_t end_token) const;
};

// round half away from zero, then clamp to ≥ 1
std::uint32_t round_duration(double x);

class T2sGpt {
public:
    T2sGpt(const GptConfig& cfg, std::uint64_t seed);

    const GptConfig& config() const { return cfg_; }
    nn::ParamSet<float>& params() { return params_; }
    const nn::ParamSet<float>& params() const { return params_; }

    // Teacher-forced pass over a full sequence.
    Forward forward(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                    std::span<const std::uint32_t> durations) const;

    // Next-code logits [K + 1] after a prefix.
    std::vector<float> code_logits(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                                   std::span<const std::uint32_t> durations) const;

    // Duration transformer over rows n_y−1 … n_y+l−2 of h_code (the states
    // that predicted each code) plus the codes' own embeddings. Returns [l × 1].
    ad::Var<float> duration_predict(const ad::Var<float>& h_code, std::span<const std::uint32_t> codes,
                                    std::size_t n_y) const;

    // Mean over the batch of per-sequence cross-entropy over M + 1 positions
    // (End included) plus mean squared duration error over M positions.
    BatchLoss loss(std::span<const GptExample> batch) const;

    // Teacher-forced inputs fed one position at a time through the KV cache;
    // returns the same [(M + 1) × (K + 1)] logits as forward().
    Tensor<float> incremental_logits(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                                     std::span<const std::uint32_t> durations) const;

    Generation generate(std::span<const std::uint32_t> condition, const Sampling& sampling, std::size_t max_len,
                        std::mt19937_64& rng) const;

    void set_duration_bias(float mean_duration);

private:
    struct Cache;
    void check_inputs(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                      std::span<const std::uint32_t> durations) const;
    std::uint32_t bucket(std::uint32_t duration) const;
    ad::Var<float> input_rows(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                              std::span<const std::uint32_t> durations) const;
    // One new position through a block stack; returns the final-norm output row.
    ad::Var<float> step(const ad::Var<float>& row, const std::vector<ad::AttentionParams<float>>& blocks,
                        const nn::LayerNorm<float>& norm, std::vector<Cache>& caches) const;

    GptConfig cfg_;
    nn::ParamSet<float> params_;
    ad::Var<float> cond_embed_;      // [vocab × d]
    ad::Var<float> code_embed_;      // [K × d]
    ad::Var<float> dur_embed_;       // [(max_duration + 1) × d]
    ad::Var<float> dur_code_embed_;  // [K × d]
    std::vector<ad::AttentionParams<float>> code_blocks_;
    nn::LayerNorm<float> code_norm_;
    nn::Linear<float> code_head_;
    std::vector<ad::AttentionParams<float>> dur_blocks_;
    nn::LayerNorm<float> dur_norm_;
    nn::Linear<float> dur_head_;
};

struct TrainRecord {
    std::size_t iteration = 0;
    LossTerms terms;
    double learning_rate = 0.0;
};

std::string to_json_line(const TrainRecord& r);

struct TrainOptions {
    std::uint64_t seed = 0;
    std::function<bool(const TrainRecord&)> on_record;
};

struct TrainResult {
    T2sGpt model;
    std::vector<TrainRecord> log;
};

TrainResult train(std::span<const GptExample> dataset, const GptConfig& cfg, const TrainOptions& opts);

}  // namespace t2s::gpt
