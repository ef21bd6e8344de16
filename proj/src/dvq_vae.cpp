#include "t2s/dvq_vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace t2s::dvq {

DvqVaeConfig DvqVaeConfig::full_scale() {
    DvqVaeConfig c;
    c.hidden_dim = 512;
    c.code_dim = 512;
    c.codebook_size = 1024;
    c.encoder_layers = 6;
    c.decoder_layers = 6;
    c.heads = 8;
    c.ff_dim = 2048;
    c.rate = 12.0;
    c.learning_rate = 2e-4;
    c.iterations = 100000;
    c.batch_size = 256;
    return c;
}

void DvqVaeConfig::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || code_dim == 0 || codebook_size == 0 || ff_dim == 0 || heads == 0)
        throw ConfigError("DVQ-VAE dimensions must be positive");
    if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
    if (commit_weight < 0 || budget_weight < 0 || aux_weight < 0) throw ConfigError("loss weights must be >= 0");
    if (!(rate > 1.0)) throw ConfigError("downsampling rate R must exceed 1");
    if (!(threshold > 0.0)) throw ConfigError("information threshold O must be positive");
    if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth-L1 beta must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
}

DvqVae::DvqVae(const DvqVaeConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), codebook_(cfg.codebook_size, cfg.code_dim, cfg.ema_decay) {
    cfg_.validate();
    nn::Rng rng(seed);
    const std::size_t dh = cfg_.hidden_dim;
    embed_ = nn::make_linear(params_, "enc.embed", cfg_.input_dim, dh, rng);
    embed_norm_ = nn::make_layer_norm(params_, "enc.embed_norm", dh);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
        encoder_.push_back(
            nn::make_attention(params_, "enc.block" + std::to_string(i), dh, cfg_.heads, cfg_.ff_dim, rng));
    encoder_norm_ = nn::make_layer_norm(params_, "enc.norm", dh);
    info_ = dyn::make_info_mlp(params_, "enc.info", dh, rng);
    // Start with Σ I ≈ T / R so the budget hinge begins near its knee.
    info_.out.bias.mutable_value().fill(static_cast<float>(-std::log(cfg_.rate - 1.0)));
    if (cfg_.code_dim != dh) to_code_ = nn::make_linear(params_, "enc.to_code", dh, cfg_.code_dim, rng);
    decoder_in_ = nn::make_linear(params_, "dec.in", cfg_.code_dim, dh, rng);
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
        decoder_.push_back(
            nn::make_attention(params_, "dec.block" + std::to_string(i), dh, cfg_.heads, cfg_.ff_dim, rng));
    decoder_norm_ = nn::make_layer_norm(params_, "dec.norm", dh);
    output_ = nn::make_linear(params_, "dec.out", dh, cfg_.input_dim, rng);
}

DvqVae::Encoded DvqVae::encode_graph(const Tensor<float>& frames) const {
    if (frames.size() == 0 || frames.rows() == 0) throw EmptyInputError("encode: sequence has no frames");
    if (frames.rank() != 2 || frames.cols() != cfg_.input_dim)
        throw DimensionError("encode: frames " + shape_str(frames.shape()) + " vs input_dim " +
                             std::to_string(cfg_.input_dim));
    const std::size_t t = frames.rows();
    const auto x = ad::constant(frames);
    auto e = ad::add(ad::relu(embed_norm_(embed_(x))),
                     ad::constant(nn::positional_encoding<float>(t, cfg_.hidden_dim)));
    for (const auto& blk : encoder_) e = ad::attention_block(e, blk, false);

    Encoded out;
    out.hidden = encoder_norm_(e);
    out.weights = dyn::info_weights(out.hidden, info_);
    const auto markers = dyn::segment<float>(out.weights.value().values(), cfg_.threshold);
    auto ds = dyn::downsample(out.hidden, out.weights, markers);
    out.latents = to_code_ ? (*to_code_)(ds.latents) : ds.latents;
    out.segments = std::move(ds.segments);
    return out;
}

ad::Var<float> DvqVae::decode_graph(const ad::Var<float>& quantized, std::span<const std::uint32_t> durations) const {
    const auto expanded = dyn::length_regulate(quantized, durations);
    const std::size_t t = expanded.rows();
    auto u = ad::add(decoder_in_(expanded), ad::constant(nn::positional_encoding<float>(t, cfg_.hidden_dim)));
    for (const auto& blk : decoder_) u = ad::attention_block(u, blk, false);
    return output_(decoder_norm_(u));
}

EncodeResult DvqVae::encode(const Tensor<float>& frames) const {
    ad::NoGradGuard guard;
    auto enc = encode_graph(frames);
    auto q = vq::quantize(enc.latents.value(), codebook_);
    EncodeResult r;
    r.code_indices = std::move(q.indices);
    r.durations = std::move(enc.segments.durations);
    r.info_weights = enc.weights.value().values();
    r.latents = enc.latents.value();
    return r;
}

Tensor<float> DvqVae::decode(std::span<const std::uint32_t> codes, std::span<const std::uint32_t> durations) const {
    if (codes.size() != durations.size())
        throw DimensionError("decode: " + std::to_string(codes.size()) + " codes with " +
                             std::to_string(durations.size()) + " durations");
    if (codes.empty()) throw EmptyInputError("decode: empty code stream");
    const std::size_t dc = cfg_.code_dim;
    Tensor<float> q(Shape{codes.size(), dc});
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] >= codebook_.size())
            throw CodebookError("decode: code " + std::to_string(codes[i]) + " outside codebook of " +
                                std::to_string(codebook_.size()));
        if (durations[i] == 0) throw DurationError("decode: duration of code " + std::to_string(i) + " is 0");
        const auto c = codebook_.code(codes[i]);
        for (std::size_t j = 0; j < dc; ++j) q[i * dc + j] = static_cast<float>(c[j]);
    }
    ad::NoGradGuard guard;
    return decode_graph(ad::constant(std::move(q)), durations).value();
}

ad::Var<float> reconstruction_loss(const ad::Var<float>& x, const ad::Var<float>& x_re, float beta) {
    if (x.shape() != x_re.shape())
        throw DimensionError("reconstruction_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_re.shape()));
    auto pos = ad::smooth_l1(x, x_re, beta);
    const std::size_t t = x.rows();
    if (t < 2) return pos;
    auto vel = [t](const ad::Var<float>& v) { return ad::sub(ad::slice_rows(v, 1, t), ad::slice_rows(v, 0, t - 1)); };
    return ad::add(pos, ad::smooth_l1(vel(x), vel(x_re), beta));
}

BatchLoss DvqVae::total_loss(std::span<const Example> batch, const AuxiliaryLoss& aux) const {
    if (batch.empty()) throw EmptyInputError("total_loss: empty batch");
    BatchLoss out;
    std::vector<ad::Var<float>> per_sequence;
    std::vector<float> latent_rows;
    const float beta = static_cast<float>(cfg_.smooth_l1_beta);
    LossTerms& m = out.terms;

    for (const auto& ex : batch) {
        auto enc = encode_graph(ex.frames);
        auto q = vq::quantize(enc.latents.value(), codebook_);
        const auto zq = vq::straight_through(enc.latents, q.quantized);
        const auto x_re = decode_graph(zq, enc.segments.durations);
        const auto x = ad::constant(ex.frames);

        const auto l_re = reconstruction_loss(x, x_re, beta);
        const auto target = ad::constant(q.quantized);
        const auto l_embed = ad::mse(enc.latents, target);
        const auto l_commit = ad::mse(ad::stop_gradient(enc.latents), target);
        const auto l_budget = dyn::budget_loss(enc.weights, ex.frames.rows(), cfg_.rate);

        auto total = ad::add(ad::add(l_re, ad::scale(l_embed, static_cast<float>(cfg_.embed_weight))), ad::scale(l_commit, static_cast<float>(cfg_.commit_weight)));
        total = ad::add(total, ad::scale(l_budget, static_cast<float>(cfg_.budget_weight)));
        double aux_value = 0.0;
        if (aux) {
            const auto l_aux = aux(ex.frames, x_re, ex.condition);
            aux_value = l_aux.item();
            total = ad::add(total, ad::scale(l_aux, static_cast<float>(cfg_.aux_weight)));
        }
        per_sequence.push_back(total);

        m.reconstruction += l_re.item();
        m.embed += l_embed.item();
        m.commit += l_commit.item();
        m.budget += l_budget.item();
        m.auxiliary += aux_value;
        m.info_sum += ad::sum(ad::stop_gradient(enc.weights)).item();
        m.frames += ex.frames.rows();
        m.codes += enc.segments.count();
        latent_rows.insert(latent_rows.end(), enc.latents.value().values().begin(), enc.latents.value().values().end());
        out.indices.insert(out.indices.end(), q.indices.begin(), q.indices.end());
    }

    const float inv_b = 1.0f / static_cast<float>(batch.size());
    out.loss = ad::scale(ad::sum(ad::concat_rows<float>(per_sequence)), inv_b);
    const double b = static_cast<double>(batch.size());
    m.reconstruction /= b;
    m.embed /= b;
    m.commit /= b;
    m.budget /= b;
    m.auxiliary /= b;
    m.info_sum /= b;
    m.total = out.loss.item();
    m.utilization = vq::utilization(out.indices, codebook_.size());
    out.latents = Tensor<float>(Shape{out.indices.size(), cfg_.code_dim}, std::move(latent_rows));
    return out;
}

std::string to_json_line(const TrainRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "{\"iteration\":%zu,\"loss\":%.9g,\"reconstruction\":%.9g,\"embed\":%.9g,\"commit\":%.9g,"
                  "\"budget\":%.9g,\"auxiliary\":%.9g,\"info_sum\":%.9g,\"rate\":%.9g,\"utilization\":%.9g,"
                  "\"lr\":%.9g,\"restarts\":%zu}",
                  r.iteration, r.terms.total, r.terms.reconstruction, r.terms.embed, r.terms.commit, r.terms.budget,
                  r.terms.auxiliary, r.terms.info_sum, r.rate, r.terms.utilization, r.learning_rate, r.restarts);
    return buf;
}

TrainResult train(std::span<const Example> dataset, const DvqVaeConfig& cfg, const TrainOptions& opts) {
    if (dataset.empty()) throw EmptyInputError("train: empty dataset");
    TrainResult result{DvqVae(cfg, opts.seed), {}};
    DvqVae& model = result.model;
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    nn::AdamW<float> opt({0.9, 0.99, 1e-8, cfg.weight_decay});

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    std::vector<Example> batch;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        while (batch.size() < cfg.batch_size) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(dataset[order[cursor++]]);
        }

        if (!model.codebook().initialized()) {
            ad::NoGradGuard guard;
            std::vector<float> rows;
            for (const auto& ex : batch) {
                const auto z = model.encode_graph(ex.frames).latents.value();
                rows.insert(rows.end(), z.values().begin(), z.values().end());
            }
            const std::size_t n = rows.size() / cfg.code_dim;
            vq::init_from_latents(model.codebook(), Tensor<float>(Shape{n, cfg.code_dim}, std::move(rows)), rng);
        }

        auto bl = model.total_loss(batch, opts.aux);
        if (!std::isfinite(bl.terms.total))
            throw DivergenceError("training diverged at iteration " + std::to_string(it) +
                                  ": reconstruction=" + std::to_string(bl.terms.reconstruction) +
                                  " embed=" + std::to_string(bl.terms.embed) +
                                  " budget=" + std::to_string(bl.terms.budget));

        model.params().zero_grad();
        ad::backward(bl.loss);
        if (cfg.grad_clip > 0.0) {
            const double norm = model.params().grad_norm();
            if (norm > cfg.grad_clip) model.params().scale_grads(static_cast<float>(cfg.grad_clip / norm));
        }
        const double lr = nn::warmup_cosine_lr(it, cfg.warmup, cfg.iterations, cfg.learning_rate, cfg.lr_floor);
        opt.step(model.params(), lr);

        vq::ema_update(model.codebook(), bl.latents, bl.indices);
        std::size_t restarts = 0;
        if (cfg.restart_dead_codes)
            restarts = vq::restart_dead_codes(model.codebook(), bl.latents, cfg.restart_threshold, rng);

        TrainRecord rec;
        rec.iteration = it;
        rec.terms = bl.terms;
        rec.rate = static_cast<double>(bl.terms.frames) / static_cast<double>(std::max<std::size_t>(1, bl.terms.codes));
        rec.learning_rate = lr;
        rec.restarts = restarts;
        result.log.push_back(rec);
        if (opts.on_record && !opts.on_record(rec)) break;
    }
    return result;
}

double evaluate_reconstruction(const DvqVae& model, std::span<const Example> data) {
    if (data.empty()) throw EmptyInputError("evaluate_reconstruction: empty set");
    double total = 0.0;
    const float beta = static_cast<float>(model.config().smooth_l1_beta);
    for (const auto& ex : data) {
        const auto enc = model.encode(ex.frames);
        const auto x_re = model.decode(enc.code_indices, enc.durations);
        ad::NoGradGuard guard;
        total += reconstruction_loss(ad::constant(ex.frames), ad::constant(x_re), beta).item();
    }
    return total / static_cast<double>(data.size());
}

}  // namespace t2s::dvq
