#include "t2s/t2s_gpt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace t2s::gpt {

GptConfig GptConfig::full_scale() {
    GptConfig c;
    c.codebook_size = 1024;
    c.d_model = 512;
    c.heads = 8;
    c.ff_dim = 2048;
    c.code_layers = 18;
    c.duration_layers = 6;
    c.max_condition = 128;
    c.max_codes = 256;
    c.max_duration = 64;
    c.learning_rate = 2e-4;
    c.iterations = 100000;
    c.batch_size = 128;
    return c;
}

void GptConfig::validate() const {
    if (vocab_size == 0 || codebook_size == 0 || d_model == 0 || heads == 0 || ff_dim == 0 || code_layers == 0 ||
        duration_layers == 0 || max_condition == 0 || max_codes == 0 || max_duration == 0)
        throw ConfigError("GPT dimensions must be positive");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (dropout != 0.0) throw ConfigError("dropout is not supported; set it to 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

std::vector<std::uint32_t> Generation::indices_with_end(std::uint32_t end_token) const {
    auto out = codes;
    if (ended) out.push_back(end_token);
    return out;
}

std::uint32_t round_duration(double x) {
    const double r = std::round(x);
    if (!(r >= 1.0)) return 1;
    if (r > 4294967295.0) return 4294967295u;
    return static_cast<std::uint32_t>(r);
}

namespace {

using V = ad::Var<float>;

V embed_rows(const V& table, std::span<const std::uint32_t> ids) { return ad::gather_rows(table, ids); }

Tensor<float> normal_table(std::size_t rows, std::size_t cols, nn::Rng& rng) {
    std::normal_distribution<float> n(0.0f, 0.1f);
    Tensor<float> t(Shape{rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
    return t;
}

}  // namespace

struct T2sGpt::Cache {
    std::vector<float> k, v;
    std::size_t rows = 0;
};

T2sGpt::T2sGpt(const GptConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(seed);
    const std::size_t d = cfg_.d_model, k = cfg_.codebook_size;
    cond_embed_ = params_.add("cond_embed", normal_table(cfg_.vocab_size, d, rng));
    code_embed_ = params_.add("code_embed", normal_table(k, d, rng));
    dur_embed_ = params_.add("dur_embed", normal_table(cfg_.max_duration + 1, d, rng));
    for (std::size_t i = 0; i < cfg_.code_layers; ++i)
        code_blocks_.push_back(nn::make_attention(params_, "code.block" + std::to_string(i), d, cfg_.heads, cfg_.ff_dim, rng));
    code_norm_ = nn::make_layer_norm(params_, "code.norm", d);
    code_head_ = nn::make_linear(params_, "code.head", d, k + 1, rng);
    dur_code_embed_ = params_.add("dur.code_embed", normal_table(k, d, rng));
    for (std::size_t i = 0; i < cfg_.duration_layers; ++i)
        dur_blocks_.push_back(nn::make_attention(params_, "dur.block" + std::to_string(i), d, cfg_.heads, cfg_.ff_dim, rng));
    dur_norm_ = nn::make_layer_norm(params_, "dur.norm", d);
    dur_head_ = nn::make_linear(params_, "dur.head", d, 1, rng);
}

void T2sGpt::set_duration_bias(float mean_duration) { dur_head_.bias.mutable_value().fill(mean_duration); }

std::uint32_t T2sGpt::bucket(std::uint32_t duration) const {
    return static_cast<std::uint32_t>(std::min<std::size_t>(duration, cfg_.max_duration + 1) - 1);
}

void T2sGpt::check_inputs(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                          std::span<const std::uint32_t> durations) const {
    if (condition.empty()) throw EmptyInputError("GPT: condition must contain at least one token");
    if (condition.size() > cfg_.max_condition)
        throw CapacityError("GPT: condition of " + std::to_string(condition.size()) + " tokens exceeds " +
                            std::to_string(cfg_.max_condition));
    if (codes.size() > cfg_.max_codes)
        throw CapacityError("GPT: prefix of " + std::to_string(codes.size()) + " codes exceeds " +
                            std::to_string(cfg_.max_codes));
    if (codes.size() != durations.size())
        throw DimensionError("GPT: " + std::to_string(codes.size()) + " codes with " +
                             std::to_string(durations.size()) + " durations");
    for (auto t : condition)
        if (t >= cfg_.vocab_size) throw IndexError("GPT: condition token " + std::to_string(t) + " out of vocabulary");
    for (auto c : codes)
        if (c >= cfg_.codebook_size)
            throw CodebookError("GPT: code " + std::to_string(c) + " is not a codebook index (End may not appear in a prefix)");
    for (auto d : durations)
        if (d == 0) throw DurationError("GPT: durations must be >= 1");
}

ad::Var<float> T2sGpt::input_rows(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                                  std::span<const std::uint32_t> durations) const {
    std::vector<V> parts{embed_rows(cond_embed_, condition)};
    if (!codes.empty()) {
        std::vector<std::uint32_t> buckets(durations.size());
        std::transform(durations.begin(), durations.end(), buckets.begin(), [this](auto d) { return bucket(d); });
        parts.push_back(ad::add(embed_rows(code_embed_, codes), embed_rows(dur_embed_, buckets)));
    }
    const V x = parts.size() == 1 ? parts[0] : ad::concat_rows<float>(parts);
    return ad::add(x, ad::constant(nn::positional_encoding<float>(x.rows(), cfg_.d_model)));
}

Forward T2sGpt::forward(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                        std::span<const std::uint32_t> durations) const {
    check_inputs(condition, codes, durations);
    V x = input_rows(condition, codes, durations);
    for (const auto& blk : code_blocks_) x = ad::attention_block(x, blk, true);
    Forward f;
    f.hidden = code_norm_(x);
    const std::size_t n_y = condition.size(), m = codes.size();
    f.logits = code_head_(ad::slice_rows(f.hidden, n_y - 1, n_y + m));
    if (m > 0) f.durations = duration_predict(f.hidden, codes, n_y);
    return f;
}

std::vector<float> T2sGpt::code_logits(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                                       std::span<const std::uint32_t> durations) const {
    ad::NoGradGuard guard;
    const auto f = forward(condition, codes, durations);
    const auto& l = f.logits.value();
    const std::size_t w = l.cols();
    return {l.data() + (l.rows() - 1) * w, l.data() + l.rows() * w};
}

ad::Var<float> T2sGpt::duration_predict(const ad::Var<float>& h_code, std::span<const std::uint32_t> codes,
                                        std::size_t n_y) const {
    const std::size_t l = codes.size();
    if (n_y == 0 || l == 0 || n_y - 1 + l > h_code.rows())
        throw ContractError("duration_predict: rows " + std::to_string(n_y) + "-1 .. +" + std::to_string(l) +
                            " outside hidden states of " + std::to_string(h_code.rows()) + " rows");
    for (auto c : codes)
        if (c >= cfg_.codebook_size) throw CodebookError("duration_predict: code " + std::to_string(c) + " out of range");
    V x = ad::add(ad::slice_rows(h_code, n_y - 1, n_y - 1 + l), embed_rows(dur_code_embed_, codes));
    for (const auto& blk : dur_blocks_) x = ad::attention_block(x, blk, true);
    return dur_head_(dur_norm_(x));
}

BatchLoss T2sGpt::loss(std::span<const GptExample> batch) const {
    if (batch.empty()) throw EmptyInputError("GPT loss: empty batch");
    std::vector<V> per;
    BatchLoss out;
    for (const auto& ex : batch) {
        const auto f = forward(ex.condition, ex.codes, ex.durations);
        std::vector<std::uint32_t> targets = ex.codes;
        targets.push_back(cfg_.end_token());
        V total = ad::softmax_cross_entropy(f.logits, std::span<const std::uint32_t>(targets));
        out.terms.code_nll += total.item();
        if (!ex.codes.empty()) {
            const std::size_t m = ex.durations.size();
            std::vector<float> d(ex.durations.begin(), ex.durations.end());
            const V l_dur = ad::mse(f.durations, ad::constant(Tensor<float>(Shape{m, 1}, std::move(d))));
            out.terms.duration_mse += l_dur.item();
            total = ad::add(total, l_dur);
        }
        per.push_back(total);
    }
    const double b = static_cast<double>(batch.size());
    out.loss = ad::scale(ad::sum(ad::concat_rows<float>(per)), static_cast<float>(1.0 / b));
    out.terms.code_nll /= b;
    out.terms.duration_mse /= b;
    out.terms.total = out.loss.item();
    return out;
}

namespace {

// Single-row pre-norm block against cached keys/values; mirrors
// ad::attention_block op for op.
V block_step(const V& x, const ad::AttentionParams<float>& p, std::vector<float>& kc, std::vector<float>& vc,
             std::size_t& rows) {
    const std::size_t d = x.cols();
    const std::size_t dh = d / p.heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    const V a = ad::layer_norm(x, p.ln1_gain, p.ln1_bias);
    const V q = ad::add_row(ad::matmul(a, p.wq), p.bq);
    const V k = ad::add_row(ad::matmul(a, p.wk), p.bk);
    const V v = ad::add_row(ad::matmul(a, p.wv), p.bv);
    kc.insert(kc.end(), k.value().values().begin(), k.value().values().end());
    vc.insert(vc.end(), v.value().values().begin(), v.value().values().end());
    ++rows;
    const V keys = ad::constant(Tensor<float>(Shape{rows, d}, kc));
    const V vals = ad::constant(Tensor<float>(Shape{rows, d}, vc));

    std::vector<V> heads;
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t lo = h * dh, hi = lo + dh;
        const V qh = p.heads == 1 ? q : ad::slice_cols(q, lo, hi);
        const V kh = p.heads == 1 ? keys : ad::slice_cols(keys, lo, hi);
        const V vh = p.heads == 1 ? vals : ad::slice_cols(vals, lo, hi);
        const V attn = ad::masked_softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), false);
        heads.push_back(ad::matmul(attn, vh));
    }
    const V mixed = p.heads == 1 ? heads[0] : ad::concat_cols<float>(heads);
    const V h1 = ad::add(x, ad::add_row(ad::matmul(mixed, p.wo), p.bo));
    const V b = ad::layer_norm(h1, p.ln2_gain, p.ln2_bias);
    return ad::add(h1, ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(b, p.w1), p.b1)), p.w2), p.b2));
}

std::uint32_t sample(const std::vector<float>& logits, const Sampling& s, std::mt19937_64& rng) {
    const std::size_t n = logits.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (s.mode == Sampling::Mode::greedy)
        return static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (!(s.temperature > 0.0)) throw ConfigError("sampling temperature must be positive");
    std::size_t keep = n;
    if (s.mode == Sampling::Mode::top_k) {
        if (s.top_k == 0) throw ConfigError("top-k needs k >= 1");
        keep = std::min(n, s.top_k);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
    }
    double mx = -INFINITY;
    for (std::size_t i = 0; i < keep; ++i) mx = std::max(mx, static_cast<double>(logits[order[i]]));
    std::vector<double> w(keep);
    for (std::size_t i = 0; i < keep; ++i) w[i] = std::exp((logits[order[i]] - mx) / s.temperature);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    return static_cast<std::uint32_t>(order[pick(rng)]);
}

}  // namespace

ad::Var<float> T2sGpt::step(const ad::Var<float>& row, const std::vector<ad::AttentionParams<float>>& blocks,
                            const nn::LayerNorm<float>& norm, std::vector<Cache>& caches) const {
    V x = row;
    for (std::size_t i = 0; i < blocks.size(); ++i) x = block_step(x, blocks[i], caches[i].k, caches[i].v, caches[i].rows);
    return norm(x);
}

Tensor<float> T2sGpt::incremental_logits(std::span<const std::uint32_t> condition, std::span<const std::uint32_t> codes,
                                         std::span<const std::uint32_t> durations) const {
    check_inputs(condition, codes, durations);
    ad::NoGradGuard guard;
    const V inputs = input_rows(condition, codes, durations);
    std::vector<Cache> caches(code_blocks_.size());
    const std::size_t n_y = condition.size(), total = inputs.rows(), width = cfg_.codebook_size + 1;
    Tensor<float> out(Shape{codes.size() + 1, width});
    for (std::size_t p = 0; p < total; ++p) {
        const V hc = step(ad::slice_rows(inputs, p, p + 1), code_blocks_, code_norm_, caches);
        if (p + 1 < n_y) continue;
        const auto l = code_head_(hc).value();
        std::copy_n(l.data(), width, out.data() + (p + 1 - n_y) * width);
    }
    return out;
}

Generation T2sGpt::generate(std::span<const std::uint32_t> condition, const Sampling& sampling, std::size_t max_len,
                            std::mt19937_64& rng) const {
    if (max_len == 0) throw ConfigError("generate: max_len must be >= 1");
    check_inputs(condition, {}, {});
    ad::NoGradGuard guard;
    const std::size_t d = cfg_.d_model;
    const std::size_t limit = std::min(max_len, cfg_.max_codes);
    std::vector<Cache> code_cache(code_blocks_.size()), dur_cache(dur_blocks_.size());

    std::size_t pos = 0;
    V hc;
    for (auto tok : condition) {
        const std::uint32_t id[1] = {tok};
        const V row = ad::add(embed_rows(cond_embed_, id), ad::constant(nn::positional_encoding<float>(1, d, pos++)));
        hc = step(row, code_blocks_, code_norm_, code_cache);
    }

    Generation g;
    while (true) {
        const auto logits = code_head_(hc).value().values();
        const std::uint32_t s = sample(logits, sampling, rng);
        if (s == cfg_.end_token()) {
            g.ended = true;
            break;
        }
        if (g.codes.size() == limit) {
            g.truncated = true;
            break;
        }
        const std::uint32_t id[1] = {s};
        const V dur_row = ad::add(hc, embed_rows(dur_code_embed_, id));
        const float raw = dur_head_(step(dur_row, dur_blocks_, dur_norm_, dur_cache)).item();
        const std::uint32_t dur = round_duration(raw);
        g.codes.push_back(s);
        g.durations.push_back(dur);
        g.raw_durations.push_back(raw);

        const std::uint32_t b[1] = {bucket(dur)};
        const V row = ad::add(ad::add(embed_rows(code_embed_, id), embed_rows(dur_embed_, b)),
                              ad::constant(nn::positional_encoding<float>(1, d, pos++)));
        hc = step(row, code_blocks_, code_norm_, code_cache);
    }
    return g;
}

std::string to_json_line(const TrainRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "{\"iteration\":%zu,\"loss\":%.9g,\"code_nll\":%.9g,\"duration_mse\":%.9g,\"lr\":%.9g}",
                  r.iteration, r.terms.total, r.terms.code_nll, r.terms.duration_mse, r.learning_rate);
    return buf;
}

TrainResult train(std::span<const GptExample> dataset, const GptConfig& cfg, const TrainOptions& opts) {
    if (dataset.empty()) throw EmptyInputError("GPT train: empty dataset");
    TrainResult result{T2sGpt(cfg, opts.seed), {}};
    T2sGpt& model = result.model;

    double dur_sum = 0.0;
    std::size_t dur_count = 0;
    for (const auto& ex : dataset) {
        for (auto d : ex.durations) dur_sum += d;
        dur_count += ex.durations.size();
    }
    if (dur_count) model.set_duration_bias(static_cast<float>(dur_sum / static_cast<double>(dur_count)));

    std::mt19937_64 rng(opts.seed ^ 0x7f4a7c159e3779b9ULL);
    nn::AdamW<float> opt({0.9, 0.99, 1e-8, cfg.weight_decay});
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    std::vector<GptExample> batch;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        while (batch.size() < cfg.batch_size) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(dataset[order[cursor++]]);
        }
        auto bl = model.loss(batch);
        if (!std::isfinite(bl.terms.total))
            throw DivergenceError("GPT training diverged at iteration " + std::to_string(it) +
                                  ": code_nll=" + std::to_string(bl.terms.code_nll) +
                                  " duration_mse=" + std::to_string(bl.terms.duration_mse));
        model.params().zero_grad();
        ad::backward(bl.loss);
        if (cfg.grad_clip > 0.0) {
            const double norm = model.params().grad_norm();
            if (norm > cfg.grad_clip) model.params().scale_grads(static_cast<float>(cfg.grad_clip / norm));
        }
        const double lr = nn::warmup_cosine_lr(it, cfg.warmup, cfg.iterations, cfg.learning_rate, cfg.lr_floor);
        opt.step(model.params(), lr);

        TrainRecord rec{it, bl.terms, lr};
        result.log.push_back(rec);
        if (opts.on_record && !opts.on_record(rec)) break;
    }
    return result;
}

}  // namespace t2s::gpt
