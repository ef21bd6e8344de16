#include "t2s/checkpoint.hpp"

#include <set>

#include "t2s/formats.hpp"

namespace t2s::ckpt {

#define T2S_DVQ_FIELDS(X)                                                                                   \
    X(input_dim) X(hidden_dim) X(code_dim) X(codebook_size) X(encoder_layers) X(decoder_layers) X(heads)     \
    X(ff_dim) X(embed_weight) X(commit_weight) X(budget_weight) X(aux_weight) X(rate) X(threshold)          \
    X(smooth_l1_beta) X(learning_rate) X(lr_floor) X(warmup) X(iterations) X(batch_size) X(weight_decay)    \
    X(grad_clip) X(ema_decay) X(restart_dead_codes) X(restart_threshold)

#define T2S_GPT_FIELDS(X)                                                                                   \
    X(vocab_size) X(codebook_size) X(d_model) X(heads) X(ff_dim) X(code_layers) X(duration_layers)         \
    X(dropout) X(max_condition) X(max_codes) X(max_duration) X(learning_rate) X(lr_floor) X(warmup)          \
    X(iterations) X(batch_size) X(weight_decay) X(grad_clip)

#define T2S_TO_JSON(f) j[#f] = c.f;
#define T2S_FROM_JSON(f)                                                                                    \
    if (j.contains(#f)) j.at(#f).get_to(c.f);                                                               \
    known.insert(#f);

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError(std::string(what) + " config: unknown key '" + key + "'");
}

}  // namespace

nlohmann::json to_json(const dvq::DvqVaeConfig& c) {
    nlohmann::json j;
    T2S_DVQ_FIELDS(T2S_TO_JSON)
    return j;
}

nlohmann::json to_json(const gpt::GptConfig& c) {
    nlohmann::json j;
    T2S_GPT_FIELDS(T2S_TO_JSON)
    return j;
}

dvq::DvqVaeConfig dvq_config_from_json(const nlohmann::json& j) {
    dvq::DvqVaeConfig c;
    std::set<std::string> known;
    try {
        T2S_DVQ_FIELDS(T2S_FROM_JSON)
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("DVQ-VAE config: ") + e.what());
    }
    reject_unknown(j, known, "DVQ-VAE");
    c.validate();
    return c;
}

gpt::GptConfig gpt_config_from_json(const nlohmann::json& j) {
    gpt::GptConfig c;
    std::set<std::string> known;
    try {
        T2S_GPT_FIELDS(T2S_FROM_JSON)
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("GPT config: ") + e.what());
    }
    reject_unknown(j, known, "GPT");
    c.validate();
    return c;
}

namespace {

void write_header(io::ByteWriter& w, Kind kind, const nlohmann::json& cfg) {
    w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("T2SC"), 4));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(kind));
    w.str(cfg.dump());
}

nlohmann::json read_header(io::ByteReader& r, Kind want) {
    r.magic("T2SC");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: version " + std::to_string(version) + ", this build reads " +
                          std::to_string(kCheckpointVersion));
    const auto kind = r.u32();
    if (kind != static_cast<std::uint32_t>(want))
        throw FormatError("checkpoint: holds model kind " + std::to_string(kind) + ", expected " +
                          std::to_string(static_cast<std::uint32_t>(want)));
    try {
        return nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: config is not valid JSON: ") + e.what());
    }
}

void write_params(io::ByteWriter& w, const nn::ParamSet<float>& ps) {
    w.u32(static_cast<std::uint32_t>(ps.entries().size()));
    for (const auto& [name, var] : ps.entries()) {
        w.str(name);
        const auto& t = var.value();
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) w.f32(v);
    }
}

void read_params(io::ByteReader& r, nn::ParamSet<float>& ps) {
    const auto count = r.u32();
    if (count != ps.entries().size())
        throw FormatError("checkpoint: " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(ps.entries().size()));
    for (auto& [name, var] : ps.entries()) {
        const auto stored = r.str();
        if (stored != name) throw FormatError("checkpoint: tensor '" + stored + "' where '" + name + "' was expected");
        const auto rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != var.shape())
            throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                              shape_str(var.shape()));
        auto& t = var.mutable_value();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32();
    }
}

template <typename Config>
void check_expected(const Config* expected, const nlohmann::json& stored) {
    if (expected && to_json(*expected) != stored)
        throw ConfigError("checkpoint config differs from the requested config: stored " + stored.dump() +
                          " vs requested " + to_json(*expected).dump());
}

}  // namespace

std::vector<std::uint8_t> save(const dvq::DvqVae& model) {
    io::ByteWriter w;
    write_header(w, Kind::dvq, to_json(model.config()));
    write_params(w, model.params());
    const auto& cb = model.codebook();
    w.u8(cb.initialized() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(cb.size()));
    w.u32(static_cast<std::uint32_t>(cb.dim()));
    for (double v : cb.codes()) w.f64(v);
    for (double v : cb.ema_cluster_size()) w.f64(v);
    for (double v : cb.ema_embed_sum()) w.f64(v);
    return w.take();
}

std::vector<std::uint8_t> save(const gpt::T2sGpt& model) {
    io::ByteWriter w;
    write_header(w, Kind::gpt, to_json(model.config()));
    write_params(w, model.params());
    return w.take();
}

dvq::DvqVae load_dvq(std::span<const std::uint8_t> bytes, const dvq::DvqVaeConfig* expected) {
    io::ByteReader r(bytes, "checkpoint");
    const auto stored = read_header(r, Kind::dvq);
    check_expected(expected, stored);
    dvq::DvqVae model(dvq_config_from_json(stored), 0);
    read_params(r, model.params());
    const bool initialized = r.u8() != 0;
    const auto k = r.u32(), dim = r.u32();
    if (k != model.codebook().size() || dim != model.codebook().dim())
        throw FormatError("checkpoint: codebook " + std::to_string(k) + "x" + std::to_string(dim) + " does not match config");
    std::vector<double> codes(static_cast<std::size_t>(k) * dim), cluster(k), sums(codes.size());
    for (auto& v : codes) v = r.f64();
    for (auto& v : cluster) v = r.f64();
    for (auto& v : sums) v = r.f64();
    r.expect_end();
    model.codebook().restore(std::move(codes), std::move(cluster), std::move(sums), initialized);
    if (initialized) model.codebook().mark_initialized();
    return model;
}

gpt::T2sGpt load_gpt(std::span<const std::uint8_t> bytes, const gpt::GptConfig* expected) {
    io::ByteReader r(bytes, "checkpoint");
    const auto stored = read_header(r, Kind::gpt);
    check_expected(expected, stored);
    gpt::T2sGpt model(gpt_config_from_json(stored), 0);
    read_params(r, model.params());
    r.expect_end();
    return model;
}

Kind peek_kind(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes, "checkpoint");
    r.magic("T2SC");
    r.u32();
    const auto kind = r.u32();
    if (kind != 1 && kind != 2) throw FormatError("checkpoint: unknown model kind " + std::to_string(kind));
    return static_cast<Kind>(kind);
}

}  // namespace t2s::ckpt
