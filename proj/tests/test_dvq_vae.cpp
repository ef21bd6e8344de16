#include <doctest.h>

#include <cmath>
#include <random>

#include "t2s/checkpoint.hpp"
#include "t2s/dvq_vae.hpp"
#include "t2s/synthetic.hpp"

using namespace t2s;

namespace {

dvq::DvqVaeConfig tiny() {
    dvq::DvqVaeConfig c;
    c.input_dim = 3;
    c.hidden_dim = 8;
    c.code_dim = 8;
    c.codebook_size = 6;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.heads = 2;
    c.ff_dim = 16;
    c.iterations = 2;
    c.batch_size = 2;
    c.warmup = 1;
    return c;
}

Tensor<float> random_frames(std::size_t t, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor<float> x(Shape{t, d});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = n(rng);
    return x;
}

std::vector<dvq::Example> small_set() {
    std::vector<dvq::Example> v;
    for (std::uint64_t i = 0; i < 4; ++i) v.push_back({random_frames(10 + 3 * i, 3, i), {}});
    return v;
}

}  // namespace

TEST_CASE("config validation") {
    auto c = tiny();
    c.rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.budget_weight = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encode is deterministic and durations cover the input") {
    const dvq::DvqVae a(tiny(), 7), b(tiny(), 7);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto x = random_frames(1 + s % 40, 3, s);
        const auto ra = a.encode(x);
        const auto rb = b.encode(x);
        CHECK(ra.code_indices == rb.code_indices);
        CHECK(ra.durations == rb.durations);
        std::uint32_t total = 0;
        for (auto d : ra.durations) total += d;
        CHECK(total == x.rows());
        CHECK(ra.code_indices.size() == ra.durations.size());
        CHECK(ra.code_indices.size() <= x.rows());
        CHECK(ra.info_weights.size() == x.rows());
        CHECK(ra.latents.rows() == ra.code_indices.size());
    }
}

TEST_CASE("encode and decode errors") {
    const dvq::DvqVae m(tiny(), 1);
    CHECK_THROWS_AS(m.encode(Tensor<float>(Shape{0, 3})), EmptyInputError);
    CHECK_THROWS_AS(m.encode(Tensor<float>(Shape{4, 2})), DimensionError);
    const std::vector<std::uint32_t> codes{0, 6}, durs{1, 1};
    CHECK_THROWS_AS(m.decode(codes, durs), CodebookError);
    const std::vector<std::uint32_t> ok{0, 1}, zero{1, 0};
    CHECK_THROWS_AS(m.decode(ok, zero), DurationError);
}

TEST_CASE("decode length and determinism") {
    const dvq::DvqVae m(tiny(), 2);
    const std::vector<std::uint32_t> codes{0, 3, 5}, durs{2, 1, 4};
    const auto y1 = m.decode(codes, durs), y2 = m.decode(codes, durs);
    CHECK(y1.rows() == 7);
    CHECK(y1.cols() == 3);
    CHECK(y1 == y2);
    for (float v : y1.values()) CHECK(std::isfinite(v));
    const auto x = random_frames(23, 3, 9);
    const auto e = m.encode(x);
    CHECK(m.decode(e.code_indices, e.durations).rows() == 23);
}

TEST_CASE("reconstruction loss") {
    const auto x = random_frames(6, 3, 4);
    const ad::Var<float> xv(x);
    CHECK(dvq::reconstruction_loss(xv, xv).item() == 0.0f);

    Tensor<float> shifted = x;
    for (auto& v : shifted.values()) v += 0.4f;
    CHECK(dvq::reconstruction_loss(xv, ad::Var<float>(shifted)).item() == doctest::Approx(0.5 * 0.16).epsilon(1e-5));

    // hand-summed two-term formula
    const auto y = random_frames(6, 3, 5);
    auto sl1 = [](double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; };
    double pos = 0, vel = 0;
    for (std::size_t i = 0; i < x.size(); ++i) pos += sl1(x[i] - y[i]);
    for (std::size_t t = 1; t < 6; ++t)
        for (std::size_t j = 0; j < 3; ++j) vel += sl1((x[t * 3 + j] - x[(t - 1) * 3 + j]) - (y[t * 3 + j] - y[(t - 1) * 3 + j]));
    const double expect = pos / 18.0 + vel / 15.0;
    CHECK(dvq::reconstruction_loss(xv, ad::Var<float>(y)).item() == doctest::Approx(expect).epsilon(1e-5));

    // T == 1 has no velocity term
    const auto one = random_frames(1, 3, 6), other = random_frames(1, 3, 7);
    double p1 = 0;
    for (std::size_t j = 0; j < 3; ++j) p1 += sl1(one[j] - other[j]);
    CHECK(dvq::reconstruction_loss(ad::Var<float>(one), ad::Var<float>(other)).item() ==
          doctest::Approx(p1 / 3.0).epsilon(1e-5));
}

TEST_CASE("total loss terms match independent recomputation") {
    auto cfg = tiny();
    cfg.aux_weight = 2.0;
    dvq::DvqVae m(cfg, 3);
    const auto data = small_set();
    std::mt19937_64 rng(0);
    {
        ad::NoGradGuard g;
        vq::init_from_latents(m.codebook(), m.encode_graph(data[0].frames).latents.value(), rng);
    }
    const dvq::AuxiliaryLoss aux = [](const Tensor<float>&, const ad::Var<float>& xr, std::span<const std::uint32_t>) {
        return ad::mean(ad::mul(xr, xr));
    };
    const auto bl = m.total_loss(std::span(data).first(2), aux);
    double total = 0, re = 0, emb = 0, bud = 0, au = 0;
    for (std::size_t i = 0; i < 2; ++i) {
        ad::NoGradGuard g;
        const auto e = m.encode(data[i].frames);
        const auto xr = m.decode(e.code_indices, e.durations);
        const double r = dvq::reconstruction_loss(ad::Var<float>(data[i].frames), ad::Var<float>(xr)).item();
        double q = 0;
        for (std::size_t k = 0; k < e.code_indices.size(); ++k)
            for (std::size_t j = 0; j < cfg.code_dim; ++j) {
                const double d = e.latents[k * cfg.code_dim + j] - m.codebook().code(e.code_indices[k])[j];
                q += d * d;
            }
        q /= static_cast<double>(e.latents.size());
        double s = 0;
        for (float w : e.info_weights) s += w;
        const double b = std::max(0.0, s - data[i].frames.rows() / cfg.rate);
        double a = 0;
        for (float v : xr.values()) a += v * v;
        a /= static_cast<double>(xr.size());
        re += r;
        emb += q;
        bud += b;
        au += a;
        total += r + cfg.embed_weight * q + cfg.commit_weight * q + cfg.budget_weight * b + cfg.aux_weight * a;
    }
    CHECK(bl.terms.reconstruction == doctest::Approx(re / 2).epsilon(1e-4));
    CHECK(bl.terms.embed == doctest::Approx(emb / 2).epsilon(1e-4));
    CHECK(bl.terms.commit == doctest::Approx(emb / 2).epsilon(1e-4));
    CHECK(bl.terms.budget == doctest::Approx(bud / 2).epsilon(1e-4));
    CHECK(bl.terms.auxiliary == doctest::Approx(au / 2).epsilon(1e-4));
    CHECK(bl.terms.total == doctest::Approx(total / 2).epsilon(1e-4));
    CHECK(bl.terms.reconstruction >= 0);
    CHECK(bl.terms.budget >= 0);
}

TEST_CASE("with budget and auxiliary weights off and latents on their codes the loss is the reconstruction term") {
    auto cfg = tiny();
    cfg.budget_weight = 0;
    cfg.aux_weight = 0;
    dvq::DvqVae m(cfg, 4);
    const auto data = small_set();
    // put every code exactly on a latent: single-sequence batch with M ≤ K
    const auto z = m.encode(data[0].frames).latents;
    REQUIRE(z.rows() <= cfg.codebook_size);
    std::mt19937_64 rng(0);
    vq::init_from_latents(m.codebook(), z, rng);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::vector<double> v(z.data() + i * cfg.code_dim, z.data() + (i + 1) * cfg.code_dim);
        m.codebook().reset_code(i, v);
    }
    const auto bl = m.total_loss(std::span(data).first(1));
    CHECK(bl.terms.embed == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(bl.terms.total == doctest::Approx(bl.terms.reconstruction).epsilon(1e-6));
}

TEST_CASE("every parameter receives gradient at initialization") {
    auto cfg = tiny();
    cfg.hidden_dim = 8;
    cfg.code_dim = 6;  // exercise the projection to code space
    dvq::DvqVae m(cfg, 5);
    const auto data = small_set();
    std::mt19937_64 rng(0);
    {
        ad::NoGradGuard g;
        vq::init_from_latents(m.codebook(), m.encode_graph(data[1].frames).latents.value(), rng);
    }
    const auto bl = m.total_loss(data);
    m.params().zero_grad();
    ad::backward(bl.loss);
    for (const auto& [name, v] : m.params().entries()) {
        double norm = 0;
        for (float g : v.grad().values()) norm += std::abs(g);
        INFO(name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("a one-iteration run reloads to identical encodings") {
    const auto data = small_set();
    auto cfg = tiny();
    cfg.iterations = 1;
    dvq::TrainOptions opts;
    opts.seed = 3;
    const auto res = dvq::train(data, cfg, opts);
    REQUIRE(res.log.size() == 1);
    const auto bytes = ckpt::save(res.model);
    const auto back = ckpt::load_dvq(bytes);
    for (const auto& ex : data) {
        const auto a = res.model.encode(ex.frames), b = back.encode(ex.frames);
        CHECK(a.code_indices == b.code_indices);
        CHECK(a.durations == b.durations);
        CHECK(a.latents == b.latents);
    }
    CHECK(ckpt::save(back) == bytes);
}

TEST_CASE("training log records rate and utilization") {
    const auto data = small_set();
    auto cfg = tiny();
    cfg.iterations = 3;
    std::vector<std::string> lines;
    dvq::TrainOptions opts;
    opts.on_record = [&](const dvq::TrainRecord& r) {
        lines.push_back(dvq::to_json_line(r));
        return true;
    };
    const auto res = dvq::train(data, cfg, opts);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].find("\"rate\"") != std::string::npos);
    CHECK(lines[0].find("\"utilization\"") != std::string::npos);
    for (const auto& r : res.log) CHECK(r.rate == doctest::Approx(double(r.terms.frames) / double(r.terms.codes)));
    CHECK_THROWS_AS(dvq::train(std::span<const dvq::Example>{}, cfg, opts), EmptyInputError);
}
