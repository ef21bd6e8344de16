#include <doctest.h>

#include <cmath>
#include <random>

#include "t2s/checkpoint.hpp"
#include "t2s/t2s_gpt.hpp"

using namespace t2s;

namespace {

gpt::GptConfig tiny() {
    gpt::GptConfig c;
    c.vocab_size = 5;
    c.codebook_size = 7;
    c.d_model = 8;
    c.heads = 2;
    c.ff_dim = 16;
    c.code_layers = 2;
    c.duration_layers = 1;
    c.max_condition = 6;
    c.max_codes = 10;
    c.max_duration = 6;
    c.iterations = 2;
    c.batch_size = 2;
    c.warmup = 1;
    return c;
}

const std::vector<std::uint32_t> kCond{1, 4, 2};
const std::vector<std::uint32_t> kCodes{3, 0, 6, 2};
const std::vector<std::uint32_t> kDurs{2, 1, 9, 3};  // 9 lands in the overflow bucket

}  // namespace

TEST_CASE("config validation") {
    auto c = tiny();
    c.dropout = 0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward shapes and softmax rows") {
    const gpt::T2sGpt m(tiny(), 1);
    const auto f = m.forward(kCond, kCodes, kDurs);
    CHECK(f.hidden.value().rows() == kCond.size() + kCodes.size());
    CHECK(f.logits.value().rows() == kCodes.size() + 1);
    CHECK(f.logits.value().cols() == 8);
    CHECK(f.durations.value().rows() == kCodes.size());
    const auto p = ad::masked_softmax_rows(f.logits, false).value();
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < p.cols(); ++c) s += p[r * p.cols() + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("changing a later code never changes earlier logits") {
    const gpt::T2sGpt m(tiny(), 2);
    const auto a = m.forward(kCond, kCodes, kDurs).logits.value();
    for (std::size_t j = 0; j < kCodes.size(); ++j) {
        auto codes = kCodes;
        auto durs = kDurs;
        codes[j] = (codes[j] + 1) % 7;
        durs[j] += 1;
        const auto b = m.forward(kCond, codes, durs).logits.value();
        for (std::size_t r = 0; r <= j; ++r)
            for (std::size_t c = 0; c < 8; ++c) CHECK(a[r * 8 + c] == b[r * 8 + c]);
        bool later_differs = false;
        for (std::size_t i = (j + 1) * 8; i < a.size(); ++i) later_differs |= a[i] != b[i];
        CHECK(later_differs);
    }
}

TEST_CASE("incremental decoding matches the full pass") {
    const gpt::T2sGpt m(tiny(), 3);
    const auto full = m.forward(kCond, kCodes, kDurs).logits.value();
    const auto inc = m.incremental_logits(kCond, kCodes, kDurs);
    REQUIRE(inc.size() == full.size());
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(std::abs(full[i] - inc[i]) < 1e-5);
    const auto last = m.code_logits(kCond, kCodes, kDurs);
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(last[c] - full[kCodes.size() * 8 + c]) < 1e-5);
}

TEST_CASE("loss is code NLL plus duration MSE") {
    const gpt::T2sGpt m(tiny(), 4);
    const std::vector<gpt::GptExample> batch{{kCond, kCodes, kDurs}, {{0}, {5}, {1}}};
    const auto bl = m.loss(batch);
    double nll = 0, mse = 0;
    for (const auto& ex : batch) {
        const auto f = m.forward(ex.condition, ex.codes, ex.durations);
        auto targets = ex.codes;
        targets.push_back(7);
        nll += ad::softmax_cross_entropy(f.logits, targets).item();
        double s = 0;
        for (std::size_t i = 0; i < ex.codes.size(); ++i) {
            const double d = f.durations.value()[i] - ex.durations[i];
            s += d * d;
        }
        mse += s / static_cast<double>(ex.codes.size());
    }
    CHECK(bl.terms.code_nll == doctest::Approx(nll / 2).epsilon(1e-5));
    CHECK(bl.terms.duration_mse == doctest::Approx(mse / 2).epsilon(1e-5));
    CHECK(bl.terms.total == doctest::Approx(bl.terms.code_nll + bl.terms.duration_mse).epsilon(1e-6));
    CHECK(bl.loss.item() == doctest::Approx(bl.terms.total).epsilon(1e-6));
}

TEST_CASE("duration rounding") {
    CHECK(gpt::round_duration(2.5) == 3);
    CHECK(gpt::round_duration(2.49) == 2);
    CHECK(gpt::round_duration(0.2) == 1);
    CHECK(gpt::round_duration(-3.0) == 1);
    CHECK(gpt::round_duration(7.0) == 7);
}

TEST_CASE("generation respects max_len and produces valid durations") {
    const gpt::T2sGpt m(tiny(), 5);
    std::mt19937_64 rng(1);
    for (auto mode : {gpt::Sampling::Mode::greedy, gpt::Sampling::Mode::top_k, gpt::Sampling::Mode::temperature}) {
        gpt::Sampling s;
        s.mode = mode;
        s.top_k = 3;
        s.temperature = 1.5;
        for (std::size_t max_len : {1u, 4u, 10u}) {
            const auto g = m.generate(kCond, s, max_len, rng);
            CHECK(g.codes.size() <= max_len);
            CHECK(g.codes.size() == g.durations.size());
            CHECK(g.raw_durations.size() == g.codes.size());
            CHECK(g.ended != g.truncated);
            for (auto c : g.codes) CHECK(c < 7);
            for (auto d : g.durations) CHECK(d >= 1);
            const auto w = g.indices_with_end(7);
            CHECK(w.size() == g.codes.size() + (g.ended ? 1 : 0));
        }
    }
}

TEST_CASE("greedy generation is deterministic and agrees with code_logits") {
    const gpt::T2sGpt m(tiny(), 6);
    std::mt19937_64 r1(0), r2(99);
    const auto a = m.generate(kCond, {}, 10, r1), b = m.generate(kCond, {}, 10, r2);
    CHECK(a.codes == b.codes);
    CHECK(a.durations == b.durations);
    if (!a.codes.empty()) {
        const auto l = m.code_logits(kCond, {}, {});
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < l.size(); ++c)
            if (l[c] > l[best]) best = c;
        CHECK(a.codes[0] == best);
    }
}

TEST_CASE("capacity and index errors") {
    const gpt::T2sGpt m(tiny(), 7);
    const std::vector<std::uint32_t> long_cond(7, 1), long_codes(11, 1), long_durs(11, 1);
    CHECK_THROWS_AS(m.forward(long_cond, kCodes, kDurs), CapacityError);
    CHECK_THROWS_AS(m.forward(kCond, long_codes, long_durs), CapacityError);
    const std::vector<std::uint32_t> bad_tok{5};
    CHECK_THROWS_AS(m.forward(bad_tok, kCodes, kDurs), IndexError);
    const std::vector<std::uint32_t> bad_code{7}, one{1};
    CHECK_THROWS_AS(m.forward(kCond, bad_code, one), CodebookError);
}

TEST_CASE("every parameter receives gradient") {
    gpt::T2sGpt m(tiny(), 8);
    const std::vector<gpt::GptExample> batch{{kCond, kCodes, kDurs}};
    const auto bl = m.loss(batch);
    m.params().zero_grad();
    ad::backward(bl.loss);
    for (const auto& [name, v] : m.params().entries()) {
        double norm = 0;
        for (float g : v.grad().values()) norm += std::abs(g);
        INFO(name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("training runs and the checkpoint reloads bit-identically") {
    const std::vector<gpt::GptExample> data{{kCond, kCodes, kDurs}, {{0, 1}, {5, 5}, {1, 2}}, {{3}, {1}, {4}}};
    gpt::TrainOptions opts;
    opts.seed = 2;
    const auto res = gpt::train(data, tiny(), opts);
    CHECK(res.log.size() == 2);
    const auto bytes = ckpt::save(res.model);
    const auto back = ckpt::load_gpt(bytes);
    CHECK(back.forward(kCond, kCodes, kDurs).logits.value() == res.model.forward(kCond, kCodes, kDurs).logits.value());
    CHECK(ckpt::save(back) == bytes);
    CHECK(gpt::to_json_line(res.log[0]).find("\"code_nll\"") != std::string::npos);
}
