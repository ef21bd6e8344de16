#include <doctest.h>

#include <cmath>
#include <set>

#include "t2s/checkpoint.hpp"
#include "t2s/errors.hpp"
#include "t2s/formats.hpp"
#include "t2s/stats.hpp"
#include "t2s/synthetic.hpp"

using namespace t2s;

TEST_CASE("synthetic corpus is a pure function of seed and index") {
    synth::SyntheticSpec s;
    s.num_sequences = 20;
    s.seed = 11;
    const auto a = synth::gen_synthetic(s), b = synth::gen_synthetic(s);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].frames == b[i].frames);
        CHECK(a[i].tokens == b[i].tokens);
    }
    // items don't depend on how many came before
    s.first_index = 5;
    s.num_sequences = 3;
    const auto c = synth::gen_synthetic(s);
    for (std::size_t i = 0; i < 3; ++i) CHECK(c[i].frames == a[i + 5].frames);
    s.seed = 12;
    CHECK(synth::gen_synthetic(s)[0].frames != c[0].frames);
}

TEST_CASE("synthetic items respect their settings") {
    synth::SyntheticSpec s;
    s.num_sequences = 300;
    s.seed = 3;
    for (auto mode : {synth::LengthMode::uniform, synth::LengthMode::geometric}) {
        s.length_mode = mode;
        std::set<std::size_t> counts;
        for (const auto& it : synth::gen_synthetic(s)) {
            const std::size_t t = it.frames.rows();
            CHECK(t >= 32);
            CHECK(t <= 128);
            CHECK(it.tokens.size() >= 1);
            CHECK(it.tokens.size() <= 8);
            counts.insert(it.tokens.size());
            std::uint32_t sum = 0;
            for (std::size_t k = 0; k < it.lengths.size(); ++k) {
                CHECK(it.lengths[k] >= 2);
                CHECK(it.starts[k] == sum);
                sum += it.lengths[k];
                if (k > 0) CHECK(it.tokens[k] != it.tokens[k - 1]);
                CHECK(it.tokens[k] < 16);
            }
            CHECK(sum == t);
        }
        CHECK(counts.size() == 8);
    }
}

TEST_CASE("synthetic frames sit near their gloss value") {
    synth::SyntheticSpec s;
    s.num_sequences = 5;
    const auto table = synth::gloss_table(s);
    const auto item = synth::generate_item(s, table, 0);
    for (std::size_t k = 0; k < item.tokens.size(); ++k)
        for (std::size_t t = item.starts[k]; t < item.starts[k] + item.lengths[k]; ++t)
            for (std::size_t j = 0; j < s.dim; ++j)
                CHECK(std::abs(item.frames[t * s.dim + j] - table[item.tokens[k] * s.dim + j]) < 0.2);
}

TEST_CASE("synthetic settings validation") {
    synth::SyntheticSpec s;
    s.min_length = 10;  // 8 segments × 2 frames does not fit
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.vocab_size = 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("toy grammar is deterministic") {
    const auto g = synth::make_toy_grammar(16, 64, 8, 3);
    for (const auto& e : g.expansion) {
        CHECK(e.size() >= 1);
        CHECK(e.size() <= 2);
    }
    const auto item = synth::expand(g, {1, 2, 3});
    CHECK(item.codes.size() == item.durations.size());
    for (std::size_t i = 0; i < item.codes.size(); ++i) CHECK(item.durations[i] == g.duration[item.codes[i]]);
    const auto c1 = synth::sample_toy_corpus(g, 10, 1, 5, 9), c2 = synth::sample_toy_corpus(g, 10, 1, 5, 9);
    for (std::size_t i = 0; i < 10; ++i) CHECK(c1[i].codes == c2[i].codes);
}

TEST_CASE("length histograms") {
    const std::vector<stats::SegmentRecord> data{{{1, 2, 1}, {3, 4, 3}}, {{2}, {4}}};
    const auto r = stats::length_report(data);
    CHECK(r.sequences == 2);
    CHECK(r.segments == 4);
    CHECK(r.frames == 14);
    CHECK(r.overall.counts.at(3) == 2);
    CHECK(r.overall.counts.at(4) == 2);
    CHECK(r.overall.total() == 4);
    CHECK(r.per_token.at(1).counts.at(3) == 2);
    CHECK(r.per_token.at(2).counts.at(4) == 2);
    const auto csv = stats::to_csv(r);
    CHECK(csv.rfind("scope,token,length,count\n", 0) == 0);
    CHECK(csv.find("overall,,3,2") != std::string::npos);
    CHECK(csv.find("token,2,4,2") != std::string::npos);
    CHECK(stats::to_json(r).find("\"per_token\"") != std::string::npos);
    CHECK(stats::downsampling_rate(14, 4) == 3.5);
}

TEST_CASE("spearman") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 6, 8, 100}, c{5, 4, 3, 2, 1};
    CHECK(stats::spearman(a, b) == doctest::Approx(1.0));
    CHECK(stats::spearman(a, c) == doctest::Approx(-1.0));
    // ties get average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3)
    const std::vector<double> t{1, 1, 2}, u{1, 2, 3};
    CHECK(stats::spearman(t, u) == doctest::Approx(std::sqrt(0.75)));
    const std::vector<double> k{7, 7, 7};
    CHECK(std::isnan(stats::spearman(k, u)));
}

TEST_CASE("sequence file round trip") {
    Tensor<float> x(Shape{3, 2}, std::vector<float>{0.5f, -1.25f, 3.0f, 1e-7f, -0.0f, 42.0f});
    const auto f = io::SequenceFile::from_tensor(x);
    const auto bytes = io::write_sequence(f);
    CHECK(bytes.size() == 20 + 6 * 4);
    CHECK(bytes[0] == 'T');
    CHECK(bytes[4] == 1);  // version, little-endian
    CHECK(io::read_sequence(bytes).to_tensor() == x);
    CHECK(io::write_sequence(io::read_sequence(bytes)) == bytes);

    io::SequenceFile wide{2, 1, 8, {0.1, 0.2}};
    const auto wb = io::write_sequence(wide);
    CHECK(io::read_sequence(wb).data == wide.data);
}

TEST_CASE("sequence file errors") {
    const auto bytes = io::write_sequence(io::SequenceFile::from_tensor(Tensor<float>(Shape{2, 2})));
    for (std::size_t n = 0; n < bytes.size(); ++n)
        CHECK_THROWS_AS(io::read_sequence(std::span(bytes).first(n)), FormatError);
    auto bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(io::read_sequence(bad), FormatError);
    bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(io::read_sequence(bad), FormatError);
    bad = bytes;
    bad[16] = 3;  // width
    CHECK_THROWS_AS(io::read_sequence(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(io::read_sequence(bad), FormatError);
}

TEST_CASE("code stream round trip and errors") {
    const io::CodeStreamFile f{64, {3, 0, 63}, {2, 1, 7}};
    const auto bytes = io::write_code_stream(f);
    CHECK(bytes.size() == 16 + 3 * 8);
    const auto g = io::read_code_stream(bytes);
    CHECK(g.codebook_size == 64);
    CHECK(g.codes == f.codes);
    CHECK(g.durations == f.durations);
    for (std::size_t n = 0; n < bytes.size(); ++n)
        CHECK_THROWS_AS(io::read_code_stream(std::span(bytes).first(n)), FormatError);
    CHECK_THROWS_AS(io::write_code_stream({4, {5}, {1}}), FormatError);
    CHECK_THROWS_AS(io::write_code_stream({4, {1}, {0}}), FormatError);
}

TEST_CASE("config JSON round trip and unknown keys") {
    dvq::DvqVaeConfig c;
    c.codebook_size = 17;
    c.embed_weight = 0.3;
    const auto back = ckpt::dvq_config_from_json(ckpt::to_json(c));
    CHECK(ckpt::to_json(back) == ckpt::to_json(c));
    CHECK(ckpt::dvq_config_from_json(nlohmann::json::object()).codebook_size == 64);
    CHECK_THROWS_AS(ckpt::dvq_config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
    gpt::GptConfig g;
    g.max_codes = 9;
    CHECK(ckpt::gpt_config_from_json(ckpt::to_json(g)).max_codes == 9);
    CHECK_THROWS_AS(ckpt::gpt_config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
}

TEST_CASE("checkpoint errors") {
    dvq::DvqVaeConfig c;
    c.input_dim = 2;
    c.hidden_dim = 8;
    c.code_dim = 8;
    c.codebook_size = 4;
    c.heads = 2;
    c.ff_dim = 8;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    const dvq::DvqVae m(c, 0);
    const auto bytes = ckpt::save(m);
    CHECK(ckpt::peek_kind(bytes) == ckpt::Kind::dvq);
    CHECK_THROWS_AS(ckpt::load_gpt(bytes), FormatError);
    auto bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(ckpt::load_dvq(bad), FormatError);
    CHECK_THROWS_AS(ckpt::load_dvq(std::span(bytes).first(bytes.size() - 1)), FormatError);
    auto other = c;
    other.codebook_size = 5;
    CHECK_THROWS_AS(ckpt::load_dvq(bytes, &other), ConfigError);
    CHECK(ckpt::save(ckpt::load_dvq(bytes, &c)) == bytes);
}
