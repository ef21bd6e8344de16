#include "t2s/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace t2s::synth {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void SyntheticSpec::validate() const {
    if (dim == 0) throw ConfigError("synthetic: dim must be positive");
    if (min_segments == 0 || min_segments > max_segments) throw ConfigError("synthetic: need 1 <= min_segments <= max_segments");
    if (min_length == 0 || min_length > max_length) throw ConfigError("synthetic: need 1 <= min_length <= max_length");
    if (min_segment_length == 0) throw ConfigError("synthetic: segment lengths must be >= 1");
    if (max_segments * min_segment_length > min_length)
        throw ConfigError("synthetic: max_segments * min_segment_length exceeds min_length");
    if (vocab_size == 0 || (max_segments > 1 && vocab_size < 2))
        throw ConfigError("synthetic: vocabulary too small for distinct neighbouring segments");
    if (!(noise >= 0.0)) throw ConfigError("synthetic: noise sigma must be >= 0");
    if (!(value_range > 0.0)) throw ConfigError("synthetic: value_range must be positive");
    if (!(geometric_p > 0.0 && geometric_p <= 1.0)) throw ConfigError("synthetic: geometric_p must lie in (0, 1]");
}

Tensor<double> gloss_table(const SyntheticSpec& spec) {
    std::mt19937_64 rng(splitmix64(spec.seed ^ 0x676c6f7373ULL));
    std::uniform_real_distribution<double> u(-spec.value_range, spec.value_range);
    Tensor<double> t(Shape{spec.vocab_size, spec.dim});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

namespace {

// Splits `spare` extra frames over the segments in proportion to w, largest
// remainder first (lowest index on ties).
std::vector<std::uint32_t> allocate(std::size_t spare, const std::vector<double>& w) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<std::uint32_t> out(w.size());
    std::vector<std::pair<double, std::size_t>> frac;
    std::size_t used = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double share = static_cast<double>(spare) * w[i] / total;
        out[i] = static_cast<std::uint32_t>(std::floor(share));
        used += out[i];
        frac.emplace_back(share - std::floor(share), i);
    }
    std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; used < spare; ++j, ++used) ++out[frac[j % frac.size()].second];
    return out;
}

}  // namespace

SyntheticItem generate_item(const SyntheticSpec& spec, const Tensor<double>& table, std::size_t index) {
    std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1)));
    const std::size_t g = std::uniform_int_distribution<std::size_t>(spec.min_segments, spec.max_segments)(rng);
    const std::size_t t = std::uniform_int_distribution<std::size_t>(spec.min_length, spec.max_length)(rng);

    std::vector<double> w(g);
    if (spec.length_mode == LengthMode::uniform) {
        std::uniform_real_distribution<double> u(0.5, 1.5);
        for (auto& x : w) x = u(rng);
    } else {
        std::geometric_distribution<int> geo(spec.geometric_p);
        for (auto& x : w) x = 1.0 + geo(rng);
    }

    SyntheticItem item;
    item.lengths = allocate(t - g * spec.min_segment_length, w);
    std::uint32_t start = 0;
    for (auto& len : item.lengths) {
        len += static_cast<std::uint32_t>(spec.min_segment_length);
        item.starts.push_back(start);
        start += len;
    }

    for (std::size_t s = 0; s < g; ++s) {
        if (s == 0) {
            item.tokens.push_back(std::uniform_int_distribution<std::uint32_t>(
                0, static_cast<std::uint32_t>(spec.vocab_size - 1))(rng));
        } else {
            auto tok = std::uniform_int_distribution<std::uint32_t>(0, static_cast<std::uint32_t>(spec.vocab_size - 2))(rng);
            if (tok >= item.tokens.back()) ++tok;
            item.tokens.push_back(tok);
        }
    }

    item.frames = Tensor<float>(Shape{t, spec.dim});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t s = 0; s < g; ++s) {
        const double* value = table.data() + item.tokens[s] * spec.dim;
        for (std::uint32_t r = item.starts[s]; r < item.starts[s] + item.lengths[s]; ++r)
            for (std::size_t j = 0; j < spec.dim; ++j)
                item.frames[r * spec.dim + j] = static_cast<float>(value[j] + spec.noise * noise(rng));
    }
    return item;
}

std::vector<SyntheticItem> gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto table = gloss_table(spec);
    std::vector<SyntheticItem> out(spec.num_sequences);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < spec.num_sequences; ++i) out[i] = generate_item(spec, table, spec.first_index + i);
    return out;
}

ToyGrammar make_toy_grammar(std::size_t vocab_size, std::size_t codebook_size, std::size_t max_duration,
                            std::uint64_t seed) {
    if (vocab_size == 0 || codebook_size == 0 || max_duration == 0) throw ConfigError("toy grammar: sizes must be positive");
    std::mt19937_64 rng(splitmix64(seed ^ 0x746f79ULL));
    ToyGrammar g;
    g.vocab_size = vocab_size;
    g.codebook_size = codebook_size;
    std::uniform_int_distribution<std::uint32_t> code(0, static_cast<std::uint32_t>(codebook_size - 1));
    for (std::size_t v = 0; v < vocab_size; ++v) {
        const std::size_t len = 1 + (rng() & 1);
        std::vector<std::uint32_t> s;
        for (std::size_t i = 0; i < len; ++i) s.push_back(code(rng));
        g.expansion.push_back(std::move(s));
    }
    std::uniform_int_distribution<std::uint32_t> dur(1, static_cast<std::uint32_t>(max_duration));
    for (std::size_t k = 0; k < codebook_size; ++k) g.duration.push_back(dur(rng));
    return g;
}

ToyItem expand(const ToyGrammar& g, std::vector<std::uint32_t> condition) {
    ToyItem item;
    for (auto tok : condition) {
        if (tok >= g.vocab_size) throw IndexError("toy grammar: token " + std::to_string(tok) + " out of vocabulary");
        for (auto c : g.expansion[tok]) {
            item.codes.push_back(c);
            item.durations.push_back(g.duration[c]);
        }
    }
    item.condition = std::move(condition);
    return item;
}

std::vector<ToyItem> sample_toy_corpus(const ToyGrammar& g, std::size_t count, std::size_t min_tokens,
                                       std::size_t max_tokens, std::uint64_t seed) {
    if (min_tokens == 0 || min_tokens > max_tokens) throw ConfigError("toy corpus: need 1 <= min_tokens <= max_tokens");
    std::mt19937_64 rng(splitmix64(seed ^ 0x636f72707573ULL));
    std::uniform_int_distribution<std::size_t> len(min_tokens, max_tokens);
    std::uniform_int_distribution<std::uint32_t> tok(0, static_cast<std::uint32_t>(g.vocab_size - 1));
    std::vector<ToyItem> out;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::uint32_t> cond(len(rng));
        for (auto& c : cond) c = tok(rng);
        out.push_back(expand(g, std::move(cond)));
    }
    return out;
}

}  // namespace t2s::synth
