#pragma once

// Piecewise-constant synthetic corpora with known segment structure, and a
// deterministic condition → code-string grammar for stage-2 tests.

#include <cstdint>
#include <vector>

#include "t2s/tensor.hpp"

namespace t2s::synth {

enum class LengthMode { uniform, geometric };

struct SyntheticSpec {
    std::size_t num_sequences = 500;
    std::size_t dim = 8;
    std::size_t min_segments = 1;
    std::size_t max_segments = 8;
    std::size_t min_length = 32;  // total frames T
    std::size_t max_length = 128;
    std::size_t min_segment_length = 2;
    LengthMode length_mode = LengthMode::uniform;
    double geometric_p = 0.3;
    std::size_t vocab_size = 16;  // distinct segment values ("glosses")
    double value_range = 1.0;     // gloss values drawn from U[-range, range]^d
    double noise = 0.02;
    std::uint64_t seed = 0;
    std::size_t first_index = 0;  // sequences are a pure function of (seed, index)

    void validate() const;
};

struct SyntheticItem {
    std::vector<std::uint32_t> tokens;    // one per segment, no immediate repeats
    std::vector<std::uint32_t> lengths;   // segment lengths, Σ == T
    std::vector<std::uint32_t> starts;    // first frame of each segment
    Tensor<float> frames;                 // [T × d]
};

std::uint64_t splitmix64(std::uint64_t x);

// Gloss value table [vocab × d]; depends on the seed only, never on index.
Tensor<double> gloss_table(const SyntheticSpec& spec);

SyntheticItem generate_item(const SyntheticSpec& spec, const Tensor<double>& table, std::size_t index);
std::vector<SyntheticItem> gen_synthetic(const SyntheticSpec& spec);

// Toy grammar: every condition token expands to a fixed string of 1–2 codes,
// every code has a fixed duration.
struct ToyGrammar {
    std::size_t vocab_size = 0;
    std::size_t codebook_size = 0;
    std::vector<std::vector<std::uint32_t>> expansion;  // token → codes
    std::vector<std::uint32_t> duration;                // code → frames
};

struct ToyItem {
    std::vector<std::uint32_t> condition;
    std::vector<std::uint32_t> codes;
    std::vector<std::uint32_t> durations;
};

ToyGrammar make_toy_grammar(std::size_t vocab_size, std::size_t codebook_size, std::size_t max_duration,
                            std::uint64_t seed);
ToyItem expand(const ToyGrammar& g, std::vector<std::uint32_t> condition);
std::vector<ToyItem> sample_toy_corpus(const ToyGrammar& g, std::size_t count, std::size_t min_tokens,
                                       std::size_t max_tokens, std::uint64_t seed);

}  // namespace t2s::synth
