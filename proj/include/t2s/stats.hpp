#pragma once

// Segment-length histograms (overall and per condition token), compression
// accounting and rank correlation.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace t2s::stats {

struct SegmentRecord {
    std::vector<std::uint32_t> tokens;   // one per segment
    std::vector<std::uint32_t> lengths;  // same size as tokens
};

struct Histogram {
    std::map<std::uint32_t, std::size_t> counts;  // length → occurrences
    std::size_t total() const;
};

struct LengthReport {
    Histogram overall;
    std::map<std::uint32_t, Histogram> per_token;
    std::size_t sequences = 0;
    std::size_t segments = 0;
    std::size_t frames = 0;
};

LengthReport length_report(std::span<const SegmentRecord> data);

// CSV with a header row: scope,token,length,count (scope is "overall" or
// "token"; token is empty for overall rows).
std::string to_csv(const LengthReport& r);
std::string to_json(const LengthReport& r);

// frames / codes over a corpus.
double downsampling_rate(std::size_t total_frames, std::size_t total_codes);

// Spearman's ρ with average ranks for ties; NaN when either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace t2s::stats
