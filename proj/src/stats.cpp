#include "t2s/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "t2s/errors.hpp"

namespace t2s::stats {

std::size_t Histogram::total() const {
    std::size_t n = 0;
    for (const auto& [len, c] : counts) n += c;
    return n;
}

LengthReport length_report(std::span<const SegmentRecord> data) {
    if (data.empty()) throw EmptyInputError("stats: empty dataset");
    LengthReport r;
    for (const auto& rec : data) {
        if (rec.tokens.size() != rec.lengths.size())
            throw DimensionError("stats: " + std::to_string(rec.tokens.size()) + " tokens with " +
                                 std::to_string(rec.lengths.size()) + " lengths");
        ++r.sequences;
        for (std::size_t i = 0; i < rec.tokens.size(); ++i) {
            ++r.overall.counts[rec.lengths[i]];
            ++r.per_token[rec.tokens[i]].counts[rec.lengths[i]];
            ++r.segments;
            r.frames += rec.lengths[i];
        }
    }
    return r;
}

std::string to_csv(const LengthReport& r) {
    std::string out = "scope,token,length,count\n";
    for (const auto& [len, c] : r.overall.counts)
        out += "overall,," + std::to_string(len) + "," + std::to_string(c) + "\n";
    for (const auto& [tok, h] : r.per_token)
        for (const auto& [len, c] : h.counts)
            out += "token," + std::to_string(tok) + "," + std::to_string(len) + "," + std::to_string(c) + "\n";
    return out;
}

std::string to_json(const LengthReport& r) {
    auto hist = [](const Histogram& h) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [len, c] : h.counts) j[std::to_string(len)] = c;
        return j;
    };
    nlohmann::json j;
    j["sequences"] = r.sequences;
    j["segments"] = r.segments;
    j["frames"] = r.frames;
    j["overall"] = hist(r.overall);
    j["per_token"] = nlohmann::json::object();
    for (const auto& [tok, h] : r.per_token) j["per_token"][std::to_string(tok)] = hist(h);
    return j.dump(2) + "\n";
}

double downsampling_rate(std::size_t total_frames, std::size_t total_codes) {
    if (total_codes == 0) throw EmptyInputError("downsampling_rate: no codes");
    return static_cast<double>(total_frames) / static_cast<double>(total_codes);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("spearman: samples differ in length");
    if (a.size() < 2) throw EmptyInputError("spearman: need at least two samples");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

}  // namespace t2s::stats
