#pragma once

// Independent reference implementations used by unit and acceptance tests.
// Deliberately naive: scalar loops, no shared code with the library.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// S_t = floor((I_1 + … + I_t) / O), running sum in double.
inline std::vector<std::uint32_t> segment(const std::vector<double>& weights, double threshold) {
    std::vector<std::uint32_t> s;
    double run = 0.0;
    for (double w : weights) {
        run = run + w;
        s.push_back(static_cast<std::uint32_t>(std::floor(run / threshold)));
    }
    return s;
}

// Exhaustive nearest code, lowest index wins ties.
inline std::uint32_t nearest(const std::vector<double>& z, const std::vector<std::vector<double>>& codes) {
    std::uint32_t best = 0;
    double best_d = INFINITY;
    for (std::uint32_t k = 0; k < codes.size(); ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) d += (z[j] - codes[k][j]) * (z[j] - codes[k][j]);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// Row r of the output is row i of z for the i whose duration block covers r.
inline std::vector<std::uint32_t> regulate_index(const std::vector<std::uint32_t>& durations) {
    std::vector<std::uint32_t> idx;
    for (std::uint32_t i = 0; i < durations.size(); ++i)
        for (std::uint32_t r = 0; r < durations[i]; ++r) idx.push_back(i);
    return idx;
}

}  // namespace oracle
