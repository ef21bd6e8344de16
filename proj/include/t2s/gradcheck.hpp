#pragma once

// Central finite-difference gradient checking, plus the battery that runs it
// over every differentiable op at double precision.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "t2s/autodiff.hpp"

namespace t2s::gradcheck {

struct Result {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t entries = 0;
};

using ScalarFn = std::function<ad::Var<double>(std::span<const ad::Var<double>>)>;

// Compares backward() against (f(x+h) − f(x−h)) / 2h for every entry of
// every input. Relative error is |a − n| / max(|a|, |n|, floor); the floor
// keeps entries whose true gradient is ~0 from dividing noise by noise.
Result check(const ScalarFn& f, std::vector<ad::Var<double>> inputs, double h = 1e-5, double floor = 1e-3);

struct OpReport {
    std::string op;
    std::size_t instances = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Every op on `instances` random inputs. Tolerance is 1e-4, except the
// attention block at 1e-3.
std::vector<OpReport> run_battery(std::uint64_t seed, std::size_t instances = 20);

}  // namespace t2s::gradcheck
