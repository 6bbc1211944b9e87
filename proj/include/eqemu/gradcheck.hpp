#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eqemu/autodiff.hpp"

namespace eqemu::ad {

using DoubleOp = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// One differentiable op under test: random N(0, 1) inputs of the given
/// shapes are fed to `fn`.
struct GradCheckCase {
    std::string name;
    std::vector<Shape> inputs;
    DoubleOp fn;
};

struct GradCheckResult {
    std::string name;
    double max_error = 0.0;  // worst over seeds and inputs
    std::size_t seeds = 0;
    bool passed = false;
};

/// Reverse-mode gradient of L = sum(r * fn(x)) for a random projection r
/// against central differences with step h. The error of each input is
/// max|analytic - numeric| / max(max|numeric|, 1e-12).
double gradient_error(const GradCheckCase& c, std::uint64_t seed, double h = 1e-4);

GradCheckResult grad_check(const GradCheckCase& c, std::size_t seeds = 3, double tolerance = 1e-4);

/// A case for every op the models use.
std::vector<GradCheckCase> registered_op_cases();

std::vector<GradCheckResult> check_all_ops(std::size_t seeds = 3, double tolerance = 1e-4);

}  // namespace eqemu::ad
