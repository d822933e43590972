// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dvx/autodiff.hpp"

namespace dvx {

struct OpGradReport {
    std::string op;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = true;
};

/// Runs central-difference gradient checks on every registered differentiable
/// op (>= `instances` seeded random instances each) and on the three fusion
/// blocks end to end. Primitive ops are held to `primitive_tol`, the blocks
/// to `block_tol`.
std::vector<OpGradReport> run_gradient_suite(int instances = 20, double h = 1e-5,
                                             double primitive_tol = 1e-5,
                                             double block_tol = 1e-3,
                                             std::uint64_t seed = 20260809);

bool gradient_suite_passed(const std::vector<OpGradReport>& reports);

}  // namespace dvx
