#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace skyhdr {

struct GradCheckResult {
    std::string op;
    int instances = 0;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Compares every tape operation's analytic gradient with central finite
/// differences in double precision on random instances. The relative error
/// of a coordinate is |a - n| / max(|a|, |n|, 1e-3 * max_k |a_k|).
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int instances = 20,
                                                 double tolerance = 1e-3);

std::string format_gradcheck(const std::vector<GradCheckResult>& results);

}  // namespace skyhdr
