#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace snsteg {

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;
    bool passed = false;
};

/// Compares `analytic` with central differences of the scalar function f around `point`.
/// Relative error per entry is |a - n| / max(|n|, 1e-3 * max|n|, 1e-12), so entries whose
/// true derivative is tiny are judged against the gradient's overall scale.
FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> point, std::span<const double> analytic,
                           double epsilon = 1e-5, double tolerance = 1e-5);

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Finite-difference checks of every layer's backward pass in double precision, plus an
/// end-to-end spot check of a small network for each normalization kind.
std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed = 1);

std::string format_gradcheck_table(const std::vector<CheckResult>& results);

}  // namespace snsteg
