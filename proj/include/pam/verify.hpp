#pragma once

#include <functional>
#include <string>
#include <vector>

namespace pam {

struct VerifyOptions {
    bool full = false;
    // Test hook: "alpha_sign" flips the sign of the closed-form α seen by the
    // α suites.
    std::string inject_fault;
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// Runs every oracle suite; suites never throw, failures land in the result.
std::vector<SuiteResult> run_verify(const VerifyOptions& opts);

// Minimizer of a unimodal function on [lo, hi].
double golden_section_min(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10);

}  // namespace pam
