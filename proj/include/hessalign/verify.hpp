#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hessalign {

struct VerifyCheck {
    std::string name;
    bool passed = false;
    double max_error = 0.0;
    double tolerance = 0.0;
};

// Independent-oracle suite: finite-difference gradients and Hessians, dense
// Hessian-vector cross-checks, the norm-gradient identity, and the Hutchinson
// convergence rate. Pure compute, no I/O.
std::vector<VerifyCheck> run_verification();

// Prints one line per check; returns true iff all pass.
bool print_verification(std::ostream& os);

}  // namespace hessalign
