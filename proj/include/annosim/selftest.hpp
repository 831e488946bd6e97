#pragma once

#include <functional>
#include <string>
#include <vector>

#include "annosim/icnf.hpp"
#include "annosim/scnf.hpp"

namespace annosim {

struct CheckResult {
    std::string name;
    bool passed = false;
    double observed = 0.0;
    double threshold = 0.0;

    double margin() const { return threshold - observed; }
};

/// Trapezoid mass of exp(log_pdf) over [lo, hi] against 1. Parameterized on
/// the density so a broken log-det can be injected as a negative control.
CheckResult normalization_check(const std::function<double(double)>& log_pdf, double lo,
                                double hi, size_t n_points, double tol);

/// The whole diagnostic battery: gradient checks, invertibility round trips,
/// Jacobian consistency, quadrature normalization, the ELBO bound, and the
/// std-metric ordering identities.
std::vector<CheckResult> run_selftest(uint64_t seed);

}  // namespace annosim
