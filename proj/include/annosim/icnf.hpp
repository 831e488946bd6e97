#pragma once

#include <vector>

#include "annosim/data.hpp"
#include "annosim/flow.hpp"

namespace annosim {

/// Conditional integer flow: the base CNF composed with nearest-integer
/// quantization over (y-1/2, y+1/2] intervals. The interval mass is the
/// likelihood; training uses the midpoint density as its proxy.
struct IcnfModel {
    CnfModel cnf;
    OrdinalScale scale;
};

struct IcnfArch {
    std::vector<size_t> prior_hidden{128, 128};
    size_t flow_layers = 3;
    size_t flow_hidden = 16;  // unused at dim 1; kept for config round-trips
};

IcnfModel make_icnf_model(size_t feature_dim, OrdinalScale scale, const IcnfArch& arch,
                          uint64_t seed);

/// Midpoint (rectangular-rule) proxy: the interval mass approximated by the
/// density at the integer. Differentiable; this is the training objective's
/// per-annotation term. Rejects y outside the scale unless enforce is off.
Tensor icnf_log_pmf_midpoint(const IcnfModel& model, const Tensor& x, int y, bool enforce = true);

/// Quadrature oracle: composite trapezoid over (y-1/2, y+1/2] on n_grid
/// points. Not differentiable; use it to check the midpoint proxy.
double icnf_pmf_exact(const IcnfModel& model, const Tensor& x, int y, size_t n_grid);

/// Average negative log midpoint likelihood over one example's annotations.
Tensor icnf_loss(const IcnfModel& model, const AnnotatedExample& example);

int quantize_rating(double v);

/// Sample ratings: CNF draws quantized to nearest integer, clamped to the
/// scale unless clamp is off (tests compare the unclamped law to the exact
/// interval pmf).
std::vector<int> icnf_sample(const IcnfModel& model, const Tensor& x, size_t m_star,
                             double temperature, RandomStream& rng, bool clamp = true);

std::vector<std::pair<std::string, Tensor>> icnf_named_parameters(const IcnfModel& model);

}  // namespace annosim
