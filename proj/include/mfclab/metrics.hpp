#pragma once

#include <cstdint>
#include <string>

#include "mfclab/measures.hpp"

namespace mfclab {

struct MetricReport {
    double value = 0.0;
    std::string method;
    double error_bound = 0.0;
};

// half-L1; empirical vs grid bins the atoms first
double tv_distance(const Measure& m, const Measure& mp);

MetricReport wasserstein(const Measure& m, const Measure& mp, int p);
inline MetricReport d1(const Measure& m, const Measure& mp) { return wasserstein(m, mp, 1); }
inline MetricReport d2(const Measure& m, const Measure& mp) { return wasserstein(m, mp, 2); }

// (sum_k |q(k)|^2 / (1+|k|^s)^2)^(1/2) over the stored coefficients; s >= 0
double fourier_weighted_norm(const FourierCoeffs& q, double s);
// same with s >= 1 enforced
double sobolev_dual_norm(const FourierCoeffs& q, int s);
// smallest K whose omitted tail is below tol for |q(k)| <= 2; throws when K would exceed cap
int sobolev_truncation(int s, int d, double tol = 1e-8, int cap = 4096);
double sobolev_dual_norm(const Measure& m, const Measure& mp, int s);

// lower bound on the W^{-2,inf} norm of m - mp from random trigonometric test functions
double w2inf_dual_estimate(const Measure& m, const Measure& mp, int trials, std::uint64_t seed);

}  // namespace mfclab
