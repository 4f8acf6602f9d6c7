#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfclab/measures.hpp"

namespace mfclab {

struct RateRow {
    double param = 0.0;
    double value = 0.0;
    double stderr_ = 0.0;
};

struct RateTable {
    std::vector<RateRow> rows;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // rms of log residuals
};

struct LogLogFit {
    double slope, intercept, residual;
};

LogLogFit fit_loglog_slope(const RateTable& t);
// fills slope/intercept/residual in place
void fit_in_place(RateTable& t);

struct Rational {
    long num = 0, den = 1;
    double value() const { return static_cast<double>(num) / den; }
    bool operator==(const Rational&) const = default;
};

struct RateExponents {
    int d = 1;
    Rational gamma;
    Rational gamma_prime;
    int s_star = 0;
    std::string rnd_tag;  // empirical-measure rate
    std::string rdn_tag;  // p = 2 quantization-at-moment rate
};

RateExponents rate_exponents(int d);
double fournier_guillin_rate(double N, int d);
double moment_quantization_rate(double N, int d);

EmpiricalMeasure grid_center_config(int N, int d);

struct QuantizerResult {
    EmpiricalMeasure atoms;
    double d2_error = 0.0;  // certified upper bound on eps_N(nu)
    std::string method;
};

// uniform-weight N-point d2 quantizer; exact in d = 1
QuantizerResult lloyd_quantizer(const Measure& nu, int N, int iters, std::uint64_t seed, int restarts = 8);

struct QuantizationValue {
    double value = 0.0;        // v_N, certified upper bound (exact in d = 1)
    double lower_bound = 0.0;  // certified lower bound
    std::string method;
};
QuantizationValue d1_quantization_value(int N, int d);

// E d1 between N-samples and m (d = 1) or between two independent N-samples (d >= 2)
RateTable empirical_rate_mc(const Measure& m, const std::vector<int>& Ns, int trials, std::uint64_t seed);

}  // namespace mfclab
