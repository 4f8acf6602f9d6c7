#pragma once

#include <cstddef>
#include <vector>

#include "mfclab/measures.hpp"

namespace mfclab {

// mass w spread uniformly on [a,b]; a == b is an atom
struct LinePiece {
    double a, b, w;
};

// sorted, non-overlapping pieces of a 1-D measure (coordinates as stored)
std::vector<LinePiece> line_pieces(const Measure& m);
std::vector<LinePiece> sort_pieces(std::vector<LinePiece> p);

double line_cdf(const std::vector<LinePiece>& p, double x);
// integral of the quantile function over [u0,u1]
double quantile_integral(const std::vector<LinePiece>& p, double u0, double u1);

// exact integral of |Q1 - Q2|^p over (0,1), p in {1,2}
double line_transport_cost(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2, int p);
// circle: CDF-difference median formula (p = 1)
double circle_d1(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2);
// circle: minimum over the rotation offset of the lifted quantile cost
double circle_transport_cost(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2, int p);

struct AssignmentResult {
    double cost;
    std::vector<int> row_to_col;
};
// dense square min-cost assignment (Hungarian method with potentials)
AssignmentResult solve_assignment(const std::vector<double>& cost, int n);

struct TransportResult {
    double cost;
    std::vector<double> plan;  // n x m row-major
};
// exact discrete transport by successive shortest paths on the dense bipartite graph
TransportResult solve_transport(const std::vector<double>& a, const std::vector<double>& b,
                                const std::vector<double>& cost);

}  // namespace mfclab
