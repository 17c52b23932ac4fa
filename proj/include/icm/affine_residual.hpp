#pragma once

#include <vector>

namespace icm {

// Generic residual evaluator for constraint systems of the shape
//   sum_e A^{n,e} f(x^{n,e}) = b^n,
// with A of size (out_dim x in_dim) acting on the constitutive values f.
// Hyperelastic tokens use out_dim 2 / in_dim 2 with b = 0; diffusion tokens
// flatten the Frobenius product as out_dim 1 / in_dim 4.
struct AffineResidualInput {
    int out_dim = 2;
    int in_dim = 2;
    std::vector<double> coeffs;     // per term: out_dim * in_dim, row-major
    std::vector<double> values;     // per term: in_dim
    std::vector<int> eq_offset;     // size N+1, term ranges per equation
    std::vector<double> rhs;        // N * out_dim
};

struct AffineResidualStats {
    double max_residual = 0.0;   // max_n || sum_e A f - b ||
    double term_rms = 0.0;       // RMS_{n,e} || A f ||
    double max_relative = 0.0;   // max_residual / term_rms
    std::vector<double> per_equation;
};

AffineResidualStats evaluate_affine_residual(const AffineResidualInput& input);

}  // namespace icm
