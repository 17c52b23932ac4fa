#include "icm/affine_residual.hpp"

#include <cmath>

#include "icm/errors.hpp"

namespace icm {

AffineResidualStats evaluate_affine_residual(const AffineResidualInput& in) {
    if (in.eq_offset.size() < 2) throw Error("affine residual needs equations");
    const int r = in.out_dim, c = in.in_dim;
    const std::size_t n_eq = in.eq_offset.size() - 1;
    if (in.rhs.size() != n_eq * static_cast<std::size_t>(r))
        throw Error("affine residual rhs size mismatch");

    AffineResidualStats stats;
    double sum2 = 0.0;
    std::size_t terms = 0;
    std::vector<double> acc(static_cast<std::size_t>(r));
    for (std::size_t n = 0; n < n_eq; ++n) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int e = in.eq_offset[n]; e < in.eq_offset[n + 1]; ++e) {
            const double* A = in.coeffs.data() + static_cast<std::size_t>(e) * r * c;
            const double* f = in.values.data() + static_cast<std::size_t>(e) * c;
            double t2 = 0.0;
            for (int i = 0; i < r; ++i) {
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += A[i * c + j] * f[j];
                acc[static_cast<std::size_t>(i)] += s;
                t2 += s * s;
            }
            sum2 += t2;
            ++terms;
        }
        double res2 = 0.0;
        for (int i = 0; i < r; ++i) {
            const double d = acc[static_cast<std::size_t>(i)] -
                             in.rhs[n * static_cast<std::size_t>(r) +
                                    static_cast<std::size_t>(i)];
            res2 += d * d;
        }
        const double res = std::sqrt(res2);
        stats.per_equation.push_back(res);
        stats.max_residual = std::max(stats.max_residual, res);
    }
    stats.term_rms =
        terms > 0 ? std::sqrt(sum2 / static_cast<double>(terms)) : 0.0;
    stats.max_relative = stats.max_residual / std::max(stats.term_rms, 1e-300);
    return stats;
}

}  // namespace icm
