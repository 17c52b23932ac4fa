#include "icm/la.hpp"

#include <cassert>
#include <cmath>

#include "icm/errors.hpp"
#include "icm/parallel.hpp"

namespace icm {

// ikj-order kernels: the inner j loop is contiguous and vectorizes; the k
// accumulation order is fixed per output row, so results do not depend on
// the thread count.

Mat matmul(const Mat& A, const Mat& B) {
    assert(A.cols == B.rows);
    Mat C(A.rows, B.cols);
    const int K = A.cols, N = B.cols;
    par::for_index(A.rows, [&](std::int64_t i) {
        double* __restrict c = C.row(static_cast<int>(i));
        const double* __restrict ar = A.row(static_cast<int>(i));
        for (int k = 0; k < K; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* __restrict b = B.row(k);
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    });
    return C;
}

Mat matmul_nt(const Mat& A, const Mat& B) {
    assert(A.cols == B.cols);
    Mat C(A.rows, B.rows);
    const int K = A.cols, N = B.rows;
    par::for_index(A.rows, [&](std::int64_t i) {
        double* __restrict c = C.row(static_cast<int>(i));
        const double* __restrict ar = A.row(static_cast<int>(i));
        for (int j = 0; j < N; ++j) {
            const double* __restrict b = B.row(j);
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += ar[k] * b[k];
            c[j] = s;
        }
    });
    return C;
}

Mat matmul_tn(const Mat& A, const Mat& B) {
    assert(A.rows == B.rows);
    Mat C(A.cols, B.cols);
    const int M = A.cols, N = B.cols, K = A.rows;
    // Parallel over output rows; each row accumulates over k serially.
    par::for_index(M, [&](std::int64_t i) {
        double* __restrict c = C.row(static_cast<int>(i));
        for (int k = 0; k < K; ++k) {
            const double aki = A(k, static_cast<int>(i));
            if (aki == 0.0) continue;
            const double* __restrict b = B.row(k);
            for (int j = 0; j < N; ++j) c[j] += aki * b[j];
        }
    });
    return C;
}

void add_inplace(Mat& A, const Mat& B) {
    assert(A.same_shape(B));
    for (std::size_t i = 0; i < A.size(); ++i) A.a[i] += B.a[i];
}

void axpy_inplace(Mat& A, double s, const Mat& B) {
    assert(A.same_shape(B));
    for (std::size_t i = 0; i < A.size(); ++i) A.a[i] += s * B.a[i];
}

void scale_inplace(Mat& A, double s) {
    for (double& x : A.a) x *= s;
}

void add_row_vector(Mat& A, const Mat& bias) {
    assert(bias.rows == 1 && bias.cols == A.cols);
    par::for_index(A.rows, [&](std::int64_t i) {
        double* r = A.row(static_cast<int>(i));
        for (int j = 0; j < A.cols; ++j) r[j] += bias.a[j];
    });
}

Mat column_sum(const Mat& A) {
    Mat s(1, A.cols);
    // Parallel over columns; each column sums rows in order.
    par::for_index(A.cols, [&](std::int64_t j) {
        double acc = 0.0;
        for (int i = 0; i < A.rows; ++i) acc += A(i, static_cast<int>(j));
        s.a[static_cast<std::size_t>(j)] = acc;
    });
    return s;
}

double frobenius_norm(const Mat& A) {
    double s = 0.0;
    for (double x : A.a) s += x * x;
    return std::sqrt(s);
}

double max_abs(const Mat& A) {
    double m = 0.0;
    for (double x : A.a) m = std::max(m, std::fabs(x));
    return m;
}

bool all_finite(const Mat& A) {
    for (double x : A.a)
        if (!std::isfinite(x)) return false;
    return true;
}

void require_finite(const Mat& A, const std::string& where) {
    if (!all_finite(A)) throw NonFiniteActivation("non-finite values in " + where);
}

}  // namespace icm
