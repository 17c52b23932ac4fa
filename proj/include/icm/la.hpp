#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace icm {

// Row-major dense matrix of doubles. The network and optimizer kernels are
// built on this type instead of Eigen so that the parallel loops can pin
// their summation order (bitwise-equal results for any thread count).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    std::size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// C = A * B              (m x k) * (k x n)
Mat matmul(const Mat& A, const Mat& B);
// C = A * B^T            (m x k) * (n x k)^T
Mat matmul_nt(const Mat& A, const Mat& B);
// C = A^T * B            (k x m)^T * (k x n)
Mat matmul_tn(const Mat& A, const Mat& B);

void add_inplace(Mat& A, const Mat& B);          // A += B
void axpy_inplace(Mat& A, double s, const Mat& B);  // A += s*B
void scale_inplace(Mat& A, double s);
void add_row_vector(Mat& A, const Mat& bias);    // bias is 1 x cols
Mat column_sum(const Mat& A);                    // 1 x cols
double frobenius_norm(const Mat& A);
double max_abs(const Mat& A);
bool all_finite(const Mat& A);
void require_finite(const Mat& A, const std::string& where);

}  // namespace icm
