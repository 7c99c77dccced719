#pragma once

#include <cstddef>
#include <vector>

namespace rgf {

/// Dense row-major matrix of doubles. Deliberately minimal: the model code
/// needs contiguous storage and a handful of product kernels, nothing more.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<std::size_t>(r) * c, 0.0);
    }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    std::size_t size() const { return a.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// out = A * B. Shapes: (r x k)(k x c) -> (r x c). out is resized.
void matmul(const Matrix& A, const Matrix& B, Matrix& out);

/// out += A * B.
void matmul_acc(const Matrix& A, const Matrix& B, Matrix& out);

/// out += A^T * B. Shapes: (k x r)^T (k x c) -> (r x c).
void matmul_at_b_acc(const Matrix& A, const Matrix& B, Matrix& out);

/// out = A * B^T. Shapes: (r x k)(c x k)^T -> (r x c). out is resized.
void matmul_a_bt(const Matrix& A, const Matrix& B, Matrix& out);

inline void matmul(const Matrix& A, const Matrix& B, Matrix& out) {
    out.resize(A.rows, B.cols);
    matmul_acc(A, B, out);
}

inline void matmul_acc(const Matrix& A, const Matrix& B, Matrix& out) {
    const int r = A.rows, k = A.cols, c = B.cols;
    for (int i = 0; i < r; ++i) {
        const double* arow = A.row(i);
        double* orow = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = B.row(p);
            for (int j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
    }
}

inline void matmul_at_b_acc(const Matrix& A, const Matrix& B, Matrix& out) {
    const int k = A.rows, r = A.cols, c = B.cols;
    for (int p = 0; p < k; ++p) {
        const double* arow = A.row(p);
        const double* brow = B.row(p);
        for (int i = 0; i < r; ++i) {
            const double av = arow[i];
            double* orow = out.row(i);
            for (int j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
    }
}

inline void matmul_a_bt(const Matrix& A, const Matrix& B, Matrix& out) {
    const int r = A.rows, k = A.cols, c = B.rows;
    out.resize(r, c);
    for (int i = 0; i < r; ++i) {
        const double* arow = A.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < c; ++j) {
            const double* brow = B.row(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            orow[j] = s;
        }
    }
}

}  // namespace rgf
