#pragma once

// Minimal dense linear algebra for the seq2code model: row-major matrices,
// matrix-vector products (plain and transposed, with column ranges for
// concatenated inputs) and outer-product accumulation. Doubles throughout so
// finite-difference gradient checks are meaningful.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mtc::nn {

using Vec = std::vector<double>;

struct Mat {
    int rows = 0, cols = 0;
    Vec a;

    static Mat zeros(int r, int c) {
        Mat m;
        m.rows = r;
        m.cols = c;
        m.a.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
        return m;
    }
    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
    const double* row(int r) const {
        return a.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    }
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    double at(int r, int c) const {
        return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
};

// y = M x (acc=false) or y += M x (acc=true), over columns [c0, c1).
inline void gemv_cols(const Mat& m, int c0, int c1, const double* x, double* y, bool acc) {
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row(r) + c0;
        double s = 0.0;
        int w = c1 - c0;
        for (int c = 0; c < w; ++c) s += row[c] * x[c];
        y[r] = acc ? y[r] + s : s;
    }
}

inline void gemv(const Mat& m, const double* x, double* y) { gemv_cols(m, 0, m.cols, x, y, false); }
inline void gemv_acc(const Mat& m, const double* x, double* y) {
    gemv_cols(m, 0, m.cols, x, y, true);
}

// dx += M[:, c0:c1]^T dy
inline void gemv_t_cols_acc(const Mat& m, int c0, int c1, const double* dy, double* dx) {
    for (int r = 0; r < m.rows; ++r) {
        double d = dy[r];
        if (d == 0.0) continue;
        const double* row = m.row(r) + c0;
        int w = c1 - c0;
        for (int c = 0; c < w; ++c) dx[c] += row[c] * d;
    }
}
inline void gemv_t_acc(const Mat& m, const double* dy, double* dx) {
    gemv_t_cols_acc(m, 0, m.cols, dy, dx);
}

// g[:, c0:c1] += dy x^T
inline void outer_cols_acc(Mat& g, int c0, int c1, const double* dy, const double* x) {
    for (int r = 0; r < g.rows; ++r) {
        double d = dy[r];
        if (d == 0.0) continue;
        double* row = g.row(r) + c0;
        int w = c1 - c0;
        for (int c = 0; c < w; ++c) row[c] += d * x[c];
    }
}
inline void outer_acc(Mat& g, const double* dy, const double* x) {
    outer_cols_acc(g, 0, g.cols, dy, x);
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seed-controlled.
inline void init_uniform(Mat& m, int fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : m.a) v = dist(rng);
}
inline void init_uniform(Vec& v, int fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : v) x = dist(rng);
}

}  // namespace mtc::nn
