#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmlat {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Error taxonomy. Validation errors map to CLI exit code 2, numerical
// failures to exit code 3.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error("[" + module + "] " + what), module_(std::move(module)) {}
    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

// Bad arguments, bad config, broken invariants detected at construction time.
class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IndexOutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Runtime numerical failures (non-finite states, divergence, starvation...).
class NumericalError : public Error {
public:
    NumericalError(std::string module, const std::string& what, int step = -1,
                   double magnitude = 0.0)
        : Error(std::move(module),
                step >= 0 ? what + " (step " + std::to_string(step) +
                                ", magnitude " + std::to_string(magnitude) + ")"
                          : what),
          step_(step), magnitude_(magnitude) {}
    int step() const noexcept { return step_; }
    double magnitude() const noexcept { return magnitude_; }

private:
    int step_;
    double magnitude_;
};

class ZeroSigmaError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class StarvationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonConvergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// ---------------------------------------------------------------------------
// Small dense-vector helpers. Everything in this library is double precision;
// dimensions are tiny (<= a few hundred), so plain loops are the right tool.
// ---------------------------------------------------------------------------

inline void check_same_dim(const char* module, const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DimensionMismatch(module, "dimension mismatch: " + std::to_string(a.size()) +
                                            " vs " + std::to_string(b.size()));
}

inline double dot(const Vec& a, const Vec& b) {
    check_same_dim("vec", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Vec& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

inline Vec operator+(const Vec& a, const Vec& b) {
    check_same_dim("vec", a, b);
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec operator-(const Vec& a, const Vec& b) {
    check_same_dim("vec", a, b);
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec operator*(double s, const Vec& a) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
    return r;
}

inline Vec& operator+=(Vec& a, const Vec& b) {
    check_same_dim("vec", a, b);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

// a += s * b
inline void axpy(double s, const Vec& b, Vec& a) {
    check_same_dim("vec", a, b);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double log_sum_exp(const std::vector<double>& xs) {
    double m = -HUGE_VAL;
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// Solves A x = b for small dense systems (Gaussian elimination, partial
// pivoting). A is row-major n x n and is clobbered.
inline Vec solve_dense(std::vector<double> A, Vec b) {
    std::size_t n = b.size();
    if (A.size() != n * n) throw DimensionMismatch("linalg", "matrix vs rhs size");
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(A[r * n + col]) > std::abs(A[piv * n + col])) piv = r;
        if (std::abs(A[piv * n + col]) < 1e-300)
            throw NumericalError("linalg", "singular system");
        if (piv != col) {
            for (std::size_t k = 0; k < n; ++k) std::swap(A[piv * n + k], A[col * n + k]);
            std::swap(b[piv], b[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = A[r * n + col] / A[col * n + col];
            if (f == 0.0) continue;
            for (std::size_t k = col; k < n; ++k) A[r * n + k] -= f * A[col * n + k];
            b[r] -= f * b[col];
        }
    }
    Vec x(n);
    for (std::size_t ri = n; ri-- > 0;) {
        double s = b[ri];
        for (std::size_t k = ri + 1; k < n; ++k) s -= A[ri * n + k] * x[k];
        x[ri] = s / A[ri * n + ri];
    }
    return x;
}

}  // namespace dpmlat
