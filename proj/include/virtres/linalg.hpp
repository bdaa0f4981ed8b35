#pragma once

// Dense complex linear algebra for the tiny systems that appear here
// (pullback determinants, Newton steps, metric Gram matrices; n <= 8).
// Row-major storage in flat vectors.

#include <complex>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace virtres {

using Complex = std::complex<double>;

inline Complex mat_det(std::vector<Complex> m, int n) {
  Complex det(1.0, 0.0);
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(m[col * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double v = std::abs(m[r * n + col]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best == 0.0) return Complex(0.0, 0.0);
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(m[pivot * n + c], m[col * n + c]);
      det = -det;
    }
    det *= m[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      Complex f = m[r * n + col] / m[col * n + col];
      if (f == Complex(0.0, 0.0)) continue;
      for (int c = col; c < n; ++c) m[r * n + c] -= f * m[col * n + c];
    }
  }
  return det;
}

// Solves A x = b in place; throws on a numerically singular matrix.
inline std::vector<Complex> mat_solve(std::vector<Complex> a, std::vector<Complex> b, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(a[col * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double v = std::abs(a[r * n + col]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best < 1e-300) throw std::runtime_error("singular linear system");
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[pivot * n + c], a[col * n + c]);
      std::swap(b[pivot], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      Complex f = a[r * n + col] / a[col * n + col];
      if (f == Complex(0.0, 0.0)) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<Complex> x(n);
  for (int r = n - 1; r >= 0; --r) {
    Complex s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return x;
}

inline std::vector<Complex> mat_inverse(const std::vector<Complex>& a, int n) {
  std::vector<Complex> inv(n * n);
  for (int col = 0; col < n; ++col) {
    std::vector<Complex> e(n, Complex(0.0, 0.0));
    e[col] = Complex(1.0, 0.0);
    std::vector<Complex> x = mat_solve(a, std::move(e), n);
    for (int r = 0; r < n; ++r) inv[r * n + col] = x[r];
  }
  return inv;
}

// Positive definiteness of a hermitian matrix by elimination pivots.
inline bool hermitian_positive_definite(std::vector<Complex> m, int n) {
  for (int col = 0; col < n; ++col) {
    Complex piv = m[col * n + col];
    if (std::abs(piv.imag()) > 1e-9 * (1.0 + std::abs(piv.real()))) return false;
    if (piv.real() <= 0.0) return false;
    for (int r = col + 1; r < n; ++r) {
      Complex f = m[r * n + col] / piv;
      for (int c = col; c < n; ++c) m[r * n + c] -= f * m[col * n + c];
    }
  }
  return true;
}

}  // namespace virtres
