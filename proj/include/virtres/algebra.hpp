#pragma once

// The bigraded algebra of chart-local tensor forms
//
//     sums of  c(z, zb) * dz_I ^ dzb_J (x) e_K (x) e*_L
//
// with strictly increasing index blocks.  All four generator families are
// odd, so the wedge sign of a reordering is the parity of the permutation of
// the concatenated generator list.  Canonical blade order: dz before dzb
// before frame (e) before coframe (e*), each block ascending; coefficients
// are Expr values in the chart coordinates.
//
// The duality contraction kappa pairs e_K against e*_L (zero unless K = L as
// sets, +1 on matching sorted blocks) and extends by zero across mismatched
// exterior degrees.  The three interior products (weight contraction u -| th,
// section contraction iota_s, covector contraction iota_gamma) are defined by
// pairing relations; their signs are solved from those relations over the
// basis at first use and cached, not hand-derived.

#include "virtres/expr.hpp"
#include "virtres/linalg.hpp"

#include <bit>
#include <map>
#include <optional>

namespace virtres {

class AlgebraError : public std::runtime_error {
 public:
  explicit AlgebraError(const std::string& what) : std::runtime_error(what) {}
};

struct Blade {
  std::uint16_t I = 0, J = 0, K = 0, L = 0;

  bool operator==(const Blade& o) const = default;
  bool operator<(const Blade& o) const {
    if (I != o.I) return I < o.I;
    if (J != o.J) return J < o.J;
    if (K != o.K) return K < o.K;
    return L < o.L;
  }

  int form_degree() const { return std::popcount(I) + std::popcount(J); }
  // The algebra grading: form degrees and frame degree count +1, coframe -1.
  int sharp() const {
    return std::popcount(I) + std::popcount(J) + std::popcount(K) - std::popcount(L);
  }
  // Parity of the generator count; matches sharp mod 2.
  int parity() const {
    return (std::popcount(I) + std::popcount(J) + std::popcount(K) + std::popcount(L)) & 1;
  }
};

namespace detail {

inline int cross_inversions(std::uint16_t first, std::uint16_t second) {
  // Inversions created by concatenating sorted(first), sorted(second) within
  // one generator class.
  int inv = 0;
  std::uint16_t s = second;
  while (s) {
    int x = std::countr_zero(s);
    s &= s - 1;
    std::uint16_t above = static_cast<std::uint16_t>(first >> (x + 1) << (x + 1));
    inv += std::popcount(above);
  }
  return inv;
}

}  // namespace detail

// Product of two canonical blades.  Returns the merged blade and the wedge
// sign, or sign 0 when an index collides.
inline std::pair<Blade, int> blade_mul(const Blade& a, const Blade& b) {
  if ((a.I & b.I) || (a.J & b.J) || (a.K & b.K) || (a.L & b.L)) return {Blade{}, 0};
  const std::uint16_t a_cls[4] = {a.I, a.J, a.K, a.L};
  const std::uint16_t b_cls[4] = {b.I, b.J, b.K, b.L};
  int inv = 0;
  for (int cb = 0; cb < 4; ++cb) {
    int nb = std::popcount(b_cls[cb]);
    if (!nb) continue;
    for (int ca = cb + 1; ca < 4; ++ca) inv += nb * std::popcount(a_cls[ca]);
    inv += detail::cross_inversions(a_cls[cb], b_cls[cb]);
  }
  Blade r{static_cast<std::uint16_t>(a.I | b.I), static_cast<std::uint16_t>(a.J | b.J),
          static_cast<std::uint16_t>(a.K | b.K), static_cast<std::uint16_t>(a.L | b.L)};
  return {r, (inv & 1) ? -1 : 1};
}

class TensorForm {
 public:
  explicit TensorForm(int n) : n_(n) {
    if (n < 1 || n > 16) throw AlgebraError("dimension out of range");
  }

  int dim() const { return n_; }
  bool is_zero() const { return c_.empty(); }
  const std::map<Blade, Expr>& coeffs() const { return c_; }

  void add_term(const Blade& b, const Expr& coeff) {
    std::uint16_t mask = static_cast<std::uint16_t>((1u << n_) - 1);
    if ((b.I | b.J | b.K | b.L) & ~mask)
      throw AlgebraError("blade index out of range for dimension");
    if (coeff.is_zero()) return;
    auto it = c_.find(b);
    if (it == c_.end()) {
      c_.emplace(b, coeff);
    } else {
      Expr s = it->second + coeff;
      if (s.is_zero())
        c_.erase(it);
      else
        it->second = s;
    }
  }

  Expr coeff(const Blade& b) const {
    auto it = c_.find(b);
    return it == c_.end() ? Expr::zero() : it->second;
  }

  static TensorForm zero(int n) { return TensorForm(n); }

  static TensorForm scalar(int n, const Expr& e) {
    TensorForm f(n);
    f.add_term(Blade{}, e);
    return f;
  }

  // True when every blade has the given type (i,j | k,l as popcounts).
  bool is_pure(int i, int j, int k, int l) const {
    for (auto& [b, c] : c_)
      if (std::popcount(b.I) != i || std::popcount(b.J) != j ||
          std::popcount(b.K) != k || std::popcount(b.L) != l)
        return false;
    return true;
  }

  TensorForm component(int i, int j, int k, int l) const {
    TensorForm out(n_);
    for (auto& [b, c] : c_)
      if (std::popcount(b.I) == i && std::popcount(b.J) == j &&
          std::popcount(b.K) == k && std::popcount(b.L) == l)
        out.add_term(b, c);
    return out;
  }

  // Unique algebra degree of a homogeneous form; throws on mixed degrees.
  int sharp() const {
    if (c_.empty()) throw AlgebraError("degree of zero form is undefined");
    int d = c_.begin()->first.sharp();
    for (auto& [b, c] : c_)
      if (b.sharp() != d) throw AlgebraError("form is not degree-homogeneous");
    return d;
  }

 private:
  int n_;
  std::map<Blade, Expr> c_;
};

inline TensorForm operator+(const TensorForm& a, const TensorForm& b) {
  if (a.dim() != b.dim()) throw AlgebraError("dimension mismatch");
  TensorForm r = a;
  for (auto& [blade, c] : b.coeffs()) r.add_term(blade, c);
  return r;
}

inline TensorForm operator*(const Expr& s, const TensorForm& a) {
  TensorForm r(a.dim());
  for (auto& [blade, c] : a.coeffs()) r.add_term(blade, s * c);
  return r;
}

inline TensorForm operator*(Complex s, const TensorForm& a) { return Expr::constant(s) * a; }
inline TensorForm operator*(double s, const TensorForm& a) { return Expr::constant(s) * a; }
inline TensorForm operator-(const TensorForm& a) { return -1.0 * a; }
inline TensorForm operator-(const TensorForm& a, const TensorForm& b) { return a + (-b); }

inline TensorForm wedge(const TensorForm& a, const TensorForm& b) {
  if (a.dim() != b.dim()) throw AlgebraError("dimension mismatch");
  TensorForm r(a.dim());
  for (auto& [ba, ca] : a.coeffs())
    for (auto& [bb, cb] : b.coeffs()) {
      auto [blade, sign] = blade_mul(ba, bb);
      if (!sign) continue;
      Expr c = ca * cb;
      if (sign < 0) c = -c;
      r.add_term(blade, c);
    }
  return r;
}

// Duality contraction: pairs the frame block against the coframe block.
// Blades with K != L (as sets, in particular mismatched exterior degrees)
// contract to zero.
inline TensorForm kappa(const TensorForm& a) {
  TensorForm r(a.dim());
  for (auto& [b, c] : a.coeffs())
    if (b.K == b.L) r.add_term(Blade{b.I, b.J, 0, 0}, c);
  return r;
}

inline TensorForm pairing(const TensorForm& a, const TensorForm& b) {
  return kappa(wedge(a, b));
}

// Dolbeault operator: dbar(c * blade) = sum_j dzbar_j(c) dzb_j ^ blade, the
// new dzb entering from the left; holomorphic frames contribute nothing.
inline TensorForm dbar(const TensorForm& a) {
  TensorForm r(a.dim());
  for (auto& [b, c] : a.coeffs())
    for (int j = 0; j < a.dim(); ++j) {
      Expr dc = d_zbar(c, j);
      if (dc.is_zero()) continue;
      Blade dzb{0, static_cast<std::uint16_t>(1u << j), 0, 0};
      auto [blade, sign] = blade_mul(dzb, b);
      if (!sign) continue;
      r.add_term(blade, sign < 0 ? -dc : dc);
    }
  return r;
}

namespace detail {

// Sign of kappa(product of blades), 0 when the product or contraction dies.
inline int kappa_sign(std::initializer_list<Blade> blades) {
  Blade acc{};
  int sign = 1;
  for (const Blade& b : blades) {
    auto [m, s] = blade_mul(acc, b);
    if (!s) return 0;
    acc = m;
    sign *= s;
  }
  if (acc.K != acc.L) return 0;
  return sign;
}

struct ContractKey {
  int op;
  Blade a, b;
  bool operator==(const ContractKey&) const = default;
};
struct ContractKeyHash {
  std::size_t operator()(const ContractKey& k) const {
    std::size_t h = static_cast<std::size_t>(k.op);
    auto mix = [&](const Blade& b) {
      h = hash_mix(h, (std::size_t(b.I) << 48) | (std::size_t(b.J) << 32) |
                          (std::size_t(b.K) << 16) | std::size_t(b.L));
    };
    mix(k.a);
    mix(k.b);
    return h;
  }
};

inline std::unordered_map<ContractKey, int, ContractKeyHash>& contract_cache() {
  static std::unordered_map<ContractKey, int, ContractKeyHash> cache;
  return cache;
}
inline std::mutex& contract_mutex() {
  static std::mutex mu;
  return mu;
}

template <typename Solve>
inline int cached_sign(int op, const Blade& a, const Blade& b, Solve solve) {
  ContractKey key{op, a, b};
  {
    std::lock_guard<std::mutex> lock(contract_mutex());
    auto it = contract_cache().find(key);
    if (it != contract_cache().end()) return it->second;
  }
  int s = solve();
  std::lock_guard<std::mutex> lock(contract_mutex());
  contract_cache().emplace(key, s);
  return s;
}

}  // namespace detail

// Weight contraction u -| theta for u in Om^{(i,j)}(wedge^k V) and theta in
// Om^{(p,q)}(wedge^l V*), k >= l, defined by
//   < u -| theta , nu* > = (-1)^{(i+j)l + (p+q)#u + l(l-1)/2} < u , theta ^ nu* >
// for all constant nu* in wedge^{k-l} V*.
inline TensorForm contract_weight(const TensorForm& u, const TensorForm& theta) {
  if (u.dim() != theta.dim()) throw AlgebraError("dimension mismatch");
  TensorForm r(u.dim());
  for (auto& [bu, cu] : u.coeffs()) {
    if (bu.L) throw AlgebraError("weight contraction: left factor carries coframe part");
    for (auto& [bt, ct] : theta.coeffs()) {
      if (bt.K) throw AlgebraError("weight contraction: right factor carries frame part");
      int k = std::popcount(bu.K), l = std::popcount(bt.L);
      if (k < l)
        throw AlgebraError("weight contraction: coframe degree exceeds frame degree");
      if ((bt.L & bu.K) != bt.L) continue;
      std::uint16_t rest = static_cast<std::uint16_t>(bu.K & ~bt.L);
      Blade nustar{0, 0, 0, rest};
      Blade result{0, 0, rest, 0};
      int sign = detail::cached_sign(1, bu, bt, [&]() {
        int i = std::popcount(bu.I), j = std::popcount(bu.J);
        int p = std::popcount(bt.I), q = std::popcount(bt.J);
        int sharp_u = bu.sharp();
        long e = long(i + j) * l + long(p + q) * sharp_u + long(l) * (l - 1) / 2;
        int rhs = detail::kappa_sign({bu, bt, nustar});
        if (!rhs) return 0;
        Blade form{static_cast<std::uint16_t>(bu.I | bt.I),
                   static_cast<std::uint16_t>(bu.J | bt.J), rest, 0};
        int lhs = detail::kappa_sign({form, nustar});
        if (!lhs) throw AlgebraError("weight contraction: degenerate defining relation");
        int s = ((e & 1) ? -1 : 1) * rhs * lhs;
        return s;
      });
      if (!sign) continue;
      auto [fb, fs] = blade_mul(Blade{bu.I, bu.J, 0, 0}, Blade{bt.I, bt.J, 0, 0});
      if (!fs) continue;
      Blade out{fb.I, fb.J, rest, 0};
      Expr c = cu * ct;
      if (sign < 0) c = -c;
      r.add_term(out, c);
    }
  }
  return r;
}

// Section contraction iota_alpha for alpha in A^0(V), acting on coframe
// powers:  < nu , iota_alpha(w) > = < alpha ^ nu , w >.
inline TensorForm iota_section(const TensorForm& alpha, const TensorForm& w) {
  if (alpha.dim() != w.dim()) throw AlgebraError("dimension mismatch");
  if (!alpha.is_pure(0, 0, 1, 0))
    throw AlgebraError("section contraction: contractor must lie in A0(V)");
  TensorForm r(w.dim());
  for (auto& [ba, ca] : alpha.coeffs()) {
    int a = std::countr_zero(ba.K);
    for (auto& [bw, cw] : w.coeffs()) {
      if (bw.K) throw AlgebraError("section contraction: operand carries frame part");
      if (!(bw.L & (1u << a))) continue;
      std::uint16_t rest = static_cast<std::uint16_t>(bw.L & ~(1u << a));
      Blade result{bw.I, bw.J, 0, rest};
      int sign = detail::cached_sign(2, ba, bw, [&]() {
        Blade nu{0, 0, rest, 0};
        int lhs = detail::kappa_sign({nu, result});
        if (!lhs) throw AlgebraError("section contraction: degenerate defining relation");
        int rhs = detail::kappa_sign({ba, nu, bw});
        return rhs * lhs;
      });
      if (!sign) continue;
      Expr c = ca * cw;
      if (sign < 0) c = -c;
      r.add_term(result, c);
    }
  }
  return r;
}

// Covector contraction iota_gamma for gamma in A^0(V*), acting on frame
// powers:  < iota_gamma(v) , w > = (-1)^{i+j} < v , gamma ^ w >.
inline TensorForm iota_covector(const TensorForm& gamma, const TensorForm& v) {
  if (gamma.dim() != v.dim()) throw AlgebraError("dimension mismatch");
  if (!gamma.is_pure(0, 0, 0, 1))
    throw AlgebraError("covector contraction: contractor must lie in A0(V*)");
  TensorForm r(v.dim());
  for (auto& [bg, cg] : gamma.coeffs()) {
    int g = std::countr_zero(bg.L);
    for (auto& [bv, cv] : v.coeffs()) {
      if (bv.L) throw AlgebraError("covector contraction: operand carries coframe part");
      if (!(bv.K & (1u << g))) continue;
      std::uint16_t rest = static_cast<std::uint16_t>(bv.K & ~(1u << g));
      Blade result{bv.I, bv.J, rest, 0};
      int sign = detail::cached_sign(3, bg, bv, [&]() {
        Blade w{0, 0, 0, rest};
        int lhs = detail::kappa_sign({result, w});
        if (!lhs) throw AlgebraError("covector contraction: degenerate defining relation");
        int rhs = detail::kappa_sign({bv, bg, w});
        int ij = std::popcount(bv.I) + std::popcount(bv.J);
        return ((ij & 1) ? -1 : 1) * rhs * lhs;
      });
      if (!sign) continue;
      Expr c = cg * cv;
      if (sign < 0) c = -c;
      r.add_term(result, c);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Hermitian metrics on V.  Entries h[i][j] represent h_{i jbar}, so
// (v, w)_h = sum h_{i jbar} v_i conj(w_j).  Positive definiteness is a
// pointwise property checked by elimination pivots where needed.

class HermitianMetric {
 public:
  static HermitianMetric identity(int n) {
    std::vector<Expr> e(n * n, Expr::zero());
    for (int i = 0; i < n; ++i) e[i * n + i] = Expr::one();
    return HermitianMetric(n, std::move(e));
  }

  HermitianMetric(int n, std::vector<Expr> entries) : n_(n), h_(std::move(entries)) {
    if (static_cast<int>(h_.size()) != n * n) throw AlgebraError("metric entry count");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (h_[i * n + j] != conj_expr(h_[j * n + i]))
          throw AlgebraError("metric entries are not hermitian");
  }

  int dim() const { return n_; }
  const Expr& entry(int i, int j) const { return h_[i * n_ + j]; }

  bool is_constant() const {
    for (auto& e : h_)
      if (!e.is_constant()) return false;
    return true;
  }

  bool is_identity() const {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        if (i == j && !h_[i * n_ + j].is_one()) return false;
        if (i != j && !h_[i * n_ + j].is_zero()) return false;
      }
    return true;
  }

  std::vector<Complex> eval_at(const Point& p) const {
    std::vector<Complex> m(n_ * n_);
    for (int i = 0; i < n_ * n_; ++i) m[i] = eval(h_[i], p);
    return m;
  }

 private:
  int n_;
  std::vector<Expr> h_;
};

namespace detail {

inline Complex submatrix_det(const std::vector<Complex>& m, int n, std::uint16_t rows,
                             std::uint16_t cols) {
  std::vector<int> ri, ci;
  for (int i = 0; i < n; ++i) {
    if (rows & (1u << i)) ri.push_back(i);
    if (cols & (1u << i)) ci.push_back(i);
  }
  int k = static_cast<int>(ri.size());
  if (k != static_cast<int>(ci.size())) return Complex(0.0, 0.0);
  if (k == 0) return Complex(1.0, 0.0);
  std::vector<Complex> sub(k * k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) sub[a * k + b] = m[ri[a] * n + ci[b]];
  return mat_det(sub, k);
}

}  // namespace detail

// Pointwise squared norm of a tensor form.  h is the bundle metric, g the
// chart metric on (1,0)-forms (Gram of the dz_i).  Basis blades of identity
// metrics are unit vectors.
inline double norm_sq(const TensorForm& a, const HermitianMetric& h,
                      const HermitianMetric& g, const Point& p) {
  int n = a.dim();
  if (h.dim() != n || g.dim() != n) throw AlgebraError("metric dimension mismatch");
  std::vector<Complex> H = h.eval_at(p), G = g.eval_at(p);
  if (!hermitian_positive_definite(H, n))
    throw AlgebraError("bundle metric is not positive definite at the point");
  if (!hermitian_positive_definite(G, n))
    throw AlgebraError("chart metric is not positive definite at the point");
  std::vector<Complex> Hinv = mat_inverse(H, n);
  // Gram of the dual coframe e^i.
  std::vector<Complex> D(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) D[i * n + j] = Hinv[j * n + i];

  std::vector<std::pair<Blade, Complex>> vals;
  for (auto& [b, c] : a.coeffs()) vals.push_back({b, eval(c, p)});

  Complex acc(0.0, 0.0);
  for (auto& [b1, c1] : vals)
    for (auto& [b2, c2] : vals) {
      if (std::popcount(b1.I) != std::popcount(b2.I) ||
          std::popcount(b1.J) != std::popcount(b2.J) ||
          std::popcount(b1.K) != std::popcount(b2.K) ||
          std::popcount(b1.L) != std::popcount(b2.L))
        continue;
      Complex m = detail::submatrix_det(G, n, b1.I, b2.I) *
                  std::conj(detail::submatrix_det(G, n, b1.J, b2.J)) *
                  detail::submatrix_det(H, n, b1.K, b2.K) *
                  detail::submatrix_det(D, n, b1.L, b2.L);
      acc += c1 * std::conj(c2) * m;
    }
  double v = acc.real();
  if (std::abs(acc.imag()) > 1e-9 * (1.0 + std::abs(v)))
    throw AlgebraError("norm_sq produced a non-real value");
  return v;
}

inline double norm_sq(const TensorForm& a, const HermitianMetric& h, const Point& p) {
  return norm_sq(a, h, HermitianMetric::identity(a.dim()), p);
}

// Pointwise evaluation of a TensorForm: blade -> complex coefficient map.
struct FormValue {
  int n = 0;
  std::map<Blade, Complex> c;

  Complex coeff(const Blade& b) const {
    auto it = c.find(b);
    return it == c.end() ? Complex(0.0, 0.0) : it->second;
  }

  double max_abs() const {
    double m = 0;
    for (auto& [b, v] : c) m = std::max(m, std::abs(v));
    return m;
  }
};

inline FormValue eval_form(const TensorForm& a, const Point& p) {
  FormValue v;
  v.n = a.dim();
  for (auto& [b, c] : a.coeffs()) {
    Complex x = eval(c, p);
    if (x != Complex(0.0, 0.0)) v.c[b] = x;
  }
  return v;
}

inline FormValue operator+(const FormValue& a, const FormValue& b) {
  FormValue r = a;
  for (auto& [blade, x] : b.c) r.c[blade] += x;
  return r;
}

inline FormValue operator*(Complex s, const FormValue& a) {
  FormValue r = a;
  for (auto& [blade, x] : r.c) x *= s;
  return r;
}

inline FormValue operator-(const FormValue& a, const FormValue& b) {
  return a + (Complex(-1.0, 0.0) * b);
}

inline FormValue wedge(const FormValue& a, const FormValue& b) {
  FormValue r;
  r.n = a.n;
  for (auto& [ba, ca] : a.c)
    for (auto& [bb, cb] : b.c) {
      auto [blade, sign] = blade_mul(ba, bb);
      if (!sign) continue;
      r.c[blade] += double(sign) * ca * cb;
    }
  return r;
}

}  // namespace virtres
