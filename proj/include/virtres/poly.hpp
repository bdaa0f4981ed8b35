#pragma once

// Polynomial views of expressions: term extraction, exact multivariate
// division, and cancellation of negative sum-powers (used to keep the
// rational coefficients produced by repeated contraction/differentiation in
// lowest terms with respect to |s|^2 factors).

#include "virtres/expr.hpp"

#include <map>
#include <optional>

namespace virtres {

// Exponent vector: slots 0..n-1 are z powers, slots n..2n-1 are zb powers.
using ExpoVec = std::vector<int>;

struct Poly {
  int n = 0;
  std::map<ExpoVec, Complex> terms;
};

inline int max_var_index(const Expr& e) {
  const detail::Node* n = e.node();
  switch (n->kind) {
    case ExprKind::Constant:
      return -1;
    case ExprKind::Var:
      return n->index;
    default: {
      int m = -1;
      if (n->kind == ExprKind::Pow || n->kind == ExprKind::Exp)
        m = max_var_index(Expr(n->kids[0]));
      else
        for (const detail::Node* k : n->kids)
          m = std::max(m, max_var_index(Expr(k)));
      return m;
    }
  }
}

// Returns the polynomial form of e in z1..zn, zb1..zbn, or nullopt if e
// contains exponentials, negative powers, or non-variable power bases.
inline std::optional<Poly> poly_of(const Expr& e, int n) {
  Poly p;
  p.n = n;
  std::vector<detail::FlatTerm> terms;
  detail::collect_terms(e.node(), terms);
  for (auto& t : terms) {
    ExpoVec ev(2 * n, 0);
    for (auto& [base, k] : t.factors) {
      if (base->kind != ExprKind::Var || k < 0) return std::nullopt;
      if (base->index >= n) return std::nullopt;
      ev[base->index + (base->bar ? n : 0)] += k;
    }
    if (t.coeff != Complex(0.0, 0.0)) p.terms[ev] += t.coeff;
  }
  for (auto it = p.terms.begin(); it != p.terms.end();)
    it = it->second == Complex(0.0, 0.0) ? p.terms.erase(it) : std::next(it);
  return p;
}

inline bool is_polynomial(const Expr& e, int n) { return poly_of(e, n).has_value(); }

inline Expr expr_of(const Poly& p) {
  Expr acc = Expr::zero();
  for (auto& [ev, c] : p.terms) {
    Expr t = Expr::constant(c);
    for (int i = 0; i < p.n; ++i) {
      if (ev[i] != 0) t = t * pow_i(Expr::var(i), ev[i]);
      if (ev[p.n + i] != 0) t = t * pow_i(Expr::varbar(i), ev[p.n + i]);
    }
    acc = acc + t;
  }
  return acc;
}

namespace detail {

// Graded-lex order for choosing leading terms in division.
inline bool expo_less(const ExpoVec& a, const ExpoVec& b) {
  int da = 0, db = 0;
  for (int v : a) da += v;
  for (int v : b) db += v;
  if (da != db) return da < db;
  return a < b;
}

inline const ExpoVec* leading(const Poly& p) {
  const ExpoVec* best = nullptr;
  for (auto& [ev, c] : p.terms)
    if (!best || expo_less(*best, ev)) best = &ev;
  return best;
}

inline bool expo_divides(const ExpoVec& d, const ExpoVec& m) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (m[i] < d[i]) return false;
  return true;
}

}  // namespace detail

// Exact division P / S.  Returns the quotient when the division leaves no
// remainder (up to double round-off), nullopt otherwise.
inline std::optional<Poly> poly_divide(const Poly& P, const Poly& S) {
  if (S.terms.empty()) return std::nullopt;
  double scale = 0;
  for (auto& [ev, c] : P.terms) scale = std::max(scale, std::abs(c));
  if (scale == 0) return Poly{P.n, {}};
  const ExpoVec* slead = detail::leading(S);
  Complex scoeff = S.terms.at(*slead);
  Poly rem = P;
  Poly quot;
  quot.n = P.n;
  auto prune = [&](Poly& p) {
    for (auto it = p.terms.begin(); it != p.terms.end();)
      it = std::abs(it->second) <= 1e-13 * scale ? p.terms.erase(it) : std::next(it);
  };
  prune(rem);
  int guard = 0;
  while (!rem.terms.empty()) {
    if (++guard > 100000) return std::nullopt;
    const ExpoVec* rlead = detail::leading(rem);
    if (!detail::expo_divides(*slead, *rlead)) return std::nullopt;
    ExpoVec q(rlead->size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = (*rlead)[i] - (*slead)[i];
    Complex qc = rem.terms.at(*rlead) / scoeff;
    quot.terms[q] += qc;
    for (auto& [ev, c] : S.terms) {
      ExpoVec m(ev.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = ev[i] + q[i];
      rem.terms[m] -= qc * c;
    }
    prune(rem);
  }
  return quot;
}

// Cancels factors of the shape (polynomial sum)^-k against the polynomial
// part of each term group.  Terms are grouped by their non-polynomial factor
// lists; within a group the polynomial sum is divided by each negative-power
// base as often as the division stays exact.
inline Expr reduce_rational(const Expr& e, int n) {
  std::vector<detail::FlatTerm> terms;
  detail::collect_terms(e.node(), terms);

  struct Group {
    std::vector<std::pair<const detail::Node*, int>> other;  // non-polynomial factors
    Poly poly;
  };
  std::vector<Group> groups;

  for (auto& t : terms) {
    std::vector<std::pair<const detail::Node*, int>> other;
    ExpoVec ev(2 * n, 0);
    bool poly_ok = true;
    for (auto& [base, k] : t.factors) {
      if (base->kind == ExprKind::Var && k > 0 && base->index < n)
        ev[base->index + (base->bar ? n : 0)] += k;
      else
        other.push_back({base, k});
    }
    (void)poly_ok;
    Group* g = nullptr;
    for (auto& gg : groups)
      if (gg.other == other) {
        g = &gg;
        break;
      }
    if (!g) {
      groups.push_back(Group{std::move(other), Poly{n, {}}});
      g = &groups.back();
    }
    g->poly.terms[ev] += t.coeff;
  }

  Expr out = Expr::zero();
  for (auto& g : groups) {
    Poly p = g.poly;
    std::vector<std::pair<const detail::Node*, int>> kept;
    for (auto& [base, k] : g.other) {
      int kk = k;
      if (kk < 0 && base->kind == ExprKind::Sum) {
        auto sp = poly_of(Expr(base), n);
        if (sp && !sp->terms.empty()) {
          while (kk < 0) {
            auto q = poly_divide(p, *sp);
            if (!q) break;
            p = *q;
            ++kk;
          }
        }
      }
      if (kk != 0) kept.push_back({base, kk});
    }
    Expr part = expr_of(p);
    for (auto& [base, k] : kept) part = part * pow_i(Expr(base), k);
    out = out + part;
  }
  return out;
}

}  // namespace virtres
