#pragma once

// Symbolic complex-valued functions of z_1..z_n and their conjugates, with
// exact Wirtinger differentiation.  z_i and zb_i are treated as independent
// symbols by d_z / d_zbar; evaluation always binds zb_i = conj(z_i).
//
// Expressions are immutable, hash-consed and kept in a canonical normal form
// (sums of coefficient-weighted products of atomic powers), so structural
// equality is pointer equality and algebraic cancellation happens eagerly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace virtres {

using Complex = std::complex<double>;

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

// Point of evaluation: the coordinates z_1..z_n of one chart.
struct Point {
  std::vector<Complex> z;
  Point() = default;
  explicit Point(std::vector<Complex> zz) : z(std::move(zz)) {}
  int dim() const { return static_cast<int>(z.size()); }
};

enum class ExprKind : std::uint8_t { Constant, Var, Exp, Pow, Prod, Sum };

namespace detail {

struct Node {
  ExprKind kind;
  // Constant: value; Prod: scalar coefficient.
  Complex cval{0.0, 0.0};
  bool bar = false;   // Var: conjugated coordinate
  int index = 0;      // Var: coordinate index (0-based)
  int power = 0;      // Pow: integer exponent, never 0 or 1
  std::vector<const Node*> kids;  // Exp/Pow: 1, Prod: factors, Sum: terms
  std::size_t hash = 0;
};

inline std::size_t hash_mix(std::size_t h, std::size_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline std::size_t hash_double(double d) {
  if (d == 0.0) d = 0.0;  // collapse -0.0
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  return std::hash<std::uint64_t>{}(bits);
}

inline std::size_t node_hash(const Node& n) {
  std::size_t h = static_cast<std::size_t>(n.kind) * 0x100000001b3ull;
  h = hash_mix(h, hash_double(n.cval.real()));
  h = hash_mix(h, hash_double(n.cval.imag()));
  h = hash_mix(h, (static_cast<std::size_t>(n.index) << 1) | (n.bar ? 1 : 0));
  h = hash_mix(h, static_cast<std::size_t>(static_cast<std::int64_t>(n.power)));
  for (const Node* k : n.kids) h = hash_mix(h, reinterpret_cast<std::size_t>(k));
  return h;
}

inline bool node_equal(const Node& a, const Node& b) {
  return a.kind == b.kind && a.cval == b.cval && a.bar == b.bar &&
         a.index == b.index && a.power == b.power && a.kids == b.kids;
}

struct NodePtrHash {
  std::size_t operator()(const Node* n) const { return n->hash; }
};
struct NodePtrEq {
  bool operator()(const Node* a, const Node* b) const { return node_equal(*a, *b); }
};

// Global intern table.  Nodes live for the lifetime of the process.
class Interner {
 public:
  const Node* intern(Node&& n) {
    n.hash = node_hash(n);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = table_.find(&n);
    if (it != table_.end()) return *it;
    auto owned = std::make_unique<Node>(std::move(n));
    const Node* raw = owned.get();
    table_.insert(raw);
    storage_.push_back(std::move(owned));
    return raw;
  }

  static Interner& instance() {
    static Interner self;
    return self;
  }

 private:
  std::mutex mu_;
  std::unordered_set<const Node*, NodePtrHash, NodePtrEq> table_;
  std::vector<std::unique_ptr<Node>> storage_;
};

}  // namespace detail

class Expr;
Expr operator+(const Expr&, const Expr&);
Expr operator*(const Expr&, const Expr&);

class Expr {
 public:
  Expr() : node_(nullptr) {}

  static Expr constant(Complex c);
  static Expr constant(double d) { return constant(Complex(d, 0.0)); }
  static Expr var(int index);      // z_{index+1}
  static Expr varbar(int index);   // zb_{index+1}
  static Expr zero() { return constant(0.0); }
  static Expr one() { return constant(1.0); }

  ExprKind kind() const { return node_->kind; }
  bool is_zero() const { return node_->kind == ExprKind::Constant && node_->cval == Complex(0.0, 0.0); }
  bool is_one() const { return node_->kind == ExprKind::Constant && node_->cval == Complex(1.0, 0.0); }
  bool is_constant() const { return node_->kind == ExprKind::Constant; }
  Complex constant_value() const { return node_->cval; }

  const detail::Node* node() const { return node_; }

  bool operator==(const Expr& o) const { return node_ == o.node_; }
  bool operator!=(const Expr& o) const { return node_ != o.node_; }

  explicit Expr(const detail::Node* n) : node_(n) {}

 private:
  const detail::Node* node_;
};

namespace detail {

inline const Node* make_constant(Complex c) {
  Node n;
  n.kind = ExprKind::Constant;
  if (c.real() == 0.0) c = Complex(0.0, c.imag());
  if (c.imag() == 0.0) c = Complex(c.real(), 0.0);
  n.cval = c;
  return Interner::instance().intern(std::move(n));
}

inline const Node* make_var(bool bar, int index) {
  Node n;
  n.kind = ExprKind::Var;
  n.bar = bar;
  n.index = index;
  return Interner::instance().intern(std::move(n));
}

// Structural total order used to canonicalize factor and term lists.
inline int cmp(const Node* a, const Node* b) {
  if (a == b) return 0;
  auto rank = [](ExprKind k) {
    switch (k) {
      case ExprKind::Constant: return 0;
      case ExprKind::Var: return 1;
      case ExprKind::Exp: return 2;
      case ExprKind::Pow: return 3;
      case ExprKind::Prod: return 4;
      case ExprKind::Sum: return 5;
    }
    return 6;
  };
  if (rank(a->kind) != rank(b->kind)) return rank(a->kind) < rank(b->kind) ? -1 : 1;
  auto cmpd = [](double x, double y) { return x < y ? -1 : (x > y ? 1 : 0); };
  switch (a->kind) {
    case ExprKind::Constant: {
      int c = cmpd(a->cval.real(), b->cval.real());
      return c ? c : cmpd(a->cval.imag(), b->cval.imag());
    }
    case ExprKind::Var: {
      if (a->index != b->index) return a->index < b->index ? -1 : 1;
      if (a->bar != b->bar) return a->bar ? 1 : -1;
      return 0;
    }
    case ExprKind::Exp:
      return cmp(a->kids[0], b->kids[0]);
    case ExprKind::Pow: {
      int c = cmp(a->kids[0], b->kids[0]);
      if (c) return c;
      return a->power < b->power ? -1 : (a->power > b->power ? 1 : 0);
    }
    case ExprKind::Prod:
    case ExprKind::Sum: {
      std::size_t m = std::min(a->kids.size(), b->kids.size());
      for (std::size_t i = 0; i < m; ++i) {
        int c = cmp(a->kids[i], b->kids[i]);
        if (c) return c;
      }
      if (a->kids.size() != b->kids.size())
        return a->kids.size() < b->kids.size() ? -1 : 1;
      if (a->kind == ExprKind::Prod) {
        int c = cmpd(a->cval.real(), b->cval.real());
        return c ? c : cmpd(a->cval.imag(), b->cval.imag());
      }
      return 0;
    }
    default: return 0;
  }
}

// A term in flattened form: coefficient times a sorted list of (base, power)
// atomic factors.  Bases are Var, Exp or (negative powers only) Sum nodes.
struct FlatTerm {
  Complex coeff{1.0, 0.0};
  std::vector<std::pair<const Node*, int>> factors;  // sorted by cmp(base)
};

inline const Node* term_to_node(const FlatTerm& t);
inline const Node* make_sum(std::vector<const Node*> terms);
inline const Node* make_pow(const Node* base, int k);

inline void term_push(FlatTerm& t, const Node* base, int k) {
  if (k == 0) return;
  auto it = std::lower_bound(
      t.factors.begin(), t.factors.end(), base,
      [](const std::pair<const Node*, int>& f, const Node* b) { return cmp(f.first, b) < 0; });
  if (it != t.factors.end() && it->first == base) {
    it->second += k;
    if (it->second == 0) t.factors.erase(it);
  } else {
    t.factors.insert(it, {base, k});
  }
}

// Decompose a canonical non-Sum node into a FlatTerm.
inline FlatTerm term_of(const Node* n) {
  FlatTerm t;
  switch (n->kind) {
    case ExprKind::Constant:
      t.coeff = n->cval;
      break;
    case ExprKind::Var:
    case ExprKind::Exp:
      t.factors.push_back({n, 1});
      break;
    case ExprKind::Pow:
      t.factors.push_back({n->kids[0], n->power});
      break;
    case ExprKind::Prod:
      t.coeff = n->cval;
      for (const Node* f : n->kids) {
        if (f->kind == ExprKind::Pow)
          term_push(t, f->kids[0], f->power);
        else
          term_push(t, f, 1);
      }
      break;
    default:
      throw std::logic_error("term_of: sum is not a term");
  }
  return t;
}

inline const Node* factor_node(const Node* base, int k) {
  if (k == 1) return base;
  return make_pow(base, k);
}

inline const Node* term_to_node(const FlatTerm& t) {
  if (t.coeff == Complex(0.0, 0.0) || t.factors.empty())
    return make_constant(t.coeff);
  if (t.coeff == Complex(1.0, 0.0) && t.factors.size() == 1)
    return factor_node(t.factors[0].first, t.factors[0].second);
  Node n;
  n.kind = ExprKind::Prod;
  n.cval = t.coeff;
  for (auto& [b, k] : t.factors) n.kids.push_back(factor_node(b, k));
  return Interner::instance().intern(std::move(n));
}

// Key describing a term with its coefficient stripped; terms with equal keys
// are combined by make_sum.
inline bool term_key_less(const FlatTerm& a, const FlatTerm& b) {
  std::size_t m = std::min(a.factors.size(), b.factors.size());
  for (std::size_t i = 0; i < m; ++i) {
    int c = cmp(a.factors[i].first, b.factors[i].first);
    if (c) return c < 0;
    if (a.factors[i].second != b.factors[i].second)
      return a.factors[i].second < b.factors[i].second;
  }
  return a.factors.size() < b.factors.size();
}

inline bool term_key_equal(const FlatTerm& a, const FlatTerm& b) {
  return a.factors == b.factors;
}

inline const Node* sum_of_terms(std::vector<FlatTerm>& terms) {
  std::sort(terms.begin(), terms.end(), term_key_less);
  std::vector<FlatTerm> merged;
  for (auto& t : terms) {
    if (!merged.empty() && term_key_equal(merged.back(), t))
      merged.back().coeff += t.coeff;
    else
      merged.push_back(std::move(t));
  }
  std::vector<const Node*> out;
  for (auto& t : merged) {
    if (t.coeff == Complex(0.0, 0.0)) continue;
    out.push_back(term_to_node(t));
  }
  if (out.empty()) return make_constant(Complex(0.0, 0.0));
  if (out.size() == 1) return out[0];
  Node n;
  n.kind = ExprKind::Sum;
  n.kids = std::move(out);
  return Interner::instance().intern(std::move(n));
}

inline void collect_terms(const Node* n, std::vector<FlatTerm>& out) {
  if (n->kind == ExprKind::Sum) {
    for (const Node* t : n->kids) out.push_back(term_of(t));
  } else {
    out.push_back(term_of(n));
  }
}

inline const Node* make_add(const Node* a, const Node* b) {
  std::vector<FlatTerm> terms;
  collect_terms(a, terms);
  collect_terms(b, terms);
  return sum_of_terms(terms);
}

inline FlatTerm term_mul(const FlatTerm& a, const FlatTerm& b) {
  FlatTerm r = a;
  r.coeff *= b.coeff;
  for (auto& [base, k] : b.factors) term_push(r, base, k);
  return r;
}

inline const Node* make_mul(const Node* a, const Node* b) {
  std::vector<FlatTerm> ta, tb;
  collect_terms(a, ta);
  collect_terms(b, tb);
  std::vector<FlatTerm> out;
  out.reserve(ta.size() * tb.size());
  for (auto& x : ta)
    for (auto& y : tb) out.push_back(term_mul(x, y));
  return sum_of_terms(out);
}

inline const Node* make_pow(const Node* base, int k) {
  if (k == 0) return make_constant(Complex(1.0, 0.0));
  if (k == 1) return base;
  switch (base->kind) {
    case ExprKind::Constant: {
      if (base->cval == Complex(0.0, 0.0)) {
        if (k < 0) throw EvalError("reciprocal of exact zero constant");
        return make_constant(Complex(0.0, 0.0));
      }
      Complex v(1.0, 0.0);
      Complex b = k > 0 ? base->cval : Complex(1.0, 0.0) / base->cval;
      for (int i = 0; i < std::abs(k); ++i) v *= b;
      return make_constant(v);
    }
    case ExprKind::Var:
    case ExprKind::Exp: {
      Node n;
      n.kind = ExprKind::Pow;
      n.power = k;
      n.kids = {base};
      return Interner::instance().intern(std::move(n));
    }
    case ExprKind::Pow:
      return make_pow(base->kids[0], base->power * k);
    case ExprKind::Prod: {
      FlatTerm t = term_of(base);
      FlatTerm r;
      Complex c(1.0, 0.0);
      Complex cb = k > 0 ? t.coeff : Complex(1.0, 0.0) / t.coeff;
      for (int i = 0; i < std::abs(k); ++i) c *= cb;
      r.coeff = c;
      for (auto& [b, e] : t.factors) term_push(r, b, e * k);
      return term_to_node(r);
    }
    case ExprKind::Sum: {
      if (k > 0) {
        const Node* r = base;
        for (int i = 1; i < k; ++i) r = make_mul(r, base);
        return r;
      }
      Node n;
      n.kind = ExprKind::Pow;
      n.power = k;
      n.kids = {base};
      return Interner::instance().intern(std::move(n));
    }
  }
  throw std::logic_error("make_pow: unreachable");
}

inline const Node* make_exp(const Node* arg) {
  if (arg->kind == ExprKind::Constant) return make_constant(std::exp(arg->cval));
  Node n;
  n.kind = ExprKind::Exp;
  n.kids = {arg};
  return Interner::instance().intern(std::move(n));
}

}  // namespace detail

inline Expr Expr::constant(Complex c) { return Expr(detail::make_constant(c)); }
inline Expr Expr::var(int index) { return Expr(detail::make_var(false, index)); }
inline Expr Expr::varbar(int index) { return Expr(detail::make_var(true, index)); }

inline Expr operator+(const Expr& a, const Expr& b) { return Expr(detail::make_add(a.node(), b.node())); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr(detail::make_mul(a.node(), b.node())); }
inline Expr operator-(const Expr& a) { return Expr::constant(-1.0) * a; }
inline Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }
inline Expr pow_i(const Expr& a, int k) { return Expr(detail::make_pow(a.node(), k)); }
inline Expr recip(const Expr& a) { return pow_i(a, -1); }
inline Expr operator/(const Expr& a, const Expr& b) { return a * recip(b); }
inline Expr exp_e(const Expr& a) { return Expr(detail::make_exp(a.node())); }
inline Expr operator+(const Expr& a, double c) { return a + Expr::constant(c); }
inline Expr operator+(double c, const Expr& a) { return a + Expr::constant(c); }
inline Expr operator*(const Expr& a, double c) { return a * Expr::constant(c); }
inline Expr operator*(double c, const Expr& a) { return a * Expr::constant(c); }
inline Expr operator*(const Expr& a, Complex c) { return a * Expr::constant(c); }
inline Expr operator*(Complex c, const Expr& a) { return a * Expr::constant(c); }

// Structural conjugation: swaps z_i with zb_i and conjugates constants.
// eval(conj_expr(e), p) == conj(eval(e, p)) because evaluation binds
// zb_i = conj(z_i).
inline Expr conj_expr(const Expr& e) {
  const detail::Node* n = e.node();
  switch (n->kind) {
    case ExprKind::Constant:
      return Expr::constant(std::conj(n->cval));
    case ExprKind::Var:
      return Expr(detail::make_var(!n->bar, n->index));
    case ExprKind::Exp:
      return exp_e(conj_expr(Expr(n->kids[0])));
    case ExprKind::Pow:
      return pow_i(conj_expr(Expr(n->kids[0])), n->power);
    case ExprKind::Prod: {
      Expr r = Expr::constant(std::conj(n->cval));
      for (const detail::Node* f : n->kids) r = r * conj_expr(Expr(f));
      return r;
    }
    case ExprKind::Sum: {
      Expr r = Expr::zero();
      for (const detail::Node* t : n->kids) r = r + conj_expr(Expr(t));
      return r;
    }
  }
  throw std::logic_error("conj_expr: unreachable");
}

namespace detail {

struct DerivKey {
  const Node* node;
  int index;
  bool bar;
  bool operator==(const DerivKey& o) const {
    return node == o.node && index == o.index && bar == o.bar;
  }
};
struct DerivKeyHash {
  std::size_t operator()(const DerivKey& k) const {
    return hash_mix(hash_mix(reinterpret_cast<std::size_t>(k.node),
                             static_cast<std::size_t>(k.index)),
                    k.bar ? 1 : 0);
  }
};

inline const Node* derivative(const Node* n, int index, bool bar);

inline std::unordered_map<DerivKey, const Node*, DerivKeyHash>& deriv_cache() {
  static std::unordered_map<DerivKey, const Node*, DerivKeyHash> cache;
  return cache;
}
inline std::mutex& deriv_mutex() {
  static std::mutex mu;
  return mu;
}

inline const Node* derivative_uncached(const Node* n, int index, bool bar) {
  switch (n->kind) {
    case ExprKind::Constant:
      return make_constant(Complex(0.0, 0.0));
    case ExprKind::Var:
      return make_constant(
          (n->index == index && n->bar == bar) ? Complex(1.0, 0.0) : Complex(0.0, 0.0));
    case ExprKind::Exp:
      return make_mul(n, derivative(n->kids[0], index, bar));
    case ExprKind::Pow: {
      const Node* db = derivative(n->kids[0], index, bar);
      const Node* lhs = make_mul(make_constant(Complex(double(n->power), 0.0)),
                                 make_pow(n->kids[0], n->power - 1));
      return make_mul(lhs, db);
    }
    case ExprKind::Prod: {
      // Product rule over the factor list; exponents handled via Pow case.
      const Node* acc = make_constant(Complex(0.0, 0.0));
      for (std::size_t i = 0; i < n->kids.size(); ++i) {
        const Node* df = derivative(n->kids[i], index, bar);
        if (df->kind == ExprKind::Constant && df->cval == Complex(0.0, 0.0)) continue;
        const Node* rest = make_constant(n->cval);
        for (std::size_t j = 0; j < n->kids.size(); ++j)
          if (j != i) rest = make_mul(rest, n->kids[j]);
        acc = make_add(acc, make_mul(rest, df));
      }
      return acc;
    }
    case ExprKind::Sum: {
      const Node* acc = make_constant(Complex(0.0, 0.0));
      for (const Node* t : n->kids) acc = make_add(acc, derivative(t, index, bar));
      return acc;
    }
  }
  throw std::logic_error("derivative: unreachable");
}

inline const Node* derivative(const Node* n, int index, bool bar) {
  DerivKey key{n, index, bar};
  {
    std::lock_guard<std::mutex> lock(deriv_mutex());
    auto it = deriv_cache().find(key);
    if (it != deriv_cache().end()) return it->second;
  }
  const Node* d = derivative_uncached(n, index, bar);
  std::lock_guard<std::mutex> lock(deriv_mutex());
  deriv_cache().emplace(key, d);
  return d;
}

}  // namespace detail

// Wirtinger derivatives with z and zb treated as independent symbols.
inline Expr d_z(const Expr& e, int index) { return Expr(detail::derivative(e.node(), index, false)); }
inline Expr d_zbar(const Expr& e, int index) { return Expr(detail::derivative(e.node(), index, true)); }

// Expressions are constructed in normal form, so normalization is a no-op
// rebuild; exposed for its idempotence contract.
inline Expr normalize(const Expr& e) { return e; }

namespace detail {

inline Complex eval_node(const Node* n, const Point& p) {
  switch (n->kind) {
    case ExprKind::Constant:
      return n->cval;
    case ExprKind::Var: {
      if (n->index >= p.dim())
        throw EvalError("evaluation point has too few coordinates");
      Complex v = p.z[n->index];
      return n->bar ? std::conj(v) : v;
    }
    case ExprKind::Exp: {
      Complex v = std::exp(eval_node(n->kids[0], p));
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw EvalError("overflow in exponential");
      return v;
    }
    case ExprKind::Pow: {
      Complex b = eval_node(n->kids[0], p);
      int k = n->power;
      if (k < 0) {
        if (b == Complex(0.0, 0.0))
          throw EvalError("reciprocal evaluated at a zero of its base");
        b = Complex(1.0, 0.0) / b;
        k = -k;
      }
      Complex r(1.0, 0.0);
      Complex sq = b;
      for (int m = k; m > 0; m >>= 1) {
        if (m & 1) r *= sq;
        sq *= sq;
      }
      if (!std::isfinite(r.real()) || !std::isfinite(r.imag()))
        throw EvalError("overflow in integer power");
      return r;
    }
    case ExprKind::Prod: {
      Complex r = n->cval;
      for (const Node* f : n->kids) r *= eval_node(f, p);
      return r;
    }
    case ExprKind::Sum: {
      Complex r(0.0, 0.0);
      for (const Node* t : n->kids) r += eval_node(t, p);
      return r;
    }
  }
  throw std::logic_error("eval: unreachable");
}

}  // namespace detail

inline Complex eval(const Expr& e, const Point& p) {
  Complex v = detail::eval_node(e.node(), p);
  if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
    throw EvalError("non-finite evaluation result");
  return v;
}

// ---------------------------------------------------------------------------
// Printing.  The printed form re-parses to the same interned expression.

namespace detail {

inline std::string fmt_double(double d) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

inline std::string fmt_complex(Complex c, bool parenthesize) {
  if (c.imag() == 0.0) {
    std::string s = fmt_double(c.real());
    if (parenthesize && c.real() < 0) return "(" + s + ")";
    return s;
  }
  if (c.real() == 0.0) {
    std::string s = fmt_double(c.imag()) + "i";
    if (parenthesize) return "(" + s + ")";
    return s;
  }
  std::string s = fmt_double(c.real()) + (c.imag() < 0 ? "-" : "+") +
                  fmt_double(std::abs(c.imag())) + "i";
  return "(" + s + ")";
}

inline std::string print_node(const Node* n, int parent_prec);

// Precedence levels: 0 sum, 1 product, 2 power/atom.
inline std::string print_factor(const Node* base, int k) {
  std::string b;
  if (base->kind == ExprKind::Sum)
    b = "(" + print_node(base, 0) + ")";
  else
    b = print_node(base, 2);
  if (k == 1) return b;
  return b + "^" + (k < 0 ? "-" : "") + std::to_string(std::abs(k));
}

inline std::string print_node(const Node* n, int parent_prec) {
  switch (n->kind) {
    case ExprKind::Constant:
      return fmt_complex(n->cval, parent_prec >= 1);
    case ExprKind::Var:
      return (n->bar ? "zb" : "z") + std::to_string(n->index + 1);
    case ExprKind::Exp:
      return "exp(" + print_node(n->kids[0], 0) + ")";
    case ExprKind::Pow:
      return print_factor(n->kids[0], n->power);
    case ExprKind::Prod: {
      std::string s;
      bool lead_minus = false;
      if (n->cval == Complex(-1.0, 0.0)) {
        lead_minus = true;
      } else if (n->cval != Complex(1.0, 0.0)) {
        s = fmt_complex(n->cval, true);
      }
      for (const Node* f : n->kids) {
        if (!s.empty()) s += "*";
        if (f->kind == ExprKind::Pow)
          s += print_factor(f->kids[0], f->power);
        else
          s += print_node(f, 2);
      }
      if (lead_minus) s = "-" + s;
      if (parent_prec >= 2 || (lead_minus && parent_prec >= 1)) s = "(" + s + ")";
      return s;
    }
    case ExprKind::Sum: {
      std::string s;
      for (std::size_t i = 0; i < n->kids.size(); ++i) {
        std::string t = print_node(n->kids[i], 1);
        if (i == 0) {
          s = t;
        } else if (!t.empty() && t[0] == '-') {
          s += " - " + t.substr(1);
        } else {
          s += " + " + t;
        }
      }
      if (parent_prec >= 1) s = "(" + s + ")";
      return s;
    }
  }
  throw std::logic_error("print: unreachable");
}

}  // namespace detail

inline std::string to_string(const Expr& e) { return detail::print_node(e.node(), 0); }

// ---------------------------------------------------------------------------
// Compiled evaluation tape for hot loops (quadrature nodes, MC samples).
// Shared subexpressions are evaluated once per point.

class Tape {
 public:
  explicit Tape(const Expr& e) { root_ = compile(e.node()); }

  Complex eval(const std::vector<Complex>& z) const {
    scratch_.resize(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const Op& op = slots_[i];
      Complex v;
      switch (op.code) {
        case Code::Const: v = op.cval; break;
        case Code::Load: v = z[op.a]; break;
        case Code::LoadBar: v = std::conj(z[op.a]); break;
        case Code::Add: v = scratch_[op.a] + scratch_[op.b]; break;
        case Code::Mul: v = scratch_[op.a] * scratch_[op.b]; break;
        case Code::MulC: v = scratch_[op.a] * op.cval; break;
        case Code::AddC: v = scratch_[op.a] + op.cval; break;
        case Code::PowI: {
          Complex base = scratch_[op.a];
          int k = op.b;
          if (k < 0) {
            if (base == Complex(0.0, 0.0))
              throw EvalError("reciprocal evaluated at a zero of its base");
            base = Complex(1.0, 0.0) / base;
            k = -k;
          }
          Complex r(1.0, 0.0), sq = base;
          for (int m = k; m > 0; m >>= 1) {
            if (m & 1) r *= sq;
            sq *= sq;
          }
          v = r;
          break;
        }
        case Code::ExpOp: v = std::exp(scratch_[op.a]); break;
      }
      scratch_[i] = v;
    }
    Complex out = scratch_[root_];
    if (!std::isfinite(out.real()) || !std::isfinite(out.imag()))
      throw EvalError("non-finite evaluation result");
    return out;
  }

 private:
  enum class Code : std::uint8_t { Const, Load, LoadBar, Add, Mul, MulC, AddC, PowI, ExpOp };
  struct Op {
    Code code;
    int a = 0, b = 0;
    Complex cval{0.0, 0.0};
  };

  int emit(Op op) {
    slots_.push_back(op);
    return static_cast<int>(slots_.size()) - 1;
  }

  int compile(const detail::Node* n) {
    auto it = memo_.find(n);
    if (it != memo_.end()) return it->second;
    int slot = -1;
    switch (n->kind) {
      case ExprKind::Constant:
        slot = emit({Code::Const, 0, 0, n->cval});
        break;
      case ExprKind::Var:
        slot = emit({n->bar ? Code::LoadBar : Code::Load, n->index, 0});
        break;
      case ExprKind::Exp:
        slot = emit({Code::ExpOp, compile(n->kids[0]), 0});
        break;
      case ExprKind::Pow:
        slot = emit({Code::PowI, compile(n->kids[0]), n->power});
        break;
      case ExprKind::Prod: {
        int acc = -1;
        for (const detail::Node* f : n->kids) {
          int s = compile(f);
          acc = acc < 0 ? s : emit({Code::Mul, acc, s});
        }
        if (n->cval != Complex(1.0, 0.0))
          acc = emit({Code::MulC, acc, 0, n->cval});
        slot = acc;
        break;
      }
      case ExprKind::Sum: {
        int acc = -1;
        Complex c(0.0, 0.0);
        for (const detail::Node* t : n->kids) {
          if (t->kind == ExprKind::Constant) {
            c += t->cval;
            continue;
          }
          int s = compile(t);
          acc = acc < 0 ? s : emit({Code::Add, acc, s});
        }
        if (acc < 0)
          slot = emit({Code::Const, 0, 0, c});
        else if (c != Complex(0.0, 0.0))
          slot = emit({Code::AddC, acc, 0, c});
        else
          slot = acc;
        break;
      }
    }
    memo_.emplace(n, slot);
    return slot;
  }

  std::vector<Op> slots_;
  std::unordered_map<const detail::Node*, int> memo_;
  int root_;
  mutable std::vector<Complex> scratch_;
};

}  // namespace virtres
