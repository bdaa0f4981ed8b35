#pragma once

// Recursive-descent parser for the expression grammar used by scenario files
// and the CLI:
//
//   expr    := term (('+'|'-') term)*
//   term    := factor (('*'|'/') factor)*
//   factor  := base ('^' ['-'] digits)?
//   base    := '-' factor | number | var | 'i'
//            | ('exp'|'conj') '(' expr ')' | '(' expr ')'
//   var     := 'z' digits | 'zb' digits          (1-based coordinate index)
//   number  := digits ['.' digits] [('e'|'E') ['+'|'-'] digits] ['i']
//
// '^' binds tighter than unary minus, which binds tighter than '*' and '/'.
// Parse errors carry a 1-based column.

#include "virtres/expr.hpp"

#include <cctype>
#include <string>

namespace virtres {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int column)
      : std::runtime_error(msg + " (column " + std::to_string(column) + ")"),
        column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

namespace detail {

class Parser {
 public:
  Parser(const std::string& text, int dim) : s_(text), dim_(dim) {}

  Expr run() {
    skip_ws();
    if (at_end()) throw ParseError("empty expression", 1);
    Expr e = parse_expr();
    skip_ws();
    if (!at_end()) throw ParseError("unexpected trailing input", col());
    return e;
  }

 private:
  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return at_end() ? '\0' : s_[pos_]; }
  char get() { return s_[pos_++]; }
  int col() const { return static_cast<int>(pos_) + 1; }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c, const char* what) {
    if (!consume(c)) throw ParseError(std::string("expected ") + what, col());
  }

  Expr parse_expr() {
    Expr acc = parse_term();
    for (;;) {
      skip_ws();
      if (peek() == '+') {
        ++pos_;
        acc = acc + parse_term();
      } else if (peek() == '-') {
        ++pos_;
        acc = acc - parse_term();
      } else {
        return acc;
      }
    }
  }

  Expr parse_term() {
    Expr acc = parse_factor();
    for (;;) {
      skip_ws();
      if (peek() == '*') {
        ++pos_;
        acc = acc * parse_factor();
      } else if (peek() == '/') {
        int c = col();
        ++pos_;
        Expr d = parse_factor();
        if (d.is_zero()) throw ParseError("division by zero constant", c);
        acc = acc / d;
      } else {
        return acc;
      }
    }
  }

  Expr parse_factor() {
    Expr b = parse_base();
    skip_ws();
    if (peek() == '^') {
      ++pos_;
      skip_ws();
      bool neg = false;
      if (peek() == '-') {
        neg = true;
        ++pos_;
      }
      int c = col();
      if (!std::isdigit(static_cast<unsigned char>(peek())))
        throw ParseError("expected integer exponent after '^'", c);
      long k = parse_digits();
      if (k > 64) throw ParseError("exponent too large", c);
      if (neg && b.is_zero()) throw ParseError("negative power of zero", c);
      return pow_i(b, static_cast<int>(neg ? -k : k));
    }
    return b;
  }

  Expr parse_base() {
    skip_ws();
    if (at_end()) throw ParseError("unexpected end of expression", col());
    char c = peek();
    if (c == '-') {
      ++pos_;
      return -parse_factor();
    }
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      expect(')', "')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c))) return parse_word();
    throw ParseError(std::string("unexpected character '") + c + "'", col());
  }

  long parse_digits() {
    long v = 0;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + (get() - '0');
      if (v > 1000000000L) throw ParseError("number too large", col());
    }
    return v;
  }

  Expr parse_number() {
    int start = col();
    std::size_t begin = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    if (peek() == '.') {
      ++pos_;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    }
    if (peek() == 'e' || peek() == 'E') {
      std::size_t save = pos_;
      ++pos_;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
      } else {
        pos_ = save;  // 'e' begins an identifier, e.g. "2exp(...)" is an error anyway
      }
    }
    std::string digits = s_.substr(begin, pos_ - begin);
    if (digits.empty() || digits == ".")
      throw ParseError("malformed number", start);
    double v = 0;
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size())
      throw ParseError("malformed number", start);
    bool imag = false;
    if (peek() == 'i') {
      ++pos_;
      imag = true;
    }
    return Expr::constant(imag ? Complex(0.0, v) : Complex(v, 0.0));
  }

  Expr parse_word() {
    int start = col();
    std::size_t begin = pos_;
    while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) ++pos_;
    std::string word = s_.substr(begin, pos_ - begin);
    if (word == "i") return Expr::constant(Complex(0.0, 1.0));
    if (word == "exp" || word == "conj") {
      expect('(', "'(' after function name");
      Expr arg = parse_expr();
      expect(')', "')'");
      return word == "exp" ? exp_e(arg) : conj_expr(arg);
    }
    if (word == "z" || word == "zb") {
      if (!std::isdigit(static_cast<unsigned char>(peek())))
        throw ParseError("expected coordinate index after '" + word + "'", col());
      long idx = parse_digits();
      if (idx < 1 || idx > dim_)
        throw ParseError("coordinate index " + std::to_string(idx) +
                             " out of range for dimension " + std::to_string(dim_),
                         start);
      return word == "z" ? Expr::var(static_cast<int>(idx) - 1)
                         : Expr::varbar(static_cast<int>(idx) - 1);
    }
    throw ParseError("unknown identifier '" + word + "'", start);
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int dim_;
};

}  // namespace detail

// Parses `text` as a function of z1..z<dim> (and zb1..zb<dim>).
inline Expr parse_expr(const std::string& text, int dim) {
  return detail::Parser(text, dim).run();
}

}  // namespace virtres
