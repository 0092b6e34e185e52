#pragma once
// Closed-form digit-indexed sequences, evaluated in log-index coordinates.
//
// Downstream code (series classification, tail closures, finiteness sandwiches)
// needs sequence values a(n) for indices as large as e^700, so the canonical
// evaluation point is t = log n rather than n itself.  The accepted grammar is
// a deliberate whitelist rather than a general expression parser:
//
//   digit-value formulas (additive):   [-] [C*] atom
//     atom ::= NUM | n | n^G | log(n) | log(n+K) | loglog(n+K)
//
//   branch-length formulas (multiplicative, parsed into log-length form):
//     [1/(] factor {* factor} [)]
//     factor ::= NUM | n[^P] | log(n)[^P] | log(n+K)[^P] | log(K*n)[^P]
//              | R^n | R^-n
//
// Both reduce to the same representation: a constant plus terms of the form
// c*n^g, c*log(s*n+k), c*log(log(s*n+k)), all exact functions of t = log n.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "emr/errors.hpp"

namespace emr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SeqTerm {
  enum class Kind { power, log, loglog };
  Kind kind = Kind::power;
  double coef = 1.0;
  double expo = 1.0;   // power only: coef * n^expo
  double scale = 1.0;  // log/loglog: coef * [log]log(scale*n + shift)
  double shift = 0.0;
};

class SeqForm {
 public:
  SeqForm() = default;

  static SeqForm constant(double c) {
    SeqForm f;
    f.c0_ = c;
    return f;
  }

  SeqForm& add_constant(double c) {
    c0_ += c;
    return *this;
  }

  SeqForm& add_power(double coef, double expo) {
    if (coef != 0.0) terms_.push_back({SeqTerm::Kind::power, coef, expo, 1, 0});
    return *this;
  }

  SeqForm& add_log(double coef, double scale, double shift) {
    if (scale <= 0 || scale + shift <= 0)
      throw UsageError("log factor must have positive argument for n >= 1");
    if (coef != 0.0) terms_.push_back({SeqTerm::Kind::log, coef, 0, scale, shift});
    return *this;
  }

  SeqForm& add_loglog(double coef, double scale, double shift) {
    if (scale <= 0 || scale + shift <= 1.0)
      throw UsageError("loglog factor needs scale*n+shift > 1 at n = 1");
    if (coef != 0.0)
      terms_.push_back({SeqTerm::Kind::loglog, coef, 0, scale, shift});
    return *this;
  }

  // Append a*other to this form.
  SeqForm& accumulate(const SeqForm& other, double a) {
    c0_ += a * other.c0_;
    for (SeqTerm t : other.terms_) {
      t.coef *= a;
      if (t.coef != 0.0) terms_.push_back(t);
    }
    return *this;
  }

  bool trivial() const { return terms_.empty(); }
  double constant_part() const { return c0_; }
  const std::vector<SeqTerm>& terms() const { return terms_; }

  // Value at index n = e^t.  Saturates to +-inf instead of overflowing.
  double operator()(double t) const {
    double acc = c0_;
    for (const SeqTerm& term : terms_) {
      double v = 0;
      switch (term.kind) {
        case SeqTerm::Kind::power: {
          double e = term.expo * t;
          if (e > 709.0) return term.coef > 0 ? kInf : -kInf;
          v = term.coef * std::exp(e);
          break;
        }
        case SeqTerm::Kind::log:
          v = term.coef * log_linear(t, term.scale, term.shift);
          break;
        case SeqTerm::Kind::loglog:
          v = term.coef * std::log(log_linear(t, term.scale, term.shift));
          break;
      }
      acc += v;
      if (std::isinf(acc)) return acc;
    }
    return acc;
  }

  double at(std::uint64_t n) const { return (*this)(std::log(double(n))); }

  // Sign of the limit as n -> inf: -1 (to -inf), +1 (to +inf), 0 (bounded,
  // limit = constant_part()).  Resolution order: growing powers beat logs beat
  // loglogs; decaying powers vanish.
  int limit_sign() const {
    double best_expo = 0;
    double best_coef = 0;
    for (const SeqTerm& t : terms_) {
      if (t.kind == SeqTerm::Kind::power && t.expo > 0) {
        if (t.expo > best_expo + 1e-15) {
          best_expo = t.expo;
          best_coef = t.coef;
        } else if (std::abs(t.expo - best_expo) <= 1e-15) {
          best_coef += t.coef;
        }
      }
    }
    if (best_expo > 0 && best_coef != 0) return best_coef > 0 ? 1 : -1;
    double log_coef = 0, loglog_coef = 0;
    for (const SeqTerm& t : terms_) {
      if (t.kind == SeqTerm::Kind::log) log_coef += t.coef;
      if (t.kind == SeqTerm::Kind::loglog) loglog_coef += t.coef;
    }
    if (log_coef != 0) return log_coef > 0 ? 1 : -1;
    if (loglog_coef != 0) return loglog_coef > 0 ? 1 : -1;
    return 0;
  }

  // Largest value over all indices n >= 1 (exact scan of small indices plus a
  // geometric ladder; whitelist forms are eventually monotone).
  double supremum() const {
    double s = -kInf;
    for (std::uint64_t n = 1; n <= 4096; ++n) s = std::max(s, at(n));
    for (double t = std::log(4096.0); t < 60.0; t *= 1.25)
      s = std::max(s, (*this)(t));
    if (limit_sign() > 0) return kInf;
    return s;
  }

 private:
  // log(scale*n + shift) as a function of t = log n, stable for huge t.
  static double log_linear(double t, double scale, double shift) {
    // log(scale*e^t + shift) = log(scale) + t + log1p(shift/(scale*e^t))
    double r = (t > 700.0) ? 0.0 : shift / (scale * std::exp(t));
    return std::log(scale) + t + std::log1p(r);
  }

  double c0_ = 0;
  std::vector<SeqTerm> terms_;
};

namespace detail {

inline std::string strip_spaces(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

inline bool parse_number(const std::string& s, std::size_t& pos, double& out) {
  std::size_t start = pos, n = s.size();
  if (pos < n && (s[pos] == '+' || s[pos] == '-')) ++pos;
  bool digits = false;
  while (pos < n && (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.')) {
    digits = digits || std::isdigit(static_cast<unsigned char>(s[pos]));
    ++pos;
  }
  if (!digits) {
    pos = start;
    return false;
  }
  if (pos < n && (s[pos] == 'e' || s[pos] == 'E')) {
    std::size_t epos = pos + 1;
    if (epos < n && (s[epos] == '+' || s[epos] == '-')) ++epos;
    std::size_t dstart = epos;
    while (epos < n && std::isdigit(static_cast<unsigned char>(s[epos]))) ++epos;
    if (epos > dstart) pos = epos;
  }
  out = std::stod(s.substr(start, pos - start));
  return true;
}

inline bool consume(const std::string& s, std::size_t& pos, const std::string& lit) {
  if (s.compare(pos, lit.size(), lit) == 0) {
    pos += lit.size();
    return true;
  }
  return false;
}

// Argument of log(...)/loglog(...): "n", "n+K", "K*n".  Returns scale, shift.
inline void parse_log_arg(const std::string& s, std::size_t& pos, double& scale,
                          double& shift, const std::string& whole) {
  scale = 1.0;
  shift = 0.0;
  double num;
  if (consume(s, pos, "n")) {
    if (consume(s, pos, "+")) {
      if (!parse_number(s, pos, shift))
        throw UsageError("bad log argument in formula: " + whole);
    }
  } else if (parse_number(s, pos, num)) {
    if (consume(s, pos, "*n")) {
      scale = num;
    } else {
      throw UsageError("bad log argument in formula: " + whole);
    }
  } else {
    throw UsageError("bad log argument in formula: " + whole);
  }
  if (!consume(s, pos, ")"))
    throw UsageError("missing ')' in formula: " + whole);
}

}  // namespace detail

// Digit-value formulas: "[-][C*]atom" with
//   atom = NUM | n | n^G | log(n) | log(n+K) | loglog(n+K)
inline SeqForm parse_digit_formula(const std::string& input) {
  using namespace detail;
  const std::string s = strip_spaces(input);
  if (s.empty()) throw UsageError("empty digit formula");
  std::size_t pos = 0;
  double sign = 1.0;
  if (consume(s, pos, "-")) sign = -1.0;
  else consume(s, pos, "+");

  double coef = sign;
  double num;
  std::size_t save = pos;
  if (parse_number(s, pos, num)) {
    if (pos == s.size()) return SeqForm::constant(sign * num);
    if (consume(s, pos, "*")) {
      coef = sign * num;
    } else {
      pos = save;  // something like "2n" — not whitelisted
      throw UsageError("unrecognized digit formula: " + input +
                       " (allowed: C, n, n^G, log(n), log(n+K), loglog(n+K), "
                       "optionally negated or scaled by C*)");
    }
  }

  SeqForm f;
  if (consume(s, pos, "loglog(")) {
    double scale, shift;
    parse_log_arg(s, pos, scale, shift, input);
    f.add_loglog(coef, scale, shift);
  } else if (consume(s, pos, "log(")) {
    double scale, shift;
    parse_log_arg(s, pos, scale, shift, input);
    f.add_log(coef, scale, shift);
  } else if (consume(s, pos, "logn")) {
    f.add_log(coef, 1, 0);
  } else if (consume(s, pos, "n")) {
    double expo = 1.0;
    if (consume(s, pos, "^")) {
      if (!parse_number(s, pos, expo))
        throw UsageError("bad exponent in digit formula: " + input);
    }
    f.add_power(coef, expo);
  } else {
    throw UsageError("unrecognized digit formula: " + input +
                     " (allowed: C, n, n^G, log(n), log(n+K), loglog(n+K), "
                     "optionally negated or scaled by C*)");
  }
  if (pos != s.size())
    throw UsageError("trailing characters in digit formula: " + input);
  return f;
}

// Branch-length formulas; returns the form of log l(n).
//   "2^-n", "1/(n*log(2*n)^2)", "n^-2*log(n+1)^-4", "0.5*n^-3", ...
inline SeqForm parse_length_formula(const std::string& input) {
  using namespace detail;
  std::string s = strip_spaces(input);
  if (s.empty()) throw UsageError("empty length formula");
  double global_sign = 1.0;  // exponent sign from a 1/( ... ) wrapper
  if (s.size() > 3 && s.compare(0, 3, "1/(") == 0 && s.back() == ')') {
    global_sign = -1.0;
    s = s.substr(3, s.size() - 4);
  }

  SeqForm f;  // accumulates log l(n)
  std::size_t pos = 0;
  bool first = true;
  while (pos < s.size()) {
    if (!first && !consume(s, pos, "*"))
      throw UsageError("expected '*' between length factors: " + input);
    first = false;

    double expo = 1.0, num;
    if (consume(s, pos, "log(")) {
      double scale, shift;
      parse_log_arg(s, pos, scale, shift, input);
      if (consume(s, pos, "^")) {
        if (!parse_number(s, pos, expo))
          throw UsageError("bad exponent in length formula: " + input);
      }
      f.add_loglog(global_sign * expo, scale, shift);
    } else if (consume(s, pos, "n")) {
      if (consume(s, pos, "^")) {
        if (!parse_number(s, pos, expo))
          throw UsageError("bad exponent in length formula: " + input);
      }
      f.add_log(global_sign * expo, 1, 0);
    } else if (parse_number(s, pos, num)) {
      if (num <= 0)
        throw UsageError("length factors must be positive: " + input);
      if (consume(s, pos, "^")) {
        // geometric factor R^n or R^-n
        double nsign = 1.0;
        if (consume(s, pos, "-")) nsign = -1.0;
        if (!consume(s, pos, "n"))
          throw UsageError("only R^n / R^-n geometric factors allowed: " + input);
        f.add_power(global_sign * nsign * std::log(num), 1.0);
      } else {
        f.add_constant(global_sign * std::log(num));
      }
    } else {
      throw UsageError("unrecognized length factor in formula: " + input +
                       " (allowed: NUM, n^P, log(n+K)^P, log(K*n)^P, R^n, R^-n)");
    }
  }
  return f;
}

}  // namespace emr
