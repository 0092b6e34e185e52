#pragma once
// Potentials on the repeller of a branch map, in the two shapes the theory
// uses:
//
//   * geometry       — phi = -log|T'|, the geometric potential.
//   * digit          — phi is constant on each branch domain, phi|I(n) = a(n)
//                      with a(n) from the whitelisted formula grammar
//                      (digit_power is the a(n) = -n^gamma special case).
//
// An affine change a*phi + b is carried along so that potentials growing the
// wrong way (for example +log n) can be placed in the standard class with
// negative values and decay to -inf; every spectrum-type result is invariant
// under the change and is reported in original coordinates by the callers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "emr/errors.hpp"
#include "emr/formulas.hpp"
#include "emr/interval_maps.hpp"

namespace emr {

class Potential {
 public:
  enum class Kind { geometry, digit, digit_power };

  static Potential geometry() {
    Potential p;
    p.kind_ = Kind::geometry;
    p.id_ = "geometry";
    return p;
  }

  static Potential digit(const std::string& formula) {
    Potential p;
    p.kind_ = Kind::digit;
    p.form_ = parse_digit_formula(formula);
    p.id_ = "digit:" + formula;
    return p;
  }

  static Potential digit_power(double gamma) {
    if (!(gamma > 0)) throw UsageError("digit_power needs gamma > 0");
    Potential p;
    p.kind_ = Kind::digit_power;
    p.form_.add_power(-1.0, gamma);
    p.gamma_ = gamma;
    p.id_ = "digit_power:" + std::to_string(gamma);
    return p;
  }

  Kind kind() const { return kind_; }
  const std::string& id() const { return id_; }
  bool locally_constant() const { return kind_ != Kind::geometry; }
  double affine_a() const { return a_; }
  double affine_b() const { return b_; }

  // Value at the point v_n(x) (the branch-n preimage of x).
  double value_at_inverse(const BranchMap& map, std::uint64_t n, double x) const {
    double raw = (kind_ == Kind::geometry) ? -map.derivative_log(n, x)
                                           : form_(std::log(double(n)));
    return a_ * raw + b_;
  }

  // Digit-indexed value for locally constant potentials (t = log n form).
  double digit_value_log_index(double t) const {
    if (kind_ == Kind::geometry)
      throw DomainError("geometry potential is not constant on branches");
    return a_ * form_(t) + b_;
  }
  double digit_value(std::uint64_t n) const {
    return digit_value_log_index(std::log(double(n)));
  }

  // Branchwise bounds as closed forms: sup and inf of phi over I(n).
  SeqForm profile_upper(const BranchMap& map) const {
    SeqForm f;
    if (kind_ == Kind::geometry) {
      // phi = -log|T'|: sup uses the smaller derivative bound.
      f.accumulate(a_ > 0 ? map.log_deriv_lower() : map.log_deriv_upper(), -a_);
    } else {
      f.accumulate(form_, a_);
    }
    f.add_constant(b_);
    return f;
  }

  SeqForm profile_lower(const BranchMap& map) const {
    SeqForm f;
    if (kind_ == Kind::geometry) {
      f.accumulate(a_ > 0 ? map.log_deriv_upper() : map.log_deriv_lower(), -a_);
    } else {
      f.accumulate(form_, a_);
    }
    f.add_constant(b_);
    return f;
  }

  // Oscillation of Birkhoff sums of phi over depth-k cylinders (total over
  // all depths).  Zero for locally constant potentials.
  double variation_total(const BranchMap& map) const {
    if (locally_constant()) return 0.0;
    return std::abs(a_) * map.distortion_total();
  }

  // Apply an explicit affine change a*phi + b on top of the current one.
  Potential with_affine(double a, double b) const {
    if (a == 0) throw UsageError("affine normalization needs a != 0");
    Potential p = *this;
    p.a_ = a * a_;
    p.b_ = a * b_ + b;
    p.id_ += ":affine(" + std::to_string(a) + "," + std::to_string(b) + ")";
    return p;
  }

  // Standard-class normalization: choose a in {+1,-1} so the potential decays
  // to -inf (when it diverges at all), then shift by b = -(1 + sup) so the
  // result is strictly negative.  Potentials already strictly negative with
  // the right orientation are returned unchanged.
  Potential normalized(const BranchMap& map) const {
    SeqForm up = profile_upper(map);
    int lim = up.limit_sign();
    double flip = (lim > 0) ? -1.0 : 1.0;
    Potential p = (flip == 1.0) ? *this : with_affine(-1.0, 0.0);
    double sup = p.profile_upper(map).supremum();
    if (sup == kInf)
      throw DomainError("potential is unbounded above in both orientations");
    if (sup < 0 && flip == 1.0) return *this;  // already standard
    return p.with_affine(1.0, -(1.0 + sup));
  }

 private:
  Kind kind_ = Kind::geometry;
  SeqForm form_;
  double gamma_ = 0;
  double a_ = 1.0, b_ = 0.0;
  std::string id_;
};

// Regularity diagnostics: the trend of phi's branch profile against the
// geometric potential's, on a geometric ladder of log-indices.
struct RegularityReport {
  enum class Ratio { zero, finite_positive, infinity, undetermined };
  Ratio ratio = Ratio::undetermined;
  double ratio_limit = 0;      // meaningful for finite_positive
  bool standard_class = false; // negative, decaying to -inf
  bool weak_class = false;     // bounded oscillation (always true here)
  std::string detail;
};

inline RegularityReport classify_regularity(const BranchMap& map,
                                            const Potential& phi) {
  RegularityReport rep;
  rep.weak_class = true;
  if (!map.has_forms()) {
    rep.detail = "finite alphabet: ratio trend undefined";
    rep.standard_class = phi.profile_upper(map).supremum() < 0;
    return rep;
  }
  SeqForm up = phi.profile_upper(map);
  rep.standard_class = (up.supremum() < 0) && (up.limit_sign() < 0);

  if (phi.kind() == Potential::Kind::geometry) {
    rep.ratio = RegularityReport::Ratio::finite_positive;
    rep.ratio_limit = 1.0;
    rep.detail = "phi is the geometric potential";
    return rep;
  }
  const SeqForm& d = map.log_deriv_lower();
  double prev = 0;
  bool have_prev = false, settled = true;
  double r = 0;
  for (double t = 10; t <= 1e6; t *= 4) {
    double denom = -d(t);
    double num = phi.digit_value_log_index(t);
    if (denom == 0 || std::isinf(num)) {
      settled = false;
      break;
    }
    r = num / denom;
    if (have_prev && std::abs(r - prev) > 1e-3 * (1 + std::abs(r)))
      settled = false;
    else if (have_prev)
      settled = true;
    prev = r;
    have_prev = true;
  }
  double r10 = phi.digit_value_log_index(10) / (-d(10));
  double r_end = phi.digit_value_log_index(1e6) / (-d(1e6));
  if (std::abs(r_end) < 1e-3 && std::abs(r_end) < 0.5 * std::abs(r10) + 1e-12) {
    rep.ratio = RegularityReport::Ratio::zero;
    rep.detail = "profile ratio decays to zero";
  } else if (std::abs(r_end) > 1e3 && std::abs(r_end) > 2 * std::abs(r10)) {
    rep.ratio = RegularityReport::Ratio::infinity;
    rep.detail = "profile ratio grows without bound";
  } else if (settled) {
    rep.ratio = RegularityReport::Ratio::finite_positive;
    rep.ratio_limit = r;
    rep.detail = "profile ratio settles";
  } else {
    rep.detail = "profile ratio trend not resolved on the ladder";
  }
  return rep;
}

}  // namespace emr
