#pragma once
// Full-branch expanding interval maps on [0,1] with countably many branches.
//
// Two families cover every worked configuration:
//   * gauss  — x -> 1/x mod 1; inverse branches v_n(x) = 1/(n+x) onto
//     I(n) = [1/(n+1), 1/n], log|T'| on I(n) between 2 log n and 2 log(n+1).
//   * linear — branch n is affine increasing with length l_n (normalized to
//     sum 1), intervals stacked right to left: I(1) is rightmost and the
//     branch domains accumulate at 0.  Lengths come from a whitelisted
//     formula (countable alphabet) or an explicit list (finite alphabet).
//
// Shared endpoints of neighbouring branch intervals carry measure zero; all
// cylinders are treated as closed intervals, which is immaterial for every
// dimension-type quantity computed downstream.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emr/errors.hpp"
#include "emr/formulas.hpp"
#include "emr/series.hpp"

namespace emr {

class BranchMap {
 public:
  enum class Family { gauss, linear };

  static BranchMap gauss() {
    BranchMap m;
    m.family_ = Family::gauss;
    m.id_ = "gauss";
    m.has_forms_ = true;
    m.log_deriv_lower_.add_log(2, 1, 0);   // 2 log n
    m.log_deriv_upper_.add_log(2, 1, 1);   // 2 log(n+1)
    m.log_length_form_.add_log(-1, 1, 0);  // |I(n)| = 1/(n(n+1))
    m.log_length_form_.add_log(-1, 1, 1);
    m.renyi_ = 2.0;  // sup |T''|/T'^2 = sup 2x on (0,1]
    // Total oscillation of log|T'| along nested cylinders: one-cylinder
    // oscillation 2 log 2, halved (in sqrt steps) every deeper level.
    m.distortion_total_ = 2 * std::log(2.0) / (1.0 - std::exp(-0.5 * kLn2));
    return m;
  }

  static BranchMap linear_formula(const std::string& formula,
                                  std::uint64_t cutoff = 4096) {
    BranchMap m;
    m.family_ = Family::linear;
    m.id_ = "linear:" + formula;
    m.has_forms_ = true;
    m.cutoff_ = std::max<std::uint64_t>(cutoff, 64);
    SeqForm raw = parse_length_formula(formula);
    LogTermFn term = [raw](double t) { return raw(t); };
    LogSum z = log_sum_range(term, 1, kInf);
    if (!z.finite)
      throw DomainError("length formula does not define a finite total: " +
                        formula);
    m.log_norm_ = z.log_value;
    m.log_length_form_ = raw;
    m.log_length_form_.add_constant(-m.log_norm_);
    m.log_deriv_lower_.accumulate(m.log_length_form_, -1.0);
    m.log_deriv_upper_ = m.log_deriv_lower_;
    m.init_linear_tables(std::max<std::uint64_t>(m.cutoff_, 8192));
    return m;
  }

  static BranchMap linear_lengths(std::vector<double> lengths) {
    BranchMap m;
    m.family_ = Family::linear;
    m.finite_ = true;
    m.has_forms_ = false;
    if (lengths.empty()) throw UsageError("empty branch length list");
    double z = 0;
    for (double l : lengths) {
      if (!(l > 0)) throw UsageError("branch lengths must be positive");
      z += l;
    }
    m.log_norm_ = std::log(z);
    m.log_len_.reserve(lengths.size());
    for (double l : lengths) m.log_len_.push_back(std::log(l / z));
    m.cutoff_ = lengths.size();
    m.id_ = "linear:values:" + std::to_string(lengths.size());
    for (double l : lengths)
      m.id_ += ":" + std::to_string(l);
    m.build_left_endpoints();
    return m;
  }

  Family family() const { return family_; }
  bool finite_alphabet() const { return finite_; }
  bool has_forms() const { return has_forms_; }
  const std::string& id() const { return id_; }

  // Largest branch index enumeration-style operations may touch.
  std::uint64_t enumeration_cap() const {
    return finite_ ? log_len_.size() : std::max<std::uint64_t>(cutoff_, 8192);
  }

  // v_n(x) for x in [0,1].
  double inverse_branch(std::uint64_t n, double x) const {
    check_branch(n);
    if (family_ == Family::gauss) return 1.0 / (double(n) + x);
    return left_[n] + std::exp(log_len_[n - 1]) * x;
  }

  // log|T'(v_n(x))|.
  double derivative_log(std::uint64_t n, double x) const {
    check_branch(n);
    if (family_ == Family::gauss) return 2.0 * std::log(double(n) + x);
    return -log_len_[n - 1];
  }

  // Branch domain I(n) = [lo, hi].
  std::pair<double, double> branch_interval(std::uint64_t n) const {
    check_branch(n);
    if (family_ == Family::gauss)
      return {1.0 / (double(n) + 1.0), 1.0 / double(n)};
    return {left_[n], left_[n] + std::exp(log_len_[n - 1])};
  }

  // log of the normalized length of I(n); -inf past a finite alphabet.
  double log_length_at(std::uint64_t n) const {
    if (finite_ && n > log_len_.size()) return -kInf;
    if (family_ == Family::gauss)
      return -std::log(double(n)) - std::log(double(n) + 1.0);
    if (n <= log_len_.size()) return log_len_[n - 1];
    return log_length_form_(std::log(double(n)));
  }

  // Closed-form profiles (valid when has_forms()):
  const SeqForm& log_deriv_lower() const { return need_forms(), log_deriv_lower_; }
  const SeqForm& log_deriv_upper() const { return need_forms(), log_deriv_upper_; }
  const SeqForm& log_branch_length_form() const {
    return need_forms(), log_length_form_;
  }

  double renyi_constant() const { return renyi_; }
  // Bound on the oscillation of Birkhoff sums of log|T'| over cylinders.
  double distortion_total() const { return distortion_total_; }

  // Cylinder I(w_1 ... w_k) as a closed interval.
  std::pair<double, double> cylinder(const std::vector<std::uint64_t>& word) const {
    double lo = 0.0, hi = 1.0;
    for (std::size_t i = word.size(); i-- > 0;) {
      double a = inverse_branch(word[i], lo);
      double b = inverse_branch(word[i], hi);
      lo = std::min(a, b);
      hi = std::max(a, b);
    }
    return {lo, hi};
  }

  // The unique point of I(w) fixed by the composed inverse branch (the
  // periodic point with repeating itinerary w).
  double word_fixed_point(const std::vector<std::uint64_t>& word) const {
    double x = 0.5;
    for (int iter = 0; iter < 200; ++iter) {
      double y = x;
      for (std::size_t i = word.size(); i-- > 0;) y = inverse_branch(word[i], y);
      if (std::abs(y - x) < 1e-16) return y;
      x = y;
    }
    return x;
  }

 private:
  void check_branch(std::uint64_t n) const {
    if (n == 0) throw DomainError("branch indices start at 1");
    if (family_ == Family::linear && n > log_len_.size())
      throw DomainError("branch index " + std::to_string(n) +
                        " beyond the enumerated alphabet (" +
                        std::to_string(log_len_.size()) + ")");
  }

  bool need_forms() const {
    if (!has_forms_)
      throw DomainError("operation requires closed-form branch data; this map "
                        "has an explicit finite length list");
    return true;
  }

  void init_linear_tables(std::uint64_t cap) {
    log_len_.resize(cap);
    for (std::uint64_t n = 1; n <= cap; ++n)
      log_len_[n - 1] = log_length_form_(std::log(double(n)));
    build_left_endpoints();
  }

  // left_[n] = sum of normalized lengths of branches with index > n
  // (the left endpoint of I(n)), accumulated backwards so small lengths near
  // the accumulation point at 0 stay accurate.
  void build_left_endpoints() {
    std::uint64_t cap = log_len_.size();
    left_.assign(cap + 1, 0.0);
    double tail = 0.0;
    if (!finite_) {
      LogTermFn term = [this](double t) { return log_length_form_(t); };
      LogSum z = log_sum_range(term, double(cap + 1), kInf);
      tail = z.finite ? std::exp(z.log_value) : 0.0;
    }
    left_[cap] = tail;
    for (std::uint64_t n = cap; n >= 1; --n)
      left_[n - 1] = left_[n] + std::exp(log_len_[n - 1]);
    // left_[0] is the total mass, 1 up to rounding; renormalize the endpoint
    // table so branch intervals tile [0,1] exactly.
    double total = left_[0];
    for (auto& v : left_) v /= total;
  }

  Family family_ = Family::gauss;
  bool finite_ = false;
  bool has_forms_ = false;
  std::string id_;
  std::uint64_t cutoff_ = 4096;
  double log_norm_ = 0;
  double renyi_ = 0;
  double distortion_total_ = 0;
  SeqForm log_deriv_lower_, log_deriv_upper_, log_length_form_;
  std::vector<double> log_len_;  // normalized log lengths, linear family
  std::vector<double> left_;     // left endpoints, linear family
};

}  // namespace emr
