// Independent verification layer for the spectrum machinery: almost-every-
// point averages of digit potentials (weighted series and exact-arithmetic
// Monte Carlo), cylinder-cover upper bounds for level-set dimensions, and
// finite-subsystem variational lower bounds.  Everything here deliberately
// avoids the transfer-operator route so that agreement with the spectral
// results is evidence, not circularity.

#pragma once

#include <gmp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "emr/errors.hpp"
#include "emr/formulas.hpp"
#include "emr/interval_maps.hpp"
#include "emr/potentials.hpp"
#include "emr/pressure.hpp"
#include "emr/series.hpp"

namespace emr {

// ---- weighted digit series ---------------------------------------------------

struct SeriesAverage {
  double value = 0;       // partial sum of phi(n) * mu(I(n))
  double tail_bound = 0;  // integral-comparison bound on the dropped tail
  bool divergent = false;
  std::uint64_t terms = 0;
  std::string note;
};

namespace detail {

// log of the invariant-density branch weight log(1 + 1/(n(n+2)))/log 2 at
// continuous index n = e^t, stable for all t.
inline double log_digit_weight(double t) {
  double lg = 2.0 * t + std::log1p(2.0 * std::exp(-t));  // log(n(n+2))
  double u = std::exp(-lg);                              // 1/(n(n+2))
  // log( log1p(u)/u ): the correction between log1p(u) and u
  double corr = (u > 1e-8) ? std::log(std::log1p(u) / u) : -0.5 * u;
  return -std::log(std::log(2.0)) - lg + corr;
}

}  // namespace detail

// Average of a branchwise-constant potential with respect to the invariant
// density of the continued-fraction map:  sum phi(n) log(1+1/(n(n+2)))/log 2.
// The weighted series converges whenever phi grows slower than linearly; a
// divergent weighted tail is reported, not summed.
inline SeriesAverage khinchin_series(const Potential& phi,
                                     std::uint64_t terms = 10000000) {
  if (!phi.locally_constant())
    throw UsageError("series averages need a branchwise-constant potential");
  SeriesAverage out;
  out.terms = terms;

  auto log_term = [&](double t) {
    double v = phi.digit_value_log_index(t);
    if (v == 0.0) return -kInf;
    return std::log(std::abs(v)) + detail::log_digit_weight(t);
  };
  SeriesClassification cls = classify_series(log_term);
  if (cls.verdict == SeriesClassification::Verdict::diverges) {
    out.divergent = true;
    out.note = "weighted digit series diverges: " + cls.detail;
    out.tail_bound = kInf;
    return out;
  }
  if (cls.verdict == SeriesClassification::Verdict::inconclusive) {
    out.note = "weighted tail classification inconclusive: " + cls.detail;
    out.tail_bound = kInf;
    return out;
  }

  // Kahan-compensated partial sum.
  double sum = 0, comp = 0;
  const double inv_ln2 = 1.0 / std::log(2.0);
  for (std::uint64_t n = 1; n <= terms; ++n) {
    double x = double(n);
    double w = std::log1p(1.0 / (x * (x + 2.0))) * inv_ln2;
    double y = phi.digit_value(n) * w - comp;
    double s = sum + y;
    comp = (s - sum) - y;
    sum = s;
  }
  out.value = sum;

  // Tail: |phi(n)| w(n) is eventually decreasing for every admissible form,
  // so the dropped sum is at most the integral from `terms` upward (the +s
  // converts the log-index integrand back to the index measure).
  auto tail_term = [&](double t) { return log_term(t) + t; };
  LogSum tail = integrate_exp_log(tail_term, std::log(double(terms)), kInf,
                                  1e-8);
  if (!tail.finite) {
    out.tail_bound = kInf;
    out.note = "tail integral did not settle";
    return out;
  }
  double log_tail = log_add_exp(tail.log_value, tail.log_err);
  out.tail_bound = (log_tail < -745.0) ? 0.0 : std::exp(log_tail);
  return out;
}

// ---- Monte Carlo averages ----------------------------------------------------

struct MonteCarloResult {
  double mean = 0;
  double std_error = 0;
  std::uint64_t samples = 0;
  std::uint64_t orbit_len = 0;
  std::uint64_t resampled = 0;  // orbits discarded for terminating early
};

namespace detail {

// phi(d) for a big-integer digit: exact through uint64, logarithmic
// continuation beyond (the event has probability ~2^-64 per step).
inline double digit_value_big(const Potential& phi, const mpz_t d) {
  if (mpz_fits_ulong_p(d))
    return phi.digit_value(mpz_get_ui(d));
  double xd = mpz_get_d(d);
  double t = std::isfinite(xd)
                 ? std::log(xd)
                 : double(mpz_sizeinbase(d, 2)) * std::log(2.0);
  return phi.digit_value_log_index(t);
}

// One shard of continued-fraction sampling: random rationals p/q with q
// uniform over [10^D, 10^{D+1}), digits by the Euclidean algorithm in exact
// integer arithmetic.
inline void mc_shard_gauss(const Potential& phi, std::uint64_t samples,
                           std::uint64_t orbit_len, std::uint64_t digits10,
                           unsigned long shard_seed,
                           std::vector<double>& means,
                           std::uint64_t& resampled) {
  gmp_randstate_t rs;
  gmp_randinit_mt(rs);
  gmp_randseed_ui(rs, shard_seed);
  mpz_t lo, span, qz, pz, quot, rem;
  mpz_inits(lo, span, qz, pz, quot, rem, nullptr);
  mpz_ui_pow_ui(lo, 10, digits10);
  mpz_mul_ui(span, lo, 9);

  means.reserve(samples);
  for (std::uint64_t s = 0; s < samples;) {
    mpz_urandomm(qz, rs, span);
    mpz_add(qz, qz, lo);
    mpz_urandomm(pz, rs, qz);
    if (mpz_sgn(pz) == 0) {
      ++resampled;
      continue;
    }
    double sum = 0;
    std::uint64_t got = 0;
    bool short_orbit = false;
    for (std::uint64_t i = 0; i < orbit_len; ++i) {
      mpz_fdiv_qr(quot, rem, qz, pz);
      sum += digit_value_big(phi, quot);
      ++got;
      if (mpz_sgn(rem) == 0) {
        short_orbit = (got < orbit_len);
        break;
      }
      mpz_swap(qz, pz);
      mpz_swap(pz, rem);
    }
    if (short_orbit) {
      ++resampled;
      continue;
    }
    means.push_back(sum / double(orbit_len));
    ++s;
  }
  mpz_clears(lo, span, qz, pz, quot, rem, nullptr);
  gmp_randclear(rs);
}

// One shard of exact digit sampling for a piecewise-linear map: symbols are
// independent with the branch lengths as probabilities.
inline void mc_shard_linear(const BranchMap& map, const Potential& phi,
                            std::uint64_t samples, std::uint64_t orbit_len,
                            unsigned long shard_seed,
                            std::vector<double>& means) {
  std::mt19937_64 rng(shard_seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto value = [&](std::uint64_t n) {
    if (phi.locally_constant()) return phi.digit_value(n);
    return phi.affine_a() * map.log_length_at(n) + phi.affine_b();
  };
  const std::uint64_t walk_guard = 1000000;
  means.reserve(samples);
  for (std::uint64_t s = 0; s < samples; ++s) {
    double sum = 0;
    for (std::uint64_t i = 0; i < orbit_len; ++i) {
      double u = unif(rng);
      double cum = 0;
      std::uint64_t n = 1;
      for (; n <= walk_guard; ++n) {
        cum += std::exp(map.log_length_at(n));
        if (u < cum) break;
        if (map.finite_alphabet() && n >= map.enumeration_cap()) break;
      }
      sum += value(n);
    }
    means.push_back(sum / double(orbit_len));
  }
}

}  // namespace detail

// Empirical almost-every-point average of phi along orbits.  For the
// continued-fraction family the orbit digits are computed exactly (floating
// iteration loses every digit after ~50 steps); for piecewise-linear maps the
// symbolic coding of a uniform point is sampled directly.
inline MonteCarloResult monte_carlo_average(const BranchMap& map,
                                            const Potential& phi,
                                            std::uint64_t samples,
                                            std::uint64_t orbit_len,
                                            std::uint64_t seed,
                                            int jobs = 1) {
  if (samples < 2) throw UsageError("need at least two sample orbits");
  if (orbit_len == 0) throw UsageError("orbit length must be positive");
  if (!phi.locally_constant() &&
      map.family() != BranchMap::Family::linear)
    throw UsageError("empirical averages need branchwise-constant values");

  const bool gauss = map.family() == BranchMap::Family::gauss;
  const double golden = 0.5 * (1.0 + std::sqrt(5.0));
  const std::uint64_t digits10 = std::uint64_t(
      std::ceil(2.0 * double(orbit_len) * std::log10(golden * golden))) + 1;

  jobs = std::max(1, std::min<int>(jobs, 64));
  std::uint64_t per = samples / std::uint64_t(jobs);
  std::uint64_t extra = samples % std::uint64_t(jobs);

  std::vector<std::vector<double>> shard_means(jobs);
  std::vector<std::uint64_t> shard_resampled(jobs, 0);
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) {
    std::uint64_t n_j = per + (std::uint64_t(j) < extra ? 1 : 0);
    unsigned long sseed =
        static_cast<unsigned long>(seed * 1000003ULL + std::uint64_t(j));
    pool.emplace_back([&, j, n_j, sseed] {
      if (gauss)
        detail::mc_shard_gauss(phi, n_j, orbit_len, digits10, sseed,
                               shard_means[j], shard_resampled[j]);
      else
        detail::mc_shard_linear(map, phi, n_j, orbit_len, sseed,
                                shard_means[j]);
    });
  }
  for (auto& t : pool) t.join();

  MonteCarloResult out;
  out.samples = samples;
  out.orbit_len = orbit_len;
  double sum = 0;
  for (int j = 0; j < jobs; ++j) {
    out.resampled += shard_resampled[j];
    for (double m : shard_means[j]) sum += m;
  }
  out.mean = sum / double(samples);
  double ss = 0;
  for (int j = 0; j < jobs; ++j)
    for (double m : shard_means[j]) ss += (m - out.mean) * (m - out.mean);
  out.std_error = std::sqrt(ss / double(samples - 1) / double(samples));
  return out;
}

// ---- cylinder-cover upper bounds ----------------------------------------------

struct CoverReport {
  double alpha = 0;
  double epsilon = 0;
  std::uint64_t n_start = 1;   // first checkpointed orbit length
  std::uint64_t depth = 0;     // cylinder depth k
  std::uint64_t cutoff = 0;    // digit alphabet bound
  double s_root = 0;           // root of sum |I(w)|^s = 1 over the cover
  double residual = 0;         // |sum - 1| at the reported root
  std::uint64_t count = 0;     // retained cylinders
  std::uint64_t visited = 0;   // DFS nodes examined
  double variation = 0;        // distortion slack absorbed into epsilon
  bool empty = false;
};

// Upper estimate for the dimension of the level set at alpha: enumerate
// depth-k words over digits {1..cutoff} whose Birkhoff averages pass every
// checkpoint j in [n_start, k], then solve sum |I(w)|^s = 1 over the cover.
//
// Checkpoint probes are exact for branchwise-constant data (the depth-j
// average over a cylinder is a single number).  For the geometric potential
// on the continued-fraction family the probe evaluates the word's periodic
// point: if x repeats the word w forever then the depth-j derivative sum is
// 2 log(q_j + x q_{j-1}) with q_j the denominator continuants, and x solves
// q_{j-1} x^2 + (q_j - p_{j-1}) x - p_j = 0.  Every other point of the
// cylinder agrees with the probe up to the map's distortion constant, which
// is absorbed by widening epsilon to epsilon + variation/k.
inline CoverReport cover_upper_bound(const BranchMap& map,
                                     const Potential& phi, double alpha,
                                     double epsilon, std::uint64_t n_start,
                                     std::uint64_t depth,
                                     std::uint64_t cutoff) {
  if (depth == 0 || depth > 48) throw UsageError("cover depth must be 1..48");
  if (cutoff == 0) throw UsageError("cover needs a positive digit cutoff");
  if (n_start == 0) n_start = 1;
  if (map.finite_alphabet())
    cutoff = std::min<std::uint64_t>(cutoff, map.enumeration_cap());

  CoverReport rep;
  rep.alpha = alpha;
  rep.epsilon = epsilon;
  rep.n_start = n_start;
  rep.depth = depth;
  rep.cutoff = cutoff;
  rep.variation = phi.variation_total(map);

  const bool gauss = map.family() == BranchMap::Family::gauss;
  const bool interval_mode = gauss && !phi.locally_constant();
  if (interval_mode && phi.affine_a() <= 0)
    throw UsageError("covering the geometric level sets needs a positively "
                     "oriented potential");

  // Branchwise-exact values (locally constant potentials, and every
  // potential on a piecewise-linear map).
  std::vector<double> rv(cutoff + 1, 0.0);
  std::vector<double> llen(cutoff + 1, 0.0);
  for (std::uint64_t n = 1; n <= cutoff; ++n) {
    if (phi.locally_constant())
      rv[n] = phi.digit_value(n);
    else if (!gauss)
      rv[n] = phi.affine_a() * map.log_length_at(n) + phi.affine_b();
    if (!gauss) llen[n] = map.log_length_at(n);
  }

  const std::uint64_t retain_budget = 10000000;
  const std::uint64_t visit_budget = 80000000;
  std::vector<double> cover_loglen;

  // Iterative DFS over words; per level: digit, running phi-sum (exact
  // mode), and the continuant pair (gauss) or log-length prefix (linear).
  struct Frame {
    std::uint64_t digit;
    double sum;
    double c_prev, c_cur;  // denominator continuants q_{j-1}, q_j (gauss)
    double p_prev, p_cur;  // numerator continuants p_{j-1}, p_j (gauss)
    double loglen;         // prefix log-length (linear)
  };
  std::vector<Frame> stack;
  stack.reserve(depth + 1);
  stack.push_back({0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0});

  const double a = phi.affine_a(), b = phi.affine_b();
  // Distortion slack, spread across the word: checkpoints compare the probe
  // against j * (epsilon + variation/k) so the depth-k acceptance absorbs
  // the full distortion constant.  Exact probes report variation 0.
  const double eps_eff = epsilon + rep.variation / double(depth);
  // Per-step movement hull of the probe.  In probe mode appending a digit d
  // moves the periodic-point derivative sum by 2 log of a ratio inside
  // [1/2, cutoff + 2] (numerator q_{j+1} + x q_j, denominator q_j + x q_{j-1}
  // with x in (0,1)).  Prefixes shorter than the first checkpoint are kept
  // exactly when that checkpoint stays reachable under the hull; the hull
  // contains every admissible single-step movement, so pruning is sound and
  // over-retention only costs enumeration.
  double step_min = 0, step_max = 0;
  if (interval_mode) {
    step_min = b - a * 2.0 * std::log(double(cutoff) + 2.0);
    step_max = b + a * 2.0 * std::log(2.0);
  } else {
    step_min = kInf;
    step_max = -kInf;
    for (std::uint64_t n = 1; n <= cutoff; ++n) {
      step_min = std::min(step_min, rv[n]);
      step_max = std::max(step_max, rv[n]);
    }
  }
  // Admissibility of a prefix of length j with phi-sum probe `sum`.
  auto admissible = [&](double sum, std::uint64_t j) {
    if (j < n_start) {
      if (n_start > depth) return true;  // no checkpoints in range
      double rem = double(n_start - j);
      double w = double(n_start) * eps_eff;
      double target = double(n_start) * alpha;
      return sum + rem * step_min <= target + w &&
             sum + rem * step_max >= target - w;
    }
    double w = double(j) * eps_eff;
    double target = double(j) * alpha;
    return sum >= target - w && sum <= target + w;
  };

  while (!stack.empty()) {
    Frame& f = stack.back();
    std::uint64_t next = ++f.digit;
    if (next > cutoff) {
      stack.pop_back();
      continue;
    }
    if (++rep.visited > visit_budget)
      throw DomainError("covering enumeration exceeded its node budget");
    std::uint64_t j = stack.size();  // depth after appending `next`
    double sum = 0;
    double c_new = 0, p_new = 0;
    if (gauss) {
      c_new = double(next) * f.c_cur + f.c_prev;
      p_new = double(next) * f.p_cur + f.p_prev;
    }
    if (interval_mode) {
      // Periodic point of the prefix word: the positive root of
      // q_{j-1} x^2 + (q_j - p_{j-1}) x - p_j = 0 (q_{j-1} >= 1 always).
      double bq = c_new - f.p_cur;
      double x = (-bq + std::sqrt(bq * bq + 4.0 * f.c_cur * p_new)) /
                 (2.0 * f.c_cur);
      double dsum = 2.0 * std::log(c_new + x * f.c_cur);
      sum = -a * dsum + b * double(j);
    } else {
      sum = f.sum + rv[next];
    }
    if (!admissible(sum, j)) continue;
    if (j == depth) {
      double ll;
      if (gauss)
        ll = -(std::log(c_new) + std::log(c_new + f.c_cur));
      else
        ll = f.loglen + llen[next];
      cover_loglen.push_back(ll);
      if (++rep.count > retain_budget)
        throw DomainError("covering enumeration exceeded the retained-"
                          "cylinder budget");
      continue;
    }
    Frame child;
    child.digit = 0;
    child.sum = sum;
    child.c_prev = f.c_cur;
    child.c_cur = c_new;
    child.p_prev = f.p_cur;
    child.p_cur = p_new;
    child.loglen = gauss ? 0.0 : f.loglen + llen[next];
    stack.push_back(child);
  }

  if (cover_loglen.empty()) {
    rep.empty = true;
    rep.s_root = 0.0;
    return rep;
  }

  auto cover_sum = [&](double s) {
    double acc = 0, comp = 0;
    for (double ll : cover_loglen) {
      double y = std::exp(s * ll) - comp;
      double t = acc + y;
      comp = (t - acc) - y;
      acc = t;
    }
    return acc;
  };
  double s_lo = 0.0, s_hi = 1.5;
  double f_hi = cover_sum(s_hi) - 1.0;
  if (f_hi > 0)
    throw NumericError("cover root exceeds 1.5: cylinders overlap or the "
                       "cover is too coarse");
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (s_lo + s_hi);
    double fm = cover_sum(mid) - 1.0;
    (fm >= 0 ? s_lo : s_hi) = mid;
    if (std::abs(fm) <= 1e-10 || s_hi - s_lo <= 1e-14) break;
  }
  rep.s_root = 0.5 * (s_lo + s_hi);
  rep.residual = std::abs(cover_sum(rep.s_root) - 1.0);
  return rep;
}

// ---- finite-subsystem lower bounds --------------------------------------------

struct SubsystemBound {
  double alpha = 0;
  std::uint64_t n_limit = 0;  // digits restricted to {1..n_limit}
  double b_lower = 0;         // h/lambda of the constrained optimum
  double entropy = 0;
  double lyapunov = 0;
  double q = 0;               // multiplier witness
  double delta = 0;           // == b_lower
  double average_residual = 0;  // |d pressure/dq - alpha| at the witness
  std::string note;
};

// Variational lower bound from the compact subsystem on digits {1..N}: the
// constrained maximum of h/lambda among invariant measures with average
// alpha, computed from the truncated pressure (always finite).  The result
// is monotone non-decreasing in N and bounded by the full spectrum value.
inline SubsystemBound subsystem_lower_bound(const BranchMap& map,
                                            const Potential& phi,
                                            double alpha, std::uint64_t N,
                                            double tol = 1e-9) {
  if (N == 0) throw UsageError("subsystem needs at least one digit");
  if (map.finite_alphabet())
    N = std::min<std::uint64_t>(N, map.enumeration_cap());
  SubsystemBound out;
  out.alpha = alpha;
  out.n_limit = N;

  PressureEngine eng(map, phi);
  const double nn = double(N);

  // Feasibility: alpha must lie in the hull of the branch fixed-point
  // values (exact for branchwise-constant potentials).  The solver's
  // runaway guard below is the final authority for the geometric case.
  double vmin = kInf, vmax = -kInf;
  for (std::uint64_t n = 1; n <= std::min<std::uint64_t>(N, 4096); ++n) {
    double x = map.word_fixed_point({n});
    double v = phi.locally_constant() ? phi.digit_value(n)
                                      : phi.value_at_inverse(map, n, x);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  double slack = 1e-9 * (1.0 + std::abs(alpha)) +
                 (phi.locally_constant() ? 0.0 : phi.variation_total(map));
  if (alpha < vmin - slack || alpha > vmax + slack)
    throw DomainError("average is not attainable on the digit-limited "
                      "subsystem");

  auto point = [&](double q, double d) { return eng.truncated(q, d, nn); };

  // Inner minimum of P_N(q, delta) - q alpha over q (finite alphabet: the
  // pressure is finite everywhere, no finiteness edge to track).
  struct Inner {
    double m;
    double q;
    PressurePoint p;
  };
  auto inner = [&](double d) -> Inner {
    double ql = -1.0, qr = 1.0;
    PressurePoint pl = point(ql, d), pr = point(qr, d);
    int guard = 0;
    while (pl.dq - alpha > 0 && ++guard < 60) {
      qr = ql;
      pr = pl;
      ql = 2.0 * ql - 1.0;
      pl = point(ql, d);
    }
    while (pr.dq - alpha < 0 && ++guard < 60) {
      ql = qr;
      pl = pr;
      qr = 2.0 * qr + 1.0;
      pr = point(qr, d);
    }
    if (guard >= 60 || std::abs(ql) > 1e7 || std::abs(qr) > 1e7)
      throw DomainError("constrained optimum runs away: average on the "
                        "subsystem boundary");
    double q = 0.5 * (ql + qr), q_prev = kNaN, s_prev = kNaN;
    PressurePoint pq = point(q, d);
    for (int it = 0; it < 80; ++it) {
      double s = pq.dq - alpha;
      if (s < 0)
        ql = q;
      else
        qr = q;
      if (std::abs(s) <= 1e-13 * (1.0 + std::abs(alpha)) ||
          qr - ql <= 1e-12 * (1.0 + std::abs(qr)))
        break;
      double qn = 0.5 * (ql + qr);
      if (std::isfinite(q_prev) && s != s_prev) {
        double cand = q - s * (q - q_prev) / (s - s_prev);
        if (cand > ql && cand < qr) qn = cand;
      }
      q_prev = q;
      s_prev = s;
      q = qn;
      pq = point(q, d);
    }
    return {pq.value - q * alpha, q, pq};
  };

  // Root of m(delta) in [0, 1]: m decreasing, m(1) <= P_N(0,1) < 0.
  double d_lo = 0.0, d_hi = 1.0 + 1e-9;
  Inner lo = inner(d_lo);
  if (lo.m <= 0.0) {
    out.b_lower = 0.0;
    out.q = lo.q;
    out.delta = 0.0;
    out.lyapunov = -lo.p.ddelta;
    out.entropy = 0.0;
    out.average_residual = std::abs(lo.p.dq - alpha);
    out.note = "degenerate optimum: zero entropy at the constrained average";
    return out;
  }
  Inner hi = inner(d_hi);
  if (hi.m > 0.0)
    throw NumericError("subsystem dimension bracket failed at 1");
  Inner at_root = hi;
  double m_lo = lo.m, m_hi = hi.m;
  int side = 0;
  for (int it = 0; it < 200 && d_hi - d_lo > tol; ++it) {
    double mid = 0.5 * (d_lo + d_hi);
    if (m_lo > 0 && m_hi < 0) {
      double cand = d_lo + (d_hi - d_lo) * (m_lo / (m_lo - m_hi));
      double fr = (cand - d_lo) / (d_hi - d_lo);
      if (fr > 1e-3 && fr < 1.0 - 1e-3) mid = cand;
    }
    Inner im = inner(mid);
    if (im.m >= 0) {
      d_lo = mid;
      m_lo = im.m;
      if (side < 0) m_hi *= 0.5;
      side = -1;
    } else {
      d_hi = mid;
      m_hi = im.m;
      at_root = im;
      if (side > 0) m_lo *= 0.5;
      side = +1;
    }
  }
  out.delta = out.b_lower = 0.5 * (d_lo + d_hi);
  out.q = at_root.q;
  out.lyapunov = -at_root.p.ddelta;
  out.entropy = out.b_lower * out.lyapunov;
  out.average_residual = std::abs(at_root.p.dq - alpha);
  if (out.average_residual > std::max(tol * 100, 1e-6))
    out.note = "constrained average met only loosely; treat the bound as "
               "approximate";
  return out;
}

}  // namespace emr
