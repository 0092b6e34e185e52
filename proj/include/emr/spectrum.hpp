// Level-set dimension spectra for expanding full-branch interval maps.
//
// For a potential phi and the map's geometric potential -log|T'|, the
// dimension b(alpha) of the set where the Birkhoff average of phi equals
// alpha is obtained from the two-parameter pressure P0(q, delta) =
// P(q phi - delta log|T'|) through the system
//
//     P0(q, delta) = q alpha,        dP0/dq (q, delta) = alpha,
//
// whose delta-component is b(alpha).  Equivalently b(alpha) is the root in
// delta of  m(delta) = inf_q [ P0(q, delta) - q alpha ],  which stays
// meaningful when the tangency equation has no interior solution: the
// infimum may pin at the finiteness edge q_c(delta) (boundary regime) or
// the root may collapse onto the global finiteness threshold delta^*
// (ramp regime).  This header implements both routes, the attainable range
// of averages, the one-parameter expansion-rate spectrum, and dimension
// asymptotics of extreme level sets.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "emr/errors.hpp"
#include "emr/formulas.hpp"
#include "emr/interval_maps.hpp"
#include "emr/potentials.hpp"
#include "emr/pressure.hpp"

namespace emr {

// ---- attainable range of Birkhoff averages ----------------------------------

struct AlphaRange {
  double alpha_max = 0;
  double alpha_min = -kInf;
  bool min_is_infinite = true;
  std::string max_witness;  // where the maximum is (approximately) attained
};

// Range of attainable limit averages of phi along orbits.  For branchwise
// constant potentials this is the closed hull of the digit values (including
// the large-digit limit); for the geometric potential on a nonlinear map the
// maximum is located by a periodic-orbit search.
inline AlphaRange alpha_range(const BranchMap& map, const Potential& phi) {
  AlphaRange out;

  const bool branch_constant =
      phi.locally_constant() || map.family() == BranchMap::Family::linear;
  if (branch_constant) {
    auto value = [&](std::uint64_t n) {
      if (phi.locally_constant()) return phi.digit_value(n);
      // geometric potential on a piecewise-linear map: constant per branch
      return phi.affine_a() * map.log_length_at(n) + phi.affine_b();
    };
    std::uint64_t cap = map.finite_alphabet()
                            ? map.enumeration_cap()
                            : std::max<std::uint64_t>(map.enumeration_cap(),
                                                      4096);
    double vmax = -kInf, vmin = kInf;
    std::uint64_t arg_max = 1;
    for (std::uint64_t n = 1; n <= cap; ++n) {
      double v = value(n);
      if (v > vmax) {
        vmax = v;
        arg_max = n;
      }
      vmin = std::min(vmin, v);
    }
    out.alpha_max = vmax;
    out.max_witness = "fixed point of branch " + std::to_string(arg_max);
    if (map.finite_alphabet()) {
      out.alpha_min = vmin;
      out.min_is_infinite = false;
      return out;
    }
    // Tail of the digit values: evaluate far out on the index ladder.
    double tail = value(1);
    for (double t = std::log(double(cap)) + 2.0; t <= 40.0; t += 4.0) {
      tail = phi.locally_constant()
                 ? phi.digit_value_log_index(t)
                 : phi.affine_a() *
                           (-map.log_deriv_upper()(t)) +  // -log|T'| profile
                       phi.affine_b();
    }
    if (tail > out.alpha_max) {
      out.alpha_max = tail;
      out.max_witness = "limit of the branch values as the digit grows";
    }
    if (tail <= vmin && std::isfinite(tail)) {
      // values keep decreasing: infimum is the (possibly infinite) limit
      SeqForm prof = phi.profile_lower(map);
      int sign = prof.limit_sign();
      if (sign < 0) {
        out.alpha_min = -kInf;
        out.min_is_infinite = true;
      } else {
        out.alpha_min = tail;
        out.min_is_infinite = false;
      }
    } else {
      SeqForm prof = phi.profile_lower(map);
      if (prof.limit_sign() < 0) {
        out.alpha_min = -kInf;
        out.min_is_infinite = true;
      } else {
        out.alpha_min = std::min(vmin, tail);
        out.min_is_infinite = false;
      }
    }
    return out;
  }

  // Geometric potential on the nonlinear (continued-fraction) family: the
  // extreme average sits on a short periodic orbit with small digits.  Search
  // periods 1..4 with shrinking digit budgets.
  if (!map.has_forms())
    throw DomainError("average range needs closed-form branch data");
  auto orbit_average = [&](const std::vector<std::uint64_t>& word) {
    const std::size_t p = word.size();
    double sum = 0;
    std::vector<std::uint64_t> rot = word;
    for (std::size_t r = 0; r < p; ++r) {
      // phi at the orbit point starting with digit rot[0]: the point is
      // v_{rot[0]} applied to the fixed point of the once-rotated word.
      std::uint64_t head = rot[0];
      std::rotate(rot.begin(), rot.begin() + 1, rot.end());
      double next = map.word_fixed_point(rot);
      sum += phi.value_at_inverse(map, head, next);
    }
    return sum / double(p);
  };

  double best = -kInf;
  std::string witness;
  const std::uint64_t budget1 = 10000, budget2 = 48, budget3 = 16,
                      budget4 = 8;
  for (std::uint64_t d = 1; d <= budget1; ++d) {
    double v = orbit_average({d});
    if (v > best) {
      best = v;
      witness = "periodic orbit (" + std::to_string(d) + ")";
    }
  }
  auto sweep = [&](std::uint64_t budget, std::size_t period) {
    std::vector<std::uint64_t> w(period, 1);
    while (true) {
      bool nondegenerate = false;  // skip pure powers of shorter words
      for (std::size_t i = 1; i < period; ++i)
        if (w[i] != w[0]) nondegenerate = true;
      if (nondegenerate) {
        double v = orbit_average(w);
        if (v > best) {
          best = v;
          witness = "periodic orbit (";
          for (std::size_t i = 0; i < period; ++i)
            witness += (i ? "," : "") + std::to_string(w[i]);
          witness += ")";
        }
      }
      std::size_t i = period;
      while (i-- > 0) {
        if (++w[i] <= budget) break;
        w[i] = 1;
        if (i == 0) return;
      }
    }
  };
  sweep(budget2, 2);
  sweep(budget3, 3);
  sweep(budget4, 4);
  out.alpha_max = best;
  out.max_witness = witness;
  out.alpha_min = (phi.affine_a() > 0) ? -kInf : kInf;  // derivative unbounded
  if (phi.affine_a() < 0)
    throw DomainError("orientation-flipped geometric potential is unbounded "
                      "above: the average range has no finite maximum");
  out.min_is_infinite = true;
  return out;
}

// ---- spectrum at one level ---------------------------------------------------

struct SpectrumPoint {
  enum class Regime { interior, boundary, ramp, full_measure };
  double alpha = 0;
  double value = 0;   // dimension of the level set
  double q = 0;       // multiplier pair at the solution
  double delta = 0;   // == value
  Regime regime = Regime::interior;
  int iterations = 0;
  double residual_pressure = 0;  // |P0 - q alpha| at the solution
  double residual_slope = 0;     // |dP0/dq - alpha| (interior only)
  double err_est = 0;            // propagated evaluation error estimate
  // boundary regime bookkeeping
  double q_edge = 0;             // critical q at the solution delta
  bool certified_infinite = false;  // pressure at q_edge - eps verified infinite
  std::string note;
};

struct SpectrumOptions {
  double tol = 1e-10;          // residual tolerance for the tangency system
  double delta_width = 1e-11;  // bisection width on the dimension
  double q_max = 1048576.0;    // giving-up point for the inner minimization
  int newton_max_iter = 48;
  bool allow_newton = true;    // primary fast path on/off (tests use both)
};

namespace detail {

struct InnerMin {
  double m = 0;        // inf_q [P0 - q alpha] over the admissible q
  double q_min = 0;    // minimizer (or edge / cap when pinned / runaway)
  bool pinned = false;     // infimum at the finiteness edge q_c(delta)
  bool runaway = false;    // still decreasing at q_max
  double q_c = -kInf;      // finiteness edge in q at this delta
  double err = 0;          // evaluation error at the reported minimum
};

// Evaluation wrapper: closure failures near the finiteness edge surface as
// "no value" rather than aborting the whole solve.
inline std::optional<PressurePoint> try_closed(PressureEngine& eng, double q,
                                               double delta) {
  try {
    return eng.closed(q, delta);
  } catch (const ConvergenceError&) {
    return std::nullopt;
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

inline bool is_finite_at(PressureEngine& eng, double q, double delta) {
  return eng.finiteness(q, delta).verdict == FinitenessResult::Verdict::finite;
}

// Finiteness edge in q at fixed delta: inf { q : P0(q, delta) finite }.
// Finiteness is monotone increasing in q for potentials that decay to -inf.
// Returns -q_floor when the pressure is finite all the way down to -q_floor.
inline double edge_q(PressureEngine& eng, double delta, double q_hint,
                     double width = 1e-9) {
  const double q_floor = -1024.0;
  double good = q_hint;
  if (!is_finite_at(eng, good, delta)) {
    double step = 1.0;
    do {
      good += step;
      step *= 2;
      if (good > 1e7)
        throw DomainError("pressure stays infinite for every multiplier "
                          "tested at this dimension parameter");
    } while (!is_finite_at(eng, good, delta));
  }
  double bad = good - 1.0;
  double step = 1.0;
  while (is_finite_at(eng, bad, delta)) {
    good = bad;
    bad -= step;
    step *= 2;
    if (bad < q_floor) return -kInf;
  }
  while (good - bad > width * (1.0 + std::abs(good))) {
    double mid = 0.5 * (good + bad);
    (is_finite_at(eng, mid, delta) ? good : bad) = mid;
  }
  return good;
}

// Pressure at the finiteness edge, extrapolated from inside.  Finite-edge
// phase boundaries typically open with a square-root branch, so fit
// P(q_c + eps) ~ P_edge + c sqrt(eps) on a short eps ladder.
inline std::pair<double, double> edge_pressure(PressureEngine& eng,
                                               double q_c, double delta,
                                               double scale) {
  const double e0 = 1e-3 * scale;
  double p1 = kInf, p2 = kInf, p3 = kInf;
  if (auto p = try_closed(eng, q_c + e0, delta)) p1 = p->value;
  if (auto p = try_closed(eng, q_c + e0 / 4.0, delta)) p2 = p->value;
  if (auto p = try_closed(eng, q_c + e0 / 16.0, delta)) p3 = p->value;
  if (p3 != kInf && p2 != kInf) {
    // sqrt-model Richardson: with eps quartered each rung the sqrt error
    // halves, so the linear step p3 + (p3 - p2) cancels it.  Edges that
    // close slower than sqrt (e.g. an eps log eps boundary layer) make the
    // linear step overshoot past the limit; Aitken's delta-squared uses the
    // measured contraction instead, so prefer it whenever its correction is
    // sane and fall back to the linear model otherwise.
    double edge = p3 + (p3 - p2);  // sqrt steps halve: error halves
    double edge_coarse = p2 + (p2 - p1);
    double err = std::abs(edge - edge_coarse) + 1e-12;
    if (p1 != kInf) {
      double denom = (p3 - p2) - (p2 - p1);
      if (std::abs(denom) > 1e-300) {
        double aitken = p3 - (p3 - p2) * (p3 - p2) / denom;
        if (std::abs(aitken - p3) <= 2.0 * std::abs(p3 - p2) + 1e-12)
          return {aitken, std::abs(aitken - edge) + 1e-12};
      }
    }
    return {edge, err};
  }
  if (p3 != kInf) return {p3, std::abs(p3) * 1e-3 + 1e-9};
  if (p2 != kInf) return {p2, std::abs(p2) * 1e-2 + 1e-6};
  if (p1 != kInf) return {p1, std::abs(p1) * 1e-1 + 1e-3};
  throw ConvergenceError("pressure evaluation failed near the finiteness "
                         "edge");
}

// Convex minimization of g(q) = P0(q, delta) - q alpha over admissible q.
inline InnerMin inner_minimum(PressureEngine& eng, double delta, double alpha,
                              double q_hint, const SpectrumOptions& opt) {
  InnerMin out;

  auto slope = [&](double q) -> std::optional<double> {
    auto p = try_closed(eng, q, delta);
    if (!p) return std::nullopt;
    return p->dq - alpha;
  };

  // Interior-first: with a warm-start hint, try to bracket the root of
  // g' = dq - alpha (increasing in q) without ever locating the finiteness
  // edge.  Any evaluation failure or unresolved expansion falls back to the
  // edge-aware path below.
  double ql = 0, qr = 0;
  bool bracketed = false;
  if (std::isfinite(q_hint)) {
    if (auto sh = slope(q_hint)) {
      double step = 1e-2 * (1.0 + std::abs(q_hint));
      if (*sh < 0) {
        ql = q_hint;
        qr = q_hint + step;
        auto sr = slope(qr);
        while (sr && *sr < 0 && qr < opt.q_max) {
          ql = qr;
          step *= 4;
          qr += step;
          sr = slope(qr);
        }
        bracketed = sr && *sr >= 0;
      } else {
        qr = q_hint;
        double cand = q_hint - step;
        auto sc = slope(cand);
        while (sc && *sc >= 0 && cand > -1024.0) {
          qr = cand;
          step *= 4;
          cand -= step;
          sc = slope(cand);
        }
        if (sc && *sc < 0) {
          ql = cand;
          bracketed = true;
        }
      }
    }
  }

  if (!bracketed) {
    out.q_c = edge_q(eng, delta, std::isfinite(q_hint) ? q_hint : 1.0);
    const double q_lo_abs = (out.q_c == -kInf) ? -1024.0 : out.q_c;
    const double margin = 1e-7 * (1.0 + std::abs(q_lo_abs));

    // Bracket the root of g' = dq - alpha.  dq is increasing in q.
    ql = q_lo_abs + margin;
    qr = std::max(std::isfinite(q_hint) ? q_hint : 1.0, ql + 1e-3);
    auto sl = slope(ql);
    // Degenerate closures right at the edge: nudge inward on a short ladder.
    for (double push = 1e-4; !sl && push <= 1.0; push *= 8) {
      ql = q_lo_abs + push * (1.0 + std::abs(q_lo_abs));
      sl = slope(ql);
    }
    if (!sl)
      throw ConvergenceError("pressure closure failed everywhere near the "
                             "finiteness edge");
    if (*sl >= 0) {
      // Minimum pinned at the edge.
      out.pinned = true;
      out.q_min = (out.q_c == -kInf) ? ql : out.q_c;
      if (out.q_c == -kInf) {
        auto p = try_closed(eng, ql, delta);
        out.m = p ? p->value - ql * alpha : kInf;
        out.err = p ? p->err_est : kInf;
      } else {
        auto [pe, perr] =
            edge_pressure(eng, out.q_c, delta, 1.0 + std::abs(out.q_c));
        out.m = pe - out.q_c * alpha;
        out.err = perr;
      }
      return out;
    }
    auto sr = slope(qr);
    while ((!sr || *sr < 0) && qr < opt.q_max) {
      ql = (sr && *sr < 0) ? qr : ql;
      qr = 2.0 * qr + 1.0;
      sr = slope(qr);
    }
    if (!sr || *sr < 0) {
      out.runaway = true;
      out.q_min = qr;
      auto p = try_closed(eng, qr, delta);
      out.m = p ? p->value - qr * alpha : -kInf;
      out.err = p ? p->err_est : 0;
      return out;
    }
  }

  // Secant on g'(q) with a maintained bisection bracket [ql, qr]; the slope
  // is increasing in q, so any proposal outside the bracket falls back to the
  // midpoint.  One pressure evaluation per iteration.
  double q = 0.5 * (ql + qr);
  double q_prev = kNaN, s_prev = kNaN;
  for (int it = 0; it < 80; ++it) {
    auto s = slope(q);
    if (!s) {  // evaluation hole: failures cluster on the edge side
      ql = q;
      q = 0.5 * (ql + qr);
      continue;
    }
    if (*s < 0)
      ql = q;
    else
      qr = q;
    if (std::abs(*s) <= 1e-13 * (1.0 + std::abs(alpha))) {
      ql = qr = q;  // final evaluation below hits the engine cache
      break;
    }
    if (qr - ql <= 1e-11 * (1.0 + std::abs(qr))) break;
    double qn = 0.5 * (ql + qr);
    if (std::isfinite(q_prev) && *s != s_prev) {
      double cand = q - *s * (q - q_prev) / (*s - s_prev);
      if (cand > ql && cand < qr) qn = cand;
    }
    q_prev = q;
    s_prev = *s;
    q = qn;
  }
  out.q_min = 0.5 * (ql + qr);
  auto p = try_closed(eng, out.q_min, delta);
  if (!p)
    throw ConvergenceError("pressure closure failed at the inner minimum");
  out.m = p->value - out.q_min * alpha;
  out.err = p->err_est;
  return out;
}

}  // namespace detail

class SpectrumSolver {
 public:
  SpectrumSolver(PressureEngine& engine, SpectrumOptions opt = {})
      : eng_(engine), opt_(opt) {
    // The inner minimization assumes the admissible multipliers form a
    // right-unbounded interval, which holds whenever the potential is
    // bounded above.  A potential growing without bound is served through
    // the negated potential at the negated average: the level sets
    // {average of phi = alpha} and {average of -phi = -alpha} coincide.
    if (engine.potential().profile_upper(engine.map()).supremum() == kInf) {
      mirror_eng_ = std::make_unique<PressureEngine>(
          engine.map(), engine.potential().with_affine(-1.0, 0.0),
          engine.options());
      if (mirror_eng_->potential().profile_upper(engine.map()).supremum() ==
          kInf)
        throw DomainError("potential is unbounded above in both orientations");
      mirror_solver_ = std::make_unique<SpectrumSolver>(*mirror_eng_, opt);
    }
  }

  const SpectrumOptions& options() const { return opt_; }

  // Engine serving mirrored (negated-potential) solves, when one exists.
  // Callers that persist evaluations must bind the mirror separately: its
  // evaluations are keyed by the negated potential.
  PressureEngine* mirror_engine() { return mirror_eng_.get(); }

  // Threshold dimension delta^* = inf{delta : P0(q, delta) finite for some
  // q > 0}; lazily computed, shared across solves.
  double delta_star() {
    std::lock_guard<std::mutex> lk(mutex_);
    if (!delta_star_) {
      if (eng_.map().finite_alphabet()) {
        delta_star_ = 0.0;
      } else {
        CriticalExponents ce =
            critical_exponents(eng_.map(), eng_.potential(), 1e-6);
        delta_star_ = ce.delta_star;
      }
    }
    return *delta_star_;
  }

  // Dimension of the level set at average alpha.  Optional warm start.
  SpectrumPoint solve(double alpha, double q_hint = kNaN,
                      double delta_hint = kNaN) {
    if (mirror_solver_) {
      SpectrumPoint pt = mirror_solver_->solve(-alpha, -q_hint, delta_hint);
      pt.alpha = alpha;
      pt.q = -pt.q;
      pt.q_edge = -pt.q_edge;  // the finiteness edge sits on the right here
      return pt;
    }
    SpectrumPoint pt;
    pt.alpha = alpha;

    // The measure of full dimension sits at (q, delta) = (0, 1): branch
    // lengths are normalized, so P0(0,1) = 0 and the tangency value there is
    // the generic average alpha_1 = dP0/dq(0,1).
    if (auto p0 = detail::try_closed(eng_, 0.0, 1.0)) {
      if (std::abs(alpha - p0->dq) <=
          1e-12 * (1.0 + std::abs(alpha)) + 1e-13) {
        pt.value = pt.delta = 1.0;
        pt.q = 0.0;
        pt.regime = SpectrumPoint::Regime::full_measure;
        pt.residual_pressure = std::abs(p0->value);
        pt.residual_slope = std::abs(p0->dq - alpha);
        pt.err_est = p0->err_est;
        pt.note = "level of the full-measure average";
        return pt;
      }
    }

    if (opt_.allow_newton) {
      if (newton_path(alpha, q_hint, delta_hint, pt)) return pt;
    }
    bisection_path(alpha, q_hint, delta_hint, pt);
    return pt;
  }

  // Solve along a grid, warm-starting neighbors; jobs > 1 splits the grid
  // into contiguous chunks after solving a few anchors serially.
  std::vector<SpectrumPoint> curve(const std::vector<double>& alphas,
                                   int jobs = 1) {
    std::vector<SpectrumPoint> out(alphas.size());
    if (alphas.empty()) return out;
    jobs = std::max(1, jobs);
    std::vector<char> done(alphas.size(), 0);

    auto solve_into = [&](std::size_t i, double qh, double dh) {
      try {
        out[i] = solve(alphas[i], qh, dh);
      } catch (const std::exception& e) {
        out[i] = SpectrumPoint{};
        out[i].alpha = alphas[i];
        out[i].value = std::nan("");
        out[i].note = std::string("solve failed: ") + e.what();
      }
      done[i] = 1;
    };

    if (jobs == 1) {
      double qh = kNaN, dh = kNaN;
      for (std::size_t i = 0; i < alphas.size(); ++i) {
        solve_into(i, qh, dh);
        if (std::isfinite(out[i].value)) {
          qh = out[i].q;
          dh = out[i].delta;
        }
      }
      return out;
    }

    // Anchors: one per chunk, solved serially for stable warm starts.
    std::size_t nchunk = std::min<std::size_t>(jobs, alphas.size());
    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t c = 0; c < nchunk; ++c) {
      std::size_t lo = alphas.size() * c / nchunk;
      std::size_t hi = alphas.size() * (c + 1) / nchunk;
      if (lo < hi) chunks.push_back({lo, hi});
    }
    for (auto& [lo, hi] : chunks) solve_into(lo, kNaN, kNaN);
    std::vector<std::thread> pool;
    for (auto& [lo, hi] : chunks) {
      pool.emplace_back([&, lo = lo, hi = hi] {
        double qh = out[lo].q, dh = out[lo].delta;
        for (std::size_t i = lo + 1; i < hi; ++i) {
          solve_into(i, qh, dh);
          if (std::isfinite(out[i].value)) {
            qh = out[i].q;
            dh = out[i].delta;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    return out;
  }

 private:
  // Fast path: damped Newton on F(q, d) = (P0 - q alpha, dP0/dq - alpha).
  bool newton_path(double alpha, double q_hint, double delta_hint,
                   SpectrumPoint& pt) {
    double q = std::isfinite(q_hint) ? q_hint : kNaN;
    double d = std::isfinite(delta_hint) ? delta_hint : kNaN;
    if (!std::isfinite(q) || !std::isfinite(d)) {
      // pick the first comfortably finite start
      const std::pair<double, double> starts[] = {
          {0.0, 1.0}, {1.0, 1.0}, {1.0, 0.8}, {2.0, 0.7},
          {4.0, 0.6}, {0.5, 0.95}, {-0.25, 1.05}};
      bool found = false;
      for (auto [qs, ds] : starts)
        if (detail::is_finite_at(eng_, qs, ds)) {
          q = qs;
          d = ds;
          found = true;
          break;
        }
      if (!found) return false;
    }

    auto eval = [&](double qq, double dd) { return detail::try_closed(eng_, qq, dd); };
    auto p = eval(q, d);
    if (!p) return false;
    double f1 = p->value - q * alpha;
    double f2 = p->dq - alpha;
    int boundary_hits = 0;

    for (int it = 0; it < opt_.newton_max_iter; ++it) {
      double norm = std::max(std::abs(f1), std::abs(f2));
      if (norm <= opt_.tol * (1.0 + std::abs(alpha))) {
        // converged: classify and fill
        pt.q = q;
        pt.delta = pt.value = d;
        pt.iterations = it;
        pt.residual_pressure = std::abs(f1);
        pt.residual_slope = std::abs(f2);
        pt.err_est = p->err_est;
        classify_interior(pt);
        return true;
      }
      // Jacobian: row1 analytic, row2 by central differences of dq.
      double hq = 1e-4 * (1.0 + std::abs(q));
      double hd = 1e-4 * (1.0 + std::abs(d));
      auto pqp = eval(q + hq, d), pqm = eval(q - hq, d);
      auto pdp = eval(q, d + hd), pdm = eval(q, d - hd);
      if (!pqp || !pqm || !pdp || !pdm) return false;
      double j11 = p->dq - alpha, j12 = p->ddelta;
      double j21 = (pqp->dq - pqm->dq) / (2.0 * hq);
      double j22 = (pdp->dq - pdm->dq) / (2.0 * hd);
      double det = j11 * j22 - j12 * j21;
      if (!(std::abs(det) > 1e-14 * (std::abs(j11 * j22) + std::abs(j12 * j21) + 1e-30)))
        return false;  // singular tangency system: use the robust path
      double dq_step = (-f1 * j22 + f2 * j12) / det;
      double dd_step = (-j11 * f2 + j21 * f1) / det;

      double s = 1.0;
      bool stepped = false;
      for (; s >= 1.0 / 4096.0; s *= 0.5) {
        double qn = q + s * dq_step, dn = d + s * dd_step;
        if (!(dn > 0) || !detail::is_finite_at(eng_, qn, dn)) {
          ++boundary_hits;
          if (boundary_hits >= 3) return false;  // tangency outside: robust path
          continue;
        }
        auto pn = eval(qn, dn);
        if (!pn) continue;
        double g1 = pn->value - qn * alpha, g2 = pn->dq - alpha;
        if (std::max(std::abs(g1), std::abs(g2)) <= (1.0 - 0.25 * s) * norm ||
            s <= 1.0 / 2048.0) {
          q = qn;
          d = dn;
          p = pn;
          f1 = g1;
          f2 = g2;
          stepped = true;
          break;
        }
      }
      if (!stepped) return false;
    }
    return false;
  }

  // Robust path: bisection on m(delta) = inf_q [P0 - q alpha].
  void bisection_path(double alpha, double q_hint, double delta_hint,
                      SpectrumPoint& pt) {
    const double dstar = eng_.map().finite_alphabet() ? 0.0 : delta_star();
    double d_lo = std::max(dstar + 1e-7, 1e-7);
    double d_hi = 1.0 + 1e-9;  // dimensions of level sets are at most 1
    double q_carry = q_hint;

    // A dimension parameter at (or numerically below) the threshold can make
    // every pressure evaluation fail; that reads as m = +inf and pushes the
    // bracket up instead of aborting the solve.
    auto inner_or_none = [&](double d,
                             double qh) -> std::optional<detail::InnerMin> {
      try {
        return detail::inner_minimum(eng_, d, alpha, qh, opt_);
      } catch (const DomainError&) {
        return std::nullopt;  // infinite for every multiplier tested
      } catch (const ConvergenceError&) {
        return std::nullopt;
      }
    };

    // Hint-seeded bracket: a narrow window around a neighboring solution
    // skips the expensive anchors at the threshold and at dimension 1.
    // m is decreasing in delta, so a window [a, b] with m(a) >= 0 > m(b)
    // (a failed evaluation counts as +inf) brackets the root, and any
    // anchor passing m(a) >= 0 above the threshold rules the ramp out.
    std::optional<detail::InnerMin> at_root_o;
    double m_lo = kNaN, m_hi = kNaN;  // known values of m at d_lo / d_hi
    bool seeded = false;
    if (std::isfinite(delta_hint) && delta_hint > d_lo && delta_hint < d_hi) {
      for (double w = 1e-3; w <= 0.3 && !seeded; w *= 32) {
        double a = std::max(delta_hint - w, d_lo);
        double b = std::min(delta_hint + w, d_hi);
        auto la = inner_or_none(a, q_carry);
        if (la && !la->runaway) q_carry = la->q_min;
        if (la && la->m < 0) continue;  // root below the window: widen
        auto lb = inner_or_none(b, q_carry);
        if (!lb || lb->m >= 0) {
          if (b >= d_hi) break;  // no sign change up to dimension 1
          continue;              // root above the window: widen
        }
        if (lb->runaway && lb->m == -kInf)
          throw DomainError("target average is outside the attainable range");
        d_lo = a;
        d_hi = b;
        m_lo = la ? la->m : kNaN;
        m_hi = lb->m;
        at_root_o = *lb;
        if (!lb->runaway) q_carry = lb->q_min;
        seeded = true;
      }
    }

    if (!seeded) {
      std::optional<detail::InnerMin> lo = inner_or_none(d_lo, q_carry);
      if (lo) {
        if (lo->runaway && lo->m == -kInf)
          throw DomainError("target average is outside the attainable range");
        if (lo->m < 0) {
          // already negative at the threshold: dimension ramp at delta^*
          pt.value = pt.delta = dstar;
          pt.q = lo->q_min;
          pt.regime = SpectrumPoint::Regime::ramp;
          pt.err_est = std::max(lo->err, 1e-7);
          pt.note = "level set at the dimension threshold: the pressure is "
                    "infinite below it for every multiplier";
          return;
        }
        q_carry = lo->q_min;
      }
      std::optional<detail::InnerMin> hi_o = inner_or_none(d_hi, q_carry);
      if (!hi_o)
        throw ConvergenceError("inner minimization failed at dimension 1");
      if (hi_o->runaway && hi_o->m == -kInf)
        throw DomainError("target average is outside the attainable range");
      if (hi_o->m > 0) {
        if (edge_collapse(pt, *hi_o)) return;
        throw DomainError("no dimension bracket: the inner minimum stays "
                          "positive at dimension 1");
      }
      q_carry = hi_o->q_min;
      m_lo = lo ? lo->m : kNaN;
      m_hi = hi_o->m;
      at_root_o = *hi_o;
    }

    // Illinois false-position on m(delta) inside the maintained bracket; a
    // failed evaluation counts as m = +inf and degrades that step to plain
    // bisection.
    detail::InnerMin at_root = *at_root_o;
    int iters = 0;
    int side = 0;
    while (d_hi - d_lo > opt_.delta_width) {
      double mid = 0.5 * (d_lo + d_hi);
      if (std::isfinite(m_lo) && std::isfinite(m_hi) && m_lo > 0 &&
          m_hi < 0) {
        double cand = d_lo + (d_hi - d_lo) * (m_lo / (m_lo - m_hi));
        double fr = (cand - d_lo) / (d_hi - d_lo);
        if (fr > 1e-3 && fr < 1.0 - 1e-3) mid = cand;
      }
      std::optional<detail::InnerMin> im = inner_or_none(mid, q_carry);
      ++iters;
      if (!im || im->m >= 0) {
        d_lo = mid;
        m_lo = im ? im->m : kNaN;
        if (side < 0 && std::isfinite(m_hi)) m_hi *= 0.5;
        side = -1;
      } else {
        d_hi = mid;
        m_hi = im->m;
        at_root = *im;
        if (side > 0 && std::isfinite(m_lo)) m_lo *= 0.5;
        side = +1;
      }
      if (im && !im->runaway) q_carry = im->q_min;
      if (iters > 80) break;
    }
    double d = 0.5 * (d_lo + d_hi);
    pt.value = pt.delta = d;
    pt.q = at_root.q_min;
    pt.iterations = iters;
    pt.err_est = std::max(at_root.err, opt_.delta_width);
    if (at_root.pinned) {
      pt.regime = SpectrumPoint::Regime::boundary;
      pt.q_edge = at_root.q_c;
      certify_boundary(pt);
    } else if (at_root.runaway) {
      pt.regime = SpectrumPoint::Regime::ramp;
      pt.note = "tangency average unattained up to the multiplier cap";
    } else {
      pt.regime = SpectrumPoint::Regime::interior;
      auto p = detail::try_closed(eng_, pt.q, pt.delta);
      if (p) {
        pt.residual_pressure = std::abs(p->value - pt.q * pt.alpha);
        pt.residual_slope = std::abs(p->dq - pt.alpha);
      }
    }
  }

  // Degenerate anchor at full dimension.  Branch lengths are normalized, so
  // the geometry-only pressure vanishes exactly at dimension 1 and the inner
  // minimum there can never be truly positive: the infimum over multipliers
  // is approached (or attained) at the zero edge with value <= 0.  When the
  // descent toward q -> 0+ is slower than any representable step -- the
  // potential average diverges along the edge, so the tangency multiplier
  // underflows -- the extrapolated edge value can come back spuriously
  // positive and no bracket forms.  Probe the pressure directly at tiny
  // multipliers: if it is compatible with the exact limit 0, the level-set
  // dimension collapses to the edge dimension at working precision.
  bool edge_collapse(SpectrumPoint& pt, const detail::InnerMin& hi) {
    if (!hi.pinned || std::abs(hi.q_c) > 1e-9) return false;
    auto near_p = detail::try_closed(eng_, 1e-8, 1.0);
    auto mid_p = detail::try_closed(eng_, 1e-5, 1.0);
    if (!near_p || std::abs(near_p->value) > 1e-4) return false;
    pt.value = pt.delta = 1.0;
    pt.q = 0.0;
    pt.q_edge = 0.0;
    pt.residual_pressure = std::abs(near_p->value);
    pt.residual_slope = std::max(0.0, pt.alpha - near_p->dq);
    pt.err_est = std::max(hi.err, 1e-9);
    bool divergent_slope =
        mid_p && std::abs(near_p->dq) > 1.2 * std::abs(mid_p->dq) + 1e-9;
    if (divergent_slope) {
      // The edge slope still grows as q shrinks: the true tangency sits at
      // a multiplier below the double-precision floor, i.e. this is an
      // interior optimum whose witness is unrepresentable.
      pt.regime = SpectrumPoint::Regime::interior;
      pt.note = "tangency multiplier below the working-precision floor: the "
                "potential average diverges along the zero-multiplier edge, "
                "so the level set attains the edge dimension";
    } else {
      pt.regime = SpectrumPoint::Regime::boundary;
      certify_boundary(pt);
    }
    return true;
  }

  // Converged interior Newton solution: check the distance to the
  // finiteness edge; a solution hugging the edge is reported as boundary.
  void classify_interior(SpectrumPoint& pt) {
    double qc = detail::edge_q(eng_, pt.delta, pt.q);
    pt.q_edge = qc;
    if (qc != -kInf && pt.q - qc <= 1e-4 * (1.0 + std::abs(pt.q))) {
      pt.regime = SpectrumPoint::Regime::boundary;
      certify_boundary(pt);
    } else {
      pt.regime = SpectrumPoint::Regime::interior;
    }
  }

  // Verify that the pressure really is infinite just past the reported edge.
  void certify_boundary(SpectrumPoint& pt) {
    if (pt.q_edge == -kInf) return;
    double eps = 1e-3 * (1.0 + std::abs(pt.q_edge));
    FinitenessResult fr = eng_.finiteness(pt.q_edge - eps, pt.delta);
    pt.certified_infinite =
        fr.verdict == FinitenessResult::Verdict::infinite;
    if (pt.certified_infinite && fr.lower.certificate) {
      pt.note = "edge certificate: " + fr.lower.certificate->argument;
    } else if (!pt.certified_infinite) {
      pt.note = "edge certificate unavailable: the sandwich is inconclusive "
                "just past the reported critical multiplier";
    }
  }

  PressureEngine& eng_;
  SpectrumOptions opt_;
  std::mutex mutex_;
  std::optional<double> delta_star_;
  std::unique_ptr<PressureEngine> mirror_eng_;
  std::unique_ptr<SpectrumSolver> mirror_solver_;
};

// ---- expansion-rate (one-parameter) spectrum ---------------------------------

struct RatePoint {
  double rate = 0;   // Birkhoff average of log|T'|
  double dim = 0;    // dimension of the level set
  double u = 0;      // parameter of the optimal geometric weight
  bool pinned = false;  // optimum at the critical parameter of the ray
  double edge_value = 0;  // pressure at the critical parameter (pinned case)
  int iterations = 0;
  std::string note;
};

// Dimension of { x : lim (1/n) log |(T^n)'(x)| = rate } via the
// one-parameter formula  dim = inf_u [ u + P(-u log|T'|) / rate ].
// The engine must carry the geometric potential; only delta is varied
// (q stays 0), since q phi - delta log|T'| = -(q + delta) log|T'|.
inline RatePoint rate_dimension(PressureEngine& eng, double rate,
                                double u_critical, double tol = 1e-11) {
  if (eng.potential().kind() != Potential::Kind::geometry ||
      eng.potential().affine_a() != 1.0 || eng.potential().affine_b() != 0.0)
    throw UsageError("rate_dimension needs the plain geometric potential");
  if (!(rate > 0))
    throw DomainError("expansion rates are positive for expanding maps");
  RatePoint out;
  out.rate = rate;

  auto slope = [&](double u) -> std::optional<double> {
    auto p = detail::try_closed(eng, 0.0, u);
    if (!p) return std::nullopt;
    return 1.0 + p->ddelta / rate;  // d/du [u + P(u)/rate]
  };
  auto value = [&](double u) -> std::optional<double> {
    auto p = detail::try_closed(eng, 0.0, u);
    if (!p) return std::nullopt;
    return u + p->value / rate;
  };

  double ul = u_critical + 1e-9;
  auto sl = slope(ul);
  for (double push = 1e-7; !sl && push <= 1e-2; push *= 10) {
    ul = u_critical + push;
    sl = slope(ul);
  }
  if (sl && *sl >= 0) {
    // Optimum pinned at the critical parameter: closed form from the edge
    // pressure, dim = u_c + P(u_c)/rate.
    out.pinned = true;
    out.u = u_critical;
    double pe;
    if (auto p = detail::try_closed(eng, 0.0, u_critical)) {
      pe = p->value;
    } else {
      // closure fails right at the critical parameter: extrapolate from a
      // short ladder just inside
      auto pa = detail::try_closed(eng, 0.0, u_critical + 1e-5);
      auto pb = detail::try_closed(eng, 0.0, u_critical + 1e-6);
      if (!pa || !pb)
        throw ConvergenceError("edge pressure unavailable for the pinned "
                               "rate optimum");
      pe = pb->value + (pb->value - pa->value) / 9.0;
    }
    out.edge_value = pe;
    out.dim = u_critical + pe / rate;
    out.note = "optimum pinned at the critical geometric parameter";
    return out;
  }
  if (!sl)
    throw ConvergenceError("pressure closure failed near the critical "
                           "geometric parameter");

  // Expand right until the slope turns positive.
  double ur = std::max(1.0, 2.0 * ul);
  auto sr = slope(ur);
  int guard = 0;
  while (sr && *sr < 0 && guard++ < 64) {
    ul = ur;
    sl = sr;
    ur = 2.0 * ur;
    sr = slope(ur);
  }
  if (!sr || *sr < 0)
    throw DomainError("rate below the attainable minimum: the optimum runs "
                      "away with the geometric parameter");

  // Secant on the slope with a maintained bisection bracket; one pressure
  // evaluation per iteration.
  double u = 0.5 * (ul + ur);
  double u_prev = kNaN, s_prev = kNaN;
  int it = 0;
  for (; it < 200; ++it) {
    auto s = slope(u);
    if (!s) {
      ul = u;
      u = 0.5 * (ul + ur);
      continue;
    }
    if (*s < 0)
      ul = u;
    else
      ur = u;
    if (ur - ul <= tol * (1.0 + std::abs(ur)) ||
        std::abs(*s) <= 1e-14)
      break;
    double un = 0.5 * (ul + ur);
    if (std::isfinite(u_prev) && *s != s_prev) {
      double cand = u - *s * (u - u_prev) / (*s - s_prev);
      if (cand > ul && cand < ur) un = cand;
    }
    u_prev = u;
    s_prev = *s;
    u = un;
  }
  out.u = u;
  out.iterations = it;
  auto v = value(u);
  if (!v) throw ConvergenceError("pressure closure failed at the optimum");
  out.dim = *v;
  return out;
}

// ---- extreme level sets ------------------------------------------------------

struct ExtremeDimensionResult {
  std::vector<std::pair<double, double>> table;  // (alpha_k, dim_k)
  double limit = 0;        // accelerated limit of dim_k
  double limit_raw = 0;    // last computed dim_k
  int levels = 0;
  std::string note;
};

// Dimensions of level sets at alpha_k = -2^k, k = 0..k_max, with Aitken
// acceleration of the limit (the dimension of sets with extreme averages).
inline ExtremeDimensionResult extreme_dimension(SpectrumSolver& solver,
                                                int k_max = 20) {
  ExtremeDimensionResult out;
  double qh = kNaN, dh = kNaN;
  for (int k = 0; k <= k_max; ++k) {
    double alpha = -std::ldexp(1.0, k);
    SpectrumPoint pt = solver.solve(alpha, qh, dh);
    out.table.push_back({alpha, pt.value});
    qh = pt.q;
    dh = pt.delta;
    out.levels = k + 1;
    if (k >= 2) {
      double d2 = out.table[k].second - out.table[k - 1].second;
      if (std::abs(d2) < 1e-13) break;
    }
  }
  std::size_t n = out.table.size();
  out.limit_raw = out.table.back().second;
  if (n >= 3) {
    double a0 = out.table[n - 3].second, a1 = out.table[n - 2].second,
           a2 = out.table[n - 1].second;
    double d1 = a1 - a0, d2 = a2 - a1;
    if (std::abs(d2 - d1) > 1e-15) {
      out.limit = a2 - d2 * d2 / (d2 - d1);
      out.note = "Aitken-accelerated over the last three levels";
    } else {
      out.limit = a2;
      out.note = "sequence already flat at the last level";
    }
  } else {
    out.limit = out.limit_raw;
    out.note = "too few levels for acceleration";
  }
  return out;
}

// ---- curve shape diagnostics -------------------------------------------------

struct ShapeReport {
  bool unimodal = true;
  bool concave_increasing_part = true;
  int kink_count = 0;
  double max_concavity_violation = 0;
  std::string note;
};

// Checks the qualitative shape of a spectrum sample: a single peak, concavity
// on the rising part, and at most a prescribed number of second-difference
// spikes (phase-boundary kinks).
inline ShapeReport shape_check(const std::vector<SpectrumPoint>& curve,
                               double tol = 1e-6) {
  ShapeReport rep;
  struct Node {
    double alpha, value, q;
  };
  std::vector<Node> pts;
  for (const auto& p : curve)
    if (std::isfinite(p.value)) pts.push_back({p.alpha, p.value, p.q});
  std::sort(pts.begin(), pts.end(),
            [](const Node& x, const Node& y) { return x.alpha < y.alpha; });
  if (pts.size() < 3) {
    rep.note = "too few points for shape diagnostics";
    return rep;
  }

  // unimodality: descents before the running peak (beyond tol) break it
  std::size_t peak = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].value > pts[peak].value) peak = i;
  for (std::size_t i = 1; i <= peak; ++i)
    if (pts[i].value < pts[i - 1].value - tol) rep.unimodal = false;
  for (std::size_t i = peak + 1; i < pts.size(); ++i)
    if (pts[i].value > pts[i - 1].value + tol) rep.unimodal = false;

  // Concavity is asserted on the branch joining the peak to the compact edge
  // of the attainable range; the opposite branch (heavy-tail side) may carry
  // a genuine inflection.  The compact edge is the steep side of the curve,
  // recognizable by the larger terminal multiplier |q|.
  std::size_t clo = 0, chi = peak;
  if (std::abs(pts.back().q) >= std::abs(pts.front().q)) {
    clo = peak;
    chi = pts.size() - 1;
  }
  std::vector<double> dd;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    double h1 = pts[i].alpha - pts[i - 1].alpha;
    double h2 = pts[i + 1].alpha - pts[i].alpha;
    if (!(h1 > 0) || !(h2 > 0)) continue;
    double s1 = (pts[i].value - pts[i - 1].value) / h1;
    double s2 = (pts[i + 1].value - pts[i].value) / h2;
    double d2 = (s2 - s1) / (0.5 * (h1 + h2));
    dd.push_back(d2);
    if (i > clo && i + 1 <= chi && s2 - s1 > tol) {
      rep.concave_increasing_part = false;
      rep.max_concavity_violation =
          std::max(rep.max_concavity_violation, s2 - s1);
    }
  }

  // kinks: second differences an order of magnitude beyond the local scale
  if (dd.size() >= 5) {
    std::vector<double> mag;
    for (double v : dd) mag.push_back(std::abs(v));
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    double med = sorted[sorted.size() / 2];
    double gate = std::max(50.0 * med, 1e-4);
    for (std::size_t i = 1; i + 1 < mag.size(); ++i)
      if (mag[i] > gate && mag[i] > 2.0 * mag[i - 1] && mag[i] > 2.0 * mag[i + 1])
        ++rep.kink_count;
  }
  return rep;
}

}  // namespace emr
