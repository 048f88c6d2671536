#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "anonqcd/errors.hpp"
#include "anonqcd/mixture.hpp"
#include "anonqcd/model.hpp"
#include "anonqcd/numeric.hpp"
#include "anonqcd/random.hpp"

namespace anonqcd {

// Minimizer of sum_k alpha_k D(U_k || p_k) subject to sum_k alpha_k U_k = Q.
struct ExponentSolution {
  double value = 0.0;                        // nats; +inf when infeasible
  bool feasible = true;
  std::vector<std::vector<double>> minimizer;  // U_1..U_K
  // Multiplier per symbol: U_k(x) = p_k(x) exp(-dual(x)) / Z_k. Symbols with
  // Q(x) = 0 carry +inf (every U_k vanishes there).
  std::vector<double> dual;
  double constraint_residual = 0.0;  // max_x |sum_k alpha_k U_k(x) - Q(x)|
  int iterations = 0;
};

struct ExponentOptions {
  int max_iterations = 100'000;
  double residual_tolerance = 1e-9;  // success threshold
  double objective_tolerance = 1e-11;
};

// Dual Newton solver for the KL exponent f_P(alpha, Q).
//
// Stationarity gives exponential tilting U_k ∝ p_k e^{-lambda}; the concave
// dual  Phi(lambda) = -<lambda, Q> - sum_k alpha_k log Z_k(lambda)  is
// maximized by Newton steps with step halving, restricted to supp(Q). If the
// Newton direction stops making progress the solver falls back to plain
// gradient ascent with backtracking. One solver instance owns its scratch
// space and is not safe for concurrent use.
class ExponentSolver {
 public:
  ExponentSolver(std::span<const DiscreteDistribution> groups, std::span<const double> alpha,
                 ExponentOptions options = {})
      : options_(options), alpha_(alpha.begin(), alpha.end()) {
    if (groups.empty() || groups.size() != alpha.size())
      throw InvalidArgument("exponent: need one weight per group");
    m_ = groups.front().alphabet_size();
    CompensatedSum asum;
    for (double a : alpha_) {
      if (!(a > 0.0)) throw InvalidArgument("exponent: weights must be strictly positive");
      asum.add(a);
    }
    if (std::abs(asum.value() - 1.0) > 1e-12) throw InvalidArgument("exponent: weights must sum to 1");
    for (const auto& g : groups) {
      if (g.alphabet_size() != m_) throw InvalidArgument("exponent: groups must share one alphabet");
      logp_.emplace_back(g.log_probabilities().begin(), g.log_probabilities().end());
      p_.emplace_back(g.probabilities().begin(), g.probabilities().end());
    }
  }

  std::size_t alphabet_size() const noexcept { return m_; }
  std::size_t group_count() const noexcept { return alpha_.size(); }

  ExponentSolution solve(std::span<const double> q, std::span<const double> warm_dual = {}) {
    validate_target(q);
    const std::size_t k = alpha_.size();
    support_.clear();
    for (std::size_t x = 0; x < m_; ++x)
      if (q[x] > 0.0) support_.push_back(x);
    const std::size_t s = support_.size();

    ExponentSolution sol;
    sol.dual.assign(m_, kInf);
    sol.minimizer.assign(k, std::vector<double>(m_, 0.0));

    if (!feasible(q)) {
      sol.value = kInf;
      sol.feasible = false;
      sol.constraint_residual = kInf;
      return sol;
    }

    // Cold start: the tilt taking the mixture sum_k alpha_k p_k onto Q, which
    // is the exact answer for a single group.
    lambda_.resize(static_cast<Eigen::Index>(s));
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t x = support_[i];
      double w = 0.0;
      if (warm_dual.empty()) {
        double mix = 0.0;
        for (std::size_t g = 0; g < k; ++g) mix += alpha_[g] * p_[g][x];
        w = std::log(mix / q[x]);
      } else {
        w = warm_dual[x];
      }
      lambda_[static_cast<Eigen::Index>(i)] = std::isfinite(w) ? w : 0.0;
    }
    qs_.resize(static_cast<Eigen::Index>(s));
    for (std::size_t i = 0; i < s; ++i) qs_[static_cast<Eigen::Index>(i)] = q[support_[i]];

    double phi = evaluate(lambda_);
    double res = residual_.cwiseAbs().maxCoeff();
    int it = 0;
    bool newton = true;
    double last_change = kInf;
    while (it < options_.max_iterations) {
      if (res <= 1e-14 || (res <= options_.residual_tolerance && last_change <= options_.objective_tolerance)) break;
      ++it;
      if (newton) {
        // Newton direction on the gauge-fixed Hessian (the dual is flat along 1).
        hess_ = hessian_;
        hess_.array() += 1.0 / static_cast<double>(s * s);
        hess_.diagonal().array() += 1e-15;
        ldlt_.compute(hess_);
        step_ = ldlt_.solve(residual_);
        if (!step_.allFinite()) {
          newton = false;
          continue;
        }
      } else {
        step_ = residual_;
      }
      const double slope = residual_.dot(step_);
      double t = 1.0;
      bool accepted = false;
      for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
        trial_ = lambda_ + t * step_;
        const double trial_phi = evaluate_objective(trial_);
        if (trial_phi >= phi + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
        // Close to the optimum Phi moves below its rounding error; a Newton
        // step that shrinks the gradient is still progress.
        if (newton && trial_phi >= phi - 1e-13 * std::max(1.0, std::abs(phi)) &&
            residual_norm(trial_) <= (1.0 - 1e-4 * t) * res) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (res <= options_.residual_tolerance) break;  // at machine precision
        if (!newton) {
          throw NoConvergence("exponent: line search failed", res);
        }
        newton = false;
        continue;
      }
      lambda_ = trial_;
      const double new_phi = evaluate(lambda_);
      last_change = std::abs(new_phi - phi);
      phi = new_phi;
      res = residual_.cwiseAbs().maxCoeff();
      if (!newton && it % 50 == 0) newton = true;  // retry Newton periodically
    }
    if (res > options_.residual_tolerance) {
      std::ostringstream os;
      os << "exponent: iteration cap reached with residual " << res;
      throw NoConvergence(os.str(), res);
    }

    // Primal value from the tilted family: sum_k alpha_k (-<U_k, lambda> - log Z_k).
    CompensatedSum value;
    for (std::size_t g = 0; g < k; ++g) {
      double inner = -logz_[g];
      for (std::size_t i = 0; i < s; ++i) {
        const double u = tilted_(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(i));
        sol.minimizer[g][support_[i]] = u;
        if (u > 0.0) inner -= u * lambda_[static_cast<Eigen::Index>(i)];
      }
      value.add(alpha_[g] * inner);
    }
    sol.value = std::max(0.0, value.value());
    for (std::size_t i = 0; i < s; ++i) sol.dual[support_[i]] = lambda_[static_cast<Eigen::Index>(i)];
    double worst = 0.0;
    for (std::size_t x = 0; x < m_; ++x) {
      double mix = 0.0;
      for (std::size_t g = 0; g < k; ++g) mix += alpha_[g] * sol.minimizer[g][x];
      worst = std::max(worst, std::abs(mix - q[x]));
    }
    sol.constraint_residual = worst;
    sol.iterations = it;
    return sol;
  }

  double value(std::span<const double> q, std::span<const double> warm_dual = {}) {
    return solve(q, warm_dual).value;
  }

 private:
  void validate_target(std::span<const double> q) const {
    if (q.size() != m_) throw InvalidArgument("exponent: target has the wrong alphabet size");
    double s = 0.0;
    for (double v : q) {
      if (!(v >= 0.0)) throw InvalidArgument("exponent: target has a negative mass");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("exponent: target is not a distribution");
  }

  // Transportation feasibility: can each group's mass alpha_k be spread over
  // supp(p_k) ∩ supp(Q) so that the symbols receive exactly Q? By Hall's
  // theorem this holds iff Q(A) <= alpha(N(A)) for every symbol set A.
  bool feasible(std::span<const double> q) const {
    const std::size_t k = alpha_.size();
    bool full_support = true;
    for (std::size_t x : support_) {
      bool any = false;
      for (std::size_t g = 0; g < k; ++g) {
        if (p_[g][x] > 0.0)
          any = true;
        else
          full_support = false;
      }
      if (!any) return false;
    }
    if (full_support) return true;  // U_k = Q is feasible
    for (std::size_t g = 0; g < k; ++g) {
      bool touches = false;
      for (std::size_t x : support_) touches = touches || p_[g][x] > 0.0;
      if (!touches) return false;
    }
    const std::size_t s = support_.size();
    if (s > 20) return true;  // leave large alphabets to the iteration cap
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << s); ++mask) {
      double demand = 0.0, supply = 0.0;
      for (std::size_t g = 0; g < k; ++g) {
        bool neighbour = false;
        for (std::size_t i = 0; i < s && !neighbour; ++i)
          neighbour = ((mask >> i) & 1U) && p_[g][support_[i]] > 0.0;
        if (neighbour) supply += alpha_[g];
      }
      for (std::size_t i = 0; i < s; ++i)
        if ((mask >> i) & 1U) demand += q[support_[i]];
      if (demand > supply + 1e-12) return false;
    }
    return true;
  }

  // Dual objective only (line search).
  double evaluate_objective(const Eigen::VectorXd& lambda) {
    const std::size_t k = alpha_.size();
    double phi = -lambda.dot(qs_);
    for (std::size_t g = 0; g < k; ++g) phi -= alpha_[g] * log_partition(g, lambda);
    return phi;
  }

  double residual_norm(const Eigen::VectorXd& lambda) {
    const std::size_t s = support_.size();
    scratch_ = -qs_;
    for (std::size_t g = 0; g < alpha_.size(); ++g) {
      const double lz = log_partition(g, lambda);
      for (std::size_t i = 0; i < s; ++i) {
        const double e = logp_[g][support_[i]] - lambda[static_cast<Eigen::Index>(i)];
        if (e != kNegInf) scratch_[static_cast<Eigen::Index>(i)] += alpha_[g] * std::exp(e - lz);
      }
    }
    return scratch_.cwiseAbs().maxCoeff();
  }

  double log_partition(std::size_t g, const Eigen::VectorXd& lambda) const {
    double hi = kNegInf;
    const std::size_t s = support_.size();
    for (std::size_t i = 0; i < s; ++i) hi = std::max(hi, logp_[g][support_[i]] - lambda[static_cast<Eigen::Index>(i)]);
    double acc = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double e = logp_[g][support_[i]] - lambda[static_cast<Eigen::Index>(i)];
      if (e != kNegInf) acc += std::exp(e - hi);
    }
    return hi + std::log(acc);
  }

  // Objective plus tilted distributions, residual (dual gradient) and Hessian.
  double evaluate(const Eigen::VectorXd& lambda) {
    const std::size_t k = alpha_.size();
    const auto s = static_cast<Eigen::Index>(support_.size());
    tilted_.resize(static_cast<Eigen::Index>(k), s);
    logz_.resize(k);
    residual_ = -qs_;
    hessian_.setZero(s, s);
    double phi = -lambda.dot(qs_);
    for (std::size_t g = 0; g < k; ++g) {
      const auto row = static_cast<Eigen::Index>(g);
      double hi = kNegInf;
      for (Eigen::Index i = 0; i < s; ++i) hi = std::max(hi, logp_[g][support_[static_cast<std::size_t>(i)]] - lambda[i]);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < s; ++i) {
        const double e = logp_[g][support_[static_cast<std::size_t>(i)]] - lambda[i];
        acc += tilted_(row, i) = e == kNegInf ? 0.0 : std::exp(e - hi);
      }
      tilted_.row(row) /= acc;
      logz_[g] = hi + std::log(acc);
      phi -= alpha_[g] * logz_[g];
      residual_ += alpha_[g] * tilted_.row(row).transpose();
      hessian_.diagonal() += alpha_[g] * tilted_.row(row).transpose();
      hessian_.noalias() -= alpha_[g] * tilted_.row(row).transpose() * tilted_.row(row);
    }
    return phi;
  }

  ExponentOptions options_;
  std::vector<double> alpha_;
  std::size_t m_ = 0;
  std::vector<std::vector<double>> logp_, p_;
  std::vector<std::size_t> support_;
  std::vector<double> logz_;
  Eigen::VectorXd lambda_, qs_, residual_, step_, trial_, scratch_;
  Eigen::MatrixXd tilted_, hessian_, hess_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

inline ExponentSolution exponent(std::span<const DiscreteDistribution> groups, std::span<const double> alpha,
                                 std::span<const double> q, ExponentOptions options = {}) {
  ExponentSolver solver(groups, alpha, options);
  return solver.solve(q);
}

// f_{P_0}(alpha, Q) - f_{P_1}(alpha, Q) with reusable solvers and warm starts.
class GapEvaluator {
 public:
  explicit GapEvaluator(const NetworkModel& model)
      : pre_(model.discrete(Regime::pre), model.alpha()), post_(model.discrete(Regime::post), model.alpha()) {}

  struct Parts {
    double pre = 0.0;   // f_{P_0}
    double post = 0.0;  // f_{P_1}
    double gap = 0.0;
  };

  // warm = true reuses the duals of the previous call as starting points.
  Parts evaluate(std::span<const double> q, bool warm = false) {
    if (!warm) {
      dual0_.clear();
      dual1_.clear();
    }
    auto s0 = pre_.solve(q, dual0_);
    auto s1 = post_.solve(q, dual1_);
    dual0_ = std::move(s0.dual);
    dual1_ = std::move(s1.dual);
    if (!s0.feasible && !s1.feasible) throw InvalidBatch("exponent gap: target infeasible under both hypotheses");
    Parts p{s0.value, s1.value, 0.0};
    if (!s0.feasible)
      p.gap = kInf;
    else if (!s1.feasible)
      p.gap = kNegInf;
    else
      p.gap = s0.value - s1.value;
    return p;
  }

  double gap(std::span<const double> q, bool warm = false) { return evaluate(q, warm).gap; }

 private:
  ExponentSolver pre_, post_;
  std::vector<double> dual0_, dual1_;
};

inline double exponent_gap(const NetworkModel& model, std::span<const double> q) {
  GapEvaluator g(model);
  return g.gap(q);
}

struct HEstimate {
  double h = 0.0;                 // n * inf_{closure(Gamma)} f_{P_0}
  bool conservative = false;      // true when the boundary search (with 1/2 factor) ran
  std::vector<double> argmin;     // mixture attaining the estimate
  double raw_infimum = 0.0;       // inf of f_{P_0} found, before n and the safety factor
};

namespace detail {

// Calls fn(point) for every point of the simplex grid with the given number
// of cells per unit, optionally restricted to a box [lo, hi] of grid counts.
template <class Fn>
void for_each_simplex_point(std::size_t dim, int cells, std::span<const int> lo, std::span<const int> hi, Fn&& fn) {
  std::vector<int> c(dim, 0);
  std::vector<double> point(dim, 0.0);
  auto rec = [&](auto&& self, std::size_t i, int left) -> void {
    if (i + 1 == dim) {
      if (!lo.empty() && (left < lo[i] || left > hi[i])) return;
      c[i] = left;
      for (std::size_t j = 0; j < dim; ++j) point[j] = static_cast<double>(c[j]) / cells;
      fn(std::span<const double>(point));
      return;
    }
    const int from = lo.empty() ? 0 : std::max(0, lo[i]);
    const int to = lo.empty() ? left : std::min(left, hi[i]);
    for (int v = from; v <= to; ++v) {
      c[i] = v;
      self(self, i + 1, left - v);
    }
  };
  rec(rec, 0, cells);
}

}  // namespace detail

// h = n * inf over mu in closure(Gamma) of f_{P_0}(alpha, mu), where
// Gamma = {mu : f_{P_0}(alpha, mu) > f_{P_1}(alpha, mu)}.
//
// Alphabets of size <= 4 use a dense simplex grid (step `resolution`) plus one
// refinement pass at step/10 around the grid argmin. Larger alphabets search
// the boundary of Gamma: along segments from alpha^T P_0 the first crossing
// of the gap is bracketed and bisected, and the segment target is improved by
// a pattern search from multiple starts; the result is halved, since only an
// underestimate of h keeps the run-length bound valid.
inline HEstimate compute_h(const NetworkModel& model, double resolution = 0.01) {
  model.require_discrete("compute_h");
  if (!(resolution > 0.0 && resolution <= 0.5)) throw InvalidArgument("compute_h: resolution must be in (0, 0.5]");
  const std::size_t dim = model.alphabet_size();
  const double n = model.total_sensors();
  GapEvaluator gaps(model);
  HEstimate out;
  // Points impossible under both hypotheses lie outside Gamma.
  auto parts_at = [&](std::span<const double> mu, bool warm) {
    try {
      return gaps.evaluate(mu, warm);
    } catch (const InvalidBatch&) {
      return GapEvaluator::Parts{kInf, kInf, std::numeric_limits<double>::quiet_NaN()};
    }
  };

  if (dim <= 4) {
    const int cells = static_cast<int>(std::lround(1.0 / resolution));
    double best = kInf;
    std::vector<double> arg;
    auto visit = [&](std::span<const double> mu) {
      const auto parts = parts_at(mu, false);
      if (parts.gap > 0.0 && parts.pre < best) {
        best = parts.pre;
        arg.assign(mu.begin(), mu.end());
      }
    };
    detail::for_each_simplex_point(dim, cells, {}, {}, visit);
    if (!std::isfinite(best)) throw DegenerateModel("compute_h: no grid point where the post-change exponent wins");
    const int fine = cells * 10;
    std::vector<int> lo(dim), hi(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const int centre = static_cast<int>(std::lround(arg[i] * fine));
      lo[i] = centre - 10;
      hi[i] = centre + 10;
    }
    detail::for_each_simplex_point(dim, fine, lo, hi, visit);
    out.h = n * best;
    out.raw_infimum = best;
    out.argmin = arg;
    out.conservative = false;
    if (!(out.h > 0.0)) throw DegenerateModel("compute_h: non-positive h");
    return out;
  }

  const auto origin_d = mixture_distribution(model, Regime::pre);
  const std::vector<double> origin(origin_d.probabilities().begin(), origin_d.probabilities().end());
  std::vector<double> point(dim);

  // f_{P_0} at the first point along origin -> target where the gap turns positive.
  auto first_crossing = [&](std::span<const double> target) -> std::pair<double, std::vector<double>> {
    auto at = [&](double t) {
      for (std::size_t x = 0; x < dim; ++x) point[x] = origin[x] + t * (target[x] - origin[x]);
      return std::span<const double>(point);
    };
    constexpr int kScan = 24;
    double lo = 0.0, hi = -1.0;
    for (int j = 1; j <= kScan; ++j) {
      const double t = static_cast<double>(j) / kScan;
      if (parts_at(at(t), true).gap > 0.0) {
        hi = t;
        break;
      }
      lo = t;
    }
    if (hi < 0.0) return {kInf, {}};
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (parts_at(at(mid), true).gap > 0.0)
        hi = mid;
      else
        lo = mid;
    }
    const auto parts = parts_at(at(hi), true);
    return {parts.pre, std::vector<double>(point.begin(), point.end())};
  };

  std::vector<std::vector<double>> starts;
  for (std::size_t x = 0; x < dim; ++x) {
    std::vector<double> v(dim, 0.0);
    v[x] = 1.0;
    starts.push_back(v);
  }
  const auto post_mix = mixture_distribution(model, Regime::post);
  const std::vector<double> post_v(post_mix.probabilities().begin(), post_mix.probabilities().end());
  starts.push_back(post_v);
  for (std::size_t x = 0; x < dim; ++x) {
    std::vector<double> v(post_v);
    for (std::size_t y = 0; y < dim; ++y) v[y] = 0.5 * v[y] + (y == x ? 0.5 : 0.0);
    starts.push_back(v);
  }
  Rng rng(derive_seed(0x5eedULL, dim, StreamRole::auxiliary));
  std::exponential_distribution<double> expo(1.0);
  for (int r = 0; r < 24; ++r) {
    std::vector<double> v(dim);
    double s = 0.0;
    for (auto& e : v) s += (e = expo(rng));
    for (auto& e : v) e /= s;
    starts.push_back(v);
  }

  struct Candidate {
    double value;
    std::vector<double> target, crossing;
  };
  std::vector<Candidate> cands;
  for (const auto& st : starts) {
    auto [val, cross] = first_crossing(st);
    cands.push_back({val, st, cross});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.value < b.value; });
  if (!std::isfinite(cands.front().value))
    throw DegenerateModel("compute_h: no direction reaches the region where the post-change exponent wins");

  Candidate best = cands.front();
  const std::size_t refine = std::min<std::size_t>(4, cands.size());
  for (std::size_t c = 0; c < refine; ++c) {
    Candidate cur = cands[c];
    if (!std::isfinite(cur.value)) break;
    double delta = 0.25;
    while (delta > 1e-4) {
      bool improved = false;
      for (std::size_t x = 0; x < dim; ++x) {
        for (std::size_t y = 0; y < dim; ++y) {
          if (x == y) continue;
          const double move = std::min(delta, cur.target[y]);
          if (move <= 0.0) continue;
          std::vector<double> v = cur.target;
          v[x] += move;
          v[y] -= move;
          auto [val, cross] = first_crossing(v);
          if (val < cur.value - 1e-12) {
            cur = {val, v, cross};
            improved = true;
          }
        }
      }
      if (!improved) delta *= 0.5;
    }
    if (cur.value < best.value) best = cur;
  }
  out.raw_infimum = best.value;
  out.argmin = best.crossing;
  out.h = 0.5 * n * best.value;
  out.conservative = true;
  if (!(out.h > 0.0)) throw DegenerateModel("compute_h: non-positive h");
  return out;
}

// |P_m| = C(m + |X| - 1, |X| - 1), the number of types with denominator m.
inline boost::multiprecision::cpp_int type_count(std::int64_t m, std::size_t alphabet_size) {
  if (m < 0) throw InvalidArgument("type_count: negative sample count");
  if (alphabet_size == 0) throw InvalidArgument("type_count: empty alphabet");
  using boost::multiprecision::cpp_int;
  const std::int64_t r = static_cast<std::int64_t>(alphabet_size) - 1;
  cpp_int result = 1;
  for (std::int64_t i = 1; i <= r; ++i) {
    result *= (m + i);
    result /= i;
  }
  return result;
}

inline double log_type_count(std::int64_t m, std::size_t alphabet_size) {
  return log_binomial(m + static_cast<std::int64_t>(alphabet_size) - 1, static_cast<std::int64_t>(alphabet_size) - 1);
}

struct CalibrationResult {
  double threshold_b = 0.0;
  double h = 0.0;
  double guaranteed_warl = 0.0;
  double log_guaranteed_warl = 0.0;
  bool conservative = false;
  std::int64_t cardinality_index = 0;  // m = ceil(b / h) used in the bound
};

// Number of samples per group used in the type-count terms of the bound.
inline std::int64_t bound_index(double b, double h) {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(b / h)));
}

// log of e^b / ((m + 1) prod_k |P_{m n_k}|), m = ceil(b/h).
inline double log_warl_bound(double b, double h, std::span<const int> group_sizes, std::size_t alphabet_size) {
  const std::int64_t m = bound_index(b, h);
  double v = b - std::log(static_cast<double>(m) + 1.0);
  for (int nk : group_sizes) v -= log_type_count(m * nk, alphabet_size);
  return v;
}

// Smallest b in [ln gamma, ln gamma + 200 ln(1 + n|X|)] whose run-length
// bound reaches gamma. On each piece ((j-1)h, jh] the index m = j is fixed
// and the log-bound is b minus a constant, so the crossing is solved exactly.
inline CalibrationResult calibrate_threshold(double h, std::span<const int> group_sizes, std::size_t alphabet_size,
                                             double gamma, bool conservative = false) {
  if (!(gamma > 1.0)) throw InvalidArgument("calibrate_threshold: target run length must exceed 1");
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("calibrate_threshold: h must be positive");
  int n = 0;
  for (int s : group_sizes) n += s;
  const double log_gamma = std::log(gamma);
  const double lo = log_gamma;
  const double hi = log_gamma + 200.0 * std::log(1.0 + static_cast<double>(n) * static_cast<double>(alphabet_size));

  auto finish = [&](double b) {
    CalibrationResult r;
    r.threshold_b = b;
    r.h = h;
    r.log_guaranteed_warl = log_warl_bound(b, h, group_sizes, alphabet_size);
    r.guaranteed_warl = std::exp(r.log_guaranteed_warl);
    r.conservative = conservative;
    r.cardinality_index = bound_index(b, h);
    return r;
  };

  if (hi / h > 0x1p53) throw CalibrationError("calibrate_threshold: h is too small to index the type counts");
  // Piece j covers b in ((j-1)h, jh]; there the bound is b minus need(j), so
  // the piece holds a solution iff need(j) <= min(jh, hi). The slack
  // jh - need(j) is convex in j: once it has turned upward it stays so.
  auto need = [&](std::int64_t j) {
    double v = log_gamma + std::log(static_cast<double>(j) + 1.0);
    for (int nk : group_sizes) v += log_type_count(j * nk, alphabet_size);
    return v;
  };
  auto solve_piece = [&](std::int64_t j) -> std::optional<double> {
    const double left = static_cast<double>(j - 1) * h;
    const double right = std::min(static_cast<double>(j) * h, hi);
    if (left >= hi) return std::nullopt;
    double b = std::max({need(j), lo, std::nextafter(left, kInf)});
    // Guard against rounding at the piece edges.
    for (int tries = 0; tries < 8 && b <= right; ++tries) {
      if (bound_index(b, h) == j && log_warl_bound(b, h, group_sizes, alphabet_size) >= log_gamma) return b;
      b = std::nextafter(b + 1e-15 * std::abs(b), kInf);
    }
    return std::nullopt;
  };
  auto slack = [&](std::int64_t j) { return static_cast<double>(j) * h - need(j); };

  const std::int64_t first = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(lo / h)));
  const auto last = static_cast<std::int64_t>(std::ceil(hi / h));
  std::int64_t j = first;
  for (; j <= last && j < first + 64; ++j)
    if (auto b = solve_piece(j)) return finish(*b);
  if (j <= last) {
    // Smallest j in [j, last] with nonnegative slack on the rising branch.
    auto ok = [&](std::int64_t i) { return slack(i) >= 0.0 && slack(i + 1) >= slack(i); };
    std::int64_t a = j, c = last;
    if (ok(c)) {
      while (a < c) {
        const std::int64_t mid = a + (c - a) / 2;
        if (ok(mid))
          c = mid;
        else
          a = mid + 1;
      }
      for (std::int64_t i = std::max(j, a - 2); i <= std::min(last, a + 2); ++i)
        if (auto b = solve_piece(i)) return finish(*b);
    }
  }
  std::ostringstream os;
  os << "calibrate_threshold: no b in [" << lo << ", " << hi << "] reaches gamma=" << gamma << " with h=" << h;
  throw CalibrationError(os.str());
}

inline CalibrationResult calibrate_threshold(const NetworkModel& model, double gamma, double resolution = 0.01) {
  if (!(gamma > 1.0)) throw InvalidArgument("calibrate_threshold: target run length must exceed 1");
  const auto est = compute_h(model, resolution);
  return calibrate_threshold(est.h, model.group_sizes(), model.alphabet_size(), gamma, est.conservative);
}

// D(P~_1 || P~_0) between the label-averaged joint laws of one batch.
//
// The mixture likelihood ratio is constant on type classes, so the divergence
// is a sum over the types of n samples of P~_1(T) log(P~_1(T) / P~_0(T)).
inline double exact_mixture_kl(const NetworkModel& model, double max_types = 1e7) {
  model.require_discrete("exact_mixture_kl");
  const std::size_t dim = model.alphabet_size();
  const int n = model.total_sensors();
  if (std::exp(log_type_count(n, dim)) > max_types) throw CapacityError("exact_mixture_kl: type space too large");
  CompensatedSum kl;
  bool infinite = false;
  std::vector<std::int64_t> counts(dim, 0);
  auto rec = [&](auto&& self, std::size_t x, std::int64_t left) -> void {
    if (infinite) return;
    if (x + 1 == dim) {
      counts[x] = left;
      const auto lp = type_class_log_probabilities(model, counts);
      if (lp[1] == kNegInf) return;
      if (lp[0] == kNegInf) {
        infinite = true;
        return;
      }
      kl.add(std::exp(lp[1]) * (lp[1] - lp[0]));
      return;
    }
    for (std::int64_t c = 0; c <= left; ++c) {
      counts[x] = c;
      self(self, x + 1, left - c);
    }
  };
  rec(rec, 0, n);
  if (infinite) return kInf;
  return std::max(0.0, kl.value());
}

}  // namespace anonqcd
