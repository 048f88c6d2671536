#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "anonqcd/errors.hpp"
#include "anonqcd/model.hpp"
#include "anonqcd/numeric.hpp"

namespace anonqcd {

// Natural-log likelihood ratio. `finite` is false only when exactly one
// hypothesis assigns the batch zero probability (value is then +/-inf).
struct LogLikelihoodRatio {
  double value = 0.0;
  bool finite = true;
};

inline LogLikelihoodRatio make_log_ratio(double log_num, double log_den) {
  if (log_num == kNegInf && log_den == kNegInf)
    throw InvalidBatch("batch has zero likelihood under both hypotheses");
  if (log_den == kNegInf) return {kInf, false};
  if (log_num == kNegInf) return {kNegInf, false};
  return {log_num - log_den, true};
}

// Symbol counts of m samples (the type of the sample multiset).
struct EmpiricalType {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  static EmpiricalType from_samples(std::size_t alphabet_size, std::span<const double> samples) {
    EmpiricalType t;
    t.counts.assign(alphabet_size, 0);
    for (double s : samples) {
      const auto x = static_cast<std::size_t>(s);
      if (x >= alphabet_size || s < 0.0) throw InvalidArgument("sample outside the alphabet");
      ++t.counts[x];
    }
    t.total = static_cast<std::int64_t>(samples.size());
    return t;
  }

  static EmpiricalType from_counts(std::vector<std::int64_t> counts) {
    EmpiricalType t;
    for (auto c : counts) {
      if (c < 0) throw InvalidArgument("negative type count");
      t.total += c;
    }
    t.counts = std::move(counts);
    return t;
  }

  void merge(const EmpiricalType& other) {
    for (std::size_t x = 0; x < counts.size(); ++x) counts[x] += other.counts[x];
    total += other.total;
  }

  std::vector<double> normalized() const {
    std::vector<double> q(counts.size(), 0.0);
    if (total == 0) return q;
    for (std::size_t x = 0; x < counts.size(); ++x) q[x] = static_cast<double>(counts[x]) / static_cast<double>(total);
    return q;
  }

  friend bool operator==(const EmpiricalType&, const EmpiricalType&) = default;
};

// Exact mixture likelihood ratio over all labelings in S_{n,lambda}.
//
// Sum over sigma of prod_i p_{sigma(i)}(x_i) is computed by a dynamic program
// whose state is the vector c of samples already assigned to each group
// (0 <= c_k <= n_k). States are addressed by a mixed-radix index, so every
// predecessor c - e_k has a smaller index and one ascending sweep settles the
// table. Cost is O(K * prod_k (n_k + 1)) log-sum-exp operations per hypothesis.
// The object keeps its tables between calls and is not safe for concurrent use.
class MixtureRatio {
 public:
  static constexpr std::size_t kMaxStates = 50'000'000;

  explicit MixtureRatio(const NetworkModel& model) : model_(&model) {
    const auto sizes = model.group_sizes();
    const std::size_t k = sizes.size();
    strides_.resize(k);
    std::size_t states = 1;
    for (std::size_t g = 0; g < k; ++g) {
      strides_[g] = states;
      states *= static_cast<std::size_t>(sizes[g]) + 1;
      if (states > kMaxStates) throw CapacityError("mixture DP state space too large");
    }
    layer_.resize(states);
    pred_.assign(states * k, -1);
    std::vector<int> c(k, 0);
    for (std::size_t s = 0; s < states; ++s) {
      int sum = 0;
      for (std::size_t g = 0; g < k; ++g) {
        sum += c[g];
        if (c[g] > 0) pred_[s * k + g] = static_cast<std::int64_t>(s - strides_[g]);
      }
      layer_[s] = sum;
      for (std::size_t g = 0; g < k; ++g) {
        if (++c[g] <= sizes[g]) break;
        c[g] = 0;
      }
    }
    f0_.resize(states);
    f1_.resize(states);
  }

  std::size_t state_count() const noexcept { return layer_.size(); }

  LogLikelihoodRatio operator()(const ObservationBatch& batch) {
    check_batch(*model_, batch);
    // Canonical order makes the result bit-identical under permutations.
    sorted_.assign(batch.samples.begin(), batch.samples.end());
    std::sort(sorted_.begin(), sorted_.end());
    fill_tables(sorted_);
    const std::size_t k = strides_.size();
    const std::size_t states = layer_.size();
    f0_[0] = 0.0;
    f1_[0] = 0.0;
    for (std::size_t s = 1; s < states; ++s) {
      const std::size_t row = static_cast<std::size_t>(layer_[s] - 1) * k;
      double a0 = kNegInf, a1 = kNegInf;
      for (std::size_t g = 0; g < k; ++g) {
        const std::int64_t p = pred_[s * k + g];
        if (p < 0) continue;
        a0 = log_add(a0, f0_[static_cast<std::size_t>(p)] + l0_[row + g]);
        a1 = log_add(a1, f1_[static_cast<std::size_t>(p)] + l1_[row + g]);
      }
      f0_[s] = a0;
      f1_[s] = a1;
    }
    return make_log_ratio(f1_[states - 1], f0_[states - 1]);
  }

 private:
  void fill_tables(std::span<const double> samples) {
    const std::size_t k = strides_.size();
    l0_.resize(samples.size() * k);
    l1_.resize(samples.size() * k);
    for (std::size_t i = 0; i < samples.size(); ++i)
      for (std::size_t g = 0; g < k; ++g) {
        l0_[i * k + g] = model_->log_likelihood(Regime::pre, g, samples[i]);
        l1_[i * k + g] = model_->log_likelihood(Regime::post, g, samples[i]);
      }
  }

  const NetworkModel* model_;
  std::vector<std::size_t> strides_;
  std::vector<int> layer_;
  std::vector<std::int64_t> pred_;
  std::vector<double> f0_, f1_, l0_, l1_, sorted_;
};

inline LogLikelihoodRatio mixture_log_ratio(const NetworkModel& model, const ObservationBatch& batch) {
  MixtureRatio engine(model);
  return engine(batch);
}

// log P_{theta,sigma}(T(type)) for theta = pre, post, for any fixed sigma.
//
// Enumerates every split of the symbol counts into per-group count vectors
// c_1..c_K with |c_k| = n_k and sums
//   prod_k multinomial(n_k; c_k) prod_x p_{theta,k}(x)^{c_k(x)}
// in the log domain.
inline std::array<double, 2> type_class_log_probabilities(const NetworkModel& model,
                                                          std::span<const std::int64_t> counts) {
  model.require_discrete("type class probabilities");
  const auto sizes = model.group_sizes();
  const std::size_t k = sizes.size();
  const std::size_t m = model.alphabet_size();
  if (counts.size() != m) throw InvalidArgument("type has the wrong alphabet size");
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total != model.total_sensors()) throw InvalidArgument("type total differs from the number of sensors");

  const auto lf = log_factorial_table(static_cast<std::size_t>(model.total_sensors()));
  double base = 0.0;
  for (int s : sizes) base += lf[static_cast<std::size_t>(s)];

  const auto& p0 = model.discrete(Regime::pre);
  const auto& p1 = model.discrete(Regime::post);
  std::vector<std::int64_t> remaining(sizes.begin(), sizes.end());
  LogSumAccumulator acc0, acc1;

  // Depth-first over (symbol, group); `left` is the part of counts[x] not yet placed.
  std::function<void(std::size_t, std::size_t, std::int64_t, double, double)> place =
      [&](std::size_t x, std::size_t g, std::int64_t left, double w0, double w1) {
        if (x == m) {
          acc0.add(base + w0);
          acc1.add(base + w1);
          return;
        }
        if (g + 1 == k) {
          if (left > remaining[g]) return;
          const double common = -lf[static_cast<std::size_t>(left)];
          const double t0 = left > 0 ? left * p0[g].log_mass(x) : 0.0;
          const double t1 = left > 0 ? left * p1[g].log_mass(x) : 0.0;
          remaining[g] -= left;
          const std::int64_t next = x + 1 < m ? counts[x + 1] : 0;
          place(x + 1, 0, next, w0 + common + t0, w1 + common + t1);
          remaining[g] += left;
          return;
        }
        const std::int64_t hi = std::min(left, remaining[g]);
        for (std::int64_t d = 0; d <= hi; ++d) {
          const double common = -lf[static_cast<std::size_t>(d)];
          const double t0 = d > 0 ? d * p0[g].log_mass(x) : 0.0;
          const double t1 = d > 0 ? d * p1[g].log_mass(x) : 0.0;
          remaining[g] -= d;
          place(x, g + 1, left - d, w0 + common + t0, w1 + common + t1);
          remaining[g] += d;
        }
      };
  place(0, 0, counts[0], 0.0, 0.0);
  return {acc0.value(), acc1.value()};
}

// Likelihood ratio of the type class of `etype`; equals mixture_log_ratio on
// any batch with that type.
inline LogLikelihoodRatio type_class_log_ratio(const NetworkModel& model, const EmpiricalType& etype) {
  const auto lp = type_class_log_probabilities(model, etype.counts);
  return make_log_ratio(lp[1], lp[0]);
}

// Ratio of the per-sample mixtures sum_k (n_k/n) p_{theta,k}(x), as if each
// sample's group were drawn independently.
inline LogLikelihoodRatio bayesian_log_ratio(const NetworkModel& model, const ObservationBatch& batch) {
  check_batch(model, batch);
  const auto alpha = model.alpha();
  double num = 0.0, den = 0.0;
  std::vector<double> xs(batch.samples.begin(), batch.samples.end());
  std::sort(xs.begin(), xs.end());
  for (double s : xs) {
    double a0 = kNegInf, a1 = kNegInf;
    for (std::size_t g = 0; g < alpha.size(); ++g) {
      const double la = std::log(alpha[g]);
      a0 = log_add(a0, la + model.log_likelihood(Regime::pre, g, s));
      a1 = log_add(a1, la + model.log_likelihood(Regime::post, g, s));
    }
    num += a1;
    den += a0;
  }
  return make_log_ratio(num, den);
}

// Max-weight assignment of samples to groups with capacities, solved as a
// min-cost flow by successive shortest paths (Bellman-Ford on the residual
// graph, so negative arc costs are fine). Equal sample values share one node.
class TransportationSolver {
 public:
  // weights[v * groups + g] = gain of placing one copy of value v in group g
  // (-inf = forbidden). Returns the maximum total gain, or -inf if no
  // assignment places every sample.
  double maximize(std::span<const std::int64_t> multiplicity, std::span<const int> capacity,
                  std::span<const double> weights) {
    const std::size_t nv = multiplicity.size();
    const std::size_t ng = capacity.size();
    const std::size_t nodes = nv + ng + 2;
    const std::size_t src = 0, sink = nodes - 1;
    edges_.clear();
    for (std::size_t v = 0; v < nv; ++v) add_edge(src, 1 + v, multiplicity[v], 0.0);
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t g = 0; g < ng; ++g) {
        const double w = weights[v * ng + g];
        if (w == kNegInf) continue;
        add_edge(1 + v, 1 + nv + g, multiplicity[v], -w);
      }
    for (std::size_t g = 0; g < ng; ++g) add_edge(1 + nv + g, sink, capacity[g], 0.0);

    std::int64_t need = 0;
    for (auto m : multiplicity) need += m;
    double cost = 0.0;
    std::vector<double> dist(nodes);
    std::vector<std::int64_t> via(nodes);
    while (need > 0) {
      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(via.begin(), via.end(), -1);
      dist[src] = 0.0;
      for (std::size_t round = 0; round < nodes; ++round) {
        bool changed = false;
        for (std::size_t e = 0; e < edges_.size(); ++e) {
          const Edge& ed = edges_[e];
          if (ed.cap <= 0 || dist[ed.from] == kInf) continue;
          const double nd = dist[ed.from] + ed.cost;
          if (nd < dist[ed.to] - 1e-12 * std::max(1.0, std::abs(nd))) {
            dist[ed.to] = nd;
            via[ed.to] = static_cast<std::int64_t>(e);
            changed = true;
          }
        }
        if (!changed) break;
      }
      if (dist[sink] == kInf) return kNegInf;
      std::int64_t push = need;
      for (std::size_t v = sink; v != src; v = edges_[static_cast<std::size_t>(via[v])].from)
        push = std::min(push, edges_[static_cast<std::size_t>(via[v])].cap);
      for (std::size_t v = sink; v != src; v = edges_[static_cast<std::size_t>(via[v])].from) {
        const auto e = static_cast<std::size_t>(via[v]);
        edges_[e].cap -= push;
        edges_[e ^ 1U].cap += push;
        cost += static_cast<double>(push) * edges_[e].cost;
      }
      need -= push;
    }
    return -cost;
  }

 private:
  struct Edge {
    std::size_t from, to;
    std::int64_t cap;
    double cost;
  };
  void add_edge(std::size_t a, std::size_t b, std::int64_t cap, double cost) {
    edges_.push_back({a, b, cap, cost});
    edges_.push_back({b, a, 0, -cost});
  }
  std::vector<Edge> edges_;
};

// max_sigma log P_{1,sigma}(x) - max_sigma log P_{0,sigma}(x).
class GeneralizedRatio {
 public:
  explicit GeneralizedRatio(const NetworkModel& model) : model_(&model) {}

  LogLikelihoodRatio operator()(const ObservationBatch& batch) {
    check_batch(*model_, batch);
    values_.assign(batch.samples.begin(), batch.samples.end());
    std::sort(values_.begin(), values_.end());
    distinct_.clear();
    mult_.clear();
    for (double v : values_) {
      if (distinct_.empty() || distinct_.back() != v) {
        distinct_.push_back(v);
        mult_.push_back(0);
      }
      ++mult_.back();
    }
    const std::size_t ng = model_->group_count();
    const double best1 = best(Regime::post, ng);
    const double best0 = best(Regime::pre, ng);
    return make_log_ratio(best1, best0);
  }

 private:
  double best(Regime r, std::size_t ng) {
    weights_.resize(distinct_.size() * ng);
    for (std::size_t v = 0; v < distinct_.size(); ++v)
      for (std::size_t g = 0; g < ng; ++g) weights_[v * ng + g] = model_->log_likelihood(r, g, distinct_[v]);
    if (ng == 1) {
      double s = 0.0;
      for (std::size_t v = 0; v < distinct_.size(); ++v) s += static_cast<double>(mult_[v]) * weights_[v];
      return s;
    }
    return solver_.maximize(mult_, model_->group_sizes(), weights_);
  }

  const NetworkModel* model_;
  TransportationSolver solver_;
  std::vector<double> values_, distinct_, weights_;
  std::vector<std::int64_t> mult_;
};

inline LogLikelihoodRatio generalized_log_ratio(const NetworkModel& model, const ObservationBatch& batch) {
  GeneralizedRatio g(model);
  return g(batch);
}

}  // namespace anonqcd
