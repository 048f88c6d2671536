#pragma once

// Hand-rolled random instance generators for property tests.

#include <random>
#include <vector>

#include "anonqcd/errors.hpp"
#include "anonqcd/model.hpp"

namespace gen {

using anonqcd::DiscreteDistribution;
using anonqcd::GroupDistribution;
using anonqcd::NetworkModel;

// Random pmf; with probability zero_prob each symbol but one gets mass 0.
inline std::vector<double> random_pmf(std::mt19937_64& rng, std::size_t size, double zero_prob = 0.0) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution zero(zero_prob);
  std::vector<double> p(size);
  double s = 0;
  const std::size_t keep = std::uniform_int_distribution<std::size_t>(0, size - 1)(rng);
  for (std::size_t i = 0; i < size; ++i) {
    p[i] = (i != keep && zero(rng)) ? 0.0 : u(rng);
    s += p[i];
  }
  for (auto& x : p) x /= s;
  // exact renormalization so masses sum to 1 within a few ulps
  double t = 0;
  for (std::size_t i = 0; i + 1 < size; ++i) t += p[i];
  p[size - 1] = std::max(0.0, 1.0 - t);
  return p;
}

inline std::vector<int> random_sizes(std::mt19937_64& rng, int max_total, int max_groups) {
  for (;;) {
    const int K = std::uniform_int_distribution<int>(1, max_groups)(rng);
    std::vector<int> s(static_cast<std::size_t>(K));
    int total = 0;
    for (auto& v : s) {
      v = std::uniform_int_distribution<int>(1, std::max(1, max_total / K))(rng);
      total += v;
    }
    if (total <= max_total) return s;
  }
}

struct ModelLimits {
  int max_total = 8;
  int max_groups = 3;
  std::size_t min_alphabet = 2;
  std::size_t max_alphabet = 4;
  double zero_prob = 0.15;
};

inline NetworkModel random_discrete_model(std::mt19937_64& rng, const ModelLimits& lim = {}) {
  for (;;) {
    const auto sizes = random_sizes(rng, lim.max_total, lim.max_groups);
    const std::size_t A = std::uniform_int_distribution<std::size_t>(lim.min_alphabet, lim.max_alphabet)(rng);
    std::vector<GroupDistribution> pre, post;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      pre.emplace_back(DiscreteDistribution(random_pmf(rng, A, lim.zero_prob)));
      post.emplace_back(DiscreteDistribution(random_pmf(rng, A, lim.zero_prob)));
    }
    try {
      return NetworkModel(sizes, pre, post);
    } catch (const anonqcd::DegenerateModel&) {
    }
  }
}

// A batch drawn from random symbols (not from the model), so zero-probability
// outcomes get exercised too.
inline std::vector<double> random_symbols(std::mt19937_64& rng, int n, std::size_t A) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = static_cast<double>(std::uniform_int_distribution<std::size_t>(0, A - 1)(rng));
  std::sort(x.begin(), x.end());
  return x;
}

}  // namespace gen
