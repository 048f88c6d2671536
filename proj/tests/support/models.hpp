#pragma once

#include "anonqcd/model.hpp"

namespace fixtures {

using namespace anonqcd;

// One sensor per group; N(0,1)->N(0.5,1) and N(2,1)->N(1.5,1).
inline NetworkModel gaussian_pair() {
  return NetworkModel({1, 1}, {GaussianDistribution(0.0, 1.0), GaussianDistribution(2.0, 1.0)},
                      {GaussianDistribution(0.5, 1.0), GaussianDistribution(1.5, 1.0)});
}

// Binomial groups B(10,.5)->B(10,.3) and B(10,.5)->B(10,.7), sizes (m, m).
inline NetworkModel binomial_pair(int per_group = 1) {
  return NetworkModel({per_group, per_group}, {binomial_pmf(10, 0.5), binomial_pmf(10, 0.5)},
                      {binomial_pmf(10, 0.3), binomial_pmf(10, 0.7)});
}

inline NetworkModel discrete_model(std::vector<int> sizes, std::vector<std::vector<double>> pre,
                                   std::vector<std::vector<double>> post) {
  std::vector<GroupDistribution> a, b;
  for (auto& p : pre) a.emplace_back(DiscreteDistribution(std::move(p)));
  for (auto& p : post) b.emplace_back(DiscreteDistribution(std::move(p)));
  return NetworkModel(std::move(sizes), std::move(a), std::move(b));
}

inline ObservationBatch batch(std::vector<double> x, std::int64_t t = 1) { return ObservationBatch{t, std::move(x)}; }

}  // namespace fixtures
