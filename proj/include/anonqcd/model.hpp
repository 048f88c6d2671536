#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "anonqcd/errors.hpp"
#include "anonqcd/numeric.hpp"
#include "anonqcd/random.hpp"

namespace anonqcd {

enum class Regime { pre, post };
enum class ModelKind { discrete, gaussian };

inline const char* to_string(ModelKind k) { return k == ModelKind::discrete ? "discrete" : "gaussian"; }

// Probability mass function over the index alphabet 0..size-1.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(std::vector<double> probabilities) : p_(std::move(probabilities)) {
    if (p_.empty()) throw InvalidArgument("discrete distribution needs a non-empty alphabet");
    CompensatedSum total;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument("discrete distribution has a negative or non-finite mass");
      total.add(v);
    }
    if (std::abs(total.value() - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "discrete distribution masses sum to " << total.value() << ", not 1";
      throw InvalidArgument(os.str());
    }
    log_p_.resize(p_.size());
    for (std::size_t x = 0; x < p_.size(); ++x) log_p_[x] = p_[x] > 0.0 ? std::log(p_[x]) : kNegInf;
  }

  std::size_t alphabet_size() const noexcept { return p_.size(); }
  double mass(std::size_t x) const { return p_.at(x); }
  double log_mass(std::size_t x) const { return log_p_.at(x); }
  bool in_support(std::size_t x) const { return p_.at(x) > 0.0; }
  std::span<const double> probabilities() const noexcept { return p_; }
  std::span<const double> log_probabilities() const noexcept { return log_p_; }

  friend bool operator==(const DiscreteDistribution& a, const DiscreteDistribution& b) {
    return a.p_ == b.p_;
  }

 private:
  std::vector<double> p_;
  std::vector<double> log_p_;
};

class GaussianDistribution {
 public:
  GaussianDistribution(double mean, double variance) : mean_(mean), variance_(variance) {
    if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean))
      throw InvalidArgument("gaussian distribution needs finite mean and positive variance");
    log_norm_ = -0.5 * std::log(2.0 * std::numbers::pi * variance_);
  }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return variance_; }
  double log_density(double x) const noexcept {
    const double d = x - mean_;
    return log_norm_ - 0.5 * d * d / variance_;
  }
  friend bool operator==(const GaussianDistribution& a, const GaussianDistribution& b) {
    return a.mean_ == b.mean_ && a.variance_ == b.variance_;
  }

 private:
  double mean_;
  double variance_;
  double log_norm_;
};

using GroupDistribution = std::variant<DiscreteDistribution, GaussianDistribution>;

// B(trials, p) over the alphabet {0..trials}.
inline DiscreteDistribution binomial_pmf(int trials, double success_prob) {
  if (trials < 0) throw InvalidArgument("binomial_pmf: negative trial count");
  if (!(success_prob >= 0.0 && success_prob <= 1.0))
    throw InvalidArgument("binomial_pmf: success probability outside [0, 1]");
  std::vector<double> pmf(static_cast<std::size_t>(trials) + 1, 0.0);
  if (success_prob == 0.0) {
    pmf.front() = 1.0;
  } else if (success_prob == 1.0) {
    pmf.back() = 1.0;
  } else if (trials <= 1000) {
    // Long double has the range for C(1000, j) p^j q^(n-j) term by term.
    long double coef = 1.0L;
    const long double p = success_prob, q = 1.0L - p;
    for (int j = 0; j <= trials; ++j) {
      pmf[static_cast<std::size_t>(j)] = static_cast<double>(coef * std::pow(p, j) * std::pow(q, trials - j));
      coef = coef * (trials - j) / (j + 1);
    }
  } else {
    const double lp = std::log(success_prob);
    const double lq = std::log1p(-success_prob);
    for (int j = 0; j <= trials; ++j)
      pmf[static_cast<std::size_t>(j)] = std::exp(log_binomial(trials, j) + j * lp + (trials - j) * lq);
    CompensatedSum s;
    for (double v : pmf) s.add(v);
    for (double& v : pmf) v /= s.value();
  }
  return DiscreteDistribution(std::move(pmf));
}

inline DiscreteDistribution point_mass(std::size_t alphabet_size, std::size_t symbol) {
  if (symbol >= alphabet_size) throw InvalidArgument("point_mass: symbol outside alphabet");
  std::vector<double> p(alphabet_size, 0.0);
  p[symbol] = 1.0;
  return DiscreteDistribution(std::move(p));
}

// Group labels of the n samples at one time step; group indices are 0-based.
struct Labeling {
  std::vector<int> assignment;

  static Labeling canonical(std::span<const int> group_sizes) {
    Labeling l;
    for (std::size_t k = 0; k < group_sizes.size(); ++k)
      l.assignment.insert(l.assignment.end(), static_cast<std::size_t>(group_sizes[k]), static_cast<int>(k));
    return l;
  }

  bool respects(std::span<const int> group_sizes) const {
    std::vector<int> seen(group_sizes.size(), 0);
    for (int g : assignment) {
      if (g < 0 || static_cast<std::size_t>(g) >= group_sizes.size()) return false;
      ++seen[static_cast<std::size_t>(g)];
    }
    return std::equal(seen.begin(), seen.end(), group_sizes.begin(), group_sizes.end());
  }

  friend bool operator==(const Labeling&, const Labeling&) = default;
};

class NetworkModel {
 public:
  NetworkModel(std::vector<int> group_sizes, std::vector<GroupDistribution> pre,
               std::vector<GroupDistribution> post)
      : sizes_(std::move(group_sizes)) {
    const std::size_t k = sizes_.size();
    if (k == 0) throw InvalidArgument("network model needs at least one group");
    if (pre.size() != k || post.size() != k)
      throw InvalidArgument("network model needs one pre and one post distribution per group");
    for (int s : sizes_)
      if (s < 1) throw InvalidArgument("every group needs at least one sensor");
    n_ = std::accumulate(sizes_.begin(), sizes_.end(), 0);

    kind_ = std::holds_alternative<DiscreteDistribution>(pre.front()) ? ModelKind::discrete : ModelKind::gaussian;
    auto check_kind = [&](const GroupDistribution& d) {
      const bool is_discrete = std::holds_alternative<DiscreteDistribution>(d);
      if (is_discrete != (kind_ == ModelKind::discrete))
        throw InvalidArgument("all group distributions must share one kind");
    };
    for (const auto& d : pre) check_kind(d);
    for (const auto& d : post) check_kind(d);

    if (kind_ == ModelKind::discrete) {
      for (auto& d : pre) pre_d_.push_back(std::get<DiscreteDistribution>(std::move(d)));
      for (auto& d : post) post_d_.push_back(std::get<DiscreteDistribution>(std::move(d)));
      alphabet_ = pre_d_.front().alphabet_size();
      auto same_alphabet = [&](const DiscreteDistribution& d) { return d.alphabet_size() == alphabet_; };
      if (!std::all_of(pre_d_.begin(), pre_d_.end(), same_alphabet) ||
          !std::all_of(post_d_.begin(), post_d_.end(), same_alphabet))
        throw InvalidArgument("all discrete group distributions must share one alphabet");
    } else {
      for (auto& d : pre) pre_g_.push_back(std::get<GaussianDistribution>(std::move(d)));
      for (auto& d : post) post_g_.push_back(std::get<GaussianDistribution>(std::move(d)));
    }

    alpha_.resize(k);
    for (std::size_t i = 0; i < k; ++i) alpha_[i] = static_cast<double>(sizes_[i]) / static_cast<double>(n_);

    if (!identifiable())
      throw DegenerateModel("pre- and post-change mixtures coincide; the change is not identifiable");
  }

  ModelKind kind() const noexcept { return kind_; }
  std::size_t group_count() const noexcept { return sizes_.size(); }
  int total_sensors() const noexcept { return n_; }
  std::span<const int> group_sizes() const noexcept { return sizes_; }
  // alpha_k = n_k / n; exact as the rational group_sizes()[k] / total_sensors().
  std::span<const double> alpha() const noexcept { return alpha_; }

  std::size_t alphabet_size() const {
    require_discrete("alphabet_size");
    return alphabet_;
  }
  const std::vector<DiscreteDistribution>& discrete(Regime r) const {
    require_discrete("discrete distributions");
    return r == Regime::pre ? pre_d_ : post_d_;
  }
  const std::vector<GaussianDistribution>& gaussian(Regime r) const {
    if (kind_ != ModelKind::gaussian) throw UnsupportedKind("model is not gaussian");
    return r == Regime::pre ? pre_g_ : post_g_;
  }

  // log p_{regime,k}(sample); discrete samples are symbol indices stored as doubles.
  double log_likelihood(Regime r, std::size_t k, double sample) const {
    if (kind_ == ModelKind::discrete) {
      const auto x = static_cast<std::size_t>(sample);
      return (r == Regime::pre ? pre_d_ : post_d_)[k].log_mass(x);
    }
    return (r == Regime::pre ? pre_g_ : post_g_)[k].log_density(sample);
  }

  void require_discrete(const char* what) const {
    if (kind_ != ModelKind::discrete)
      throw UnsupportedKind(std::string(what) + " requires a discrete model");
  }

  // Same distributions with different group sizes (used for n ladders).
  NetworkModel with_group_sizes(std::vector<int> sizes) const {
    std::vector<GroupDistribution> pre, post;
    for (std::size_t k = 0; k < group_count(); ++k) {
      if (kind_ == ModelKind::discrete) {
        pre.emplace_back(pre_d_[k]);
        post.emplace_back(post_d_[k]);
      } else {
        pre.emplace_back(pre_g_[k]);
        post.emplace_back(post_g_[k]);
      }
    }
    return NetworkModel(std::move(sizes), std::move(pre), std::move(post));
  }

 private:
  bool identifiable() const {
    if (kind_ == ModelKind::discrete) {
      double diff = 0.0;
      for (std::size_t x = 0; x < alphabet_; ++x) {
        double a = 0.0, b = 0.0;
        for (std::size_t k = 0; k < sizes_.size(); ++k) {
          a += alpha_[k] * pre_d_[k].mass(x);
          b += alpha_[k] * post_d_[k].mass(x);
        }
        diff = std::max(diff, std::abs(a - b));
      }
      return diff > 1e-9;
    }
    // Finite Gaussian mixtures are identifiable: compare weighted component multisets.
    auto components = [&](const std::vector<GaussianDistribution>& g) {
      std::map<std::pair<double, double>, int> m;
      for (std::size_t k = 0; k < g.size(); ++k) m[{g[k].mean(), g[k].variance()}] += sizes_[k];
      return m;
    };
    return components(pre_g_) != components(post_g_);
  }

  std::vector<int> sizes_;
  int n_ = 0;
  ModelKind kind_;
  std::size_t alphabet_ = 0;
  std::vector<double> alpha_;
  std::vector<DiscreteDistribution> pre_d_, post_d_;
  std::vector<GaussianDistribution> pre_g_, post_g_;
};

// alpha^T P_regime for a discrete model.
inline DiscreteDistribution mixture_distribution(const NetworkModel& model, Regime regime) {
  model.require_discrete("mixture_distribution");
  const auto& groups = model.discrete(regime);
  const auto sizes = model.group_sizes();
  // n_k p_k(x) is exact in long double, so K = 1 returns p_1 unchanged.
  std::vector<double> mix(model.alphabet_size(), 0.0);
  long double total = 0.0L;
  for (std::size_t x = 0; x < mix.size(); ++x) {
    long double s = 0.0L;
    for (std::size_t k = 0; k < groups.size(); ++k) s += static_cast<long double>(sizes[k]) * groups[k].mass(x);
    mix[x] = static_cast<double>(s / model.total_sensors());
    total += mix[x];
  }
  if (std::abs(total - 1.0L) > 1e-15L)
    for (double& v : mix) v = static_cast<double>(v / total);
  return DiscreteDistribution(std::move(mix));
}

struct FixedSchedule {
  Labeling labeling;
};
struct UniformRandomSchedule {};
struct CyclicRotationSchedule {
  std::int64_t step = 1;
};
using SchedulePolicy = std::variant<FixedSchedule, UniformRandomSchedule, CyclicRotationSchedule>;

// Produces the labeling sigma_t for successive time steps.
class LabelSchedule {
 public:
  LabelSchedule(SchedulePolicy policy, std::span<const int> group_sizes, std::uint64_t seed = 0)
      : policy_(std::move(policy)), sizes_(group_sizes.begin(), group_sizes.end()), rng_(seed) {
    base_ = Labeling::canonical(sizes_);
    if (auto* f = std::get_if<FixedSchedule>(&policy_)) {
      if (!f->labeling.respects(sizes_))
        throw InvalidArgument("fixed labeling does not match the group sizes");
      base_ = f->labeling;
    }
    current_ = base_;
  }

  const Labeling& next() {
    const auto n = static_cast<std::int64_t>(base_.assignment.size());
    if (std::holds_alternative<UniformRandomSchedule>(policy_)) {
      current_ = base_;
      // Fisher-Yates with portable index draws.
      for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(uniform01(rng_) * static_cast<double>(i + 1));
        std::swap(current_.assignment[static_cast<std::size_t>(i)], current_.assignment[static_cast<std::size_t>(j)]);
      }
    } else if (auto* c = std::get_if<CyclicRotationSchedule>(&policy_)) {
      const std::int64_t shift = ((c->step * t_) % n + n) % n;
      for (std::int64_t i = 0; i < n; ++i)
        current_.assignment[static_cast<std::size_t>(i)] = base_.assignment[static_cast<std::size_t>((i + shift) % n)];
    }
    ++t_;
    return current_;
  }

  const SchedulePolicy& policy() const noexcept { return policy_; }
  std::int64_t steps() const noexcept { return t_; }

 private:
  SchedulePolicy policy_;
  std::vector<int> sizes_;
  Rng rng_;
  Labeling base_;
  Labeling current_;
  std::int64_t t_ = 0;
};

// The n unordered samples of one time step. Discrete samples are symbol
// indices (held as exact small integers in doubles); order carries no meaning.
struct ObservationBatch {
  std::int64_t time = 0;
  std::vector<double> samples;
};

struct ChangeScenario {
  std::optional<std::int64_t> change_point;  // empty = no change (nu = infinity)
  std::int64_t horizon = 1;

  void validate() const {
    if (horizon < 1) throw InvalidArgument("scenario horizon must be >= 1");
    if (change_point && *change_point < 1) throw InvalidArgument("change point must be >= 1");
  }
  Regime regime_at(std::int64_t t) const {
    return change_point && t >= *change_point ? Regime::post : Regime::pre;
  }
};

// Inverse-CDF sampler over a discrete distribution.
class DiscreteSampler {
 public:
  explicit DiscreteSampler(const DiscreteDistribution& d) {
    cdf_.resize(d.alphabet_size());
    double acc = 0.0;
    for (std::size_t x = 0; x < cdf_.size(); ++x) {
      acc += d.mass(x);
      cdf_[x] = acc;
    }
    last_ = cdf_.size() - 1;
    while (last_ > 0 && d.mass(last_) == 0.0) --last_;
  }
  std::size_t operator()(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()), last_);
  }

 private:
  std::vector<double> cdf_;
  std::size_t last_ = 0;
};

// Batch generator owning its schedule and observation stream.
class BatchGenerator {
 public:
  BatchGenerator(const NetworkModel& model, LabelSchedule schedule, std::uint64_t seed)
      : model_(&model), schedule_(std::move(schedule)), rng_(seed) {
    for (std::size_t k = 0; k < model.group_count(); ++k) {
      if (model.kind() == ModelKind::discrete) {
        pre_d_.emplace_back(model.discrete(Regime::pre)[k]);
        post_d_.emplace_back(model.discrete(Regime::post)[k]);
      } else {
        const auto& pre = model.gaussian(Regime::pre)[k];
        const auto& post = model.gaussian(Regime::post)[k];
        pre_g_.emplace_back(pre.mean(), std::sqrt(pre.variance()));
        post_g_.emplace_back(post.mean(), std::sqrt(post.variance()));
      }
    }
  }

  ObservationBatch next(Regime regime) {
    const Labeling& sigma = schedule_.next();
    last_ = sigma;
    ObservationBatch b;
    b.time = ++t_;
    b.samples.resize(sigma.assignment.size());
    for (std::size_t i = 0; i < sigma.assignment.size(); ++i) {
      const auto k = static_cast<std::size_t>(sigma.assignment[i]);
      if (model_->kind() == ModelKind::discrete)
        b.samples[i] = static_cast<double>((regime == Regime::pre ? pre_d_ : post_d_)[k](rng_));
      else
        b.samples[i] = (regime == Regime::pre ? pre_g_ : post_g_)[k](rng_);
    }
    // Labels are dropped; a canonical order makes the anonymity explicit.
    std::sort(b.samples.begin(), b.samples.end());
    return b;
  }

  const Labeling& last_labeling() const noexcept { return last_; }
  std::int64_t time() const noexcept { return t_; }

 private:
  const NetworkModel* model_;
  LabelSchedule schedule_;
  Rng rng_;
  std::vector<DiscreteSampler> pre_d_, post_d_;
  std::vector<std::normal_distribution<double>> pre_g_, post_g_;
  Labeling last_;
  std::int64_t t_ = 0;
};

// One-shot generation: advances the schedule once and draws one batch.
inline ObservationBatch generate_batch(const NetworkModel& model, LabelSchedule& schedule, Regime regime,
                                       Rng& rng, std::int64_t time = 1) {
  const Labeling& sigma = schedule.next();
  ObservationBatch b;
  b.time = time;
  b.samples.resize(sigma.assignment.size());
  for (std::size_t i = 0; i < sigma.assignment.size(); ++i) {
    const auto k = static_cast<std::size_t>(sigma.assignment[i]);
    if (model.kind() == ModelKind::discrete) {
      b.samples[i] = static_cast<double>(DiscreteSampler(model.discrete(regime)[k])(rng));
    } else {
      const auto& g = model.gaussian(regime)[k];
      b.samples[i] = std::normal_distribution<double>(g.mean(), std::sqrt(g.variance()))(rng);
    }
  }
  std::sort(b.samples.begin(), b.samples.end());
  return b;
}

// Validates a batch against the model: length n, discrete symbols in range.
inline void check_batch(const NetworkModel& model, const ObservationBatch& batch) {
  if (batch.samples.size() != static_cast<std::size_t>(model.total_sensors()))
    throw InvalidArgument("batch length differs from the number of sensors");
  if (model.kind() == ModelKind::discrete) {
    const auto m = static_cast<double>(model.alphabet_size());
    for (double s : batch.samples)
      if (!(s >= 0.0 && s < m) || s != std::floor(s))
        throw InvalidArgument("discrete sample outside the alphabet");
  } else {
    for (double s : batch.samples)
      if (!std::isfinite(s)) throw InvalidArgument("non-finite gaussian sample");
  }
}

}  // namespace anonqcd
