#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "anonqcd/errors.hpp"
#include "anonqcd/exponent.hpp"
#include "anonqcd/mixture.hpp"
#include "anonqcd/model.hpp"
#include "anonqcd/random.hpp"

namespace anonqcd {

// CuSum recursion state: W[t+1] = (W[t])^+ + increment, W[0] = 0.
struct CusumState {
  double statistic = 0.0;
  std::int64_t time = 0;
  double threshold_b = kInf;
  bool stopped = false;
  std::optional<std::int64_t> stop_time;
};

// +inf increments stop at once; -inf drives W to -inf, and the next positive
// part brings it back to 0.
inline CusumState cusum_step(CusumState state, LogLikelihoodRatio increment) {
  if (state.stopped) throw StoppedDetector("cusum_step: detector already stopped");
  state.statistic = std::max(state.statistic, 0.0) + increment.value;
  ++state.time;
  if (state.statistic >= state.threshold_b) {
    state.stopped = true;
    state.stop_time = state.time;
  }
  return state;
}

// Statistic memo keyed by the type (symbol counts) of a sample multiset.
// Only valid for quantities that are pure functions of the type.
class TypeMemo {
 public:
  explicit TypeMemo(std::size_t capacity = std::size_t{1} << 20) : capacity_(capacity) {}

  const double* find(const std::vector<std::uint32_t>& key) const {
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
  }
  void insert(const std::vector<std::uint32_t>& key, double value) {
    if (map_.size() >= capacity_) map_.clear();
    map_.emplace(key, value);
  }
  std::size_t size() const noexcept { return map_.size(); }

 private:
  struct Hash {
    std::size_t operator()(const std::vector<std::uint32_t>& v) const noexcept {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (auto c : v) h = splitmix64(h ^ c);
      return static_cast<std::size_t>(h);
    }
  };
  std::size_t capacity_;
  std::unordered_map<std::vector<std::uint32_t>, double, Hash> map_;
};

enum class DetectorKind { mixture, bayesian, generalized, efficient };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::mixture: return "mixture";
    case DetectorKind::bayesian: return "bayesian";
    case DetectorKind::generalized: return "generalized";
    case DetectorKind::efficient: return "efficient";
  }
  return "unknown";
}

inline DetectorKind parse_detector_kind(std::string_view s) {
  if (s == "mixture") return DetectorKind::mixture;
  if (s == "bayesian") return DetectorKind::bayesian;
  if (s == "generalized") return DetectorKind::generalized;
  if (s == "efficient") return DetectorKind::efficient;
  throw InvalidArgument("unknown detector '" + std::string(s) + "'");
}

struct DetectorOptions {
  // Cache per-type statistics (discrete models only). Exponent solves are then
  // cold-started so that cached values do not depend on visiting order.
  bool memoize = false;
  std::size_t memo_capacity = std::size_t{1} << 20;
};

// A sequential stopping rule fed one batch per time step.
class SequentialDetector {
 public:
  virtual ~SequentialDetector() = default;
  virtual std::string_view name() const = 0;
  virtual void reset() = 0;
  virtual void step(const ObservationBatch& batch) = 0;
  virtual double statistic() const = 0;
  virtual std::int64_t time() const = 0;
  virtual bool stopped() const = 0;
  virtual std::optional<std::int64_t> stop_time() const = 0;
  virtual double threshold() const = 0;
  virtual std::optional<std::int64_t> nu_hat() const { return std::nullopt; }
};

inline void check_threshold(double b) {
  if (!(b > 0.0)) throw InvalidArgument("detector threshold b must be > 0");
}

// CuSum driven by a per-batch log-likelihood ratio functor.
template <class Ratio>
class CusumDetector final : public SequentialDetector {
 public:
  CusumDetector(const NetworkModel& model, DetectorKind kind, Ratio ratio, double b, DetectorOptions options)
      : model_(&model), kind_(kind), ratio_(std::move(ratio)), memo_(options.memo_capacity) {
    check_threshold(b);
    state_.threshold_b = b;
    memoize_ = options.memoize && model.kind() == ModelKind::discrete;
  }

  std::string_view name() const override { return to_string(kind_); }
  void reset() override { state_ = CusumState{0.0, 0, state_.threshold_b, false, std::nullopt}; }
  void step(const ObservationBatch& batch) override {
    if (state_.stopped) throw StoppedDetector("detector already stopped");
    state_ = cusum_step(state_, increment(batch));
  }
  double statistic() const override { return state_.statistic; }
  std::int64_t time() const override { return state_.time; }
  bool stopped() const override { return state_.stopped; }
  std::optional<std::int64_t> stop_time() const override { return state_.stop_time; }
  double threshold() const override { return state_.threshold_b; }
  const CusumState& state() const noexcept { return state_; }

 private:
  LogLikelihoodRatio increment(const ObservationBatch& batch) {
    if (!memoize_) return ratio_(batch);
    check_batch(*model_, batch);
    key_.assign(model_->alphabet_size(), 0);
    for (double s : batch.samples) ++key_[static_cast<std::size_t>(s)];
    if (const double* v = memo_.find(key_)) return {*v, std::isfinite(*v)};
    const auto r = ratio_(batch);
    memo_.insert(key_, r.value);
    return r;
  }

  const NetworkModel* model_;
  DetectorKind kind_;
  Ratio ratio_;
  CusumState state_;
  bool memoize_ = false;
  TypeMemo memo_;
  std::vector<std::uint32_t> key_;
};

struct BayesianRatio {
  const NetworkModel* model;
  LogLikelihoodRatio operator()(const ObservationBatch& b) const { return bayesian_log_ratio(*model, b); }
};

inline std::unique_ptr<SequentialDetector> make_mixture_cusum(const NetworkModel& model, double b,
                                                              DetectorOptions options = {}) {
  return std::make_unique<CusumDetector<MixtureRatio>>(model, DetectorKind::mixture, MixtureRatio(model), b, options);
}

inline std::unique_ptr<SequentialDetector> make_bayesian_cusum(const NetworkModel& model, double b,
                                                               DetectorOptions options = {}) {
  return std::make_unique<CusumDetector<BayesianRatio>>(model, DetectorKind::bayesian, BayesianRatio{&model}, b,
                                                        options);
}

inline std::unique_ptr<SequentialDetector> make_generalized_cusum(const NetworkModel& model, double b,
                                                                  DetectorOptions options = {}) {
  return std::make_unique<CusumDetector<GeneralizedRatio>>(model, DetectorKind::generalized,
                                                           GeneralizedRatio(model), b, options);
}

// State of the efficient test: the pooled type of the window [nu_hat, t] and
// W^[t] = t_hat * n * (f_{P_0}(alpha, Pi) - f_{P_1}(alpha, Pi)).
struct EfficientState {
  std::int64_t time = 0;
  std::int64_t nu_hat = 0;
  EmpiricalType window;
  std::int64_t t_hat = 0;
  double statistic = 0.0;  // W^[0] = 0 counts as <= 0, so the first window is batch 1
  double threshold_b = kInf;
  bool stopped = false;
  std::optional<std::int64_t> stop_time;
};

// Solver context carried between efficient_step calls.
class EfficientContext {
 public:
  explicit EfficientContext(const NetworkModel& model, DetectorOptions options = {})
      : gaps_(model), memoize_(options.memoize), memo_(options.memo_capacity) {
    model.require_discrete("efficient test");
  }

  double gap(const EmpiricalType& window, bool warm) {
    if (memoize_) {
      key_.resize(window.counts.size());
      for (std::size_t x = 0; x < key_.size(); ++x) key_[x] = static_cast<std::uint32_t>(window.counts[x]);
      if (const double* v = memo_.find(key_)) return *v;
      const double g = gaps_.gap(window.normalized(), false);
      memo_.insert(key_, g);
      return g;
    }
    return gaps_.gap(window.normalized(), warm);
  }

 private:
  GapEvaluator gaps_;
  bool memoize_;
  TypeMemo memo_;
  std::vector<std::uint32_t> key_;
};

inline EfficientState efficient_step(EfficientState state, const NetworkModel& model, const ObservationBatch& batch,
                                     EfficientContext& ctx) {
  if (state.stopped) throw StoppedDetector("efficient_step: detector already stopped");
  check_batch(model, batch);
  ++state.time;
  auto fresh = EmpiricalType::from_samples(model.alphabet_size(), batch.samples);
  const bool extend = state.time > 1 && state.statistic > 0.0;
  if (extend) {
    state.window.merge(fresh);
  } else {
    state.window = std::move(fresh);
    state.nu_hat = state.time;
  }
  state.t_hat = state.time - state.nu_hat + 1;
  const double gap = ctx.gap(state.window, extend);
  const double scale = static_cast<double>(state.t_hat) * model.total_sensors();
  state.statistic = std::isfinite(gap) ? scale * gap : gap;
  if (state.statistic >= state.threshold_b) {
    state.stopped = true;
    state.stop_time = state.time;
  }
  return state;
}

class EfficientDetector final : public SequentialDetector {
 public:
  EfficientDetector(const NetworkModel& model, double b, DetectorOptions options = {})
      : model_(&model), ctx_(model, options) {
    check_threshold(b);
    state_.threshold_b = b;
    state_.window.counts.assign(model.alphabet_size(), 0);
  }
  std::string_view name() const override { return "efficient"; }
  void reset() override {
    const double b = state_.threshold_b;
    state_ = EfficientState{};
    state_.threshold_b = b;
    state_.window.counts.assign(model_->alphabet_size(), 0);
  }
  void step(const ObservationBatch& batch) override { state_ = efficient_step(std::move(state_), *model_, batch, ctx_); }
  double statistic() const override { return state_.statistic; }
  std::int64_t time() const override { return state_.time; }
  bool stopped() const override { return state_.stopped; }
  std::optional<std::int64_t> stop_time() const override { return state_.stop_time; }
  double threshold() const override { return state_.threshold_b; }
  std::optional<std::int64_t> nu_hat() const override {
    if (state_.time == 0) return std::nullopt;
    return state_.nu_hat;
  }
  const EfficientState& state() const noexcept { return state_; }

 private:
  const NetworkModel* model_;
  EfficientContext ctx_;
  EfficientState state_;
};

inline std::unique_ptr<SequentialDetector> make_efficient_test(const NetworkModel& model, double b,
                                                               DetectorOptions options = {}) {
  return std::make_unique<EfficientDetector>(model, b, options);
}

inline std::unique_ptr<SequentialDetector> make_detector(DetectorKind kind, const NetworkModel& model, double b,
                                                         DetectorOptions options = {}) {
  switch (kind) {
    case DetectorKind::mixture: return make_mixture_cusum(model, b, options);
    case DetectorKind::bayesian: return make_bayesian_cusum(model, b, options);
    case DetectorKind::generalized: return make_generalized_cusum(model, b, options);
    case DetectorKind::efficient: return make_efficient_test(model, b, options);
  }
  throw InvalidArgument("unknown detector kind");
}

// Offline mixture likelihood ratio test with randomization at the boundary.
struct MlrtDecision {
  double reject_probability = 0.0;  // one of {0, beta, 1}
  double log_ratio = 0.0;
  double threshold_eta = 1.0;
  double beta = 0.0;
};

// The likelihood ratio is compared with eta in the log domain; |log l - log eta|
// <= 1e-12 counts as equality. Resolve the randomized branch with
// mlrt_reject(decision, u) and a caller-supplied uniform u.
inline MlrtDecision mlrt_decide(const NetworkModel& model, const ObservationBatch& batch, double eta, double beta) {
  if (!(eta > 0.0)) throw InvalidArgument("mlrt_decide: eta must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("mlrt_decide: beta must lie in [0, 1]");
  const auto lr = mixture_log_ratio(model, batch);
  const double log_eta = std::log(eta);
  MlrtDecision d;
  d.log_ratio = lr.value;
  d.threshold_eta = eta;
  d.beta = beta;
  if (std::isfinite(lr.value) && std::abs(lr.value - log_eta) <= 1e-12)
    d.reject_probability = beta;
  else if (lr.value > log_eta)
    d.reject_probability = 1.0;
  else
    d.reject_probability = 0.0;
  return d;
}

inline bool mlrt_reject(const MlrtDecision& d, double uniform) { return uniform < d.reject_probability; }

}  // namespace anonqcd
