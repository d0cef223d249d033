#pragma once

#include "focl/nets.hpp"
#include "focl/objectives.hpp"
#include "focl/tasks.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace focl {

// Fréchet distance between Gaussian fits of two sample sets:
// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}).
// Covariances are unbiased fits; the matrix square root goes through an
// eigendecomposition with negative eigenvalues clamped to zero. Near-singular
// fits get 1e-6 I added before the root; well-conditioned fits are left
// untouched so analytic cases come out exact.
double frechet_gaussian(const Mat& a, const Mat& b);
double frechet_gaussian(const SampleBatch& a, const SampleBatch& b);
double frechet_gaussian(const FeatureBatch& a, const FeatureBatch& b);

// Exact Wasserstein-1 between equal-size 1-D samples (sorted coupling).
double exact_wasserstein1_1d(const Mat& a, const Mat& b);

// Draws n rows conditioned on a class index.
using ConditionalSampler = std::function<Mat(int condition, int n)>;

std::vector<double> accuracy_per_condition(const Classifier& clf,
                                           const ConditionalSampler& sample,
                                           int conditions,
                                           int n_per_condition);
double accuracy_proxy(const Classifier& clf, const ConditionalSampler& sample,
                      int conditions, int n_per_condition);

struct ClassifierFit {
  Classifier clf;
  double held_out_accuracy = 0.0;
  bool unreliable = false;  // held-out accuracy under 0.9
};

// Jointly trains the reference classifier on every task in the stream.
// Metrics-side only; the continual engine never sees this data.
ClassifierFit train_reference_classifier(const TaskStream& stream,
                                         std::uint64_t seed);

enum class DistanceKind { frechet, accuracy_drop };

// d_t^(i): distance of the model after task t from task i's data, 1-based,
// recorded for every i <= t.
class ForgetfulnessLedger {
 public:
  explicit ForgetfulnessLedger(DistanceKind kind = DistanceKind::frechet)
      : kind_(kind) {}

  void record(int t, int i, double d);
  double get(int t, int i) const;
  bool has(int t, int i) const;
  bool complete() const;  // all i <= t <= T_seen present

  DistanceKind kind() const { return kind_; }
  int T_seen() const { return T_seen_; }
  const std::map<std::pair<int, int>, double>& distances() const {
    return distances_;
  }

 private:
  DistanceKind kind_;
  int T_seen_ = 0;
  std::map<std::pair<int, int>, double> distances_;
};

double task_fs(const ForgetfulnessLedger& ledger, int t);
double task_cfs(const ForgetfulnessLedger& ledger, int t);
std::optional<double> overall_fs(const ForgetfulnessLedger& ledger);
std::optional<double> overall_cfs(const ForgetfulnessLedger& ledger);

// OLS slope of value against t.
double forgetting_slope(const std::vector<std::pair<int, double>>& scores);

struct ForgetfulnessReport {
  std::vector<std::pair<int, double>> fs;   // (t, FS_t), t = 2..T
  std::vector<std::pair<int, double>> cfs;  // (t, CFS_t)
  double overall_fs = 0.0;
  double overall_cfs = 0.0;
  std::optional<double> slope_fs;   // needs at least two points (T >= 3)
  std::optional<double> slope_cfs;
  // tasks whose own fit d_t^(t) exceeds 5x the median of all d_i^(i);
  // FS is unreliable there
  std::vector<int> weak_fit_tasks;
};

// Absent when fewer than two tasks have been seen.
std::optional<ForgetfulnessReport> make_forgetfulness_report(
    const ForgetfulnessLedger& ledger);

}  // namespace focl
