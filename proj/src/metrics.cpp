#include "focl/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace focl {
namespace {

constexpr double kSingularEig = 1e-9;
constexpr double kRidge = 1e-6;

struct Moments {
  Mat mu;     // (1, d)
  Mat sigma;  // (d, d), unbiased
};

Moments fit_gaussian(const Mat& x) {
  const Index n = x.rows(), d = x.cols();
  require(n >= d + 1, "frechet: need at least dim+1 rows per batch");
  Moments m;
  m.mu = x.colwise().mean();
  Mat centered = x.rowwise() - m.mu.row(0);
  m.sigma = centered.transpose() * centered / static_cast<double>(n - 1);
  if (!m.mu.allFinite() || !m.sigma.allFinite())
    throw NumericFailure("frechet: non-finite moments");
  return m;
}

bool is_diagonal(const Mat& s) {
  for (Index r = 0; r < s.rows(); ++r)
    for (Index c = 0; c < s.cols(); ++c)
      if (r != c && s(r, c) != 0.0) return false;
  return true;
}

Mat psd_sqrt(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
  Mat vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * vals.asDiagonal() *
         es.eigenvectors().transpose();
}

double min_eigenvalue(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()),
                                        Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with exact short-circuits for equal and
// for commuting diagonal covariances.
double covariance_term(Mat sa, Mat sb) {
  if ((sa.array() == sb.array()).all()) return 0.0;
  if (is_diagonal(sa) && is_diagonal(sb)) {
    double min_var = std::min(sa.diagonal().minCoeff(),
                              sb.diagonal().minCoeff());
    if (min_var < kSingularEig) {
      sa.diagonal().array() += kRidge;
      sb.diagonal().array() += kRidge;
    }
    double acc = 0.0;
    for (Index i = 0; i < sa.rows(); ++i) {
      const double va = sa(i, i), vb = sb(i, i);
      acc += va + vb - 2.0 * std::sqrt(std::max(va * vb, 0.0));
    }
    return std::max(acc, 0.0);
  }
  if (std::min(min_eigenvalue(sa), min_eigenvalue(sb)) < kSingularEig) {
    sa += kRidge * Mat::Identity(sa.rows(), sa.cols());
    sb += kRidge * Mat::Identity(sb.rows(), sb.cols());
  }
  Mat root_a = psd_sqrt(sa);
  Mat inner = root_a * sb * root_a;
  const double cross = psd_sqrt(inner).trace();
  return std::max(sa.trace() + sb.trace() - 2.0 * cross, 0.0);
}

}  // namespace

double frechet_gaussian(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols(), "frechet: dimension mismatch");
  Moments ma = fit_gaussian(a);
  Moments mb = fit_gaussian(b);
  const double mean_term = (ma.mu - mb.mu).squaredNorm();
  const double result = mean_term + covariance_term(ma.sigma, mb.sigma);
  if (!std::isfinite(result))
    throw NumericFailure("frechet: non-finite distance");
  return result;
}

double frechet_gaussian(const SampleBatch& a, const SampleBatch& b) {
  require(a.condition == b.condition,
          "frechet: sample batches condition on different classes");
  return frechet_gaussian(a.x->value.values, b.x->value.values);
}

double frechet_gaussian(const FeatureBatch& a, const FeatureBatch& b) {
  require(a.condition == b.condition,
          "frechet: feature batches condition on different classes");
  return frechet_gaussian(a.h->value.values, b.h->value.values);
}

double exact_wasserstein1_1d(const Mat& a, const Mat& b) {
  require(a.cols() == 1 && b.cols() == 1,
          "wasserstein1: one-dimensional samples only");
  require(a.rows() == b.rows() && a.rows() > 0,
          "wasserstein1: equal non-empty sample sizes required");
  std::vector<double> xs(a.data(), a.data() + a.rows());
  std::vector<double> ys(b.data(), b.data() + b.rows());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    acc += std::abs(xs[i] - ys[i]);
  return acc / static_cast<double>(xs.size());
}

std::vector<double> accuracy_per_condition(const Classifier& clf,
                                           const ConditionalSampler& sample,
                                           int conditions,
                                           int n_per_condition) {
  require(clf.trained, "accuracy: classifier not trained");
  require(conditions >= 1, "accuracy: need at least one condition");
  require(n_per_condition > 0, "accuracy: n per condition must be positive");
  std::vector<double> acc(static_cast<std::size_t>(conditions), 0.0);
  for (int c = 0; c < conditions; ++c) {
    Mat x = sample(c, n_per_condition);
    require(x.rows() == n_per_condition,
            "accuracy: sampler returned wrong row count");
    auto preds = classify(clf, x);
    int hits = 0;
    for (int p : preds)
      if (p == c) ++hits;
    acc[static_cast<std::size_t>(c)] =
        static_cast<double>(hits) / n_per_condition;
  }
  return acc;
}

double accuracy_proxy(const Classifier& clf, const ConditionalSampler& sample,
                      int conditions, int n_per_condition) {
  auto per = accuracy_per_condition(clf, sample, conditions, n_per_condition);
  double total = 0.0;
  for (double a : per) total += a;
  return total / static_cast<double>(per.size());
}

ClassifierFit train_reference_classifier(const TaskStream& stream,
                                         std::uint64_t seed) {
  require(!stream.tasks.empty(), "classifier: empty stream");
  Rng init_rng = Rng::stream(seed, "clf-init");
  Rng train_rng = Rng::stream(seed, "clf-train");
  Rng eval_rng = Rng::stream(seed, "clf-eval");

  NetConfig nc;
  ClassifierFit fit;
  fit.clf = make_classifier(nc, stream.data_dim, stream.T, init_rng);

  auto params = fit.clf.params();
  AdamState adam;
  adam.lr = 1e-3;
  adam.beta1 = 0.9;

  const int steps = 400;
  const int rows_per_task = 32;
  for (int step = 0; step < steps; ++step) {
    Var loss;
    for (const auto& task : stream.tasks) {
      Mat x = sample_real_values(task, rows_per_task, train_rng);
      Var ce = softmax_cross_entropy(classifier_logits(fit.clf, constant(x)),
                                     task.condition);
      loss = loss ? loss + ce : ce;
    }
    zero_grads(params);
    backward(loss);
    adam_step(params, adam);
  }
  fit.clf.trained = true;

  const int held_out = 256;
  int hits = 0;
  for (const auto& task : stream.tasks) {
    Mat x = sample_real_values(task, held_out, eval_rng);
    for (int p : classify(fit.clf, x))
      if (p == task.condition) ++hits;
  }
  fit.held_out_accuracy =
      static_cast<double>(hits) / (held_out * stream.T);
  fit.unreliable = fit.held_out_accuracy < 0.9;
  return fit;
}

void ForgetfulnessLedger::record(int t, int i, double d) {
  require(i >= 1 && i <= t, "ledger: need 1 <= i <= t");
  if (!std::isfinite(d))
    throw NumericFailure("ledger: non-finite distance for (t=" +
                         std::to_string(t) + ", i=" + std::to_string(i) +
                         ")");
  if (kind_ == DistanceKind::frechet)
    require(d >= 0.0, "ledger: negative frechet distance");
  require(!has(t, i), "ledger: duplicate entry");
  distances_[{t, i}] = d;
  T_seen_ = std::max(T_seen_, t);
}

double ForgetfulnessLedger::get(int t, int i) const {
  auto it = distances_.find({t, i});
  require(it != distances_.end(),
          "ledger: missing entry (t=" + std::to_string(t) +
              ", i=" + std::to_string(i) + ")");
  return it->second;
}

bool ForgetfulnessLedger::has(int t, int i) const {
  return distances_.count({t, i}) > 0;
}

bool ForgetfulnessLedger::complete() const {
  for (int t = 1; t <= T_seen_; ++t)
    for (int i = 1; i <= t; ++i)
      if (!has(t, i)) return false;
  return true;
}

double task_fs(const ForgetfulnessLedger& ledger, int t) {
  require(t >= 2, "forgetfulness: t must be at least 2");
  double acc = 0.0;
  for (int i = 1; i < t; ++i) acc += ledger.get(t, i) - ledger.get(i, i);
  return acc / static_cast<double>(t - 1);
}

double task_cfs(const ForgetfulnessLedger& ledger, int t) {
  return task_fs(ledger, t) + ledger.get(t, t);
}

namespace {

std::optional<double> weighted_overall(
    const ForgetfulnessLedger& ledger,
    double (*per_task)(const ForgetfulnessLedger&, int)) {
  const int T = ledger.T_seen();
  if (T < 2) return std::nullopt;
  double acc = 0.0;
  for (int t = 2; t <= T; ++t) acc += (t - 1) * per_task(ledger, t);
  return 2.0 * acc / (static_cast<double>(T) * (T - 1));
}

}  // namespace

std::optional<double> overall_fs(const ForgetfulnessLedger& ledger) {
  return weighted_overall(ledger, task_fs);
}

std::optional<double> overall_cfs(const ForgetfulnessLedger& ledger) {
  return weighted_overall(ledger, task_cfs);
}

double forgetting_slope(const std::vector<std::pair<int, double>>& scores) {
  require(scores.size() >= 2, "slope: need at least two points");
  double mean_t = 0.0, mean_v = 0.0;
  for (const auto& [t, v] : scores) {
    mean_t += t;
    mean_v += v;
  }
  mean_t /= static_cast<double>(scores.size());
  mean_v /= static_cast<double>(scores.size());
  double num = 0.0, den = 0.0;
  for (const auto& [t, v] : scores) {
    num += (t - mean_t) * (v - mean_v);
    den += (t - mean_t) * (t - mean_t);
  }
  require(den > 0.0, "slope: degenerate abscissa");
  return num / den;
}

std::optional<ForgetfulnessReport> make_forgetfulness_report(
    const ForgetfulnessLedger& ledger) {
  const int T = ledger.T_seen();
  if (T < 2) return std::nullopt;
  ForgetfulnessReport rep;
  for (int t = 2; t <= T; ++t) {
    rep.fs.emplace_back(t, task_fs(ledger, t));
    rep.cfs.emplace_back(t, task_cfs(ledger, t));
  }
  rep.overall_fs = *overall_fs(ledger);
  rep.overall_cfs = *overall_cfs(ledger);
  if (rep.fs.size() >= 2) {
    rep.slope_fs = forgetting_slope(rep.fs);
    rep.slope_cfs = forgetting_slope(rep.cfs);
  }
  std::vector<double> self;
  for (int i = 1; i <= T; ++i) self.push_back(ledger.get(i, i));
  std::sort(self.begin(), self.end());
  const std::size_t mid = self.size() / 2;
  const double median = self.size() % 2 == 1
                            ? self[mid]
                            : 0.5 * (self[mid - 1] + self[mid]);
  for (int t = 1; t <= T; ++t)
    if (ledger.get(t, t) > 5.0 * median) rep.weak_fit_tasks.push_back(t);
  return rep;
}

}  // namespace focl
