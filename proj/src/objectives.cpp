#include "focl/objectives.hpp"

#include <cmath>

namespace focl {
namespace {

void check_paired_rows(Index a_rows, Index b_rows, bool a_paired,
                       bool b_paired, int a_cond, int b_cond,
                       const char* op) {
  require(a_rows == b_rows, std::string(op) + ": batch sizes differ");
  require(a_rows > 0, std::string(op) + ": empty batch");
  require(a_cond == b_cond, std::string(op) + ": conditions differ");
  require(a_paired && b_paired,
          std::string(op) + ": rows are not paired draws (same z and "
                            "condition required)");
}

}  // namespace

Var wasserstein_score_gap(const ScoreFn& score_fn, Var real, Var fake) {
  require(real->value.values.rows() > 0 && fake->value.values.rows() > 0,
          "wasserstein_score_gap: empty batch");
  require(real->value.values.rows() == fake->value.values.rows(),
          "wasserstein_score_gap: batch sizes differ");
  return sub(mean_all(score_fn(std::move(fake))),
             mean_all(score_fn(std::move(real))));
}

Var wasserstein_critic_loss(const Critic& c, const SampleBatch& real,
                            const SampleBatch& fake, bool track) {
  require(real.condition == fake.condition,
          "wasserstein_critic_loss: conditions differ");
  auto score = [&c, track](Var x) {
    return criticize(c, std::move(x), track).score;
  };
  return wasserstein_score_gap(score, real.x, fake.x);
}

Var generator_adversarial_loss(const Critic& c, Var fake) {
  return scale(mean_all(criticize(c, std::move(fake), false).score), -1.0);
}

double lipschitz_gradient_penalty(const ScoreFn& score_fn, const Mat& real,
                                  const Mat& fake, Rng& rng) {
  require(real.rows() == fake.rows() && real.cols() == fake.cols(),
          "lipschitz_gradient_penalty: shape mismatch");
  require(real.rows() > 0, "lipschitz_gradient_penalty: empty batch");
  Mat interp(real.rows(), real.cols());
  for (Index i = 0; i < real.rows(); ++i) {
    const double u = rng.uniform();
    interp.row(i) = u * real.row(i) + (1.0 - u) * fake.row(i);
  }
  Var xin = input(interp);
  // row-wise input gradients via one sweep from the summed score
  backward(sum_all(score_fn(xin)));
  double acc = 0.0;
  for (Index i = 0; i < interp.rows(); ++i) {
    const double n = xin->grad.row(i).norm();
    acc += (n - 1.0) * (n - 1.0);
  }
  return acc / static_cast<double>(interp.rows());
}

double lipschitz_weight_clip(const std::vector<Parameter*>& params,
                             double c) {
  require(c > 0.0, "lipschitz_weight_clip: clip bound must be positive");
  for (Parameter* p : params)
    p->tensor.values = p->tensor.values.cwiseMax(-c).cwiseMin(c);
  return 0.0;
}

Var feature_l2(const FeatureBatch& current, const FeatureBatch& snapshot) {
  check_paired_rows(current.h->value.values.rows(),
                    snapshot.h->value.values.rows(), current.paired,
                    snapshot.paired, current.condition, snapshot.condition,
                    "feature_l2");
  require(current.h->value.values.cols() == snapshot.h->value.values.cols(),
          "feature_l2: feature widths differ");
  return mean_squared_rowdist(current.h, snapshot.h);
}

Var image_l2(const SampleBatch& current, const SampleBatch& snapshot) {
  check_paired_rows(current.x->value.values.rows(),
                    snapshot.x->value.values.rows(), current.paired,
                    snapshot.paired, current.condition, snapshot.condition,
                    "image_l2");
  require(current.x->value.values.cols() == snapshot.x->value.values.cols(),
          "image_l2: data widths differ");
  return mean_squared_rowdist(current.x, snapshot.x);
}

FeatureAdversarial feature_adversarial_loss(const FeatureCritic& fc,
                                            Var h_current, Var h_snapshot_a,
                                            Var h_snapshot_b,
                                            bool track_critic) {
  const Index n = h_current->value.values.rows();
  const Index w = h_current->value.values.cols();
  require(h_snapshot_a->value.values.rows() == n &&
              h_snapshot_b->value.values.rows() == n &&
              h_snapshot_a->value.values.cols() == w &&
              h_snapshot_b->value.values.cols() == w,
          "feature_adversarial_loss: feature batch shapes differ");
  Var fake_pair = concat_cols(std::move(h_current), h_snapshot_a);
  Var real_pair = concat_cols(std::move(h_snapshot_b),
                              std::move(h_snapshot_a));
  Var fake_score = feature_critic_score(fc, std::move(fake_pair),
                                        track_critic);
  Var real_score = feature_critic_score(fc, std::move(real_pair),
                                        track_critic);
  FeatureAdversarial out;
  out.matcher_loss = scale(mean_all(fake_score), -1.0);
  out.critic_loss = sub(mean_all(std::move(fake_score)),
                        mean_all(std::move(real_score)));
  return out;
}

Var aux_class_loss(Var class_logits, int condition) {
  return softmax_cross_entropy(std::move(class_logits), condition);
}

ComposedLoss compose_alpha_focl(const LossParts& parts, double lambda_t,
                                double alpha, int task_index) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("alpha must lie in [0, 1]");
  require(parts.current_task != nullptr,
          "compose_alpha_focl: current-task term is required");
  const bool has_replay =
      parts.feature_term != nullptr || parts.image_term != nullptr;
  if (task_index <= 1)
    require(!has_replay,
            "compose_alpha_focl: replay terms are not defined at the first "
            "task");
  if (has_replay)
    require(lambda_t > 0.0,
            "compose_alpha_focl: lambda_t must be positive with replay "
            "terms present");

  ComposedLoss out;
  out.breakdown.lambda_t = has_replay ? lambda_t : 0.0;
  out.breakdown.alpha = alpha;
  out.breakdown.current_task = parts.current_task->value.values(0, 0);

  Var total = parts.current_task;
  if (parts.feature_term != nullptr) {
    out.breakdown.feature_term = parts.feature_term->value.values(0, 0);
    if (alpha > 0.0)
      total = add(total, scale(parts.feature_term, lambda_t * alpha));
  }
  if (parts.image_term != nullptr) {
    out.breakdown.image_term = parts.image_term->value.values(0, 0);
    if (alpha < 1.0)
      total = add(total, scale(parts.image_term, lambda_t * (1.0 - alpha)));
  }
  if (parts.aux_class_term != nullptr) {
    out.breakdown.aux_class_term = parts.aux_class_term->value.values(0, 0);
    if (parts.aux_weight != 0.0)
      total = add(total, scale(parts.aux_class_term, parts.aux_weight));
  }
  out.breakdown.lipschitz_term = parts.lipschitz_value;

  out.objective = total;
  out.breakdown.total = total->value.values(0, 0) +
                        parts.lipschitz_weight * parts.lipschitz_value;
  if (!std::isfinite(out.breakdown.total))
    throw NumericFailure("compose_alpha_focl: non-finite total loss");
  return out;
}

}  // namespace focl
