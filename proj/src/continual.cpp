#include "focl/continual.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace focl {

ReplayConfig validated(ReplayConfig cfg) {
  if (cfg.lipschitz == LipschitzKind::gradient_penalty)
    throw ConfigError(
        "lipschitz=gradient_penalty: training through the penalty needs "
        "second derivatives and this build differentiates first-order "
        "only; use weight_clip");
  if (!(cfg.lambda_base > 0.0))
    throw ConfigError("lambda_base must be positive");
  if (cfg.steps_per_task <= 0)
    throw ConfigError("steps_per_task must be positive");
  if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (cfg.critic_steps < 1)
    throw ConfigError("critic_steps must be at least 1");
  if (!(cfg.clip > 0.0)) throw ConfigError("clip must be positive");
  if (cfg.ac_weight < 0.0)
    throw ConfigError("ac_weight must be non-negative");
  if (!(cfg.learning_rate > 0.0))
    throw ConfigError("learning_rate must be positive");
  if (cfg.eval_samples < 2)
    throw ConfigError("eval_samples must be at least 2");
  if (cfg.net.latent_dim < 1 || cfg.net.hidden < 1 || cfg.net.feature_dim < 1)
    throw ConfigError("net widths must be positive");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0)
    throw ConfigError("alpha must lie in [0, 1]");
  if (cfg.mode == ReplayMode::align_feature) cfg.alpha = 1.0;
  if (cfg.mode == ReplayMode::align_image) cfg.alpha = 0.0;
  if (cfg.pairing == Pairing::unpaired) {
    const bool l2_somewhere =
        uses_image_term(cfg) ||
        (uses_feature_term(cfg) &&
         cfg.feature_source != FeatureSource::learned_encoder);
    if (l2_somewhere)
      throw ConfigError(
          "pairing=unpaired needs the adversarial feature source; the "
          "l2 replay terms compare paired draws");
  }
  return cfg;
}

bool uses_feature_term(const ReplayConfig& cfg) {
  return cfg.mode == ReplayMode::align_feature ||
         (cfg.mode == ReplayMode::align_combined && cfg.alpha > 0.0);
}

bool uses_image_term(const ReplayConfig& cfg) {
  return cfg.mode == ReplayMode::align_image ||
         (cfg.mode == ReplayMode::align_combined && cfg.alpha < 1.0);
}

bool needs_snapshot(const ReplayConfig& cfg) {
  switch (cfg.mode) {
    case ReplayMode::none:
    case ReplayMode::joint:
      return false;
    default:
      return true;
  }
}

double lambda_schedule(int t, double lambda_base) {
  require(t >= 2, "lambda schedule: no previous tasks before t=2");
  require(lambda_base > 0.0, "lambda schedule: base must be positive");
  return lambda_base / static_cast<double>(t - 1);
}

TrainingFailure::TrainingFailure(int task_, int step_,
                                 const LossBreakdown& b,
                                 const std::string& why)
    : NumericFailure("training aborted at task " + std::to_string(task_) +
                     ", step " + std::to_string(step_) + ": " + why),
      task(task_),
      step(step_),
      breakdown(b) {}

Encoder fit_prior_encoder(const TaskStream& stream, const NetConfig& net,
                          std::uint64_t seed) {
  require(!stream.tasks.empty(), "prior fit: empty stream");
  Rng init = Rng::stream(seed, "prior-init");
  Rng data = Rng::stream(seed, "prior-fit");
  Encoder enc = make_encoder(net, stream.data_dim, stream.T, init, "prior");
  // Joint class + reconstruction pre-fit. The throwaway linear decoder makes
  // the feature head an embedding that keeps within-class geometry, so
  // feature-space l2 still sees drift that class logits alone would ignore.
  Dense dec = make_dense("prior.dec", net.feature_dim, stream.data_dim, init);
  auto params = enc.params();
  params.push_back(&dec.W);
  params.push_back(&dec.b);
  AdamState adam;
  adam.lr = 1e-3;
  adam.beta1 = 0.9;
  for (int step = 0; step < 400; ++step) {
    Var loss;
    for (const auto& task : stream.tasks) {
      Mat x = sample_real_values(task, 32, data);
      Var ce = softmax_cross_entropy(
          encoder_class_logits(enc, constant(x)), task.condition);
      Var h = encode(enc, constant(x), true);
      Var rec = mean_squared_rowdist(dense(dec, h, true), constant(x));
      Var term = ce + rec;
      loss = loss ? loss + term : term;
    }
    zero_grads(params);
    backward(loss);
    adam_step(params, adam);
  }
  // Calibrate the linear feature head so the median feature-space
  // displacement is twice the data-space displacement across task pairs.
  // Unit gain would put the feature l2 on the image l2's scale, but the
  // embedding is anisotropic: drift along its weak directions is then
  // under-penalized and old conditions smear. Doubling the gain covers the
  // weak directions while staying far from the over-anchored regime.
  std::vector<double> ratios;
  for (int rep = 0; rep < 64; ++rep) {
    for (const auto& task : stream.tasks) {
      Mat xa = sample_real_values(task, 1, data);
      Mat xb = sample_real_values(stream.tasks[static_cast<std::size_t>(
                                      data.uniform_int(stream.T))],
                                  1, data);
      double dx = (xa - xb).norm();
      if (dx < 1e-9) continue;
      Mat ha = encode(enc, constant(xa), false)->value.values;
      Mat hb = encode(enc, constant(xb), false)->value.values;
      ratios.push_back((ha - hb).norm() / dx);
    }
  }
  require(!ratios.empty(), "prior fit: no calibration pairs");
  std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2,
                   ratios.end());
  const double gain = ratios[ratios.size() / 2];
  if (gain > 1e-9) {
    const double target = 2.0 / gain;
    enc.out.W.tensor.values *= target;
    enc.out.b.tensor.values *= target;
  }
  return enc;
}

EngineState make_engine(const ReplayConfig& cfg_in, const TaskStream& stream,
                        std::uint64_t seed) {
  ReplayConfig cfg = validated(cfg_in);
  require(stream.T >= 1 &&
              stream.tasks.size() == static_cast<std::size_t>(stream.T),
          "engine: malformed task stream");
  if (cfg.eval_samples < stream.data_dim + 1)
    throw ConfigError("eval_samples must be at least data_dim+1");

  EngineState s;
  s.cfg = cfg;
  s.stream = &stream;
  Rng init = Rng::stream(seed, "init");
  const bool squash = stream.name == "glyphs8";
  s.gen = make_generator(cfg.net, stream.data_dim, stream.T, squash, init);
  s.critic = make_critic(cfg.net, stream.data_dim, stream.T, init);
  s.critic.input_scale = data_scale(stream);
  if (uses_feature_term(cfg) &&
      cfg.feature_source == FeatureSource::learned_encoder) {
    s.encoder = make_encoder(cfg.net, stream.data_dim, stream.T, init);
    s.fcritic = make_feature_critic(cfg.net, init);
    s.fcritic->input_scale = s.critic.input_scale;
  }
  if (uses_feature_term(cfg) &&
      cfg.feature_source == FeatureSource::prior)
    s.prior_encoder = fit_prior_encoder(stream, cfg.net, seed);

  s.gen_adam.lr = cfg.learning_rate;
  s.critic_adam.lr = cfg.learning_rate;
  s.enc_adam.lr = cfg.learning_rate;
  s.fcritic_adam.lr = cfg.learning_rate;

  s.data_rng = Rng::stream(seed, "data");
  s.latent_rng = Rng::stream(seed, "latent");
  s.replay_rng = Rng::stream(seed, "replay");
  s.eval_rng = Rng::stream(seed, "eval");

  s.real_draws.assign(static_cast<std::size_t>(stream.T),
                      std::vector<std::int64_t>(
                          static_cast<std::size_t>(stream.T), 0));
  return s;
}

ReplaySnapshot take_snapshot(const EngineState& state) {
  require(state.t >= 1, "snapshot: no task has been trained yet");
  ReplaySnapshot snap;
  snap.task_index = state.t;
  snap.gen = state.gen;
  if (state.cfg.feature_source == FeatureSource::distilled)
    snap.critic = state.critic;
  if (state.cfg.feature_source == FeatureSource::learned_encoder &&
      state.encoder)
    snap.encoder = *state.encoder;
  return snap;
}

ReplayDraw build_replay_batch(EngineState& s, int n) {
  require(s.t >= 2, "replay: no previous tasks exist at t=1");
  require(s.snapshot.has_value(), "replay: snapshot missing");
  require(s.snapshot->task_index == s.t - 1,
          "replay: snapshot is not the previous-task capture");
  require(n > 0, "replay: batch size must be positive");

  ReplayDraw d;
  const int prev = s.t - 1;
  d.condition = static_cast<int>(s.replay_rng.uniform_int(prev));
  d.z = s.replay_rng.normal_mat(n, s.cfg.net.latent_dim);
  d.x_snapshot = generate_values(s.snapshot->gen, d.condition, d.z);
  if (s.cfg.mode != ReplayMode::replay_data) {
    d.z_current = s.cfg.pairing == Pairing::paired
                      ? d.z
                      : s.replay_rng.normal_mat(n, s.cfg.net.latent_dim);
    d.x_current = generate(s.gen, d.condition, d.z_current, true);
  }
  return d;
}

FeaturePairs feature_pairs(EngineState& s, const ReplayDraw& draw,
                           bool track_encoder) {
  require(draw.x_current != nullptr,
          "feature pairs: replay draw carries no live batch");
  const bool paired = s.cfg.pairing == Pairing::paired;
  FeaturePairs fp;
  Var h_cur, h_snap;
  switch (s.cfg.feature_source) {
    case FeatureSource::distilled: {
      require(s.snapshot && s.snapshot->critic,
              "feature pairs: snapshot critic missing");
      h_cur = critic_tap(s.critic, draw.x_current, false);
      h_snap = critic_tap(*s.snapshot->critic, constant(draw.x_snapshot),
                          false);
      break;
    }
    case FeatureSource::prior: {
      if (!s.prior_encoder)
        throw ConfigError("feature pairs: prior encoder not fitted");
      h_cur = encode(*s.prior_encoder, draw.x_current, false);
      h_snap = encode(*s.prior_encoder, constant(draw.x_snapshot), false);
      break;
    }
    case FeatureSource::learned_encoder: {
      require(s.encoder.has_value(),
              "feature pairs: learned encoder not constructed");
      h_cur = encode(*s.encoder, draw.x_current, track_encoder);
      h_snap = encode(*s.encoder, constant(draw.x_snapshot), track_encoder);
      Mat zb = s.replay_rng.normal_mat(draw.x_snapshot.rows(),
                                       s.cfg.net.latent_dim);
      Mat xb = generate_values(s.snapshot->gen, draw.condition, zb);
      fp.snapshot_b =
          FeatureBatch{encode(*s.encoder, constant(xb), track_encoder),
                       draw.condition, s.cfg.feature_source, false};
      break;
    }
  }
  fp.current = FeatureBatch{std::move(h_cur), draw.condition,
                            s.cfg.feature_source, paired};
  fp.snapshot = FeatureBatch{std::move(h_snap), draw.condition,
                             s.cfg.feature_source, paired};
  return fp;
}

namespace {

// One source decision per training iteration, shared by every critic step
// and the generator update: desynchronized coins let the generator optimize
// a condition the clipped critic has not refreshed recently, which destabilizes
// the mixed-stream modes.
struct SourcePick {
  int task_index = 0;  // 1-based task whose data and condition this iteration uses
  bool from_snapshot = false;
};

SourcePick pick_iteration_source(EngineState& s) {
  SourcePick p;
  if (s.cfg.mode == ReplayMode::joint) {
    p.task_index = 1 + static_cast<int>(s.data_rng.uniform_int(s.stream->T));
    return p;
  }
  if (s.cfg.mode == ReplayMode::replay_data && s.t >= 2) {
    const double replay_share =
        static_cast<double>(s.t - 1) / static_cast<double>(s.t);
    if (s.replay_rng.uniform() < replay_share) {
      p.from_snapshot = true;
      p.task_index = 1 + static_cast<int>(s.replay_rng.uniform_int(s.t - 1));
      return p;
    }
  }
  p.task_index = s.t;
  return p;
}

SampleBatch draw_training_batch(EngineState& s, const SourcePick& pick) {
  if (pick.from_snapshot) {
    require(s.snapshot.has_value(), "training batch: snapshot required");
    Mat z = s.replay_rng.normal_mat(s.cfg.batch_size, s.cfg.net.latent_dim);
    SampleBatch b;
    b.x = constant(
        generate_values(s.snapshot->gen, pick.task_index - 1, z));
    b.condition = pick.task_index - 1;
    b.provenance = Provenance::snapshot;
    b.paired = false;
    return b;
  }
  auto ti = static_cast<std::size_t>(pick.task_index - 1);
  s.real_draws[static_cast<std::size_t>(s.t - 1)][ti] += s.cfg.batch_size;
  return sample_real(s.stream->tasks[ti], s.cfg.batch_size, s.data_rng);
}

double critic_update(EngineState& s, std::vector<Parameter*>& critic_params,
                     const SourcePick& pick) {
  SampleBatch real = draw_training_batch(s, pick);
  Mat z = s.latent_rng.normal_mat(s.cfg.batch_size, s.cfg.net.latent_dim);
  Mat fake_x = generate_values(s.gen, real.condition, z);

  CriticOut on_real = criticize(s.critic, real.x, true);
  CriticOut on_fake = criticize(s.critic, constant(fake_x), true);
  Var loss = mean_all(on_fake.score) - mean_all(on_real.score);
  if (s.cfg.ac_weight != 0.0)
    loss = loss + scale(aux_class_loss(on_real.logits, real.condition),
                        s.cfg.ac_weight);

  zero_grads(critic_params);
  backward(loss);
  adam_step(critic_params, s.critic_adam);
  lipschitz_weight_clip(critic_params, s.cfg.clip);
  return loss->value.values(0, 0);
}

ComposedLoss generator_update(EngineState& s,
                              std::vector<Parameter*>& gen_params,
                              bool feature_on, bool image_on, double lam,
                              const SourcePick& pick) {
  const int cond = pick.task_index - 1;
  Mat z = s.latent_rng.normal_mat(s.cfg.batch_size, s.cfg.net.latent_dim);
  Var fake = generate(s.gen, cond, z, true);
  CriticOut out = criticize(s.critic, fake, false);

  LossParts parts;
  parts.current_task = scale(mean_all(out.score), -1.0);
  if (s.cfg.ac_weight != 0.0) {
    parts.aux_class_term = aux_class_loss(out.logits, cond);
    parts.aux_weight = s.cfg.ac_weight;
  }
  if (feature_on || image_on) {
    ReplayDraw d = build_replay_batch(s, s.cfg.batch_size);
    // One condition is sampled per step, so the divergence is scaled by the
    // number of previous tasks: an unbiased single-draw estimate of the
    // replay sum over all of them. Combined with lambda_t = base/(t-1) the
    // total replay weight stays at lambda_base for every t.
    const double prev_tasks = static_cast<double>(s.t - 1);
    if (image_on) {
      SampleBatch cur{d.x_current, d.condition, Provenance::current_model,
                      s.cfg.pairing == Pairing::paired};
      SampleBatch snap{constant(d.x_snapshot), d.condition,
                       Provenance::snapshot,
                       s.cfg.pairing == Pairing::paired};
      parts.image_term = scale(image_l2(cur, snap), prev_tasks);
    }
    if (feature_on) {
      FeaturePairs fp = feature_pairs(s, d, false);
      Var div;
      if (s.cfg.feature_source == FeatureSource::learned_encoder)
        div = feature_adversarial_loss(*s.fcritic, fp.current.h,
                                       fp.snapshot.h, fp.snapshot_b->h,
                                       false)
                  .matcher_loss;
      else
        div = feature_l2(fp.current, fp.snapshot);
      parts.feature_term = scale(div, prev_tasks);
    }
  }

  ComposedLoss cl =
      compose_alpha_focl(parts, feature_on || image_on ? lam : 0.0,
                         s.cfg.alpha, s.t);
  zero_grads(gen_params);
  backward(cl.objective);
  adam_step(gen_params, s.gen_adam);
  return cl;
}

void encoder_update(EngineState& s, std::vector<Parameter*>& enc_params,
                    std::vector<Parameter*>& fcritic_params) {
  ReplayDraw d = build_replay_batch(s, s.cfg.batch_size);
  // the generator stays fixed during this sub-step
  d.x_current = constant(d.x_current->value.values);

  FeaturePairs fp = feature_pairs(s, d, true);
  FeatureAdversarial fa = feature_adversarial_loss(
      *s.fcritic, fp.current.h, fp.snapshot.h, fp.snapshot_b->h, true);

  zero_grads(enc_params);
  zero_grads(fcritic_params);
  backward(fa.critic_loss);
  adam_step(fcritic_params, s.fcritic_adam);
  if (!s.cfg.encoder_fools_feature_critic) {
    adam_step(enc_params, s.enc_adam);
  } else {
    FeaturePairs fp2 = feature_pairs(s, d, true);
    FeatureAdversarial fa2 = feature_adversarial_loss(
        *s.fcritic, fp2.current.h, fp2.snapshot.h, fp2.snapshot_b->h, false);
    zero_grads(enc_params);
    backward(fa2.matcher_loss);
    adam_step(enc_params, s.enc_adam);
  }
  lipschitz_weight_clip(fcritic_params, s.cfg.clip);
}

}  // namespace

void train_task(EngineState& s, const Task& task,
                std::vector<StepRecord>* log, const RunHooks* hooks) {
  require(s.stream != nullptr, "train: engine not initialized");
  require(s.t >= 1 && s.t <= s.stream->T, "train: task index out of range");
  require(task.condition == s.t - 1, "train: tasks must arrive in order");
  require(task.data_dim == s.stream->data_dim, "train: data width mismatch");
  if (s.t > 1 && needs_snapshot(s.cfg))
    require(s.snapshot && s.snapshot->task_index == s.t - 1,
            "train: previous-task snapshot required before task 2+");
  if (!needs_snapshot(s.cfg))
    require(!s.snapshot.has_value(),
            "train: snapshot must be absent for this mode");

  const bool feature_on = uses_feature_term(s.cfg) && s.t >= 2;
  const bool image_on = uses_image_term(s.cfg) && s.t >= 2;
  const double lam = feature_on || image_on
                         ? lambda_schedule(s.t, s.cfg.lambda_base)
                         : 0.0;

  // Each task is a new optimization problem; moments carried across the
  // boundary aim the first updates at the previous task's descent direction
  // and measurably degrade the new fit.
  for (AdamState* a : {&s.gen_adam, &s.critic_adam, &s.enc_adam,
                       &s.fcritic_adam}) {
    a->moments.clear();
    a->step = 0;
  }

  auto gen_params = s.gen.params();
  auto critic_params = s.critic.params();
  std::vector<Parameter*> enc_params, fcritic_params;
  if (s.encoder) enc_params = s.encoder->params();
  if (s.fcritic) fcritic_params = s.fcritic->params();

  for (int step = 0; step < s.cfg.steps_per_task; ++step) {
    LossBreakdown bd;
    try {
      SourcePick pick = pick_iteration_source(s);
      double critic_loss = 0.0;
      for (int k = 0; k < s.cfg.critic_steps; ++k)
        critic_loss = critic_update(s, critic_params, pick);
      if (!std::isfinite(critic_loss))
        throw NumericFailure("non-finite critic loss");

      ComposedLoss cl =
          generator_update(s, gen_params, feature_on, image_on, lam, pick);
      bd = cl.breakdown;
      if (!std::isfinite(bd.total))
        throw NumericFailure("non-finite generator loss");

      if (feature_on &&
          s.cfg.feature_source == FeatureSource::learned_encoder)
        encoder_update(s, enc_params, fcritic_params);

      StepRecord rec{s.t, step, bd, critic_loss};
      if (log) log->push_back(rec);
      if (hooks && hooks->on_step) hooks->on_step(rec);
    } catch (const TrainingFailure&) {
      throw;
    } catch (const NumericFailure& e) {
      throw TrainingFailure(s.t, step, bd, e.what());
    }
  }
}

namespace {

void evaluate_after_task(EngineState& s, const ClassifierFit& fit,
                         RunResult& res) {
  const int t = s.t;
  const int n = s.cfg.eval_samples;
  for (int i = 1; i <= t; ++i) {
    const int cond = i - 1;
    Mat z = s.eval_rng.normal_mat(n, s.cfg.net.latent_dim);
    Mat gen_x = generate_values(s.gen, cond, z);
    double d = 0.0;
    if (s.cfg.distance_kind == DistanceKind::frechet) {
      Mat real_x =
          sample_real_values(s.stream->tasks[static_cast<std::size_t>(cond)],
                             n, s.eval_rng);
      d = frechet_gaussian(gen_x, real_x);
    } else {
      auto preds = classify(fit.clf, gen_x);
      int hits = 0;
      for (int p : preds)
        if (p == cond) ++hits;
      d = 1.0 - static_cast<double>(hits) / n;
    }
    res.ledger.record(t, i, d);
  }

  ConditionalSampler sampler = [&](int c, int nn) {
    Mat z = s.eval_rng.normal_mat(nn, s.cfg.net.latent_dim);
    return generate_values(s.gen, c, z);
  };
  auto per = accuracy_per_condition(fit.clf, sampler, t, n);
  double mean = 0.0;
  for (double a : per) mean += a;
  mean /= static_cast<double>(per.size());
  res.accuracy_after_task.push_back(mean);
  if (t == s.stream->T) {
    res.final_per_condition_accuracy = per;
    res.final_accuracy = mean;
  }
}

}  // namespace

RunOutcome run_stream(const ReplayConfig& cfg, const TaskStream& stream,
                      std::uint64_t seed, const RunHooks& hooks) {
  RunOutcome out{make_engine(cfg, stream, seed),
                 RunResult{ForgetfulnessLedger(cfg.distance_kind)}};
  EngineState& s = out.state;
  RunResult& res = out.result;

  ClassifierFit fit = train_reference_classifier(stream, seed);
  res.classifier_held_out = fit.held_out_accuracy;
  res.classifier_unreliable = fit.unreliable;

  for (int t = 1; t <= stream.T; ++t) {
    s.t = t;
    train_task(s, stream.tasks[static_cast<std::size_t>(t - 1)], &res.steps,
               &hooks);
    evaluate_after_task(s, fit, res);
    if (hooks.on_task_end) hooks.on_task_end(t, s);
    if (t < stream.T && needs_snapshot(s.cfg))
      s.snapshot = take_snapshot(s);
  }
  res.real_draws = s.real_draws;
  return out;
}

}  // namespace focl
