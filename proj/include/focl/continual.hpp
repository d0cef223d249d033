#pragma once

#include "focl/metrics.hpp"
#include "focl/nets.hpp"
#include "focl/objectives.hpp"
#include "focl/tasks.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace focl {

enum class ReplayMode {
  none,
  replay_data,
  align_image,
  align_feature,
  align_combined,
  joint
};
enum class Pairing { paired, unpaired };
enum class LipschitzKind { weight_clip, gradient_penalty };

struct ReplayConfig {
  ReplayMode mode = ReplayMode::none;
  double alpha = 0.5;  // blend weight; only align_combined reads it freely
  double lambda_base = 1e-3;
  FeatureSource feature_source = FeatureSource::prior;
  Pairing pairing = Pairing::paired;
  int steps_per_task = 2000;
  int batch_size = 32;
  int critic_steps = 5;
  LipschitzKind lipschitz = LipschitzKind::weight_clip;
  double clip = 0.05;
  // Weight of the condition-classification loss. Kept below 1: the class
  // head's logits ride on magnified first-layer activations, and a
  // full-strength saturated CE field can shove a fresh condition's samples
  // into regions the score surface has not mapped yet.
  double ac_weight = 0.5;
  double learning_rate = 2e-4;
  // Open switch: by default the learned encoder trains alongside the
  // feature critic (sharpens features); flipping it makes the encoder fool
  // the critic instead.
  bool encoder_fools_feature_critic = false;
  NetConfig net;
  int eval_samples = 2000;  // per condition at task boundaries
  DistanceKind distance_kind = DistanceKind::frechet;
};

// Normalizes alpha for the fixed-blend modes and rejects invalid settings.
ReplayConfig validated(ReplayConfig cfg);

bool uses_feature_term(const ReplayConfig& cfg);
bool uses_image_term(const ReplayConfig& cfg);
bool needs_snapshot(const ReplayConfig& cfg);

// lambda_base / (t - 1); only defined once a previous task exists.
double lambda_schedule(int t, double lambda_base);

struct ReplaySnapshot {
  int task_index = 0;  // task whose training just finished
  Generator gen;
  std::optional<Critic> critic;    // kept for the distilled feature source
  std::optional<Encoder> encoder;  // kept for the learned-encoder source
};

struct EngineState {
  ReplayConfig cfg;
  const TaskStream* stream = nullptr;  // not owned; must outlive the engine
  int t = 0;                           // 1-based task being trained; 0 = idle

  Generator gen;
  Critic critic;
  std::optional<Encoder> encoder;        // learned feature encoder
  std::optional<FeatureCritic> fcritic;  // its adversary
  std::optional<Encoder> prior_encoder;  // frozen after pre-fitting

  AdamState gen_adam, critic_adam, enc_adam, fcritic_adam;
  Rng data_rng{0}, latent_rng{0}, replay_rng{0}, eval_rng{0};

  std::optional<ReplaySnapshot> snapshot;

  // real_draws[t-1][i-1]: rows of task i's real data drawn while training
  // task t. Everything off the diagonal must stay zero outside joint mode.
  std::vector<std::vector<std::int64_t>> real_draws;
};

EngineState make_engine(const ReplayConfig& cfg, const TaskStream& stream,
                        std::uint64_t seed);

// Deep copy of the replay-relevant nets; never mutated afterwards.
ReplaySnapshot take_snapshot(const EngineState& state);

// One replay minibatch: condition drawn uniformly from finished tasks, a
// frozen-generator draw, and (outside replay_data mode) the live
// generator's tracked output on the same or a fresh latent per pairing.
struct ReplayDraw {
  int condition = 0;
  Mat z;           // latent behind x_snapshot
  Mat x_snapshot;  // frozen generator values
  Var x_current;   // live generator, gradient-tracked; null in replay_data
  Mat z_current;   // latent behind x_current (== z when paired)
};

ReplayDraw build_replay_batch(EngineState& state, int n);

struct FeaturePairs {
  FeatureBatch current;
  FeatureBatch snapshot;
  std::optional<FeatureBatch> snapshot_b;  // adversarial source only
};

// Encodes a replay draw under the configured feature source. track_encoder
// turns on gradient tracking of the learned encoder's own parameters (used
// by its training sub-step; the generator step keeps them frozen).
FeaturePairs feature_pairs(EngineState& state, const ReplayDraw& draw,
                           bool track_encoder = false);

struct StepRecord {
  int task = 0;
  int step = 0;  // 0-based within the task
  LossBreakdown gen;
  double critic_loss = 0.0;
};

// Raised when a loss or gradient goes non-finite mid-training.
struct TrainingFailure : NumericFailure {
  int task = 0;
  int step = 0;
  LossBreakdown breakdown;
  TrainingFailure(int task_, int step_, const LossBreakdown& b,
                  const std::string& why);
};

struct RunHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int t, const EngineState&)> on_task_end;
};

// Runs steps_per_task iterations of critic updates followed by one
// composed generator update (plus the encoder sub-step for the learned
// source). state.t must already point at this task.
void train_task(EngineState& state, const Task& task,
                std::vector<StepRecord>* log = nullptr,
                const RunHooks* hooks = nullptr);

// Supervised pre-fit on an rng-disjoint copy of the stream's data; the
// result is frozen and serves as the prior feature source.
Encoder fit_prior_encoder(const TaskStream& stream, const NetConfig& net,
                          std::uint64_t seed);

struct RunResult {
  ForgetfulnessLedger ledger;
  std::vector<StepRecord> steps;
  // accuracy_proxy over the first t conditions, measured after task t
  std::vector<double> accuracy_after_task;
  std::vector<double> final_per_condition_accuracy;
  double final_accuracy = 0.0;
  double classifier_held_out = 0.0;
  bool classifier_unreliable = false;
  std::vector<std::vector<std::int64_t>> real_draws;
};

struct RunOutcome {
  EngineState state;
  RunResult result;
};

RunOutcome run_stream(const ReplayConfig& cfg, const TaskStream& stream,
                      std::uint64_t seed, const RunHooks& hooks = {});

}  // namespace focl
