#pragma once

#include "focl/autodiff.hpp"
#include "focl/rng.hpp"

#include <string>
#include <vector>

namespace focl {

// Widths shared by every network in a run.
struct NetConfig {
  int latent_dim = 8;
  int hidden = 64;
  int feature_dim = 16;
};

struct Dense {
  Parameter W;  // (in, out)
  Parameter b;  // (1, out)
};

Dense make_dense(const std::string& id, Index in, Index out, Rng& rng);
Var dense(const Dense& d, Var x, bool track);

// Per-condition scale and shift applied to a hidden layer's pre-activation.
// Stands in for conditional batch normalization; no running statistics.
struct Modulation {
  Parameter gain;  // (conditions, width), ones at init
  Parameter bias;  // (conditions, width), zeros at init
};

Modulation make_modulation(const std::string& id, Index conditions,
                           Index width);

// ---- conditional generator ----
struct Generator {
  int latent_dim = 0;
  int data_dim = 0;
  int conditions = 0;
  bool squash = false;  // sigmoid output for glyph data
  Dense l1, l2, out;
  Modulation m1, m2;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
};

Generator make_generator(const NetConfig& nc, int data_dim, int conditions,
                         bool squash, Rng& rng,
                         const std::string& prefix = "gen");
Var generate(const Generator& g, int condition, const Mat& z,
             bool track = true);
Mat generate_values(const Generator& g, int condition, const Mat& z);

// ---- image critic with score head, class head and a feature tap ----
struct Critic {
  int data_dim = 0;
  int conditions = 0;
  // Inputs are multiplied by this before the first layer; the score and the
  // tap are divided by it on the way out. Weight clipping caps |b|/|w| at
  // one, so on small-magnitude data the first layer's kinks all fall outside
  // the data and the score degrades to a near-linear tilt; magnifying the
  // input puts kinks back among the clusters. The matching output division
  // keeps score gradients and taps on the same scale as an unscaled critic,
  // preserving the balance against other loss terms. Class logits stay
  // unscaled: their natural scale is set by the softmax, not by data units.
  double input_scale = 1.0;
  Dense l1, l2, score_head, class_head;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
};

struct CriticOut {
  Var score;   // (n, 1)
  Var logits;  // (n, T)
  Var tap;     // (n, hidden), activations after the first hidden layer
};

Critic make_critic(const NetConfig& nc, int data_dim, int conditions,
                   Rng& rng, const std::string& prefix = "critic");
CriticOut criticize(const Critic& c, Var x, bool track = true);
// Just the tap, skipping both heads.
Var critic_tap(const Critic& c, Var x, bool track = true);

// ---- feature encoder (learned or prior), with a switchable class head ----
struct Encoder {
  int data_dim = 0;
  int feature_dim = 0;
  int conditions = 0;
  Dense l1, l2, out, class_head;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
};

Encoder make_encoder(const NetConfig& nc, int data_dim, int conditions,
                     Rng& rng, const std::string& prefix = "enc");
Var encode(const Encoder& e, Var x, bool track = true);
Var encoder_class_logits(const Encoder& e, Var x, bool track = true);

// ---- critic over concatenated feature pairs ----
struct FeatureCritic {
  int feature_dim = 0;      // score input is (n, 2*feature_dim)
  double input_scale = 1.0;  // same normalization rule as Critic
  Dense l1, l2, out;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
};

FeatureCritic make_feature_critic(const NetConfig& nc, Rng& rng,
                                  const std::string& prefix = "fcritic");
Var feature_critic_score(const FeatureCritic& fc, Var pair,
                         bool track = true);

// ---- reference classifier (metrics side) ----
struct Classifier {
  int data_dim = 0;
  int classes = 0;
  bool trained = false;
  Dense l1, l2, out;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
};

Classifier make_classifier(const NetConfig& nc, int data_dim, int classes,
                           Rng& rng, const std::string& prefix = "clf");
Var classifier_logits(const Classifier& c, Var x, bool track = true);
// Argmax per row, ties toward the lower index. Requires a trained flag.
std::vector<int> classify(const Classifier& c, const Mat& x);
int argmax_row(const Mat& logits, Index row);

}  // namespace focl
