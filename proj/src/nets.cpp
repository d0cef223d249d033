#include "focl/nets.hpp"

#include <cmath>

namespace focl {
namespace {

constexpr double kLeakySlope = 0.2;

Var modulated(const Modulation& m, int condition, Var pre, bool track) {
  Var gain = slice_rows(leaf(const_cast<Parameter&>(m.gain), track),
                        condition, 1);
  Var bias = slice_rows(leaf(const_cast<Parameter&>(m.bias), track),
                        condition, 1);
  return add_rowvec(mul_rowvec(std::move(pre), std::move(gain)),
                    std::move(bias));
}

}  // namespace

Dense make_dense(const std::string& id, Index in, Index out, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d;
  d.W = Parameter(id + ".W", rng.uniform_mat(in, out, -s, s));
  d.b = Parameter(id + ".b", Mat::Zero(1, out), 1);
  return d;
}

Var dense(const Dense& d, Var x, bool track) {
  return add_rowvec(matmul(std::move(x),
                           leaf(const_cast<Parameter&>(d.W), track)),
                    leaf(const_cast<Parameter&>(d.b), track));
}

Modulation make_modulation(const std::string& id, Index conditions,
                           Index width) {
  Modulation m;
  m.gain = Parameter(id + ".gain", Mat::Ones(conditions, width));
  m.bias = Parameter(id + ".bias", Mat::Zero(conditions, width));
  return m;
}

// ---- generator ----

Generator make_generator(const NetConfig& nc, int data_dim, int conditions,
                         bool squash, Rng& rng, const std::string& prefix) {
  Generator g;
  g.latent_dim = nc.latent_dim;
  g.data_dim = data_dim;
  g.conditions = conditions;
  g.squash = squash;
  g.l1 = make_dense(prefix + ".l1", nc.latent_dim, nc.hidden, rng);
  g.l2 = make_dense(prefix + ".l2", nc.hidden, nc.hidden, rng);
  g.out = make_dense(prefix + ".out", nc.hidden, data_dim, rng);
  g.m1 = make_modulation(prefix + ".m1", conditions, nc.hidden);
  g.m2 = make_modulation(prefix + ".m2", conditions, nc.hidden);
  return g;
}

std::vector<Parameter*> Generator::params() {
  return {&l1.W, &l1.b, &m1.gain, &m1.bias, &l2.W, &l2.b,
          &m2.gain, &m2.bias, &out.W, &out.b};
}

std::vector<const Parameter*> Generator::params() const {
  auto v = const_cast<Generator*>(this)->params();
  return {v.begin(), v.end()};
}

Var generate(const Generator& g, int condition, const Mat& z, bool track) {
  require(condition >= 0 && condition < g.conditions,
          "generate: condition index out of range");
  require(z.cols() == g.latent_dim, "generate: latent width mismatch");
  Var h = relu(modulated(g.m1, condition, dense(g.l1, constant(z), track),
                         track));
  h = relu(modulated(g.m2, condition, dense(g.l2, std::move(h), track),
                     track));
  Var y = dense(g.out, std::move(h), track);
  return g.squash ? sigmoid(std::move(y)) : y;
}

Mat generate_values(const Generator& g, int condition, const Mat& z) {
  return generate(g, condition, z, false)->value.values;
}

// ---- critic ----

Critic make_critic(const NetConfig& nc, int data_dim, int conditions,
                   Rng& rng, const std::string& prefix) {
  Critic c;
  c.data_dim = data_dim;
  c.conditions = conditions;
  c.l1 = make_dense(prefix + ".l1", data_dim, nc.hidden, rng);
  c.l2 = make_dense(prefix + ".l2", nc.hidden, nc.hidden, rng);
  c.score_head = make_dense(prefix + ".score", nc.hidden, 1, rng);
  c.class_head = make_dense(prefix + ".class", nc.hidden, conditions, rng);
  return c;
}

std::vector<Parameter*> Critic::params() {
  return {&l1.W, &l1.b, &l2.W, &l2.b, &score_head.W, &score_head.b,
          &class_head.W, &class_head.b};
}

std::vector<const Parameter*> Critic::params() const {
  auto v = const_cast<Critic*>(this)->params();
  return {v.begin(), v.end()};
}

CriticOut criticize(const Critic& c, Var x, bool track) {
  require(x->value.values.cols() == c.data_dim,
          "criticize: data width mismatch");
  require(c.input_scale > 0.0, "criticize: input scale must be positive");
  CriticOut out;
  Var t1 = leaky_relu(
      dense(c.l1, scale(std::move(x), c.input_scale), track), kLeakySlope);
  Var h2 = leaky_relu(dense(c.l2, t1, track), kLeakySlope);
  out.tap = scale(std::move(t1), 1.0 / c.input_scale);
  out.score = scale(dense(c.score_head, h2, track), 1.0 / c.input_scale);
  out.logits = dense(c.class_head, std::move(h2), track);
  return out;
}

Var critic_tap(const Critic& c, Var x, bool track) {
  require(x->value.values.cols() == c.data_dim,
          "critic_tap: data width mismatch");
  require(c.input_scale > 0.0, "critic_tap: input scale must be positive");
  return scale(leaky_relu(dense(c.l1, scale(std::move(x), c.input_scale),
                                track),
                          kLeakySlope),
               1.0 / c.input_scale);
}

// ---- encoder ----

Encoder make_encoder(const NetConfig& nc, int data_dim, int conditions,
                     Rng& rng, const std::string& prefix) {
  Encoder e;
  e.data_dim = data_dim;
  e.feature_dim = nc.feature_dim;
  e.conditions = conditions;
  e.l1 = make_dense(prefix + ".l1", data_dim, nc.hidden, rng);
  e.l2 = make_dense(prefix + ".l2", nc.hidden, nc.hidden, rng);
  e.out = make_dense(prefix + ".out", nc.hidden, nc.feature_dim, rng);
  e.class_head = make_dense(prefix + ".class", nc.hidden, conditions, rng);
  return e;
}

std::vector<Parameter*> Encoder::params() {
  return {&l1.W, &l1.b, &l2.W, &l2.b, &out.W, &out.b,
          &class_head.W, &class_head.b};
}

std::vector<const Parameter*> Encoder::params() const {
  auto v = const_cast<Encoder*>(this)->params();
  return {v.begin(), v.end()};
}

namespace {
Var encoder_trunk(const Encoder& e, Var x, bool track) {
  require(x->value.values.cols() == e.data_dim,
          "encode: data width mismatch");
  Var h = leaky_relu(dense(e.l1, std::move(x), track), kLeakySlope);
  return leaky_relu(dense(e.l2, std::move(h), track), kLeakySlope);
}
}  // namespace

Var encode(const Encoder& e, Var x, bool track) {
  return dense(e.out, encoder_trunk(e, std::move(x), track), track);
}

Var encoder_class_logits(const Encoder& e, Var x, bool track) {
  return dense(e.class_head, encoder_trunk(e, std::move(x), track), track);
}

// ---- feature critic ----

FeatureCritic make_feature_critic(const NetConfig& nc, Rng& rng,
                                  const std::string& prefix) {
  FeatureCritic fc;
  fc.feature_dim = nc.feature_dim;
  fc.l1 = make_dense(prefix + ".l1", 2 * nc.feature_dim, nc.hidden, rng);
  fc.l2 = make_dense(prefix + ".l2", nc.hidden, nc.hidden, rng);
  fc.out = make_dense(prefix + ".out", nc.hidden, 1, rng);
  return fc;
}

std::vector<Parameter*> FeatureCritic::params() {
  return {&l1.W, &l1.b, &l2.W, &l2.b, &out.W, &out.b};
}

std::vector<const Parameter*> FeatureCritic::params() const {
  auto v = const_cast<FeatureCritic*>(this)->params();
  return {v.begin(), v.end()};
}

Var feature_critic_score(const FeatureCritic& fc, Var pair, bool track) {
  require(pair->value.values.cols() == 2 * fc.feature_dim,
          "feature_critic_score: expected a concatenated feature pair");
  require(fc.input_scale > 0.0,
          "feature_critic_score: input scale must be positive");
  Var h = leaky_relu(
      dense(fc.l1, scale(std::move(pair), fc.input_scale), track),
      kLeakySlope);
  h = leaky_relu(dense(fc.l2, std::move(h), track), kLeakySlope);
  return scale(dense(fc.out, std::move(h), track), 1.0 / fc.input_scale);
}

// ---- reference classifier ----

Classifier make_classifier(const NetConfig& nc, int data_dim, int classes,
                           Rng& rng, const std::string& prefix) {
  Classifier c;
  c.data_dim = data_dim;
  c.classes = classes;
  c.l1 = make_dense(prefix + ".l1", data_dim, nc.hidden, rng);
  c.l2 = make_dense(prefix + ".l2", nc.hidden, nc.hidden, rng);
  c.out = make_dense(prefix + ".out", nc.hidden, classes, rng);
  return c;
}

std::vector<Parameter*> Classifier::params() {
  return {&l1.W, &l1.b, &l2.W, &l2.b, &out.W, &out.b};
}

std::vector<const Parameter*> Classifier::params() const {
  auto v = const_cast<Classifier*>(this)->params();
  return {v.begin(), v.end()};
}

Var classifier_logits(const Classifier& c, Var x, bool track) {
  require(x->value.values.cols() == c.data_dim,
          "classifier_logits: data width mismatch");
  Var h = leaky_relu(dense(c.l1, std::move(x), track), kLeakySlope);
  h = leaky_relu(dense(c.l2, std::move(h), track), kLeakySlope);
  return dense(c.out, std::move(h), track);
}

int argmax_row(const Mat& logits, Index row) {
  int best = 0;
  for (Index j = 1; j < logits.cols(); ++j)
    if (logits(row, j) > logits(row, best)) best = static_cast<int>(j);
  return best;
}

std::vector<int> classify(const Classifier& c, const Mat& x) {
  require(c.trained, "classify: classifier has not been trained");
  Mat logits = classifier_logits(c, constant(x), false)->value.values;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) out[i] = argmax_row(logits, i);
  return out;
}

}  // namespace focl
