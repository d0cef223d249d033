#include "focl/cli.hpp"

#include "focl/checkpoint.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

extern char** environ;

namespace focl {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---- enum names ----

const char* mode_name(ReplayMode m) {
  switch (m) {
    case ReplayMode::none: return "none";
    case ReplayMode::replay_data: return "replay_data";
    case ReplayMode::align_image: return "align_image";
    case ReplayMode::align_feature: return "align_feature";
    case ReplayMode::align_combined: return "align_combined";
    case ReplayMode::joint: return "joint";
  }
  return "none";
}

ReplayMode mode_from_name(const std::string& s) {
  if (s == "none") return ReplayMode::none;
  if (s == "replay_data") return ReplayMode::replay_data;
  if (s == "align_image") return ReplayMode::align_image;
  if (s == "align_feature") return ReplayMode::align_feature;
  if (s == "align_combined") return ReplayMode::align_combined;
  if (s == "joint") return ReplayMode::joint;
  throw ConfigError("mode: unknown value '" + s +
                    "' (none, replay_data, align_image, align_feature, "
                    "align_combined, joint)");
}

namespace {

const char* source_name(FeatureSource s) {
  switch (s) {
    case FeatureSource::learned_encoder: return "learned_encoder";
    case FeatureSource::distilled: return "distilled";
    case FeatureSource::prior: return "prior";
  }
  return "prior";
}

FeatureSource source_from_name(const std::string& s) {
  if (s == "learned_encoder") return FeatureSource::learned_encoder;
  if (s == "distilled") return FeatureSource::distilled;
  if (s == "prior") return FeatureSource::prior;
  throw ConfigError("feature_source: unknown value '" + s +
                    "' (learned_encoder, distilled, prior)");
}

const char* pairing_name(Pairing p) {
  return p == Pairing::paired ? "paired" : "unpaired";
}

Pairing pairing_from_name(const std::string& s) {
  if (s == "paired") return Pairing::paired;
  if (s == "unpaired") return Pairing::unpaired;
  throw ConfigError("pairing: unknown value '" + s + "' (paired, unpaired)");
}

const char* lipschitz_name(LipschitzKind k) {
  return k == LipschitzKind::weight_clip ? "weight_clip" : "gradient_penalty";
}

LipschitzKind lipschitz_from_name(const std::string& s) {
  if (s == "weight_clip") return LipschitzKind::weight_clip;
  if (s == "gradient_penalty") return LipschitzKind::gradient_penalty;
  throw ConfigError("lipschitz: unknown value '" + s +
                    "' (weight_clip, gradient_penalty)");
}

const char* distance_name(DistanceKind k) {
  return k == DistanceKind::frechet ? "frechet" : "accuracy_drop";
}

DistanceKind distance_from_name(const std::string& s) {
  if (s == "frechet") return DistanceKind::frechet;
  if (s == "accuracy_drop") return DistanceKind::accuracy_drop;
  throw ConfigError("evaluation.distance: unknown value '" + s +
                    "' (frechet, accuracy_drop)");
}

// ---- strict JSON field access ----

void reject_unknown(const Json& obj, const std::vector<std::string>& known,
                    const std::string& scope) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const auto& k : known)
      if (key == k) ok = true;
    if (!ok)
      throw ConfigError("unknown field: " + scope + key);
  }
}

double as_number(const Json& v, const std::string& field) {
  if (!v.is_number())
    throw ConfigError(field + " must be a number");
  return v.get<double>();
}

int as_int(const Json& v, const std::string& field) {
  if (!v.is_number_integer())
    throw ConfigError(field + " must be an integer");
  return v.get<int>();
}

std::uint64_t as_seed(const Json& v, const std::string& field) {
  if (!(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(field + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string as_string(const Json& v, const std::string& field) {
  if (!v.is_string())
    throw ConfigError(field + " must be a string");
  return v.get<std::string>();
}

bool as_bool(const Json& v, const std::string& field) {
  if (!v.is_boolean())
    throw ConfigError(field + " must be a boolean");
  return v.get<bool>();
}

int default_T(const std::string& name) {
  return name == "glyphs8" ? 10 : 5;
}

int default_steps(const std::string& name) {
  return name == "glyphs8" ? 4000 : 2000;
}

StreamSpec parse_stream(const Json& v) {
  StreamSpec spec;
  if (v.is_string()) {
    // "gauss2d-5" names the stream and its task count in one token
    std::string s = v.get<std::string>();
    std::string name = s;
    int T = 0;
    auto dash = s.rfind('-');
    if (dash != std::string::npos) {
      try {
        std::size_t used = 0;
        T = std::stoi(s.substr(dash + 1), &used);
        if (used == s.size() - dash - 1 && T > 0)
          name = s.substr(0, dash);
        else
          T = 0;
      } catch (...) {
        T = 0;
      }
    }
    if (name != "gauss2d" && name != "glyphs8")
      throw ConfigError("stream: unknown stream '" + s +
                        "' (gauss2d, glyphs8)");
    spec.name = name;
    spec.T = T > 0 ? T : default_T(name);
    return spec;
  }
  if (!v.is_object())
    throw ConfigError("stream must be a string like \"gauss2d-5\" or an "
                      "object");
  if (!v.contains("name"))
    throw ConfigError("stream.name is required");
  spec.name = as_string(v.at("name"), "stream.name");
  if (spec.name != "gauss2d" && spec.name != "glyphs8")
    throw ConfigError("stream.name: unknown stream '" + spec.name +
                      "' (gauss2d, glyphs8)");
  const bool gauss = spec.name == "gauss2d";
  if (gauss)
    reject_unknown(v, {"name", "T", "radius", "sigma", "seed"}, "stream.");
  else
    reject_unknown(v, {"name", "T", "noise", "seed"}, "stream.");
  spec.T = v.contains("T") ? as_int(v.at("T"), "stream.T")
                           : default_T(spec.name);
  if (spec.T < 1) throw ConfigError("stream.T must be at least 1");
  if (v.contains("radius"))
    spec.radius = as_number(v.at("radius"), "stream.radius");
  if (v.contains("sigma"))
    spec.sigma = as_number(v.at("sigma"), "stream.sigma");
  if (v.contains("noise"))
    spec.noise = as_number(v.at("noise"), "stream.noise");
  if (v.contains("seed")) spec.seed = as_seed(v.at("seed"), "stream.seed");
  return spec;
}

ExperimentConfig parse_config_json(const Json& root) {
  if (!root.is_object())
    throw ConfigError("config root must be a JSON object");
  reject_unknown(root,
                 {"stream", "mode", "alpha", "lambda_base", "feature_source",
                  "pairing", "steps_per_task", "batch_size", "critic_steps",
                  "lipschitz", "clip", "ac_weight", "learning_rate",
                  "encoder_fools_feature_critic", "net", "evaluation",
                  "seed", "out_dir", "sweep"},
                 "");

  ExperimentConfig cfg;
  if (root.contains("stream")) cfg.stream = parse_stream(root.at("stream"));

  ReplayConfig& r = cfg.replay;
  if (root.contains("mode"))
    r.mode = mode_from_name(as_string(root.at("mode"), "mode"));

  if (root.contains("sweep")) {
    const Json& sw = root.at("sweep");
    if (!sw.is_object())
      throw ConfigError("sweep must be an object with one axis "
                        "(alpha or mode)");
    reject_unknown(sw, {"alpha", "mode"}, "sweep.");
    if (sw.contains("alpha") == sw.contains("mode"))
      throw ConfigError("sweep needs exactly one axis: alpha or mode");
    if (sw.contains("alpha")) {
      if (r.mode != ReplayMode::align_combined)
        throw ConfigError("sweep.alpha requires mode=align_combined; other "
                          "modes pin alpha");
      if (!sw.at("alpha").is_array())
        throw ConfigError("sweep.alpha must be an array of numbers");
      for (const auto& a : sw.at("alpha"))
        cfg.sweep_alpha.push_back(as_number(a, "sweep.alpha entry"));
      if (cfg.sweep_alpha.empty())
        throw ConfigError("sweep.alpha is empty");
      cfg.axis = SweepAxis::alpha;
    } else {
      if (!sw.at("mode").is_array())
        throw ConfigError("sweep.mode must be an array of mode names");
      for (const auto& m : sw.at("mode"))
        cfg.sweep_modes.push_back(
            mode_from_name(as_string(m, "sweep.mode entry")));
      if (cfg.sweep_modes.empty())
        throw ConfigError("sweep.mode is empty");
      cfg.axis = SweepAxis::mode;
    }
  }

  bool combined_reachable = r.mode == ReplayMode::align_combined;
  for (ReplayMode m : cfg.sweep_modes)
    if (m == ReplayMode::align_combined) combined_reachable = true;

  if (root.contains("alpha")) {
    if (!combined_reachable)
      throw ConfigError(
          "alpha is only configurable with mode=align_combined "
          "(align_feature pins 1, align_image pins 0, other modes have no "
          "blend)");
    r.alpha = as_number(root.at("alpha"), "alpha");
  } else if (r.mode == ReplayMode::align_combined &&
             cfg.axis != SweepAxis::alpha) {
    throw ConfigError("mode=align_combined requires alpha");
  }

  if (root.contains("lambda_base"))
    r.lambda_base = as_number(root.at("lambda_base"), "lambda_base");
  if (root.contains("feature_source"))
    r.feature_source = source_from_name(
        as_string(root.at("feature_source"), "feature_source"));
  if (root.contains("pairing"))
    r.pairing = pairing_from_name(as_string(root.at("pairing"), "pairing"));
  r.steps_per_task = root.contains("steps_per_task")
                         ? as_int(root.at("steps_per_task"), "steps_per_task")
                         : default_steps(cfg.stream.name);
  if (root.contains("batch_size"))
    r.batch_size = as_int(root.at("batch_size"), "batch_size");
  if (root.contains("critic_steps"))
    r.critic_steps = as_int(root.at("critic_steps"), "critic_steps");
  if (root.contains("lipschitz"))
    r.lipschitz =
        lipschitz_from_name(as_string(root.at("lipschitz"), "lipschitz"));
  if (root.contains("clip")) r.clip = as_number(root.at("clip"), "clip");
  if (root.contains("ac_weight"))
    r.ac_weight = as_number(root.at("ac_weight"), "ac_weight");
  if (root.contains("learning_rate"))
    r.learning_rate = as_number(root.at("learning_rate"), "learning_rate");
  if (root.contains("encoder_fools_feature_critic"))
    r.encoder_fools_feature_critic =
        as_bool(root.at("encoder_fools_feature_critic"),
                "encoder_fools_feature_critic");

  if (root.contains("net")) {
    const Json& net = root.at("net");
    if (!net.is_object()) throw ConfigError("net must be an object");
    reject_unknown(net, {"latent_dim", "hidden", "feature_dim"}, "net.");
    if (net.contains("latent_dim"))
      r.net.latent_dim = as_int(net.at("latent_dim"), "net.latent_dim");
    if (net.contains("hidden"))
      r.net.hidden = as_int(net.at("hidden"), "net.hidden");
    if (net.contains("feature_dim"))
      r.net.feature_dim = as_int(net.at("feature_dim"), "net.feature_dim");
  }

  if (root.contains("evaluation")) {
    const Json& ev = root.at("evaluation");
    if (!ev.is_object()) throw ConfigError("evaluation must be an object");
    reject_unknown(ev, {"samples_per_condition", "distance"}, "evaluation.");
    if (ev.contains("samples_per_condition"))
      r.eval_samples = as_int(ev.at("samples_per_condition"),
                              "evaluation.samples_per_condition");
    if (ev.contains("distance"))
      r.distance_kind =
          distance_from_name(as_string(ev.at("distance"),
                                       "evaluation.distance"));
  }

  if (root.contains("seed")) cfg.seed = as_seed(root.at("seed"), "seed");
  if (root.contains("out_dir"))
    cfg.out_dir = as_string(root.at("out_dir"), "out_dir");

  cfg.replay = validated(cfg.replay);
  return cfg;
}

// FOCL_NET__HIDDEN=32 -> root["net"]["hidden"] = 32. Values are JSON when
// they parse as JSON, raw strings otherwise.
void merge_env_overrides(Json& root) {
  for (char** e = environ; *e != nullptr; ++e) {
    std::string entry(*e);
    if (entry.rfind("FOCL_", 0) != 0) continue;
    auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string keypath = entry.substr(5, eq - 5);
    std::string value = entry.substr(eq + 1);

    std::vector<std::string> path;
    std::size_t pos = 0;
    while (true) {
      auto sep = keypath.find("__", pos);
      std::string part = keypath.substr(
          pos, sep == std::string::npos ? std::string::npos : sep - pos);
      for (char& c : part)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      path.push_back(part);
      if (sep == std::string::npos) break;
      pos = sep + 2;
    }

    Json parsed;
    try {
      parsed = Json::parse(value);
    } catch (...) {
      parsed = value;
    }

    Json* node = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i]) || !(*node)[path[i]].is_object())
        (*node)[path[i]] = Json::object();
      node = &(*node)[path[i]];
    }
    (*node)[path.back()] = parsed;
  }
}

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

Json echo_json(const ExperimentConfig& cfg) {
  Json stream;
  stream["name"] = cfg.stream.name;
  stream["T"] = cfg.stream.T;
  if (cfg.stream.name == "gauss2d") {
    stream["radius"] = cfg.stream.radius;
    stream["sigma"] = cfg.stream.sigma;
  } else {
    stream["noise"] = cfg.stream.noise;
  }
  stream["seed"] = cfg.stream.seed;

  const ReplayConfig& r = cfg.replay;
  // alpha is echoed only where the parser accepts it back
  bool has_blend = r.mode == ReplayMode::align_combined;
  for (ReplayMode m : cfg.sweep_modes)
    if (m == ReplayMode::align_combined) has_blend = true;

  Json root;
  root["stream"] = stream;
  root["mode"] = mode_name(r.mode);
  if (has_blend) root["alpha"] = r.alpha;
  root["lambda_base"] = r.lambda_base;
  root["feature_source"] = source_name(r.feature_source);
  root["pairing"] = pairing_name(r.pairing);
  root["steps_per_task"] = r.steps_per_task;
  root["batch_size"] = r.batch_size;
  root["critic_steps"] = r.critic_steps;
  root["lipschitz"] = lipschitz_name(r.lipschitz);
  root["clip"] = r.clip;
  root["ac_weight"] = r.ac_weight;
  root["learning_rate"] = r.learning_rate;
  root["encoder_fools_feature_critic"] = r.encoder_fools_feature_critic;
  root["net"] = Json{{"latent_dim", r.net.latent_dim},
                     {"hidden", r.net.hidden},
                     {"feature_dim", r.net.feature_dim}};
  root["evaluation"] = Json{{"samples_per_condition", r.eval_samples},
                            {"distance", distance_name(r.distance_kind)}};
  root["seed"] = cfg.seed;
  root["out_dir"] = cfg.out_dir;
  if (cfg.axis == SweepAxis::alpha)
    root["sweep"] = Json{{"alpha", cfg.sweep_alpha}};
  if (cfg.axis == SweepAxis::mode) {
    std::vector<std::string> names;
    for (ReplayMode m : cfg.sweep_modes) names.push_back(mode_name(m));
    root["sweep"] = Json{{"mode", names}};
  }
  return root;
}

// Echo without the output destination: the part of the config that
// identifies the experiment. Hashed, embedded in reports and checkpoints.
Json portable_echo(const ExperimentConfig& cfg) {
  Json echo = echo_json(cfg);
  echo.erase("out_dir");
  return echo;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(root);
}

ExperimentConfig parse_config_with_env(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  merge_env_overrides(root);
  return parse_config_json(root);
}

std::string materialized_json(const ExperimentConfig& cfg) {
  return echo_json(cfg).dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  return fnv1a64(portable_echo(cfg).dump());
}

TaskStream build_stream(const StreamSpec& spec) {
  if (spec.name == "glyphs8")
    return make_glyphs8(spec.T, spec.noise, spec.seed);
  return make_gauss2d(spec.T, spec.radius, spec.sigma, spec.seed);
}

// ---- output writers ----

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create output directory " + dir.string() + ": " +
                  ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw IoError("cannot write " + path.string());
  return f;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f = open_out(path);
  f << text;
  if (!f) throw IoError("failed while writing " + path.string());
}

// best effort: the error file must never mask the original failure
void write_error_json(const std::string& dir, const std::string& kind,
                      int exit_code, const std::string& message, int task,
                      int step) {
  try {
    ensure_dir(dir);
    Json e;
    e["kind"] = kind;
    e["exit"] = exit_code;
    e["message"] = message;
    if (task >= 0) e["task"] = task;
    if (step >= 0) e["step"] = step;
    write_text(fs::path(dir) / "error.json", e.dump(2) + "\n");
  } catch (...) {
  }
}

struct FailureInfo {
  std::string kind;
  int exit_code = 1;
  std::string message;
  int task = -1;
  int step = -1;
};

FailureInfo classify_failure(const std::exception& e) {
  FailureInfo f;
  f.message = e.what();
  if (auto* t = dynamic_cast<const TrainingFailure*>(&e)) {
    f.kind = "numeric";
    f.exit_code = 1;
    f.task = t->task;
    f.step = t->step;
  } else if (dynamic_cast<const ConfigError*>(&e)) {
    f.kind = "config";
    f.exit_code = 3;
  } else if (dynamic_cast<const IoError*>(&e) ||
             dynamic_cast<const fs::filesystem_error*>(&e)) {
    f.kind = "io";
    f.exit_code = 2;
  } else if (dynamic_cast<const NumericFailure*>(&e)) {
    f.kind = "numeric";
    f.exit_code = 1;
  } else {
    f.kind = "internal";
    f.exit_code = 1;
  }
  return f;
}

std::string csv_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json report_json(const ExperimentConfig& cfg, const RunResult& res,
                 double total_s, const std::vector<double>& task_s) {
  const int T = cfg.stream.T;
  Json rep;
  rep["config_hash"] = hash_hex(config_hash(cfg));
  rep["config"] = portable_echo(cfg);

  Json entries = Json::array();
  for (const auto& [key, d] : res.ledger.distances())
    entries.push_back(Json{{"t", key.first}, {"i", key.second}, {"d", d}});
  rep["ledger"] =
      Json{{"kind", distance_name(res.ledger.kind())}, {"entries", entries}};

  auto fr = make_forgetfulness_report(res.ledger);
  if (fr) {
    Json f;
    Json fs = Json::array();
    for (auto [t, v] : fr->fs) fs.push_back(Json{{"t", t}, {"value", v}});
    Json cfs = Json::array();
    for (auto [t, v] : fr->cfs) cfs.push_back(Json{{"t", t}, {"value", v}});
    f["fs"] = fs;
    f["cfs"] = cfs;
    f["overall_fs"] = fr->overall_fs;
    f["overall_cfs"] = fr->overall_cfs;
    f["slope_fs"] = fr->slope_fs ? Json(*fr->slope_fs) : Json(nullptr);
    f["slope_cfs"] = fr->slope_cfs ? Json(*fr->slope_cfs) : Json(nullptr);
    f["weak_fit_tasks"] = fr->weak_fit_tasks;
    rep["forgetfulness"] = f;
  } else {
    rep["forgetfulness"] = nullptr;
  }

  rep["accuracy_after_task"] = res.accuracy_after_task;
  rep["final_per_condition_accuracy"] = res.final_per_condition_accuracy;
  const int t_half = std::max(1, T / 2);
  rep["accuracy_halfway"] =
      res.accuracy_after_task[static_cast<std::size_t>(t_half - 1)];
  rep["accuracy_final"] = res.final_accuracy;
  rep["classifier_held_out"] = res.classifier_held_out;

  // per-task means of each loss term
  Json per_task = Json::array();
  for (int t = 1; t <= T; ++t) {
    double cur = 0, feat = 0, img = 0, aux = 0, tot = 0, crit = 0;
    std::int64_t n = 0;
    for (const auto& recd : res.steps) {
      if (recd.task != t) continue;
      cur += recd.gen.current_task;
      feat += recd.gen.feature_term;
      img += recd.gen.image_term;
      aux += recd.gen.aux_class_term;
      tot += recd.gen.total;
      crit += recd.critic_loss;
      ++n;
    }
    if (n == 0) continue;
    const double dn = static_cast<double>(n);
    per_task.push_back(Json{{"task", t},
                            {"steps", n},
                            {"current_task", cur / dn},
                            {"feature_term", feat / dn},
                            {"image_term", img / dn},
                            {"aux_class_term", aux / dn},
                            {"critic_loss", crit / dn},
                            {"total", tot / dn}});
  }
  rep["per_task_losses"] = per_task;
  rep["real_draws"] = res.real_draws;

  Json warnings = Json::array();
  if (res.classifier_unreliable)
    warnings.push_back("reference classifier held-out accuracy is below "
                       "0.9; accuracy figures are unreliable");
  if (fr && !fr->weak_fit_tasks.empty()) {
    std::string w = "weak fit on task(s)";
    for (int t : fr->weak_fit_tasks) w += " " + std::to_string(t);
    w += ": forgetting scores involving them are unreliable";
    warnings.push_back(w);
  }
  rep["warnings"] = warnings;

  // must stay the last key: determinism comparisons drop it
  rep["timings"] = Json{{"total_s", total_s}, {"per_task_s", task_s}};
  return rep;
}

void print_summary(const ExperimentConfig& cfg, const RunResult& res) {
  const int T = cfg.stream.T;
  auto fr = make_forgetfulness_report(res.ledger);
  std::printf("run %s  mode=%s  stream=%s-%d  seed=%llu\n",
              hash_hex(config_hash(cfg)).c_str(), mode_name(cfg.replay.mode),
              cfg.stream.name.c_str(), T,
              static_cast<unsigned long long>(cfg.seed));
  std::printf("%4s %12s %12s %12s\n", "task", "accuracy", "FS_t", "CFS_t");
  for (int t = 1; t <= T; ++t) {
    char fs[32] = "-", cfs[32] = "-";
    if (fr)
      for (std::size_t k = 0; k < fr->fs.size(); ++k)
        if (fr->fs[k].first == t) {
          std::snprintf(fs, sizeof fs, "%.4f", fr->fs[k].second);
          std::snprintf(cfs, sizeof cfs, "%.4f", fr->cfs[k].second);
        }
    std::printf("%4d %12.4f %12s %12s\n", t,
                res.accuracy_after_task[static_cast<std::size_t>(t - 1)],
                fs, cfs);
  }
  const int t_half = std::max(1, T / 2);
  std::printf("A_%d=%.4f  A_%d=%.4f", t_half,
              res.accuracy_after_task[static_cast<std::size_t>(t_half - 1)],
              T, res.final_accuracy);
  if (fr) {
    std::printf("  FS=%.4f  CFS=%.4f", fr->overall_fs, fr->overall_cfs);
    if (fr->slope_fs) std::printf("  k=%.4f", *fr->slope_fs);
  }
  std::printf("\n");
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, bool quiet) {
  const fs::path dir(cfg.out_dir);
  ensure_dir(dir);
  ensure_dir(dir / "checkpoints");

  const std::string hash = hash_hex(config_hash(cfg));
  const std::string config_text = portable_echo(cfg).dump(2) + "\n";
  {
    Json c = echo_json(cfg);
    Json with_hash;
    with_hash["config_hash"] = hash;
    for (auto& [k, v] : c.items()) with_hash[k] = v;
    write_text(dir / "config.json", with_hash.dump(2) + "\n");
  }

  TaskStream stream = build_stream(cfg.stream);

  std::ofstream metrics = open_out(dir / "metrics.csv");
  metrics << "# config_hash=" << hash << "\n"
          << "task,step,total,current_task,feature_term,image_term,"
             "aux_class_term,lambda_t,alpha,critic_loss\n";

  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> task_s;
  double last_mark = 0.0;

  RunHooks hooks;
  hooks.on_step = [&](const StepRecord& rec) {
    metrics << rec.task << ',' << rec.step << ',' << csv_double(rec.gen.total)
            << ',' << csv_double(rec.gen.current_task) << ','
            << csv_double(rec.gen.feature_term) << ','
            << csv_double(rec.gen.image_term) << ','
            << csv_double(rec.gen.aux_class_term) << ','
            << csv_double(rec.gen.lambda_t) << ','
            << csv_double(rec.gen.alpha) << ','
            << csv_double(rec.critic_loss) << "\n";
  };
  hooks.on_task_end = [&](int t, const EngineState& s) {
    const double now =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    task_s.push_back(now - last_mark);
    last_mark = now;
    save_checkpoint((dir / "checkpoints" /
                     ("task_" + std::to_string(t) + ".bin"))
                        .string(),
                    s.gen.params(), config_text, config_hash(cfg));
  };

  RunOutcome out = run_stream(cfg.replay, stream, cfg.seed, hooks);
  metrics.flush();
  if (!metrics) throw IoError("failed while writing metrics.csv");

  const double total_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  write_text(dir / "report.json",
             report_json(cfg, out.result, total_s, task_s).dump(2) + "\n");

  if (!quiet) print_summary(cfg, out.result);
}

void sweep_experiment(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.axis == SweepAxis::none)
    throw ConfigError("sweep requires a sweep axis (sweep.alpha or "
                      "sweep.mode)");
  const fs::path dir(cfg.out_dir);
  ensure_dir(dir);
  {
    Json c = echo_json(cfg);
    Json with_hash;
    with_hash["config_hash"] = hash_hex(config_hash(cfg));
    for (auto& [k, v] : c.items()) with_hash[k] = v;
    write_text(dir / "config.json", with_hash.dump(2) + "\n");
  }

  struct Row {
    std::string setting;
    std::string status = "ok";
    std::string error;
    double final_accuracy = 0.0;
    double overall_fs = 0.0;
    double overall_cfs = 0.0;
    std::string slope = "";
    bool has_scores = false;
  };
  std::vector<Row> rows;

  const std::size_t n_settings = cfg.axis == SweepAxis::alpha
                                     ? cfg.sweep_alpha.size()
                                     : cfg.sweep_modes.size();
  for (std::size_t i = 0; i < n_settings; ++i) {
    ExperimentConfig sub = cfg;
    sub.axis = SweepAxis::none;
    sub.sweep_alpha.clear();
    sub.sweep_modes.clear();

    Row row;
    if (cfg.axis == SweepAxis::alpha) {
      sub.replay.alpha = cfg.sweep_alpha[i];
      row.setting = "alpha_" + csv_double(cfg.sweep_alpha[i]);
    } else {
      sub.replay.mode = cfg.sweep_modes[i];
      row.setting = std::string("mode_") + mode_name(cfg.sweep_modes[i]);
    }
    sub.out_dir = (dir / row.setting).string();

    try {
      sub.replay = validated(sub.replay);
      run_experiment(sub, true);

      std::ifstream rf(fs::path(sub.out_dir) / "report.json");
      Json rep = Json::parse(rf);
      row.final_accuracy = rep.at("accuracy_final").get<double>();
      if (!rep.at("forgetfulness").is_null()) {
        row.overall_fs =
            rep.at("forgetfulness").at("overall_fs").get<double>();
        row.overall_cfs =
            rep.at("forgetfulness").at("overall_cfs").get<double>();
        if (!rep.at("forgetfulness").at("slope_fs").is_null())
          row.slope = csv_double(
              rep.at("forgetfulness").at("slope_fs").get<double>());
        row.has_scores = true;
      }
      if (!quiet)
        std::printf("%-24s acc=%.4f FS=%.4f\n", row.setting.c_str(),
                    row.final_accuracy, row.overall_fs);
    } catch (const std::exception& e) {
      FailureInfo f = classify_failure(e);
      row.status = "failed";
      row.error = f.message;
      write_error_json(sub.out_dir, f.kind, f.exit_code, f.message, f.task,
                       f.step);
      if (!quiet)
        std::printf("%-24s FAILED: %s\n", row.setting.c_str(),
                    f.message.c_str());
    }
    rows.push_back(std::move(row));
  }

  std::ofstream cmp = open_out(dir / "comparison.csv");
  cmp << "# config_hash=" << hash_hex(config_hash(cfg)) << "\n"
      << "setting,status,final_accuracy,overall_fs,overall_cfs,slope_fs,"
         "error\n";
  for (const auto& row : rows) {
    std::string err = row.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ';';
    cmp << row.setting << ',' << row.status << ',';
    if (row.status == "ok") cmp << csv_double(row.final_accuracy);
    cmp << ',';
    if (row.has_scores) cmp << csv_double(row.overall_fs);
    cmp << ',';
    if (row.has_scores) cmp << csv_double(row.overall_cfs);
    cmp << ',' << row.slope << ',' << err << "\n";
  }
  cmp.flush();
  if (!cmp) throw IoError("failed while writing comparison.csv");
}

void dump_samples(const ExperimentConfig& cfg,
                  const std::string& checkpoint_path, int conditions, int n,
                  std::uint64_t seed, const std::string& out_dir) {
  if (n < 1) throw ConfigError("dump: n must be at least 1");
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  if (ck.config_hash != config_hash(cfg))
    throw ConfigError(
        "dump: checkpoint was produced under a different config (hash " +
        hash_hex(ck.config_hash) + ", expected " +
        hash_hex(config_hash(cfg)) + ")");

  TaskStream stream = build_stream(cfg.stream);
  if (conditions <= 0) conditions = stream.T;
  if (conditions > stream.T)
    throw ConfigError("dump: the stream has only " +
                      std::to_string(stream.T) + " conditions");

  Rng init(0);
  Generator gen = make_generator(cfg.replay.net, stream.data_dim, stream.T,
                                 stream.name == "glyphs8", init);
  auto params = gen.params();
  apply_checkpoint(ck, params);

  ensure_dir(out_dir);
  Rng z_rng = Rng::stream(seed, "dump");
  for (int c = 0; c < conditions; ++c) {
    Mat z = z_rng.normal_mat(n, cfg.replay.net.latent_dim);
    Mat x = generate_values(gen, c, z);
    std::ofstream f =
        open_out(fs::path(out_dir) /
                 ("samples_cond" + std::to_string(c) + ".csv"));
    f << "# config_hash=" << hash_hex(config_hash(cfg)) << "\n";
    for (Index j = 0; j < x.cols(); ++j)
      f << (j ? "," : "") << "x" << j;
    f << "\n";
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j)
        f << (j ? "," : "") << csv_double(x(i, j));
      f << "\n";
    }
    f.flush();
    if (!f) throw IoError("failed while writing samples for condition " +
                          std::to_string(c));
  }
}

// ---- command line ----

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"feature-oriented continual learning for conditional "
               "generators"};
  app.require_subcommand(1);

  std::string config_path, out_override, checkpoint;
  long long seed_override = -1;
  int n = 100, conditions = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    cmd->add_option("--seed", seed_override,
                    "override the config's run seed")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", out_override,
                    "override the config's output directory");
    cmd->add_flag("--quiet", quiet, "suppress console summaries");
    return cmd;
  };

  CLI::App* run = add_common(
      app.add_subcommand("run", "train on the stream and write reports"));
  CLI::App* sweep = add_common(
      app.add_subcommand("sweep", "run every setting of the sweep axis"));
  CLI::App* dump = add_common(
      app.add_subcommand("dump", "sample a saved generator checkpoint"));
  dump->add_option("--checkpoint", checkpoint, "saved checkpoint file")
      ->required();
  dump->add_option("--n", n, "rows per condition (default 100)");
  dump->add_option("--conditions", conditions,
                   "leading conditions to dump (default: all)");
  CLI::App* validate = add_common(app.add_subcommand(
      "validate", "check the config and print it with defaults filled in"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  std::string err_dir;
  try {
    ExperimentConfig cfg = parse_config_with_env(read_file(config_path));
    // dump leaves cfg.seed alone: there --seed picks sampling noise, and
    // the config (seed included) must still hash to the checkpoint's
    if (seed_override >= 0 && !dump->parsed())
      cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) cfg.out_dir = out_override;
    err_dir = cfg.out_dir;

    if (validate->parsed()) {
      if (!quiet) std::fputs(materialized_json(cfg).c_str(), stdout);
      return 0;
    }
    if (run->parsed()) {
      if (cfg.axis != SweepAxis::none)
        throw ConfigError("config has a sweep axis; use the sweep command");
      run_experiment(cfg, quiet);
      return 0;
    }
    if (sweep->parsed()) {
      sweep_experiment(cfg, quiet);
      return 0;
    }
    // dump
    std::string out = !out_override.empty()
                          ? out_override
                          : (fs::path(cfg.out_dir) / "samples").string();
    err_dir = out;
    const std::uint64_t seed =
        seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                           : cfg.seed;
    dump_samples(cfg, checkpoint, conditions, n, seed, out);
    return 0;
  } catch (const std::exception& e) {
    FailureInfo f = classify_failure(e);
    std::fprintf(stderr, "error (%s): %s\n", f.kind.c_str(),
                 f.message.c_str());
    if (!validate->parsed() && !err_dir.empty())
      write_error_json(err_dir, f.kind, f.exit_code, f.message, f.task,
                       f.step);
    return f.exit_code;
  }
}

}  // namespace focl
