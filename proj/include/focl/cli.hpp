#pragma once

#include "focl/continual.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace focl {

// Which synthetic stream a run trains on. The seed is recorded in outputs;
// task geometry is deterministic and sampling randomness comes from the run
// seed's named streams.
struct StreamSpec {
  std::string name = "gauss2d";  // gauss2d | glyphs8
  int T = 5;
  double radius = 4.0, sigma = 0.15;  // gauss2d
  double noise = 0.05;                // glyphs8
  std::uint64_t seed = 1;
};

enum class SweepAxis { none, alpha, mode };

struct ExperimentConfig {
  StreamSpec stream;
  ReplayConfig replay;  // carries eval_samples and distance_kind too
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  SweepAxis axis = SweepAxis::none;
  std::vector<double> sweep_alpha;
  std::vector<ReplayMode> sweep_modes;
};

// Strict JSON -> config. Unknown fields are errors naming the field; alpha
// is accepted only with mode=align_combined, where it is required; defaults
// (including the stream-dependent steps_per_task) are materialized so the
// echo is complete. Throws ConfigError.
ExperimentConfig parse_config(const std::string& json_text);

// parse_config after merging environment overrides: FOCL_<KEY> replaces the
// top-level key, FOCL_A__B the nested one (FOCL_NET__HIDDEN=32). Values are
// parsed as JSON scalars, falling back to plain strings.
ExperimentConfig parse_config_with_env(const std::string& json_text);

// Fully materialized echo with stable key order. The hash digests the echo
// minus out_dir: where results land does not change what the experiment is.
std::string materialized_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

TaskStream build_stream(const StreamSpec& spec);

const char* mode_name(ReplayMode m);
ReplayMode mode_from_name(const std::string& s);

// Executes one run: config.json, metrics.csv, report.json and per-task
// generator checkpoints under dir/checkpoints/. Prints a summary table
// unless quiet. Throws on failure after writing error.json when possible.
void run_experiment(const ExperimentConfig& cfg, bool quiet);

// One run per axis value under dir/<setting>/ with a shared seed, then a
// comparison.csv; a failing setting is recorded and the sweep continues.
void sweep_experiment(const ExperimentConfig& cfg, bool quiet);

// Regenerates samples from a saved checkpoint: n rows per condition into
// samples_cond<i>.csv under out_dir. Refuses a checkpoint whose config hash
// differs from cfg's.
void dump_samples(const ExperimentConfig& cfg,
                  const std::string& checkpoint_path, int conditions, int n,
                  std::uint64_t seed, const std::string& out_dir);

// Full command-line entry: run | sweep | dump | validate. Returns the
// process exit status: 0 ok, 1 numeric failure, 2 I/O, 3 bad config.
int cli_main(int argc, const char* const* argv);

}  // namespace focl
