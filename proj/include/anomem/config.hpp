#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anomem/augment.hpp"
#include "anomem/data_io.hpp"
#include "anomem/detect.hpp"
#include "anomem/encoder.hpp"
#include "anomem/losses.hpp"
#include "anomem/train.hpp"

namespace anomem {

// Stage-1 optimizer block (joint encoder + memory training).
struct Stage1Optim {
  double lr_max = 0.05;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 30;
  int batch = 128;
};

// Stage-2 head training block; the hinge margin lives with the other loss
// constants.
struct Stage2Optim {
  double lr_max = 0.02;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 20;
  int batch = 32;
  int hidden = 64;
};

// One-vs-all evaluation protocol: which class counts as normal, how much
// anomalous supervision leaks into training, and which seeds to resample.
struct ProtocolConfig {
  int normal_class = 0;
  double gamma = 0.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int test_per_side = 100;
};

struct PathsConfig {
  std::string data;
  std::string checkpoint;
  std::string scores;
  std::string report;
};

// Everything a run needs, loadable from one JSON file. Unknown keys are
// rejected on load; omitted keys fall back to the defaults below. Per-scale
// vectors default to the usual rules: loss weight doubles per scale and only
// the last (flat) scale keeps every position.
struct ExperimentConfig {
  ExperimentConfig();

  EncoderSpec encoder;
  std::vector<int> memory_counts;
  double beta = 2.0;
  double tol = 1e-4;
  int max_iters = 16;

  double tau = 0.1;
  double lambda_v = 0.05;
  double margin = 2.0;
  std::vector<double> lambda;  // per-scale loss weight
  std::vector<double> ratio;   // per-scale position sampling ratio

  Stage1Optim optimizer;
  Stage2Optim stage2;
  AugmentPolicy augment;
  ProtocolConfig protocol;
  SyntheticSpec data;
  PathsConfig paths;

  ScoreMode mode = ScoreMode::one_class;
  VarianceMode variance_mode = VarianceMode::per_sample;
  bool normalize_before_memory = false;
  bool use_projection_head = false;  // reserved, must stay off
  bool use_memory = true;            // off = plain contrastive baseline
};

void validate(const ExperimentConfig& cfg);

ScoreMode score_mode_from_name(const std::string& name);
VarianceMode variance_mode_from_name(const std::string& name);
std::string to_string(VarianceMode mode);

// Strict parse: malformed JSON raises FormatError, anything else wrong with
// the contents raises ValidationError naming the offending key.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical serialization: every field explicit, keys sorted. Two configs
// serialize identically iff they describe the same run.
std::string config_to_json(const ExperimentConfig& cfg);

// Digest of the canonical form with paths blanked out, so moving artifacts
// around does not count as a config change.
Sha256 config_hash(const ExperimentConfig& cfg);

// Per-run views; `seed` is the run seed, not part of ExperimentConfig.
Stage1Config stage1_config(const ExperimentConfig& cfg, std::uint64_t seed);
Stage2Config stage2_config(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace anomem
