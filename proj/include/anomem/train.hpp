#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "anomem/augment.hpp"
#include "anomem/data_io.hpp"
#include "anomem/detect.hpp"
#include "anomem/encoder.hpp"
#include "anomem/losses.hpp"
#include "anomem/memory.hpp"

namespace anomem {

struct Stage1Config {
  EncoderSpec encoder;
  std::vector<int> memory_counts;  // prototypes per scale
  double beta = 2.0;
  double tol = 1e-4;
  int max_iters = 16;
  bool normalize_queries = false;

  ScaleWeights scale_weights;  // per-scale loss weight and sampling ratio
  MultiScaleLossCfg loss;
  AugmentPolicy augment;

  double lr_max = 0.05;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 30;
  int batch = 128;
  std::uint64_t seed = 0;

  // Ablation switch: off routes every row past the memories (and drops the
  // spread term), giving the plain contrastive baseline.
  bool use_memory = true;
};

struct Stage1Result {
  EncoderState encoder;
  std::vector<HopfieldMemory> memories;
  std::vector<double> epoch_mean_loss;
  std::vector<std::vector<double>> velocities;  // aligned with parameter order
};

// Joint encoder+memory training over two augmented views per sample. Writes
// one JSON line per epoch to `telemetry` when given. `initial_memories`
// overrides the seeded memory init (shape-checked), e.g. to resume or to
// study degenerate prototype layouts.
Stage1Result train_stage1(const Stage1Config& cfg, const LabeledImageSet& train_set,
                          std::ostream* telemetry = nullptr,
                          std::vector<HopfieldMemory> initial_memories = {});

struct Stage2Config {
  double lr_max = 0.02;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double margin = 2.0;
  int hidden = 64;
  int epochs = 20;
  int batch = 32;
  std::uint64_t seed = 0;
  ScoreMode mode = ScoreMode::ssad;
};

struct Stage2Result {
  std::vector<ScaleHead> heads;
  std::vector<double> epoch_mean_loss;
  std::vector<std::vector<double>> velocities;
};

// Trains per-scale heads on deviation maps from the frozen encoder and
// memories. One-class mode returns no heads; ssad mode requires anomalies in
// the training labels.
Stage2Result train_stage2(const Stage2Config& cfg, const LabeledImageSet& train_set,
                          const EncoderState& encoder,
                          const std::vector<HopfieldMemory>& memories,
                          std::ostream* telemetry = nullptr);

}  // namespace anomem
