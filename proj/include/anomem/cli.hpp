#pragma once

#include <vector>

#include "anomem/data_io.hpp"
#include "anomem/detect.hpp"
#include "anomem/encoder.hpp"
#include "anomem/memory.hpp"

namespace anomem {

// Everything a trained model needs to score images again: the encoder, the
// per-scale memories, optional supervised heads, the fusion weights, and the
// optimizer state for exact resumption.
struct ModelBundle {
  EncoderState encoder;
  std::vector<HopfieldMemory> memories;
  std::vector<ScaleHead> heads;
  std::vector<double> fuse_lambda;
  ScoreMode mode = ScoreMode::one_class;
  std::vector<std::vector<double>> stage1_velocities;
  std::vector<std::vector<double>> stage2_velocities;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
};

// Flattens the bundle into named checkpoint entries (and back). The entry
// list order is fixed, so identical bundles produce identical files.
Checkpoint pack_bundle(const ModelBundle& bundle, const Sha256& config_hash);
ModelBundle unpack_bundle(const Checkpoint& ckpt);

// Subcommand dispatcher behind the `anomem` binary. Returns the process exit
// code: 0 success, 1 validation or usage problems, 2 runtime failures.
int cli_main(int argc, char** argv);

}  // namespace anomem
