#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

struct ExperimentConfig;

// Mann-Whitney rank statistic with midranks for ties. is_anomaly marks the
// positive class; higher scores must mean "more anomalous".
double auroc(const std::vector<double>& scores, const std::vector<int>& is_anomaly);

// Multinomial logistic regression on frozen features: full-batch gradient
// descent until the gradient norm drops below 1e-6 or 5000 iterations, then
// held-out accuracy on a seeded 80/20 split.
double linear_probe(const Tensor& features, const std::vector<int>& class_ids,
                    std::uint64_t seed);

enum class SweepAxis { memory_size, sampling_ratio, gamma };

SweepAxis sweep_axis_from_name(const std::string& name);
std::string to_string(SweepAxis axis);

struct EvalReport {
  SweepAxis axis = SweepAxis::gamma;
  double value = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> aurocs;
  double mean = 0.0;
  double std_dev = 0.0;
};

// Runs the full train+score pipeline once per grid point, resampling over the
// config's seed list; grid points share those seeds.
std::vector<EvalReport> sweep(SweepAxis axis, const std::vector<double>& grid,
                              const ExperimentConfig& config);

std::string report_json(const std::vector<EvalReport>& reports);

}  // namespace anomem
