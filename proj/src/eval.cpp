#include "anomem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

#include "anomem/config.hpp"
#include "anomem/detect.hpp"
#include "anomem/errors.hpp"
#include "anomem/kernels.hpp"
#include "anomem/rng.hpp"
#include "anomem/train.hpp"

namespace anomem {

double auroc(const std::vector<double>& scores, const std::vector<int>& is_anomaly) {
  if (scores.size() != is_anomaly.size()) {
    throw ValidationError("auroc: scores and labels disagree on length");
  }
  const int n = static_cast<int>(scores.size());
  long long n_a = 0;
  for (int y : is_anomaly) {
    if (y != 0 && y != 1) throw ValidationError("auroc: labels must be 0 or 1");
    n_a += y;
  }
  const long long n_n = n - n_a;
  if (n_a == 0 || n_n == 0) {
    throw ValidationError("auroc: need both classes to rank against each other");
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });

  // midranks: tied scores share the average of their rank positions
  double rank_sum_anomalies = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * ((i + 1) + j);  // ranks are 1-based
    for (int k = i; k < j; ++k) {
      if (is_anomaly[order[k]]) rank_sum_anomalies += midrank;
    }
    i = j;
  }
  return (rank_sum_anomalies - 0.5 * static_cast<double>(n_a) * (n_a + 1)) /
         (static_cast<double>(n_a) * static_cast<double>(n_n));
}

namespace {

int distinct_classes(const std::vector<int>& ids, const std::vector<int>& subset) {
  std::set<int> seen;
  for (int i : subset) seen.insert(ids[i]);
  return static_cast<int>(seen.size());
}

}  // namespace

double linear_probe(const Tensor& features, const std::vector<int>& class_ids,
                    std::uint64_t seed) {
  if (!features.defined() || features.rank() != 2) {
    throw DimensionError("linear_probe: features must be [N,D]");
  }
  const int n = features.shape()[0];
  const int d = features.shape()[1];
  if (static_cast<int>(class_ids.size()) != n) {
    throw ValidationError("linear_probe: feature rows and labels disagree on length");
  }
  int k = 0;
  for (int c : class_ids) {
    if (c < 0) throw ValidationError("linear_probe: negative class id");
    k = std::max(k, c + 1);
  }
  if (std::set<int>(class_ids.begin(), class_ids.end()).size() < 2) {
    throw ValidationError("linear_probe: need at least 2 classes");
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto eng = rng::engine(seed, rng::Stream::probe);
  std::shuffle(order.begin(), order.end(), eng);
  const int n_test = std::max(1, n / 5);
  const int n_train = n - n_test;
  std::vector<int> train(order.begin(), order.begin() + n_train);
  std::vector<int> test(order.begin() + n_train, order.end());
  if (distinct_classes(class_ids, train) < 2 || distinct_classes(class_ids, test) < 2) {
    throw ValidationError("linear_probe: degenerate single-class fold");
  }

  // standardize on train statistics and shrink by 1/sqrt(D) so a fixed step
  // size is stable regardless of the feature scale
  auto fv = features.values();
  std::vector<double> mean(d, 0.0), inv_sd(d, 0.0);
  for (int i : train) {
    for (int j = 0; j < d; ++j) mean[j] += fv[1LL * i * d + j];
  }
  for (double& m : mean) m /= n_train;
  for (int i : train) {
    for (int j = 0; j < d; ++j) {
      const double c = fv[1LL * i * d + j] - mean[j];
      inv_sd[j] += c * c;
    }
  }
  const double shrink = 1.0 / std::sqrt(static_cast<double>(d));
  for (int j = 0; j < d; ++j) {
    const double sd = std::sqrt(inv_sd[j] / n_train);
    inv_sd[j] = sd > 1e-12 ? shrink / sd : 0.0;
  }
  auto gather = [&](const std::vector<int>& idx) {
    std::vector<double> x(1LL * idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (int j = 0; j < d; ++j) {
        x[r * d + j] = (fv[1LL * idx[r] * d + j] - mean[j]) * inv_sd[j];
      }
    }
    return x;
  };
  const std::vector<double> xtr = gather(train);
  const std::vector<double> xte = gather(test);

  std::vector<double> w(1LL * d * k, 0.0), b(k, 0.0);
  std::vector<double> logits(1LL * n_train * k), probs(1LL * n_train * k);
  std::vector<double> gw(1LL * d * k), gb(k);
  const double lr = 2.0;

  for (int iter = 0; iter < 5000; ++iter) {
    kernels::matmul_nn(xtr.data(), w.data(), logits.data(), n_train, d, k);
    for (int i = 0; i < n_train; ++i) {
      for (int c = 0; c < k; ++c) logits[1LL * i * k + c] += b[c];
    }
    kernels::softmax_rows(logits.data(), probs.data(), n_train, k);
    for (int i = 0; i < n_train; ++i) probs[1LL * i * k + class_ids[train[i]]] -= 1.0;
    const double inv_n = 1.0 / n_train;
    for (double& p : probs) p *= inv_n;

    kernels::matmul_tn(xtr.data(), probs.data(), gw.data(), d, n_train, k);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (int i = 0; i < n_train; ++i) {
      for (int c = 0; c < k; ++c) gb[c] += probs[1LL * i * k + c];
    }

    double sq = 0.0;
    for (double g : gw) sq += g * g;
    for (double g : gb) sq += g * g;
    if (std::sqrt(sq) < 1e-6) break;

    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * gw[j];
    for (int c = 0; c < k; ++c) b[c] -= lr * gb[c];
  }

  std::vector<double> test_logits(1LL * n_test * k);
  kernels::matmul_nn(xte.data(), w.data(), test_logits.data(), n_test, d, k);
  int hits = 0;
  for (int i = 0; i < n_test; ++i) {
    int best = 0;
    double best_v = test_logits[1LL * i * k] + b[0];
    for (int c = 1; c < k; ++c) {
      const double v = test_logits[1LL * i * k + c] + b[c];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    if (best == class_ids[test[i]]) ++hits;
  }
  return static_cast<double>(hits) / n_test;
}

SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "memory_size") return SweepAxis::memory_size;
  if (name == "sampling_ratio") return SweepAxis::sampling_ratio;
  if (name == "gamma") return SweepAxis::gamma;
  throw ValidationError("sweep: unknown axis '" + name +
                        "' (expected memory_size, sampling_ratio or gamma)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::memory_size: return "memory_size";
    case SweepAxis::sampling_ratio: return "sampling_ratio";
    default: return "gamma";
  }
}

namespace {

// One full pipeline pass: data, protocol split, stage-1, optional stage-2,
// score the held-out side, rank.
double pipeline_auroc(const ExperimentConfig& cfg, std::uint64_t seed) {
  const LabeledImageSet set = gen_synthetic(cfg.data, seed);
  const ProtocolSplit split = make_one_vs_all_split(set, cfg.protocol.normal_class,
                                                    cfg.protocol.gamma, seed,
                                                    cfg.protocol.test_per_side);
  const LabeledImageSet train = take_subset(set, split.train_indices, cfg.protocol.normal_class);
  const LabeledImageSet test = take_subset(set, split.test_indices, cfg.protocol.normal_class);

  Stage1Result stage1 = train_stage1(stage1_config(cfg, seed), train);
  std::vector<ScaleHead> heads;
  if (cfg.mode == ScoreMode::ssad) {
    heads = train_stage2(stage2_config(cfg, seed), train, stage1.encoder, stage1.memories).heads;
  }

  const std::vector<AnomalyScore> scored = detector_score_batch(
      test.images, stage1.encoder, stage1.memories, heads, cfg.lambda, cfg.mode);
  std::vector<double> fused(scored.size());
  std::vector<int> is_anomaly(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    fused[i] = scored[i].fused;
    is_anomaly[i] = test.labels[i] ? 0 : 1;
  }
  return auroc(fused, is_anomaly);
}

ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::memory_size: {
      const long long n = std::llround(value);
      if (!(value > 0.0) || std::abs(value - double(n)) > 1e-9) {
        throw ValidationError("sweep: memory_size grid values must be positive integers");
      }
      cfg.memory_counts.assign(cfg.memory_counts.size(), static_cast<int>(n));
      break;
    }
    case SweepAxis::sampling_ratio: {
      if (!(value > 0.0) || value > 1.0) {
        throw ValidationError("sweep: sampling_ratio grid values must lie in (0, 1]");
      }
      // the flat last scale keeps every position; a ratio below 1 there would
      // floor its single position away
      if (cfg.ratio.size() == 1) {
        cfg.ratio[0] = value;
      } else {
        for (std::size_t s = 0; s + 1 < cfg.ratio.size(); ++s) cfg.ratio[s] = value;
      }
      break;
    }
    case SweepAxis::gamma: {
      if (!(value >= 0.0) || value >= 1.0) {
        throw ValidationError("sweep: gamma grid values must lie in [0, 1)");
      }
      cfg.protocol.gamma = value;
      // gamma = 0 means no anomalous supervision, so that point scores
      // one-class; any positive leak trains the supervised heads
      cfg.mode = value > 0.0 ? ScoreMode::ssad : ScoreMode::one_class;
      break;
    }
  }
  validate(cfg);
  return cfg;
}

}  // namespace

std::vector<EvalReport> sweep(SweepAxis axis, const std::vector<double>& grid,
                              const ExperimentConfig& config) {
  if (grid.empty()) throw ValidationError("sweep: grid must not be empty");
  std::vector<EvalReport> reports;
  reports.reserve(grid.size());
  for (double value : grid) {
    const ExperimentConfig point = apply_axis(config, axis, value);
    EvalReport report;
    report.axis = axis;
    report.value = value;
    report.seeds = config.protocol.seeds;
    for (std::uint64_t seed : report.seeds) {
      report.aurocs.push_back(pipeline_auroc(point, seed));
    }
    const auto n = static_cast<double>(report.aurocs.size());
    report.mean = std::accumulate(report.aurocs.begin(), report.aurocs.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : report.aurocs) ss += (a - report.mean) * (a - report.mean);
    report.std_dev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string report_json(const std::vector<EvalReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EvalReport& r : reports) {
    arr.push_back({{"axis", to_string(r.axis)},
                   {"value", r.value},
                   {"seeds", r.seeds},
                   {"aurocs", r.aurocs},
                   {"mean", r.mean},
                   {"std", r.std_dev}});
  }
  return arr.dump(2);
}

}  // namespace anomem
