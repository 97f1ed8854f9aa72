#include "anomem/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "anomem/optim.hpp"
#include "anomem/rng.hpp"

namespace anomem {

namespace {

Tensor image_row(const Tensor& images, int i) {
  const Shape& s = images.shape();
  const long long per = 1LL * s[1] * s[2] * s[3];
  auto v = images.values();
  return Tensor({s[1], s[2], s[3]},
                std::vector<double>(v.begin() + i * per, v.begin() + (i + 1) * per));
}

std::vector<int> epoch_order(int n, std::uint64_t seed, std::uint64_t stage, std::uint64_t epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto eng = rng::engine(seed, rng::Stream::shuffle, {stage, epoch});
  std::shuffle(order.begin(), order.end(), eng);
  return order;
}

Tensor gather_batch_rows(const Tensor& t, const std::vector<int>& order, int begin, int count) {
  Shape shape = t.shape();
  const long long per = shape_size(shape) / shape[0];
  shape[0] = count;
  std::vector<double> data(count * per);
  auto v = t.values();
  for (int i = 0; i < count; ++i) {
    std::copy_n(v.begin() + order[begin + i] * per, per, data.begin() + 1LL * i * per);
  }
  return Tensor(std::move(shape), std::move(data));
}

void emit_epoch(std::ostream* telemetry, int stage, int epoch, double mean_loss, double lr) {
  if (!telemetry) return;
  (*telemetry) << "{\"stage\":" << stage << ",\"epoch\":" << epoch << ",\"mean_loss\":"
               << mean_loss << ",\"lr\":" << lr << "}\n";
  telemetry->flush();
}

}  // namespace

Stage1Result train_stage1(const Stage1Config& cfg, const LabeledImageSet& train_set,
                          std::ostream* telemetry,
                          std::vector<HopfieldMemory> initial_memories) {
  validate(cfg.encoder);
  validate(cfg.augment);
  anomem::validate(train_set);
  const std::size_t n_scales = cfg.encoder.stages.size();
  if (cfg.memory_counts.size() != n_scales) {
    throw ValidationError("stage 1: need one memory size per scale");
  }
  if (cfg.scale_weights.lambda.size() != n_scales ||
      cfg.scale_weights.ratio.size() != n_scales) {
    throw ValidationError("stage 1: scale weights must cover every scale");
  }
  if (cfg.epochs < 0) throw ValidationError("stage 1: epochs must be non-negative");
  if (cfg.batch < 2) throw ValidationError("stage 1: contrastive batches need at least 2 rows");
  const int n = train_set.count();
  if (n < cfg.batch) {
    throw ValidationError("stage 1: dataset smaller than one batch");
  }

  Stage1Result result;
  result.encoder = encoder_init(cfg.encoder, cfg.seed);
  if (!initial_memories.empty()) {
    if (initial_memories.size() != n_scales) {
      throw ValidationError("stage 1: initial memory list does not cover every scale");
    }
    result.memories = std::move(initial_memories);
    for (std::size_t s = 0; s < n_scales; ++s) {
      const int want_dim = cfg.encoder.stages[s].channels;
      if (result.memories[s].dim() != want_dim) {
        throw ValidationError("stage 1: initial memory " + std::to_string(s + 1) +
                              " dim does not match its scale");
      }
    }
  } else {
    for (std::size_t s = 0; s < n_scales; ++s) {
      result.memories.push_back(make_memory(cfg.encoder.stages[s].channels,
                                            cfg.memory_counts[s], cfg.beta, cfg.tol,
                                            cfg.max_iters, cfg.normalize_queries, cfg.seed,
                                            s + 1));
    }
  }

  std::vector<Tensor> params;
  for (Tensor* p : result.encoder.parameters()) params.push_back(*p);
  for (HopfieldMemory& mem : result.memories) params.push_back(mem.weights);
  SgdNesterov opt(params, cfg.momentum, cfg.weight_decay);

  const int steps_per_epoch = n / cfg.batch;
  const long long total_steps = 1LL * cfg.epochs * steps_per_epoch;
  if (cfg.epochs == 0) {
    for (std::size_t i = 0; i < opt.size(); ++i) result.velocities.push_back(opt.velocity(i));
    return result;
  }
  const Schedule schedule{cfg.lr_max, cfg.lr_min, total_steps};

  AugmentPolicy policy = cfg.augment;
  policy.seed = rng::derive(cfg.seed, {0xA46});

  MultiScaleLossCfg loss_cfg = cfg.loss;
  std::vector<int> batch_labels(cfg.batch);
  if (!cfg.use_memory) loss_cfg.lambda_v = 0.0;  // no retrieval, nothing to spread

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(n, cfg.seed, 1, epoch);
    double loss_sum = 0.0;
    double lr = cfg.lr_max;
    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<Tensor> views_a, views_b;
      views_a.reserve(cfg.batch);
      views_b.reserve(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i) {
        const int idx = order[b * cfg.batch + i];
        const Tensor img = image_row(train_set.images, idx);
        const std::uint64_t draw = 2ull * (1ull * epoch * n + idx);
        views_a.push_back(sample_view(policy, img, draw));
        views_b.push_back(sample_view(policy, img, draw + 1));
        batch_labels[i] = cfg.use_memory ? train_set.labels[order[b * cfg.batch + i]] : 0;
      }
      Tensor batch_a = stack_images(views_a);
      Tensor batch_b = stack_images(views_b);

      lr = cosine_lr(schedule, step);
      {
        Tape tape;
        std::vector<Tensor> feats_a = encoder_forward(result.encoder, batch_a);
        std::vector<Tensor> feats_b = encoder_forward(result.encoder, batch_b);
        Tensor loss = loss_com_ms(feats_a, feats_b, batch_labels, cfg.scale_weights,
                                  result.memories, loss_cfg,
                                  rng::derive(cfg.seed, {0x905, static_cast<std::uint64_t>(epoch),
                                                         static_cast<std::uint64_t>(b)}));
        tape.backward(loss);
        loss_sum += loss.value();
      }
      opt.step(lr);
      opt.zero_grads();
      ++step;
    }
    emit_epoch(telemetry, 1, epoch, loss_sum / steps_per_epoch, lr);
    result.epoch_mean_loss.push_back(loss_sum / steps_per_epoch);
  }

  for (std::size_t i = 0; i < opt.size(); ++i) result.velocities.push_back(opt.velocity(i));
  return result;
}

Stage2Result train_stage2(const Stage2Config& cfg, const LabeledImageSet& train_set,
                          const EncoderState& encoder,
                          const std::vector<HopfieldMemory>& memories,
                          std::ostream* telemetry) {
  Stage2Result result;
  if (cfg.mode == ScoreMode::one_class) return result;  // Frobenius scoring needs no heads

  anomem::validate(train_set);
  const std::size_t n_scales = encoder.spec.stages.size();
  if (memories.size() != n_scales) {
    throw ValidationError("stage 2: need one memory per scale");
  }
  if (cfg.epochs < 0) throw ValidationError("stage 2: epochs must be non-negative");
  if (cfg.batch < 1) throw ValidationError("stage 2: batch must be positive");
  const int n = train_set.count();
  if (n < cfg.batch) throw ValidationError("stage 2: dataset smaller than one batch");

  const bool has_anomaly =
      std::any_of(train_set.labels.begin(), train_set.labels.end(), [](int y) { return y == 0; });
  if (!has_anomaly) {
    throw ValidationError(
        "stage 2: ssad training needs anomalies in the training set (gamma > 0); "
        "score with the one-class mode instead");
  }

  // the encoder and memories stay frozen, so all deviation maps can be built
  // once, outside any tape
  std::vector<Tensor> deltas(n_scales);
  {
    std::vector<std::vector<double>> buf(n_scales);
    std::vector<Shape> shapes(n_scales);
    const int chunk = 64;
    for (int at = 0; at < n; at += chunk) {
      const int take = std::min(chunk, n - at);
      std::vector<int> idx(take);
      std::iota(idx.begin(), idx.end(), at);
      Tensor images = gather_batch_rows(train_set.images, idx, 0, take);
      std::vector<Tensor> feats = encoder_forward(encoder, images);
      for (std::size_t s = 0; s < n_scales; ++s) {
        DeviationMap dev = deviation_map(memories[s], feats[s], static_cast<int>(s) + 1);
        auto v = dev.delta.values();
        buf[s].insert(buf[s].end(), v.begin(), v.end());
        shapes[s] = dev.delta.shape();
      }
    }
    for (std::size_t s = 0; s < n_scales; ++s) {
      shapes[s][0] = n;
      deltas[s] = Tensor(shapes[s], std::move(buf[s]));
    }
  }

  for (std::size_t s = 0; s < n_scales; ++s) {
    const bool final_scale = s + 1 == n_scales;
    const int channels = final_scale ? encoder.spec.embed_dim : encoder.spec.stages[s].channels;
    const int pool = final_scale ? 1 : 2;
    result.heads.push_back(make_scale_head(channels, pool, pool, cfg.hidden, cfg.seed, s + 1));
  }

  std::vector<Tensor> params;
  for (ScaleHead& head : result.heads) {
    for (Tensor* p : head.parameters()) params.push_back(*p);
  }
  SgdNesterov opt(params, cfg.momentum, cfg.weight_decay);

  const int steps_per_epoch = n / cfg.batch;
  const Schedule schedule{cfg.lr_max, cfg.lr_min, 1LL * cfg.epochs * steps_per_epoch};
  std::vector<int> batch_labels(cfg.batch);

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(n, cfg.seed, 2, epoch);
    double loss_sum = 0.0;
    double lr = cfg.lr_max;
    for (int b = 0; b < steps_per_epoch; ++b) {
      for (int i = 0; i < cfg.batch; ++i) batch_labels[i] = train_set.labels[order[b * cfg.batch + i]];
      lr = cosine_lr(schedule, step);
      {
        Tape tape;
        std::vector<Tensor> scores;
        scores.reserve(n_scales);
        for (std::size_t s = 0; s < n_scales; ++s) {
          Tensor delta_batch = gather_batch_rows(deltas[s], order, b * cfg.batch, cfg.batch);
          scores.push_back(head_forward(result.heads[s], delta_batch));
        }
        Tensor loss = loss_sup(scores, batch_labels, cfg.margin);
        tape.backward(loss);
        loss_sum += loss.value();
      }
      opt.step(lr);
      opt.zero_grads();
      ++step;
    }
    emit_epoch(telemetry, 2, epoch, loss_sum / steps_per_epoch, lr);
    result.epoch_mean_loss.push_back(loss_sum / steps_per_epoch);
  }

  for (std::size_t i = 0; i < opt.size(); ++i) result.velocities.push_back(opt.velocity(i));
  return result;
}

}  // namespace anomem
