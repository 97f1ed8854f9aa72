#include "anomem/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "anomem/config.hpp"
#include "anomem/errors.hpp"
#include "anomem/eval.hpp"
#include "anomem/kernels.hpp"
#include "anomem/train.hpp"

namespace anomem {
namespace {

using nlohmann::json;

void push_entry(Checkpoint& ckpt, std::string name, Shape shape, std::vector<double> data) {
  ckpt.entries.push_back({std::move(name), std::move(shape), std::move(data)});
}

void push_tensor(Checkpoint& ckpt, std::string name, const Tensor& t) {
  ckpt.entries.push_back(
      {std::move(name), t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
}

const CheckpointEntry& need(const Checkpoint& ckpt, const std::string& name) {
  const CheckpointEntry* e = ckpt.find(name);
  if (!e) throw FormatError("checkpoint is missing entry \"" + name + "\"");
  return *e;
}

int entry_int(double v, const std::string& what) {
  const long long r = std::llround(v);
  if (v != double(r)) throw FormatError("checkpoint field " + what + " is not an integer");
  return static_cast<int>(r);
}

}  // namespace

Checkpoint pack_bundle(const ModelBundle& bundle, const Sha256& config_hash) {
  const EncoderSpec& spec = bundle.encoder.spec;
  if (bundle.fuse_lambda.size() != bundle.memories.size()) {
    throw DimensionError("pack_bundle: one fusion weight per memory scale required");
  }

  Checkpoint ckpt;
  ckpt.config_hash = config_hash;

  std::vector<double> enc{double(spec.in_h), double(spec.in_w), double(spec.in_c),
                          double(spec.embed_dim), double(spec.stages.size())};
  for (const StageSpec& st : spec.stages) {
    enc.push_back(double(st.channels));
    enc.push_back(double(st.blocks));
    enc.push_back(double(st.stride));
  }
  const int enc_len = int(enc.size());
  push_entry(ckpt, "spec/encoder", {enc_len}, std::move(enc));

  double beta = 2.0, tol = 1e-4, max_iters = 16, normalize = 0.0;
  if (!bundle.memories.empty()) {
    beta = bundle.memories[0].beta;
    tol = bundle.memories[0].tol;
    max_iters = double(bundle.memories[0].max_iters);
    normalize = bundle.memories[0].normalize_queries ? 1.0 : 0.0;
  }
  push_entry(ckpt, "spec/memory", {4}, {beta, tol, max_iters, normalize});
  push_entry(ckpt, "spec/fuse", {int(bundle.fuse_lambda.size())}, bundle.fuse_lambda);
  push_entry(ckpt, "spec/mode", {1}, {bundle.mode == ScoreMode::ssad ? 1.0 : 0.0});

  for (std::size_t i = 0; i < bundle.encoder.kernels.size(); ++i) {
    push_tensor(ckpt, "enc/k" + std::to_string(i), bundle.encoder.kernels[i]);
    push_tensor(ckpt, "enc/b" + std::to_string(i), bundle.encoder.biases[i]);
  }
  for (std::size_t s = 0; s < bundle.memories.size(); ++s) {
    push_tensor(ckpt, "mem/" + std::to_string(s), bundle.memories[s].weights);
  }
  for (std::size_t s = 0; s < bundle.heads.size(); ++s) {
    const ScaleHead& h = bundle.heads[s];
    const std::string base = "head/" + std::to_string(s) + "/";
    push_entry(ckpt, base + "pool", {2}, {double(h.pool_h), double(h.pool_w)});
    push_tensor(ckpt, base + "w1", h.w1);
    push_tensor(ckpt, base + "b1", h.b1);
    push_tensor(ckpt, base + "w2", h.w2);
    push_tensor(ckpt, base + "b2", h.b2);
  }
  for (std::size_t i = 0; i < bundle.stage1_velocities.size(); ++i) {
    push_entry(ckpt, "vel1/" + std::to_string(i), {int(bundle.stage1_velocities[i].size())},
               bundle.stage1_velocities[i]);
  }
  for (std::size_t i = 0; i < bundle.stage2_velocities.size(); ++i) {
    push_entry(ckpt, "vel2/" + std::to_string(i), {int(bundle.stage2_velocities[i].size())},
               bundle.stage2_velocities[i]);
  }
  if (!bundle.stage1_loss.empty()) {
    push_entry(ckpt, "log/stage1", {int(bundle.stage1_loss.size())}, bundle.stage1_loss);
  }
  if (!bundle.stage2_loss.empty()) {
    push_entry(ckpt, "log/stage2", {int(bundle.stage2_loss.size())}, bundle.stage2_loss);
  }
  return ckpt;
}

ModelBundle unpack_bundle(const Checkpoint& ckpt) {
  ModelBundle bundle;

  const std::vector<double>& enc = need(ckpt, "spec/encoder").data;
  if (enc.size() < 5) throw FormatError("checkpoint entry spec/encoder is too short");
  EncoderSpec spec;
  spec.in_h = entry_int(enc[0], "in_h");
  spec.in_w = entry_int(enc[1], "in_w");
  spec.in_c = entry_int(enc[2], "in_c");
  spec.embed_dim = entry_int(enc[3], "embed_dim");
  const int n_stages = entry_int(enc[4], "stage count");
  if (enc.size() != std::size_t(5 + 3 * n_stages)) {
    throw FormatError("checkpoint entry spec/encoder disagrees with its stage count");
  }
  spec.stages.clear();
  for (int s = 0; s < n_stages; ++s) {
    StageSpec st;
    st.channels = entry_int(enc[5 + 3 * s], "stage channels");
    st.blocks = entry_int(enc[6 + 3 * s], "stage blocks");
    st.stride = entry_int(enc[7 + 3 * s], "stage stride");
    spec.stages.push_back(st);
  }
  validate(spec);
  bundle.encoder.spec = spec;

  int total_blocks = 0;
  for (const StageSpec& st : spec.stages) total_blocks += st.blocks;
  for (int i = 0; i < total_blocks; ++i) {
    const CheckpointEntry& k = need(ckpt, "enc/k" + std::to_string(i));
    const CheckpointEntry& b = need(ckpt, "enc/b" + std::to_string(i));
    bundle.encoder.kernels.emplace_back(k.shape, k.data);
    bundle.encoder.biases.emplace_back(b.shape, b.data);
  }

  const std::vector<double>& mem = need(ckpt, "spec/memory").data;
  if (mem.size() != 4) throw FormatError("checkpoint entry spec/memory must hold 4 values");
  for (int s = 0; s < n_stages; ++s) {
    const CheckpointEntry& w = need(ckpt, "mem/" + std::to_string(s));
    if (w.shape.size() != 2) {
      throw FormatError("checkpoint entry mem/" + std::to_string(s) + " must be rank 2");
    }
    HopfieldMemory m;
    m.weights = Tensor(w.shape, w.data);
    m.beta = mem[0];
    m.tol = mem[1];
    m.max_iters = entry_int(mem[2], "max_iters");
    m.normalize_queries = mem[3] != 0.0;
    bundle.memories.push_back(std::move(m));
  }

  bundle.fuse_lambda = need(ckpt, "spec/fuse").data;
  if (bundle.fuse_lambda.size() != std::size_t(n_stages)) {
    throw FormatError("checkpoint entry spec/fuse disagrees with the scale count");
  }
  const std::vector<double>& mode = need(ckpt, "spec/mode").data;
  if (mode.size() != 1) throw FormatError("checkpoint entry spec/mode must hold 1 value");
  bundle.mode = mode[0] != 0.0 ? ScoreMode::ssad : ScoreMode::one_class;

  for (int s = 0;; ++s) {
    const std::string base = "head/" + std::to_string(s) + "/";
    const CheckpointEntry* w1 = ckpt.find(base + "w1");
    if (!w1) break;
    const std::vector<double>& pool = need(ckpt, base + "pool").data;
    if (pool.size() != 2) throw FormatError("checkpoint entry " + base + "pool must hold 2 values");
    ScaleHead head;
    head.pool_h = entry_int(pool[0], "pool_h");
    head.pool_w = entry_int(pool[1], "pool_w");
    head.w1 = Tensor(w1->shape, w1->data);
    const CheckpointEntry& b1 = need(ckpt, base + "b1");
    const CheckpointEntry& w2 = need(ckpt, base + "w2");
    const CheckpointEntry& b2 = need(ckpt, base + "b2");
    head.b1 = Tensor(b1.shape, b1.data);
    head.w2 = Tensor(w2.shape, w2.data);
    head.b2 = Tensor(b2.shape, b2.data);
    bundle.heads.push_back(std::move(head));
  }

  for (int i = 0; const CheckpointEntry* v = ckpt.find("vel1/" + std::to_string(i)); ++i) {
    bundle.stage1_velocities.push_back(v->data);
  }
  for (int i = 0; const CheckpointEntry* v = ckpt.find("vel2/" + std::to_string(i)); ++i) {
    bundle.stage2_velocities.push_back(v->data);
  }
  if (const CheckpointEntry* l = ckpt.find("log/stage1")) bundle.stage1_loss = l->data;
  if (const CheckpointEntry* l = ckpt.find("log/stage2")) bundle.stage2_loss = l->data;
  return bundle;
}

namespace {

void apply_thread_env() {
  const char* env = std::getenv("ANOMEM_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*env == '\0' || *end != '\0' || n < 1) {
    throw ValidationError("ANOMEM_THREADS must be a positive integer");
  }
  kernels::set_threads(static_cast<int>(n));
}

std::string resolve_path(const std::string& flag, const std::string& from_config,
                         const char* what) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  throw ValidationError(std::string("no ") + what +
                        " path given: pass the flag or set it under config paths");
}

// Data resolution for training commands: explicit file, config path, or a
// fresh synthetic set drawn from the run seed.
LabeledImageSet resolve_data(const ExperimentConfig& cfg, const std::string& in_flag,
                             std::uint64_t seed) {
  LabeledImageSet set;
  if (!in_flag.empty()) {
    set = load_image_set(in_flag);
  } else if (!cfg.paths.data.empty()) {
    set = load_image_set(cfg.paths.data);
  } else {
    return gen_synthetic(cfg.data, seed);
  }
  const Shape& s = set.images.shape();
  if (s[1] != cfg.encoder.in_h || s[2] != cfg.encoder.in_w || s[3] != cfg.encoder.in_c) {
    throw ValidationError("data file holds " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                          "x" + std::to_string(s[3]) + " images but the encoder expects " +
                          std::to_string(cfg.encoder.in_h) + "x" +
                          std::to_string(cfg.encoder.in_w) + "x" +
                          std::to_string(cfg.encoder.in_c));
  }
  return set;
}

LabeledImageSet training_subset(const ExperimentConfig& cfg, const LabeledImageSet& full,
                                std::uint64_t seed) {
  const ProtocolSplit split = make_one_vs_all_split(full, cfg.protocol.normal_class,
                                                    cfg.protocol.gamma, seed,
                                                    cfg.protocol.test_per_side);
  return take_subset(full, split.train_indices, cfg.protocol.normal_class);
}

void write_text(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open \"" + out_path + "\" for writing");
  out << text;
  if (!out) throw Error("failed while writing \"" + out_path + "\"");
}

int cmd_gen_data(const std::string& config_path, const std::string& out_flag,
                 const std::string& test_flag, std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = load_config_file(config_path);
  const std::uint64_t run_seed = seed_given ? seed : cfg.protocol.seeds.front();
  LabeledImageSet set = gen_synthetic(cfg.data, run_seed);
  // label the pool one-vs-all so score/eval can run on the file as is
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    set.labels[i] = set.class_ids[i] == cfg.protocol.normal_class ? 1 : 0;
  }
  const std::string out = resolve_path(out_flag, cfg.paths.data, "output data");
  save_image_set(out, set, config_hash(cfg));
  std::cerr << "wrote " << out << ": " << set.count() << " images " << cfg.data.height << "x"
            << cfg.data.width << "x" << cfg.data.channels << "\n";
  if (!test_flag.empty()) {
    // the protocol's held-out side; training with the same seed never sees it
    const ProtocolSplit split = make_one_vs_all_split(set, cfg.protocol.normal_class,
                                                      cfg.protocol.gamma, run_seed,
                                                      cfg.protocol.test_per_side);
    const LabeledImageSet test = take_subset(set, split.test_indices, cfg.protocol.normal_class);
    save_image_set(test_flag, test, config_hash(cfg));
    std::cerr << "wrote " << test_flag << ": " << test.count() << " held-out images\n";
  }
  return 0;
}

int cmd_train_stage1(const std::string& config_path, const std::string& in_flag,
                     const std::string& out_flag, std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = load_config_file(config_path);
  const std::uint64_t run_seed = seed_given ? seed : cfg.protocol.seeds.front();
  const LabeledImageSet full = resolve_data(cfg, in_flag, run_seed);
  const LabeledImageSet train = training_subset(cfg, full, run_seed);

  const Stage1Result result = train_stage1(stage1_config(cfg, run_seed), train, &std::cerr);

  ModelBundle bundle;
  bundle.encoder = result.encoder;
  bundle.memories = result.memories;
  bundle.fuse_lambda = cfg.lambda;
  bundle.mode = cfg.mode;
  bundle.stage1_velocities = result.velocities;
  bundle.stage1_loss = result.epoch_mean_loss;

  const std::string out = resolve_path(out_flag, cfg.paths.checkpoint, "checkpoint");
  checkpoint_save(out, pack_bundle(bundle, config_hash(cfg)));
  std::cerr << "saved " << out << "\n";
  return 0;
}

int cmd_train_stage2(const std::string& config_path, const std::string& ckpt_flag,
                     const std::string& in_flag, const std::string& out_flag,
                     std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = load_config_file(config_path);
  const std::uint64_t run_seed = seed_given ? seed : cfg.protocol.seeds.front();
  const std::string ckpt_path = resolve_path(ckpt_flag, cfg.paths.checkpoint, "input checkpoint");
  const Sha256 expected = config_hash(cfg);
  ModelBundle bundle = unpack_bundle(checkpoint_load(ckpt_path, &expected));

  const LabeledImageSet full = resolve_data(cfg, in_flag, run_seed);
  const LabeledImageSet train = training_subset(cfg, full, run_seed);

  const Stage2Result result =
      train_stage2(stage2_config(cfg, run_seed), train, bundle.encoder, bundle.memories,
                   &std::cerr);
  bundle.heads = result.heads;
  bundle.stage2_velocities = result.velocities;
  bundle.stage2_loss = result.epoch_mean_loss;
  bundle.mode = cfg.mode;

  const std::string out = resolve_path(out_flag, cfg.paths.checkpoint, "checkpoint");
  checkpoint_save(out, pack_bundle(bundle, expected));
  std::cerr << "saved " << out << "\n";
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& in_path,
              const std::string& mode_flag, const std::string& out_flag) {
  const ModelBundle bundle = unpack_bundle(checkpoint_load(ckpt_path));
  const ScoreMode mode = mode_flag.empty() ? bundle.mode : score_mode_from_name(mode_flag);
  if (mode == ScoreMode::ssad && bundle.heads.empty()) {
    throw ValidationError(
        "checkpoint has no trained heads; run train-stage2 first or score one-class");
  }
  const LabeledImageSet set = load_image_set(in_path);
  const std::vector<AnomalyScore> scored = detector_score_batch(
      set.images, bundle.encoder, bundle.memories, bundle.heads, bundle.fuse_lambda, mode);

  std::ostringstream lines;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    json record{{"id", i},
                {"per_scale", scored[i].per_scale},
                {"fused", scored[i].fused},
                {"mode", to_string(scored[i].mode)}};
    lines << record.dump() << "\n";
  }
  write_text(out_flag, lines.str());
  return 0;
}

int cmd_eval(const std::string& scores_path, const std::string& labels_path) {
  std::ifstream in(scores_path, std::ios::binary);
  if (!in) throw ValidationError("cannot read scores file \"" + scores_path + "\"");
  const LabeledImageSet set = load_image_set(labels_path);
  const std::size_t n = std::size_t(set.count());

  std::vector<double> fused(n, 0.0);
  std::vector<char> seen(n, 0);
  std::size_t records = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("scores file: bad JSON record: " + std::string(e.what()));
    }
    if (!record.is_object() || !record.contains("id") || !record.contains("fused")) {
      throw FormatError("scores file: each record needs \"id\" and \"fused\"");
    }
    const std::size_t id = record["id"].get<std::size_t>();
    if (id >= n) {
      throw ValidationError("scores file: id " + std::to_string(id) +
                            " is outside the labeled set of " + std::to_string(n));
    }
    if (seen[id]) throw ValidationError("scores file: duplicate id " + std::to_string(id));
    seen[id] = 1;
    fused[id] = record["fused"].get<double>();
    ++records;
  }
  if (records != n) {
    throw ValidationError("scores file holds " + std::to_string(records) +
                          " records but the labeled set has " + std::to_string(n));
  }

  std::vector<int> is_anomaly(n);
  for (std::size_t i = 0; i < n; ++i) is_anomaly[i] = set.labels[i] ? 0 : 1;
  const double value = auroc(fused, is_anomaly);
  json out{{"auroc", value}, {"count", n}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis_name,
              std::vector<double> grid, const std::string& out_flag, std::uint64_t seed,
              bool seed_given) {
  ExperimentConfig cfg = load_config_file(config_path);
  if (seed_given) cfg.protocol.seeds = {seed};
  const SweepAxis axis = sweep_axis_from_name(axis_name);
  const std::vector<EvalReport> reports = sweep(axis, grid, cfg);
  const std::string text = report_json(reports) + "\n";
  if (!out_flag.empty()) {
    write_text(out_flag, text);
  } else if (!cfg.paths.report.empty()) {
    write_text(cfg.paths.report, text);
  } else {
    std::cout << text;
  }
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  const ModelBundle bundle = unpack_bundle(checkpoint_load(ckpt_path));
  for (std::size_t s = 0; s < bundle.memories.size(); ++s) {
    const HopfieldMemory& m = bundle.memories[s];
    const std::vector<double> norms = prototype_norms(m.weights);
    double lo = norms[0], hi = norms[0], mean = 0.0;
    for (double v : norms) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      mean += v / double(norms.size());
    }
    std::cout << "scale " << (s + 1) << ": N_Mem=" << m.count() << " beta=" << m.beta
              << " min_pairwise_distance=" << min_prototype_distance(m.weights) << "\n"
              << "  prototype norms: min=" << lo << " mean=" << mean << " max=" << hi << "\n";
  }
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"memory-augmented anomaly detection pipeline"};
  app.require_subcommand(1);

  std::string config_path, in_path, out_path, ckpt_path, scores_path, labels_path;
  std::string mode_name, axis_name, test_path;
  std::vector<double> grid;
  std::uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic labeled image set");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--out", out_path, "output image-set file");
  gen->add_option("--test", test_path, "also write the protocol's held-out side here");
  CLI::Option* gen_seed = gen->add_option("--seed", seed, "generation seed");

  CLI::App* ts1 = app.add_subcommand("train-stage1", "train encoder and memories");
  ts1->add_option("--config", config_path, "experiment config JSON")->required();
  ts1->add_option("--in", in_path, "training image-set file");
  ts1->add_option("--out", out_path, "output checkpoint file");
  CLI::Option* ts1_seed = ts1->add_option("--seed", seed, "run seed");

  CLI::App* ts2 = app.add_subcommand("train-stage2", "train per-scale scoring heads");
  ts2->add_option("--config", config_path, "experiment config JSON")->required();
  ts2->add_option("--ckpt", ckpt_path, "stage-1 checkpoint");
  ts2->add_option("--in", in_path, "training image-set file");
  ts2->add_option("--out", out_path, "output checkpoint file");
  CLI::Option* ts2_seed = ts2->add_option("--seed", seed, "run seed");

  CLI::App* score = app.add_subcommand("score", "score an image set against a checkpoint");
  score->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  score->add_option("--in", in_path, "image-set file to score")->required();
  score->add_option("--mode", mode_name, "one-class or ssad (default: as trained)");
  score->add_option("--out", out_path, "write JSON records here instead of stdout");

  CLI::App* ev = app.add_subcommand("eval", "rank stored scores against stored labels");
  ev->add_option("--scores", scores_path, "score records from the score command")->required();
  ev->add_option("--labels", labels_path, "image-set file holding the labels")->required();

  CLI::App* sw = app.add_subcommand("sweep", "rerun the pipeline across a parameter grid");
  sw->add_option("--config", config_path, "experiment config JSON")->required();
  sw->add_option("--axis", axis_name, "memory_size, sampling_ratio or gamma")->required();
  sw->add_option("--grid", grid, "comma-separated grid values")
      ->required()
      ->delimiter(',');
  sw->add_option("--out", out_path, "report file (default: config paths.report or stdout)");
  CLI::Option* sw_seed = sw->add_option("--seed", seed, "replace the config seed list");

  CLI::App* insp = app.add_subcommand("inspect-memory", "print prototype statistics");
  insp->add_option("--ckpt", ckpt_path, "model checkpoint")->required();

  try {
    apply_thread_env();
    app.parse(argc, argv);
    if (gen->parsed()) {
      return cmd_gen_data(config_path, out_path, test_path, seed, gen_seed->count() > 0);
    }
    if (ts1->parsed()) {
      return cmd_train_stage1(config_path, in_path, out_path, seed, ts1_seed->count() > 0);
    }
    if (ts2->parsed()) {
      return cmd_train_stage2(config_path, ckpt_path, in_path, out_path, seed,
                              ts2_seed->count() > 0);
    }
    if (score->parsed()) return cmd_score(ckpt_path, in_path, mode_name, out_path);
    if (ev->parsed()) return cmd_eval(scores_path, labels_path);
    if (sw->parsed()) {
      return cmd_sweep(config_path, axis_name, grid, out_path, seed, sw_seed->count() > 0);
    }
    if (insp->parsed()) return cmd_inspect(ckpt_path);
    std::cerr << app.help();
    return 1;
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace anomem
