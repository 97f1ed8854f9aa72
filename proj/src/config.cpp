#include "anomem/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "anomem/errors.hpp"

namespace anomem {
namespace {

using nlohmann::json;

std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Wraps one JSON object, remembers which keys were read, and reports the
// leftovers by full path. Every section must call done() after reading.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ValidationError("config: " + (path_.empty() ? std::string("top level") : path_) +
                            " must be a JSON object");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  double num(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ValidationError("config: " + at(key) + " must be a number");
    return v->get<double>();
  }

  int integer(const std::string& key, int fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) {
      throw ValidationError("config: " + at(key) + " must be an integer");
    }
    return v->get<int>();
  }

  bool flag(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ValidationError("config: " + at(key) + " must be a boolean");
    return v->get<bool>();
  }

  std::string text(const std::string& key, std::string fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ValidationError("config: " + at(key) + " must be a string");
    return v->get<std::string>();
  }

  void done() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ValidationError("config: unknown key \"" + join(path_, it.key()) + "\"");
      }
    }
  }

  std::string at(const std::string& key) const { return join(path_, key); }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<double> number_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError("config: " + path + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) {
      throw ValidationError("config: " + path + "[" + std::to_string(i) + "] must be a number");
    }
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<int> int_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError("config: " + path + " must be an array of integers");
  std::vector<int> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer()) {
      throw ValidationError("config: " + path + "[" + std::to_string(i) + "] must be an integer");
    }
    out.push_back(v[i].get<int>());
  }
  return out;
}

std::vector<std::uint64_t> seed_list(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) {
    throw ValidationError("config: " + path + " must be a non-empty array of seeds");
  }
  std::vector<std::uint64_t> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_unsigned()) {
      throw ValidationError("config: " + path + "[" + std::to_string(i) +
                            "] must be a non-negative integer");
    }
    out.push_back(v[i].get<std::uint64_t>());
  }
  return out;
}

void parse_encoder(const json& node, EncoderSpec& enc) {
  Section s(node, "encoder");
  enc.in_h = s.integer("in_h", enc.in_h);
  enc.in_w = s.integer("in_w", enc.in_w);
  enc.in_c = s.integer("in_c", enc.in_c);
  enc.embed_dim = s.integer("embed_dim", enc.embed_dim);
  if (const json* st = s.find("stages")) {
    if (!st->is_array() || st->empty()) {
      throw ValidationError("config: encoder.stages must be a non-empty array");
    }
    enc.stages.clear();
    for (std::size_t i = 0; i < st->size(); ++i) {
      const std::string path = "encoder.stages[" + std::to_string(i) + "]";
      Section stage((*st)[i], path);
      StageSpec sp;
      const json* ch = stage.find("channels");
      if (!ch) throw ValidationError("config: " + path + ".channels is required");
      if (!ch->is_number_integer()) {
        throw ValidationError("config: " + path + ".channels must be an integer");
      }
      sp.channels = ch->get<int>();
      sp.blocks = stage.integer("blocks", 1);
      sp.stride = stage.integer("stride", 2);
      stage.done();
      enc.stages.push_back(sp);
    }
  }
  s.done();
}

void parse_memory(const json& node, ExperimentConfig& cfg) {
  Section s(node, "memory");
  if (const json* v = s.find("counts")) cfg.memory_counts = int_list(*v, "memory.counts");
  cfg.beta = s.num("beta", cfg.beta);
  cfg.tol = s.num("tol", cfg.tol);
  cfg.max_iters = s.integer("max_iters", cfg.max_iters);
  s.done();
}

void parse_loss(const json& node, ExperimentConfig& cfg) {
  Section s(node, "loss");
  cfg.tau = s.num("tau", cfg.tau);
  cfg.lambda_v = s.num("lambda_v", cfg.lambda_v);
  cfg.margin = s.num("margin", cfg.margin);
  if (const json* v = s.find("lambda")) cfg.lambda = number_list(*v, "loss.lambda");
  if (const json* v = s.find("ratio")) cfg.ratio = number_list(*v, "loss.ratio");
  s.done();
}

void parse_stage1_optim(const json& node, Stage1Optim& opt) {
  Section s(node, "optimizer");
  opt.lr_max = s.num("lr_max", opt.lr_max);
  opt.lr_min = s.num("lr_min", opt.lr_min);
  opt.momentum = s.num("momentum", opt.momentum);
  opt.weight_decay = s.num("weight_decay", opt.weight_decay);
  opt.epochs = s.integer("epochs", opt.epochs);
  opt.batch = s.integer("batch", opt.batch);
  s.done();
}

void parse_stage2_optim(const json& node, Stage2Optim& opt) {
  Section s(node, "stage2");
  opt.lr_max = s.num("lr_max", opt.lr_max);
  opt.lr_min = s.num("lr_min", opt.lr_min);
  opt.momentum = s.num("momentum", opt.momentum);
  opt.weight_decay = s.num("weight_decay", opt.weight_decay);
  opt.epochs = s.integer("epochs", opt.epochs);
  opt.batch = s.integer("batch", opt.batch);
  opt.hidden = s.integer("hidden", opt.hidden);
  s.done();
}

void parse_augment(const json& node, AugmentPolicy& aug) {
  Section s(node, "augment");
  aug.crop_scale_min = s.num("crop_scale_min", aug.crop_scale_min);
  aug.crop_scale_max = s.num("crop_scale_max", aug.crop_scale_max);
  aug.flip_prob = s.num("flip_prob", aug.flip_prob);
  aug.brightness = s.num("brightness", aug.brightness);
  aug.contrast = s.num("contrast", aug.contrast);
  aug.saturation = s.num("saturation", aug.saturation);
  aug.color_prob = s.num("color_prob", aug.color_prob);
  aug.blur_sigma_min = s.num("blur_sigma_min", aug.blur_sigma_min);
  aug.blur_sigma_max = s.num("blur_sigma_max", aug.blur_sigma_max);
  aug.blur_prob = s.num("blur_prob", aug.blur_prob);
  aug.noise_std = s.num("noise_std", aug.noise_std);
  aug.noise_prob = s.num("noise_prob", aug.noise_prob);
  s.done();
}

void parse_protocol(const json& node, ProtocolConfig& proto) {
  Section s(node, "protocol");
  proto.normal_class = s.integer("normal_class", proto.normal_class);
  proto.gamma = s.num("gamma", proto.gamma);
  if (const json* v = s.find("seeds")) proto.seeds = seed_list(*v, "protocol.seeds");
  proto.test_per_side = s.integer("test_per_side", proto.test_per_side);
  s.done();
}

void parse_data(const json& node, SyntheticSpec& data) {
  Section s(node, "data");
  data.classes = s.integer("classes", data.classes);
  data.per_class = s.integer("per_class", data.per_class);
  data.height = s.integer("height", data.height);
  data.width = s.integer("width", data.width);
  data.channels = s.integer("channels", data.channels);
  s.done();
}

void parse_paths(const json& node, PathsConfig& paths) {
  Section s(node, "paths");
  paths.data = s.text("data", paths.data);
  paths.checkpoint = s.text("checkpoint", paths.checkpoint);
  paths.scores = s.text("scores", paths.scores);
  paths.report = s.text("report", paths.report);
  s.done();
}

void parse_flags(const json& node, ExperimentConfig& cfg) {
  Section s(node, "flags");
  if (const json* v = s.find("variance_mode")) {
    if (!v->is_string()) throw ValidationError("config: flags.variance_mode must be a string");
    cfg.variance_mode = variance_mode_from_name(v->get<std::string>());
  }
  cfg.normalize_before_memory = s.flag("normalize_before_memory", cfg.normalize_before_memory);
  cfg.use_projection_head = s.flag("use_projection_head", cfg.use_projection_head);
  cfg.use_memory = s.flag("use_memory", cfg.use_memory);
  s.done();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("config: " + what);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Desk-scale benchmark defaults: 32x32x3 inputs, an 8x8x32 intermediate
  // scale plus the flat embedding, modest memories.
  encoder.in_h = 32;
  encoder.in_w = 32;
  encoder.in_c = 3;
  encoder.stages = {{32, 2, 2}, {64, 3, 2}};
  encoder.embed_dim = 64;
  memory_counts = {64, 64};
  lambda = {1.0, 2.0};
  ratio = {0.3, 1.0};
}

ScoreMode score_mode_from_name(const std::string& name) {
  if (name == "one-class") return ScoreMode::one_class;
  if (name == "ssad") return ScoreMode::ssad;
  throw ValidationError("mode must be \"one-class\" or \"ssad\", got \"" + name + "\"");
}

VarianceMode variance_mode_from_name(const std::string& name) {
  if (name == "per_sample") return VarianceMode::per_sample;
  if (name == "batch") return VarianceMode::batch;
  throw ValidationError("variance_mode must be \"per_sample\" or \"batch\", got \"" + name +
                        "\"");
}

std::string to_string(VarianceMode mode) {
  return mode == VarianceMode::per_sample ? "per_sample" : "batch";
}

void validate(const ExperimentConfig& cfg) {
  EncoderSpec enc = cfg.encoder;
  enc.use_projection_head = cfg.use_projection_head;
  validate(enc);

  const std::size_t scales = cfg.encoder.stages.size();
  require(cfg.memory_counts.size() == scales,
          "memory.counts needs one entry per scale (" + std::to_string(scales) + ")");
  for (int n : cfg.memory_counts) require(n >= 1, "memory.counts entries must be positive");
  require(std::isfinite(cfg.beta) && cfg.beta > 0.0, "memory.beta must be positive");
  require(std::isfinite(cfg.tol) && cfg.tol >= 0.0, "memory.tol must be non-negative");
  require(cfg.max_iters >= 1, "memory.max_iters must be at least 1");

  require(std::isfinite(cfg.tau) && cfg.tau > 0.0, "loss.tau must be positive");
  require(std::isfinite(cfg.lambda_v) && cfg.lambda_v >= 0.0, "loss.lambda_v must be non-negative");
  require(std::isfinite(cfg.margin) && cfg.margin > 0.0, "loss.margin must be positive");
  require(cfg.lambda.size() == scales,
          "loss.lambda needs one entry per scale (" + std::to_string(scales) + ")");
  for (double w : cfg.lambda) {
    require(std::isfinite(w) && w > 0.0, "loss.lambda entries must be positive");
  }
  require(cfg.ratio.size() == scales,
          "loss.ratio needs one entry per scale (" + std::to_string(scales) + ")");
  for (double r : cfg.ratio) {
    require(std::isfinite(r) && r > 0.0 && r <= 1.0, "loss.ratio entries must lie in (0, 1]");
  }

  const auto check_optim = [](double lr_max, double lr_min, double momentum, double wd,
                              int epochs, int batch, const std::string& block) {
    require(std::isfinite(lr_min) && lr_min >= 0.0, block + ".lr_min must be non-negative");
    require(std::isfinite(lr_max) && lr_max >= lr_min, block + ".lr_max must be >= lr_min");
    require(std::isfinite(momentum) && momentum >= 0.0 && momentum < 1.0,
            block + ".momentum must lie in [0, 1)");
    require(std::isfinite(wd) && wd >= 0.0, block + ".weight_decay must be non-negative");
    require(epochs >= 0, block + ".epochs must be non-negative");
    require(batch >= 2, block + ".batch must be at least 2");
  };
  check_optim(cfg.optimizer.lr_max, cfg.optimizer.lr_min, cfg.optimizer.momentum,
              cfg.optimizer.weight_decay, cfg.optimizer.epochs, cfg.optimizer.batch, "optimizer");
  check_optim(cfg.stage2.lr_max, cfg.stage2.lr_min, cfg.stage2.momentum,
              cfg.stage2.weight_decay, cfg.stage2.epochs, cfg.stage2.batch, "stage2");
  require(cfg.stage2.hidden >= 1, "stage2.hidden must be positive");

  validate(cfg.augment);

  require(cfg.data.classes >= 2, "data.classes must be at least 2");
  require(cfg.data.per_class >= 1, "data.per_class must be positive");
  require(cfg.data.height >= 4 && cfg.data.width >= 4, "data images must be at least 4x4");
  require(cfg.data.channels >= 1 && cfg.data.channels <= 8,
          "data.channels must lie in [1, 8]");
  require(cfg.data.height == cfg.encoder.in_h && cfg.data.width == cfg.encoder.in_w &&
              cfg.data.channels == cfg.encoder.in_c,
          "data dimensions must match the encoder input");

  require(cfg.protocol.normal_class >= 0 && cfg.protocol.normal_class < cfg.data.classes,
          "protocol.normal_class must name one of the data classes");
  require(std::isfinite(cfg.protocol.gamma) && cfg.protocol.gamma >= 0.0 &&
              cfg.protocol.gamma < 1.0,
          "protocol.gamma must lie in [0, 1)");
  require(!cfg.protocol.seeds.empty(), "protocol.seeds must not be empty");
  require(cfg.protocol.test_per_side >= 1, "protocol.test_per_side must be positive");
}

ExperimentConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  Section top(root, "");
  if (const json* v = top.find("encoder")) parse_encoder(*v, cfg.encoder);

  // Per-scale defaults track however many stages the encoder ended up with:
  // weight doubles per scale, every spatial scale subsamples except the last.
  const std::size_t scales = cfg.encoder.stages.size();
  if (cfg.memory_counts.size() != scales) cfg.memory_counts.assign(scales, 64);
  if (cfg.lambda.size() != scales) {
    cfg.lambda.resize(scales);
    for (std::size_t s = 0; s < scales; ++s) cfg.lambda[s] = std::pow(2.0, double(s));
  }
  if (cfg.ratio.size() != scales) {
    cfg.ratio.assign(scales, 0.3);
    cfg.ratio.back() = 1.0;
  }

  if (const json* v = top.find("memory")) parse_memory(*v, cfg);
  if (const json* v = top.find("loss")) parse_loss(*v, cfg);
  if (const json* v = top.find("optimizer")) parse_stage1_optim(*v, cfg.optimizer);
  if (const json* v = top.find("stage2")) parse_stage2_optim(*v, cfg.stage2);
  if (const json* v = top.find("augment")) parse_augment(*v, cfg.augment);
  if (const json* v = top.find("protocol")) parse_protocol(*v, cfg.protocol);
  if (const json* v = top.find("data")) parse_data(*v, cfg.data);
  if (const json* v = top.find("paths")) parse_paths(*v, cfg.paths);
  cfg.mode = score_mode_from_name(top.text("mode", to_string(cfg.mode)));
  if (const json* v = top.find("flags")) parse_flags(*v, cfg);
  top.done();

  validate(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  json stages = json::array();
  for (const StageSpec& st : cfg.encoder.stages) {
    stages.push_back({{"channels", st.channels}, {"blocks", st.blocks}, {"stride", st.stride}});
  }
  j["encoder"] = {{"in_h", cfg.encoder.in_h},
                  {"in_w", cfg.encoder.in_w},
                  {"in_c", cfg.encoder.in_c},
                  {"stages", std::move(stages)},
                  {"embed_dim", cfg.encoder.embed_dim}};
  j["memory"] = {{"counts", cfg.memory_counts},
                 {"beta", cfg.beta},
                 {"tol", cfg.tol},
                 {"max_iters", cfg.max_iters}};
  j["loss"] = {{"tau", cfg.tau},
               {"lambda_v", cfg.lambda_v},
               {"margin", cfg.margin},
               {"lambda", cfg.lambda},
               {"ratio", cfg.ratio}};
  j["optimizer"] = {{"lr_max", cfg.optimizer.lr_max},
                    {"lr_min", cfg.optimizer.lr_min},
                    {"momentum", cfg.optimizer.momentum},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"epochs", cfg.optimizer.epochs},
                    {"batch", cfg.optimizer.batch}};
  j["stage2"] = {{"lr_max", cfg.stage2.lr_max},
                 {"lr_min", cfg.stage2.lr_min},
                 {"momentum", cfg.stage2.momentum},
                 {"weight_decay", cfg.stage2.weight_decay},
                 {"epochs", cfg.stage2.epochs},
                 {"batch", cfg.stage2.batch},
                 {"hidden", cfg.stage2.hidden}};
  j["augment"] = {{"crop_scale_min", cfg.augment.crop_scale_min},
                  {"crop_scale_max", cfg.augment.crop_scale_max},
                  {"flip_prob", cfg.augment.flip_prob},
                  {"brightness", cfg.augment.brightness},
                  {"contrast", cfg.augment.contrast},
                  {"saturation", cfg.augment.saturation},
                  {"color_prob", cfg.augment.color_prob},
                  {"blur_sigma_min", cfg.augment.blur_sigma_min},
                  {"blur_sigma_max", cfg.augment.blur_sigma_max},
                  {"blur_prob", cfg.augment.blur_prob},
                  {"noise_std", cfg.augment.noise_std},
                  {"noise_prob", cfg.augment.noise_prob}};
  j["protocol"] = {{"normal_class", cfg.protocol.normal_class},
                   {"gamma", cfg.protocol.gamma},
                   {"seeds", cfg.protocol.seeds},
                   {"test_per_side", cfg.protocol.test_per_side}};
  j["data"] = {{"classes", cfg.data.classes},
               {"per_class", cfg.data.per_class},
               {"height", cfg.data.height},
               {"width", cfg.data.width},
               {"channels", cfg.data.channels}};
  j["paths"] = {{"data", cfg.paths.data},
                {"checkpoint", cfg.paths.checkpoint},
                {"scores", cfg.paths.scores},
                {"report", cfg.paths.report}};
  j["mode"] = to_string(cfg.mode);
  j["flags"] = {{"variance_mode", to_string(cfg.variance_mode)},
                {"normalize_before_memory", cfg.normalize_before_memory},
                {"use_projection_head", cfg.use_projection_head},
                {"use_memory", cfg.use_memory}};
  return j.dump();
}

Sha256 config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig scrubbed = cfg;
  scrubbed.paths = PathsConfig{};
  return sha256_bytes(config_to_json(scrubbed));
}

Stage1Config stage1_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  Stage1Config out;
  out.encoder = cfg.encoder;
  out.encoder.use_projection_head = cfg.use_projection_head;
  out.memory_counts = cfg.memory_counts;
  out.beta = cfg.beta;
  out.tol = cfg.tol;
  out.max_iters = cfg.max_iters;
  out.normalize_queries = cfg.normalize_before_memory;
  out.scale_weights.lambda = cfg.lambda;
  out.scale_weights.ratio = cfg.ratio;
  out.loss.tau = cfg.tau;
  out.loss.lambda_v = cfg.lambda_v;
  out.loss.variance_mode = cfg.variance_mode;
  out.augment = cfg.augment;
  out.lr_max = cfg.optimizer.lr_max;
  out.lr_min = cfg.optimizer.lr_min;
  out.momentum = cfg.optimizer.momentum;
  out.weight_decay = cfg.optimizer.weight_decay;
  out.epochs = cfg.optimizer.epochs;
  out.batch = cfg.optimizer.batch;
  out.seed = seed;
  out.use_memory = cfg.use_memory;
  return out;
}

Stage2Config stage2_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  Stage2Config out;
  out.lr_max = cfg.stage2.lr_max;
  out.lr_min = cfg.stage2.lr_min;
  out.momentum = cfg.stage2.momentum;
  out.weight_decay = cfg.stage2.weight_decay;
  out.margin = cfg.margin;
  out.hidden = cfg.stage2.hidden;
  out.epochs = cfg.stage2.epochs;
  out.batch = cfg.stage2.batch;
  out.seed = seed;
  out.mode = cfg.mode;
  return out;
}

}  // namespace anomem
