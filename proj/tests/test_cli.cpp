#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "anomem/cli.hpp"
#include "anomem/config.hpp"
#include "anomem/errors.hpp"

using namespace anomem;

namespace {

std::string binary() {
  if (const char* env = std::getenv("ANOMEM_BIN")) return env;
  return "./anomem";
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::pair<int, std::string> capture(const std::string& cmd) {
  FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, got);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

// Fresh working directory per test run; contents are small and /tmp-backed.
std::string work_dir() {
  static std::string dir = [] {
    char tmpl[] = "/tmp/anomem_cli_XXXXXX";
    const char* d = mkdtemp(tmpl);
    REQUIRE(d != nullptr);
    return std::string(d);
  }();
  return dir;
}

const char* kTinyConfig = R"({
  "encoder": {"in_h": 8, "in_w": 8, "in_c": 2,
              "stages": [{"channels": 16, "blocks": 1}, {"channels": 16, "blocks": 2}],
              "embed_dim": 16},
  "memory": {"counts": [6, 6], "max_iters": 4},
  "optimizer": {"epochs": 2, "batch": 8, "lr_max": 0.02},
  "stage2": {"epochs": 2, "batch": 8, "hidden": 8, "lr_max": 0.3},
  "data": {"classes": 2, "per_class": 40, "height": 8, "width": 8, "channels": 2},
  "protocol": {"test_per_side": 8, "seeds": [1, 2], "gamma": 0.25},
  "augment": {"blur_prob": 0.0},
  "mode": "ssad"
})";

std::string config_file() {
  const std::string path = work_dir() + "/tiny.json";
  spit(path, kTinyConfig);
  return path;
}

std::vector<double> vec(const Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

}  // namespace

TEST_CASE("model bundles round-trip through the checkpoint container") {
  EncoderSpec spec;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.in_c = 2;
  spec.stages = {{16, 1, 2}, {16, 2, 2}};
  spec.embed_dim = 16;

  ModelBundle bundle;
  bundle.encoder = encoder_init(spec, 3);
  bundle.memories.push_back(make_memory(16, 5, 2.0, 1e-4, 4, false, 3, 1));
  bundle.memories.push_back(make_memory(16, 7, 2.0, 1e-4, 4, false, 3, 2));
  bundle.heads.push_back(make_scale_head(16, 2, 2, 8, 3, 1));
  bundle.fuse_lambda = {1.0, 2.0};
  bundle.mode = ScoreMode::ssad;
  bundle.stage1_velocities = {{0.1, 0.2}, {0.3}};
  bundle.stage2_velocities = {{-0.5}};
  bundle.stage1_loss = {5.0, 4.0};
  bundle.stage2_loss = {0.2};

  const Sha256 hash = sha256_bytes("bundle-test");

  SUBCASE("pack then unpack preserves every field") {
    const Checkpoint ckpt = pack_bundle(bundle, hash);
    CHECK(ckpt.config_hash == hash);
    const ModelBundle back = unpack_bundle(ckpt);

    CHECK(back.encoder.spec.stages.size() == 2);
    CHECK(back.encoder.spec.embed_dim == 16);
    REQUIRE(back.encoder.kernels.size() == bundle.encoder.kernels.size());
    for (std::size_t i = 0; i < bundle.encoder.kernels.size(); ++i) {
      CHECK(vec(back.encoder.kernels[i]) == vec(bundle.encoder.kernels[i]));
      CHECK(vec(back.encoder.biases[i]) == vec(bundle.encoder.biases[i]));
    }
    REQUIRE(back.memories.size() == 2);
    CHECK(back.memories[0].count() == 5);
    CHECK(back.memories[1].count() == 7);
    CHECK(back.memories[0].beta == 2.0);
    CHECK(back.memories[0].max_iters == 4);
    CHECK(vec(back.memories[0].weights) == vec(bundle.memories[0].weights));
    CHECK(vec(back.memories[1].weights) == vec(bundle.memories[1].weights));
    REQUIRE(back.heads.size() == 1);
    CHECK(back.heads[0].pool_h == 2);
    CHECK(vec(back.heads[0].w1) == vec(bundle.heads[0].w1));
    CHECK(vec(back.heads[0].b2) == vec(bundle.heads[0].b2));
    CHECK(back.fuse_lambda == bundle.fuse_lambda);
    CHECK(back.mode == ScoreMode::ssad);
    CHECK(back.stage1_velocities == bundle.stage1_velocities);
    CHECK(back.stage2_velocities == bundle.stage2_velocities);
    CHECK(back.stage1_loss == bundle.stage1_loss);
    CHECK(back.stage2_loss == bundle.stage2_loss);
  }

  SUBCASE("file round trip is byte-stable") {
    const std::string p1 = work_dir() + "/bundle_a.bin";
    const std::string p2 = work_dir() + "/bundle_b.bin";
    checkpoint_save(p1, pack_bundle(bundle, hash));
    checkpoint_save(p2, pack_bundle(unpack_bundle(checkpoint_load(p1)), hash));
    CHECK(slurp(p1) == slurp(p2));
  }

  SUBCASE("missing structural entries are reported by name") {
    Checkpoint ckpt = pack_bundle(bundle, hash);
    std::erase_if(ckpt.entries, [](const CheckpointEntry& e) { return e.name == "spec/fuse"; });
    CHECK_THROWS_WITH_AS(unpack_bundle(ckpt), doctest::Contains("spec/fuse"), FormatError);
  }

  SUBCASE("fusion weights must cover every scale") {
    ModelBundle bad = bundle;
    bad.fuse_lambda = {1.0};
    CHECK_THROWS_AS(pack_bundle(bad, hash), DimensionError);
  }
}

TEST_CASE("the binary wires the whole pipeline together") {
  const std::string dir = work_dir();
  const std::string cfg = config_file();
  const std::string bin = binary();

  SUBCASE("gen-data is deterministic per seed") {
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/d1.bin --seed 7") == 0);
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/d2.bin --seed 7") == 0);
    CHECK(slurp(dir + "/d1.bin") == slurp(dir + "/d2.bin"));
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/d3.bin --seed 8") == 0);
    CHECK(slurp(dir + "/d1.bin") != slurp(dir + "/d3.bin"));
  }

  SUBCASE("train, score and eval chain with correct record counts") {
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/data.bin --test " +
                dir + "/test.bin --seed 1") == 0);
    REQUIRE(run(bin + " train-stage1 --config " + cfg + " --in " + dir + "/data.bin --out " +
                dir + "/ck1.bin --seed 1") == 0);
    REQUIRE(run(bin + " train-stage2 --config " + cfg + " --ckpt " + dir + "/ck1.bin --in " +
                dir + "/data.bin --out " + dir + "/ck2.bin --seed 1") == 0);

    // identical rerun reproduces the checkpoint bit for bit
    REQUIRE(run(bin + " train-stage1 --config " + cfg + " --in " + dir + "/data.bin --out " +
                dir + "/ck1_again.bin --seed 1") == 0);
    CHECK(slurp(dir + "/ck1.bin") == slurp(dir + "/ck1_again.bin"));

    REQUIRE(run(bin + " score --ckpt " + dir + "/ck2.bin --in " + dir + "/test.bin --out " +
                dir + "/scores.jsonl") == 0);
    const std::string scores = slurp(dir + "/scores.jsonl");
    std::istringstream lines(scores);
    std::string line;
    int count = 0;
    std::vector<bool> ids(16, false);
    while (std::getline(lines, line)) {
      const nlohmann::json rec = nlohmann::json::parse(line);
      REQUIRE(rec.contains("id"));
      REQUIRE(rec.contains("fused"));
      REQUIRE(rec.contains("per_scale"));
      CHECK(rec["mode"] == "ssad");
      CHECK(rec["per_scale"].size() == 2);
      const std::size_t id = rec["id"].get<std::size_t>();
      REQUIRE(id < ids.size());
      CHECK(!ids[id]);
      ids[id] = true;
      ++count;
    }
    CHECK(count == 16);  // test_per_side 8, both sides

    auto [code, out] = capture(bin + " eval --scores " + dir + "/scores.jsonl --labels " + dir +
                               "/test.bin");
    CHECK(code == 0);
    const nlohmann::json verdict = nlohmann::json::parse(out);
    CHECK(verdict["count"] == 16);
    CHECK(verdict["auroc"].get<double>() >= 0.0);
    CHECK(verdict["auroc"].get<double>() <= 1.0);

    // scoring in the other mode works off the same checkpoint
    CHECK(run(bin + " score --ckpt " + dir + "/ck2.bin --in " + dir +
              "/test.bin --mode one-class --out " + dir + "/s_oc.jsonl") == 0);

    auto [icode, inspect] = capture(bin + " inspect-memory --ckpt " + dir + "/ck2.bin");
    CHECK(icode == 0);
    CHECK(inspect.find("N_Mem=6") != std::string::npos);
    CHECK(inspect.find("beta=2") != std::string::npos);
    CHECK(inspect.find("min_pairwise_distance=") != std::string::npos);
    CHECK(inspect.find("prototype norms") != std::string::npos);
  }

  SUBCASE("hand-crafted perfect scores rank at auroc 1") {
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/pool.bin --test " + dir +
                "/t.bin --seed 3") == 0);
    const LabeledImageSet test = load_image_set(dir + "/t.bin");
    std::ostringstream fake;
    for (int i = 0; i < test.count(); ++i) {
      fake << "{\"id\":" << i << ",\"fused\":" << (test.labels[i] ? 0.0 : 1.0) << "}\n";
    }
    spit(dir + "/fake.jsonl", fake.str());
    auto [code, out] = capture(bin + " eval --scores " + dir + "/fake.jsonl --labels " + dir +
                               "/t.bin");
    CHECK(code == 0);
    CHECK(nlohmann::json::parse(out)["auroc"] == 1.0);
  }

  SUBCASE("sweep writes the report schema") {
    REQUIRE(run(bin + " sweep --config " + cfg + " --axis gamma --grid 0,0.25 --seed 1 --out " +
                dir + "/report.json") == 0);
    const nlohmann::json report = nlohmann::json::parse(slurp(dir + "/report.json"));
    REQUIRE(report.is_array());
    REQUIRE(report.size() == 2);
    CHECK(report[0]["axis"] == "gamma");
    CHECK(report[0]["value"] == 0.0);
    CHECK(report[1]["value"] == 0.25);
    CHECK(report[0]["seeds"] == nlohmann::json({1}));
    CHECK(report[0]["aurocs"].size() == 1);
  }
}

TEST_CASE("exit codes distinguish misuse from runtime failure") {
  const std::string dir = work_dir();
  const std::string cfg = config_file();
  const std::string bin = binary();

  SUBCASE("usage problems exit 1") {
    CHECK(run(bin) == 1);
    CHECK(run(bin + " no-such-command") == 1);
    CHECK(run(bin + " score --ckpt a --in b --bogus") == 1);
    CHECK(run(bin + " gen-data") == 1);  // missing required --config
    CHECK(run(bin + " sweep --config " + cfg + " --axis margin --grid 1") == 1);
  }

  SUBCASE("help exits 0") {
    CHECK(run(bin + " --help") == 0);
    CHECK(run(bin + " score --help") == 0);
  }

  SUBCASE("validation problems exit 1") {
    spit(dir + "/bad.json", R"({"optimizer": {"batch": 1}})");
    CHECK(run(bin + " gen-data --config " + dir + "/bad.json --out " + dir + "/x.bin") == 1);
    spit(dir + "/unknown.json", R"({"optimzer": {}})");
    CHECK(run(bin + " gen-data --config " + dir + "/unknown.json --out " + dir + "/x.bin") == 1);
    CHECK(run(bin + " gen-data --config " + dir + "/absent.json --out " + dir + "/x.bin") == 1);
    CHECK(run(bin + " eval --scores " + dir + "/absent.jsonl --labels " + dir + "/absent.bin") ==
          1);
  }

  SUBCASE("mangled checkpoints exit 1") {
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/d.bin --seed 1") == 0);
    REQUIRE(run(bin + " train-stage1 --config " + cfg + " --in " + dir + "/d.bin --out " + dir +
                "/ck.bin --seed 1") == 0);
    std::string bytes = slurp(dir + "/ck.bin");
    bytes.resize(bytes.size() / 2);
    spit(dir + "/ck_cut.bin", bytes);
    CHECK(run(bin + " inspect-memory --ckpt " + dir + "/ck_cut.bin") == 1);
    CHECK(run(bin + " score --ckpt " + dir + "/ck.bin --in " + dir + "/d.bin --mode ssad") == 1);
  }

  SUBCASE("numeric blow-ups exit 2") {
    nlohmann::json patched = nlohmann::json::parse(kTinyConfig);
    patched["optimizer"]["lr_max"] = 1e18;
    patched["optimizer"]["epochs"] = 40;
    spit(dir + "/runaway.json", patched.dump());
    CHECK(run(bin + " train-stage1 --config " + dir + "/runaway.json --out " + dir +
              "/junk.bin --seed 1") == 2);
  }

  SUBCASE("thread cap env var is validated") {
    REQUIRE(run(bin + " gen-data --config " + cfg + " --out " + dir + "/dt.bin --seed 1") == 0);
    CHECK(run("ANOMEM_THREADS=2 " + bin + " gen-data --config " + cfg + " --out " + dir +
              "/dt2.bin --seed 1") == 0);
    CHECK(slurp(dir + "/dt.bin") == slurp(dir + "/dt2.bin"));
    CHECK(run("ANOMEM_THREADS=zero " + bin + " gen-data --config " + cfg + " --out " + dir +
              "/dt3.bin") == 1);
  }
}
