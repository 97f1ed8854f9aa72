#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

// labels follow the y-convention used everywhere else: 1 = normal, 0 = anomaly.
// class_ids keep the original multi-class identity for protocol splitting.
struct LabeledImageSet {
  Tensor images;               // [N,H,W,C], values in [0,1]
  std::vector<int> labels;     // {0,1}
  std::vector<int> class_ids;  // original classes

  int count() const { return images.defined() ? images.shape()[0] : 0; }
};

void validate(const LabeledImageSet& set);

struct SyntheticSpec {
  int classes = 2;
  int per_class = 600;
  int height = 32;
  int width = 32;
  int channels = 3;
};

// Procedural image classes: oriented sinusoid textures plus one simple shape
// per class, with class-specific frequency and orientation statistics. Raw
// pixels are separable by a linear probe but far from trivially so.
LabeledImageSet gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct CifarRecord {
  int class_id = 0;
  Tensor image;  // [32,32,3]
};

inline constexpr int kCifarRecordBytes = 3073;

// 1 label byte, then 3072 pixel bytes channel-major (R plane, G plane, B
// plane), row-major within each plane; pixels map to [0,1] by /255.
CifarRecord parse_cifar_record(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_cifar_record(const CifarRecord& record);
LabeledImageSet read_cifar_file(const std::string& path);

struct ProtocolSplit {
  int normal_class = 0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// One-vs-all protocol: hold out `test_per_side` normals and as many anomalies
// for a balanced test set; train on every remaining normal plus anomalies
// mixed in at fraction gamma (within one sample).
ProtocolSplit make_one_vs_all_split(const LabeledImageSet& set, int normal_class, double gamma,
                                    std::uint64_t seed, int test_per_side = 100);

// Materializes a subset; y labels are recomputed against normal_class.
LabeledImageSet take_subset(const LabeledImageSet& set, const std::vector<int>& indices,
                            int normal_class);

Tensor stack_images(const std::vector<Tensor>& images);  // [H,W,C] list -> [N,H,W,C]

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256_bytes(std::string_view data);
std::string hex_digest(const Sha256& hash);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  Sha256 config_hash{};
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::string_view name) const;
};

// Container layout: "ANOM" magic, u32 version, 32-byte config hash, entry
// table (name, dtype, shape, absolute payload offset), little-endian f64
// payloads, trailing CRC32 over everything before it.
void checkpoint_save(const std::string& path, const Checkpoint& ckpt);

// expected_hash, when given, is compared against the stored config hash; a
// mismatch warns on stderr and the load still proceeds.
Checkpoint checkpoint_load(const std::string& path, const Sha256* expected_hash = nullptr);

void save_image_set(const std::string& path, const LabeledImageSet& set,
                    const Sha256& config_hash);
LabeledImageSet load_image_set(const std::string& path);

}  // namespace anomem
