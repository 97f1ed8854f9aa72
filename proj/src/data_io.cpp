#include "anomem/data_io.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "anomem/errors.hpp"
#include "anomem/rng.hpp"

namespace anomem {

void validate(const LabeledImageSet& set) {
  if (!set.images.defined() || set.images.rank() != 4) {
    throw DimensionError("image set: images must be [N,H,W,C]");
  }
  const int n = set.images.shape()[0];
  if (static_cast<int>(set.labels.size()) != n ||
      static_cast<int>(set.class_ids.size()) != n) {
    throw ValidationError("image set: images, labels and class_ids disagree on length");
  }
  for (int y : set.labels) {
    if (y != 0 && y != 1) throw ValidationError("image set: labels must be 0 or 1");
  }
  for (double v : set.images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("image set: pixel values must lie in [0,1]");
    }
  }
}

// ---------------------------------------------------------------------------
// synthetic data

namespace {

// Class identity shows up in four places: texture orientation/frequency, a
// characteristic shape, a per-channel gain vector, and texture contrast that
// rises with the class index. The gain gap against its per-image jitter is
// what keeps a raw-pixel linear probe in the useful band: informative, far
// from perfect. Contrast is a second-moment cue a linear probe cannot read,
// so it separates feature energies without saturating the probe.
constexpr double kGainAmplitude = 0.05;
constexpr double kGainJitter = 0.035;
constexpr double kPixelNoise = 0.15;
constexpr double kBaseContrast = 0.15;
constexpr double kContrastStep = 0.12;

void render_synthetic_image(std::mt19937_64& eng, int k, int n_classes, int h, int w, int c,
                            double* out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double theta = M_PI * k / n_classes + 0.5 * (unit(eng) - 0.5);
  const double freq = 3.0 + 2.0 * k + (unit(eng) - 0.5);
  const double phase = 2.0 * M_PI * unit(eng);
  const double phase2 = 2.0 * M_PI * unit(eng);
  const double brightness = 0.16 * (unit(eng) - 0.5);

  const double cx = (0.25 + 0.5 * unit(eng)) * w;
  const double cy = (0.25 + 0.5 * unit(eng)) * h;
  const double radius = (0.12 + 0.10 * unit(eng)) * std::min(h, w);
  const double shape_gain = unit(eng) < 0.5 ? 0.22 : -0.22;
  const bool square = (k % 2) == 0;

  double gains[8];
  for (int ch = 0; ch < c; ++ch) {
    const double base = 1.0 + kGainAmplitude *
                                  std::cos(2.0 * M_PI * (static_cast<double>(k) / n_classes) +
                                           2.0 * M_PI * ch / 3.0);
    gains[ch] = base * (1.0 + kGainJitter * gauss(eng));
  }

  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x * ct + y * st) / w;
      const double v = (-x * st + y * ct) / w;
      const double amp = kBaseContrast + kContrastStep * k;
      double tex = 0.5 + amp * std::sin(2.0 * M_PI * freq * u + phase) +
                   (0.4 * amp) * std::sin(2.0 * M_PI * (freq * 0.5) * v + phase2);

      const double dx = x - cx, dy = y - cy;
      const bool inside = square ? (std::abs(dx) < radius && std::abs(dy) < radius)
                                 : (dx * dx + dy * dy < radius * radius);
      if (inside) tex += shape_gain;
      tex += brightness;

      for (int ch = 0; ch < c; ++ch) {
        double val = gains[ch] * tex + kPixelNoise * gauss(eng);
        out[(1LL * y * w + x) * c + ch] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
}

}  // namespace

LabeledImageSet gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) {
    throw ValidationError("gen_synthetic: need at least 2 classes, got " +
                          std::to_string(spec.classes));
  }
  if (spec.per_class < 1 || spec.height < 4 || spec.width < 4 || spec.channels < 1 ||
      spec.channels > 8) {
    throw ValidationError("gen_synthetic: degenerate image spec");
  }

  const int n = spec.classes * spec.per_class;
  const long long pixels = 1LL * spec.height * spec.width * spec.channels;
  std::vector<double> data(n * pixels);
  std::vector<int> class_ids(n);

  for (int k = 0; k < spec.classes; ++k) {
    for (int i = 0; i < spec.per_class; ++i) {
      const int row = k * spec.per_class + i;
      auto eng = rng::engine(seed, rng::Stream::synth_data,
                             {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)});
      render_synthetic_image(eng, k, spec.classes, spec.height, spec.width, spec.channels,
                             data.data() + row * pixels);
      class_ids[row] = k;
    }
  }

  LabeledImageSet set;
  set.images = Tensor({n, spec.height, spec.width, spec.channels}, std::move(data));
  set.labels.assign(n, 1);
  set.class_ids = std::move(class_ids);
  return set;
}

// ---------------------------------------------------------------------------
// CIFAR-style records

CifarRecord parse_cifar_record(const std::vector<std::uint8_t>& bytes) {
  if (static_cast<int>(bytes.size()) != kCifarRecordBytes) {
    throw FormatError("cifar record: expected 3073 bytes, got " + std::to_string(bytes.size()));
  }
  const int label = bytes[0];
  if (label > 9) {
    throw FormatError("cifar record: label byte " + std::to_string(label) + " exceeds 9");
  }
  std::vector<double> img(32 * 32 * 3);
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const std::uint8_t b = bytes[1 + ch * 1024 + y * 32 + x];
        img[(y * 32 + x) * 3 + ch] = b / 255.0;
      }
    }
  }
  return CifarRecord{label, Tensor({32, 32, 3}, std::move(img))};
}

std::vector<std::uint8_t> encode_cifar_record(const CifarRecord& record) {
  if (record.class_id < 0 || record.class_id > 9) {
    throw ValidationError("cifar record: class id must lie in [0,9]");
  }
  if (!record.image.defined() || record.image.shape() != Shape{32, 32, 3}) {
    throw DimensionError("cifar record: image must be [32,32,3]");
  }
  std::vector<std::uint8_t> bytes(kCifarRecordBytes);
  bytes[0] = static_cast<std::uint8_t>(record.class_id);
  auto v = record.image.values();
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double val = v[(y * 32 + x) * 3 + ch];
        if (!(val >= 0.0 && val <= 1.0)) {
          throw ValidationError("cifar record: pixel values must lie in [0,1]");
        }
        bytes[1 + ch * 1024 + y * 32 + x] = static_cast<std::uint8_t>(std::lround(val * 255.0));
      }
    }
  }
  return bytes;
}

LabeledImageSet read_cifar_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(path + ": size " + std::to_string(bytes.size()) +
                      " is not a whole number of 3073-byte records");
  }
  const int n = static_cast<int>(bytes.size()) / kCifarRecordBytes;
  std::vector<double> data(1LL * n * 32 * 32 * 3);
  std::vector<int> class_ids(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::uint8_t> rec(bytes.begin() + 1LL * i * kCifarRecordBytes,
                                  bytes.begin() + 1LL * (i + 1) * kCifarRecordBytes);
    CifarRecord parsed = parse_cifar_record(rec);
    auto v = parsed.image.values();
    std::copy(v.begin(), v.end(), data.begin() + 1LL * i * 32 * 32 * 3);
    class_ids[i] = parsed.class_id;
  }
  LabeledImageSet set;
  set.images = Tensor({n, 32, 32, 3}, std::move(data));
  set.labels.assign(n, 1);
  set.class_ids = std::move(class_ids);
  return set;
}

// ---------------------------------------------------------------------------
// protocol splits

ProtocolSplit make_one_vs_all_split(const LabeledImageSet& set, int normal_class, double gamma,
                                    std::uint64_t seed, int test_per_side) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ValidationError("split: gamma must lie in [0,1)");
  }
  if (test_per_side < 1) throw ValidationError("split: test_per_side must be positive");

  std::vector<int> normals, anomalies;
  for (int i = 0; i < set.count(); ++i) {
    (set.class_ids[i] == normal_class ? normals : anomalies).push_back(i);
  }
  if (normals.empty()) {
    throw ValidationError("split: class " + std::to_string(normal_class) +
                          " absent from the dataset");
  }
  if (static_cast<int>(normals.size()) <= test_per_side) {
    throw ValidationError("split: not enough normals to hold out a test set");
  }

  auto eng = rng::engine(seed, rng::Stream::split, {static_cast<std::uint64_t>(normal_class)});
  std::shuffle(normals.begin(), normals.end(), eng);
  std::shuffle(anomalies.begin(), anomalies.end(), eng);

  const int n_train_normals = static_cast<int>(normals.size()) - test_per_side;
  const int want_anoms =
      static_cast<int>(std::llround(gamma / (1.0 - gamma) * n_train_normals));
  if (static_cast<int>(anomalies.size()) < test_per_side + want_anoms) {
    throw ValidationError("split: need " + std::to_string(test_per_side + want_anoms) +
                          " anomalies but only " + std::to_string(anomalies.size()) +
                          " are available");
  }

  ProtocolSplit split;
  split.normal_class = normal_class;
  split.gamma = gamma;
  split.seed = seed;

  split.test_indices.assign(normals.begin(), normals.begin() + test_per_side);
  split.test_indices.insert(split.test_indices.end(), anomalies.begin(),
                            anomalies.begin() + test_per_side);

  split.train_indices.assign(normals.begin() + test_per_side, normals.end());
  split.train_indices.insert(split.train_indices.end(), anomalies.begin() + test_per_side,
                             anomalies.begin() + test_per_side + want_anoms);
  std::shuffle(split.train_indices.begin(), split.train_indices.end(), eng);
  return split;
}

LabeledImageSet take_subset(const LabeledImageSet& set, const std::vector<int>& indices,
                            int normal_class) {
  const Shape& s = set.images.shape();
  const long long per = 1LL * s[1] * s[2] * s[3];
  const int n = static_cast<int>(indices.size());
  std::vector<double> data(n * per);
  LabeledImageSet out;
  out.labels.resize(n);
  out.class_ids.resize(n);
  auto src = set.images.values();
  for (int i = 0; i < n; ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= set.count()) throw ValidationError("take_subset: index out of range");
    std::copy_n(src.begin() + idx * per, per, data.begin() + i * per);
    out.class_ids[i] = set.class_ids[idx];
    out.labels[i] = set.class_ids[idx] == normal_class ? 1 : 0;
  }
  out.images = Tensor({n, s[1], s[2], s[3]}, std::move(data));
  return out;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ValidationError("stack_images: empty list");
  const Shape& first = images.front().shape();
  if (first.size() != 3) throw DimensionError("stack_images: expected [H,W,C] entries");
  const long long per = shape_size(first);
  std::vector<double> data(images.size() * per);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != first) {
      throw DimensionError("stack_images: mismatched image shapes");
    }
    auto v = images[i].values();
    std::copy(v.begin(), v.end(), data.begin() + i * per);
  }
  return Tensor({static_cast<int>(images.size()), first[0], first[1], first[2]},
                std::move(data));
}

// ---------------------------------------------------------------------------
// hashing and the checkpoint container

Sha256 sha256_bytes(std::string_view data) {
  Sha256 out{};
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

std::string hex_digest(const Sha256& hash) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (std::uint8_t b : hash) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
  for (const CheckpointEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'A', 'N', 'O', 'M'};

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Cursor {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw FormatError(std::string("checkpoint: truncated ") + what + " at offset " +
                        std::to_string(pos));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
};

}  // namespace

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  for (const CheckpointEntry& e : ckpt.entries) {
    if (shape_size(e.shape) != static_cast<long long>(e.data.size())) {
      throw DimensionError("checkpoint: entry " + e.name + " shape disagrees with its payload");
    }
    for (double v : e.data) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value in checkpoint entry " + e.name);
      }
    }
  }

  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);
  buf.insert(buf.end(), ckpt.config_hash.begin(), ckpt.config_hash.end());
  put_u32(buf, static_cast<std::uint32_t>(ckpt.entries.size()));

  // table size is known up front, so payload offsets can be absolute
  std::size_t table_bytes = 0;
  for (const CheckpointEntry& e : ckpt.entries) {
    table_bytes += 4 + e.name.size() + 1 + 4 + 4 * e.shape.size() + 8;
  }
  std::uint64_t offset = buf.size() + table_bytes;

  for (const CheckpointEntry& e : ckpt.entries) {
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    buf.push_back(0);  // dtype: f64
    put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    put_u64(buf, offset);
    offset += 8 * e.data.size();
  }

  for (const CheckpointEntry& e : ckpt.entries) {
    for (double v : e.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(buf, bits);
    }
  }

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("short write to " + path);
}

Checkpoint checkpoint_load(const std::string& path, const Sha256* expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());

  if (buf.size() < 4 + 4 + 32 + 4 + 4) {
    throw FormatError("checkpoint: truncated header at offset " + std::to_string(buf.size()));
  }
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) stored_crc |= static_cast<std::uint32_t>(buf[body + i]) << (8 * i);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (crc != stored_crc) {
    throw FormatError("checkpoint: checksum mismatch over " + std::to_string(body) + " bytes");
  }

  Cursor cur{buf};
  cur.pos = 4;
  const std::uint32_t version = cur.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  Checkpoint ckpt;
  cur.need(32, "config hash");
  std::copy_n(buf.begin() + cur.pos, 32, ckpt.config_hash.begin());
  cur.pos += 32;

  const std::uint32_t count = cur.u32("entry count");
  struct RawEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<RawEntry> raw(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = cur.u32("entry name length");
    cur.need(name_len, "entry name");
    raw[i].name.assign(buf.begin() + cur.pos, buf.begin() + cur.pos + name_len);
    cur.pos += name_len;
    cur.need(1, "entry dtype");
    const std::uint8_t dtype = buf[cur.pos++];
    if (dtype != 0) {
      throw FormatError("checkpoint: unknown dtype " + std::to_string(dtype) + " at offset " +
                        std::to_string(cur.pos - 1));
    }
    const std::uint32_t rank = cur.u32("entry rank");
    if (rank > 8) {
      throw FormatError("checkpoint: implausible rank " + std::to_string(rank) + " at offset " +
                        std::to_string(cur.pos - 4));
    }
    raw[i].shape.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      raw[i].shape[d] = static_cast<int>(cur.u32("entry shape"));
    }
    raw[i].offset = cur.u64("payload offset");
  }

  for (const RawEntry& r : raw) {
    const long long n = shape_size(r.shape);
    if (r.offset + 8ull * n > body) {
      throw FormatError("checkpoint: truncated payload for " + r.name + " at offset " +
                        std::to_string(r.offset));
    }
    CheckpointEntry e;
    e.name = r.name;
    e.shape = r.shape;
    e.data.resize(n);
    for (long long k = 0; k < n; ++k) {
      std::uint64_t bits = 0;
      const std::size_t at = r.offset + 8 * k;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[at + b]) << (8 * b);
      std::memcpy(&e.data[k], &bits, 8);
    }
    ckpt.entries.push_back(std::move(e));
  }

  if (expected_hash && *expected_hash != ckpt.config_hash) {
    std::cerr << "[anomem] warning: checkpoint " << path
              << " was written under a different config; loading anyway\n";
  }
  return ckpt;
}

void save_image_set(const std::string& path, const LabeledImageSet& set,
                    const Sha256& config_hash) {
  validate(set);
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  auto iv = set.images.values();
  ckpt.entries.push_back({"images", set.images.shape(), {iv.begin(), iv.end()}});
  ckpt.entries.push_back(
      {"labels", {set.count()}, std::vector<double>(set.labels.begin(), set.labels.end())});
  ckpt.entries.push_back({"class_ids",
                          {set.count()},
                          std::vector<double>(set.class_ids.begin(), set.class_ids.end())});
  checkpoint_save(path, ckpt);
}

LabeledImageSet load_image_set(const std::string& path) {
  Checkpoint ckpt = checkpoint_load(path);
  const CheckpointEntry* images = ckpt.find("images");
  const CheckpointEntry* labels = ckpt.find("labels");
  const CheckpointEntry* classes = ckpt.find("class_ids");
  if (!images || !labels || !classes) {
    throw FormatError(path + ": not an image-set container");
  }
  LabeledImageSet set;
  set.images = Tensor(images->shape, std::vector<double>(images->data));
  set.labels.reserve(labels->data.size());
  for (double v : labels->data) set.labels.push_back(static_cast<int>(std::llround(v)));
  set.class_ids.reserve(classes->data.size());
  for (double v : classes->data) set.class_ids.push_back(static_cast<int>(std::llround(v)));
  validate(set);
  return set;
}

}  // namespace anomem
