#include "pplr/ingest.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "pplr/random.hpp"

namespace pplr {

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

  void put_u16(std::uint16_t v) { put_le(v, 2); }
  void put_u32(std::uint32_t v) { put_le(v, 4); }
  void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }
  void put_raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("truncated payload");
  }
  std::uint64_t get_le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(buf_[pos_ + b]) << (8 * b);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

constexpr std::uint16_t kFlagCameras = 1u << 0;
constexpr std::uint16_t kFlagGt = 1u << 1;

}  // namespace

std::size_t feature_bank_file_size(std::size_t n, std::size_t dim, std::size_t n_parts, bool cams, bool gt) {
  return kBankHeaderBytes + (1 + n_parts) * n * dim * 4 + (cams ? n * 2 : 0) + (gt ? n * 4 : 0);
}

std::vector<std::uint8_t> encode_feature_bank(const FeatureBank& bank) {
  bank.validate();
  const std::size_t n = bank.n_samples();
  const std::size_t d = bank.dim();
  if (n > UINT32_MAX || d > UINT32_MAX || bank.n_parts() > UINT16_MAX)
    throw std::invalid_argument("feature bank too large for format");

  ByteWriter w(feature_bank_file_size(n, d, bank.n_parts(), bank.camera_ids.has_value(), bank.gt_ids.has_value()));
  w.put_raw(kBankMagic, 4);
  w.put_u32(kBankVersion);
  w.put_u32(static_cast<std::uint32_t>(n));
  w.put_u32(static_cast<std::uint32_t>(d));
  w.put_u16(static_cast<std::uint16_t>(bank.n_parts()));
  std::uint16_t flags = 0;
  if (bank.camera_ids) flags |= kFlagCameras;
  if (bank.gt_ids) flags |= kFlagGt;
  w.put_u16(flags);
  for (std::size_t s = 0; s < bank.n_spaces(); ++s)
    for (double v : bank.space(s).data()) w.put_f32(static_cast<float>(v));
  if (bank.camera_ids)
    for (auto c : *bank.camera_ids) w.put_u16(c);
  if (bank.gt_ids)
    for (auto g : *bank.gt_ids) w.put_u32(g);
  return w.take();
}

FeatureBank decode_feature_bank(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kBankMagic, 4) != 0) throw FormatError("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kBankVersion) throw FormatError("unsupported version " + std::to_string(version));
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  const std::size_t n_parts = r.u16();
  const std::uint16_t flags = r.u16();
  if (flags & ~(kFlagCameras | kFlagGt)) throw FormatError("unknown flags");
  if (r.remaining() < feature_bank_file_size(n, d, n_parts, flags & kFlagCameras, flags & kFlagGt) - kBankHeaderBytes)
    throw FormatError("truncated payload");

  FeatureBank bank;
  bank.global = Matrix(n, d);
  bank.parts.assign(n_parts, Matrix(n, d));
  for (std::size_t s = 0; s < bank.n_spaces(); ++s)
    for (double& v : bank.space(s).data()) v = static_cast<double>(r.f32());
  if (flags & kFlagCameras) {
    bank.camera_ids.emplace(n);
    for (auto& c : *bank.camera_ids) c = r.u16();
  }
  if (flags & kFlagGt) {
    bank.gt_ids.emplace(n);
    for (auto& g : *bank.gt_ids) g = r.u32();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after payload");
  try {
    bank.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return bank;
}

void write_feature_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  const auto bytes = encode_feature_bank(bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureBank read_feature_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature bank: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_bank(bytes);
}

std::filesystem::path sidecar_path(const std::filesystem::path& bank_path) {
  return std::filesystem::path(bank_path.string() + ".meta.jsonl");
}

void write_sidecar(const std::filesystem::path& bank_path, const std::vector<std::string>& sample_ids) {
  std::ofstream out(sidecar_path(bank_path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open sidecar for writing");
  for (std::size_t i = 0; i < sample_ids.size(); ++i)
    out << nlohmann::json{{"index", i}, {"sample_id", sample_ids[i]}}.dump() << '\n';
}

std::vector<std::string> read_sidecar(const std::filesystem::path& bank_path, std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  std::ifstream in(sidecar_path(bank_path));
  if (!in) return ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("sidecar: ") + e.what());
    }
    const auto idx = j.at("index").get<std::size_t>();
    if (idx >= n) throw FormatError("sidecar: index out of range");
    const auto& sid = j.at("sample_id");
    ids[idx] = sid.is_string() ? sid.get<std::string>() : sid.dump();
  }
  return ids;
}

void SynthConfig::validate() const {
  if (n_identities < 1 || samples_per_identity < 1 || dim < 1 || n_cameras < 1)
    throw ConfigError("synth: counts must be >= 1");
  if (n_cameras > UINT16_MAX) throw ConfigError("synth.n_cameras too large");
  if (!(cluster_spread >= 0.0)) throw ConfigError("synth.cluster_spread must be >= 0");
  if (!(camera_shift >= 0.0)) throw ConfigError("synth.camera_shift must be >= 0");
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0))
    throw ConfigError("synth.occlusion_fraction out of [0,1]");
  if (!part_occlusion.empty()) {
    if (part_occlusion.size() != n_parts) throw ConfigError("synth.part_occlusion must have n_parts entries");
    for (double f : part_occlusion)
      if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("synth.part_occlusion out of [0,1]");
  }
}

std::size_t occluded_slot_count(const SynthConfig& cfg) {
  const double n = static_cast<double>(cfg.n_samples());
  if (cfg.part_occlusion.empty())
    return static_cast<std::size_t>(std::llround(cfg.occlusion_fraction * n * static_cast<double>(cfg.n_parts)));
  std::size_t total = 0;
  for (double f : cfg.part_occlusion) total += static_cast<std::size_t>(std::llround(f * n));
  return total;
}

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace

SyntheticBank generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t n = cfg.n_samples();
  const std::size_t d = cfg.dim;
  const std::size_t spaces = 1 + cfg.n_parts;

  // means[s][id], camera bias[s][cam]
  std::vector<std::vector<std::vector<double>>> means(spaces), bias(spaces);
  for (std::size_t s = 0; s < spaces; ++s)
    for (std::size_t id = 0; id < cfg.n_identities; ++id) means[s].push_back(random_unit(rng, d));
  for (std::size_t s = 0; s < spaces; ++s)
    for (std::size_t c = 0; c < cfg.n_cameras; ++c) {
      auto b = random_unit(rng, d);
      for (double& x : b) x *= cfg.camera_shift;
      bias[s].push_back(std::move(b));
    }

  std::vector<std::uint8_t> occluded(n * cfg.n_parts, 0);
  if (cfg.part_occlusion.empty()) {
    std::vector<std::size_t> slots(n * cfg.n_parts);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    rng.shuffle(slots);
    const std::size_t count = occluded_slot_count(cfg);
    for (std::size_t i = 0; i < count; ++i) occluded[slots[i]] = 1;
  } else {
    for (std::size_t p = 0; p < cfg.n_parts; ++p) {
      std::vector<std::size_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = i;
      rng.shuffle(rows);
      const auto count = static_cast<std::size_t>(std::llround(cfg.part_occlusion[p] * static_cast<double>(n)));
      for (std::size_t i = 0; i < count; ++i) occluded[rows[i] * cfg.n_parts + p] = 1;
    }
  }

  SyntheticBank out;
  FeatureBank& bank = out.bank;
  bank.global = Matrix(n, d);
  bank.parts.assign(cfg.n_parts, Matrix(n, d));
  bank.camera_ids.emplace(n);
  bank.gt_ids.emplace(n);
  const double occ_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t id = i / cfg.samples_per_identity;
    const std::size_t cam = i % cfg.n_cameras;
    (*bank.gt_ids)[i] = static_cast<std::uint32_t>(id);
    (*bank.camera_ids)[i] = static_cast<std::uint16_t>(cam);
    for (std::size_t s = 0; s < spaces; ++s) {
      auto row = bank.space(s).row(i);
      if (s > 0 && occluded[i * cfg.n_parts + (s - 1)]) {
        for (double& x : row) x = static_cast<float>(occ_std * rng.normal());
        continue;
      }
      for (std::size_t k = 0; k < d; ++k)
        row[k] = static_cast<float>(means[s][id][k] + bias[s][cam][k] + cfg.cluster_spread * rng.normal());
    }
  }
  out.occluded = std::move(occluded);
  return out;
}

FeatureBank generate_synthetic_bank(const SynthConfig& cfg) { return generate_synthetic(cfg).bank; }

}  // namespace pplr
