#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pplr/core.hpp"

namespace pplr {

// Feature-bank file layout, all little-endian:
//   "PPLB" | u32 version=1 | u32 N | u32 dim | u16 n_parts | u16 flags
//   global N*dim f32 | n_parts blocks of N*dim f32
//   [flags bit0] N u16 camera ids | [flags bit1] N u32 gt ids
inline constexpr char kBankMagic[4] = {'P', 'P', 'L', 'B'};
inline constexpr std::uint32_t kBankVersion = 1;
inline constexpr std::size_t kBankHeaderBytes = 20;

/// Encoded size in bytes of a bank with the given shape and optional columns.
std::size_t feature_bank_file_size(std::size_t n, std::size_t dim, std::size_t n_parts, bool cams, bool gt);

/// Entries are stored as f32; banks whose values are f32-representable round-trip exactly.
void write_feature_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank read_feature_bank(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_feature_bank(const FeatureBank& bank);
FeatureBank decode_feature_bank(const std::vector<std::uint8_t>& bytes);

/// Optional `<path>.meta.jsonl` sidecar with {"index", "sample_id"} per line.
std::filesystem::path sidecar_path(const std::filesystem::path& bank_path);
void write_sidecar(const std::filesystem::path& bank_path, const std::vector<std::string>& sample_ids);
/// Missing sidecar yields row indices as identifiers.
std::vector<std::string> read_sidecar(const std::filesystem::path& bank_path, std::size_t n);

struct SynthConfig {
  std::size_t n_identities = 30;
  std::size_t samples_per_identity = 20;
  std::size_t dim = 64;
  std::size_t n_parts = 3;
  std::size_t n_cameras = 4;
  double cluster_spread = 0.1;
  double occlusion_fraction = 0.2;
  /// Optional per-part occlusion fractions; overrides occlusion_fraction when non-empty.
  std::vector<double> part_occlusion;
  double camera_shift = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t n_samples() const { return n_identities * samples_per_identity; }
};

/// Number of (sample, part) slots the generator replaces with identity-free noise.
std::size_t occluded_slot_count(const SynthConfig& cfg);

struct SyntheticBank {
  FeatureBank bank;
  /// N x n_parts flags, 1 where the part vector was replaced.
  std::vector<std::uint8_t> occluded;
};

SyntheticBank generate_synthetic(const SynthConfig& cfg);
FeatureBank generate_synthetic_bank(const SynthConfig& cfg);

}  // namespace pplr
