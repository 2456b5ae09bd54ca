#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dgm/config.hpp"
#include "dgm/model.hpp"

namespace dgm::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

/// On disk: 8-byte magic, u32 version, u64 header length, JSON header,
/// u64 blob count, then per blob a u64 element count followed by that
/// many float64 values. All integers and floats are little-endian.
struct Checkpoint {
  config::ExperimentConfig config;
  std::size_t ambient_dim = 0;
  Model model;
  std::string rng_state;
  std::size_t epochs_run = 0;
};

std::vector<std::uint8_t> encode(const Checkpoint& ckpt);
/// Throws FormatError on version mismatch, truncation (naming the blob)
/// or a payload that does not fit the header's model kind.
Checkpoint decode(std::span<const std::uint8_t> bytes);

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
void save(const Model& model, const config::ExperimentConfig& config, const std::filesystem::path& path,
          const std::string& rng_state = {}, std::size_t epochs_run = 0);
Checkpoint load(const std::filesystem::path& path);

}  // namespace dgm::checkpoint
