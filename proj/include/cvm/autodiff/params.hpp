// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvm/autodiff/tensor.hpp"
#include "cvm/core/rng.hpp"

namespace cvm::ad {

/// Named, ordered collection of trainable leaves.
///
/// Checkpoint container (little-endian):
///   8 bytes   magic "CVMPARAM"
///   1 byte    version (kCheckpointVersion)
///   u32       entry count
///   per entry: u32 name length, name bytes, u32 rank, rank x i64 extents,
///              numel x f64 values in row-major order
class ParamStore {
 public:
  static constexpr std::uint8_t kCheckpointVersion = 1;

  /// Register a new parameter; names must be unique.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& uniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor& normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor& constant(const std::string& name, Shape shape, double value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::int64_t parameter_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();

  void save(const std::filesystem::path& path) const;
  /// Overwrite values from a checkpoint; names and shapes must match exactly.
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

}  // namespace cvm::ad
