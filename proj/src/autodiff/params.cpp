// SPDX-License-Identifier: Apache-2.0
#include "cvm/autodiff/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cvm/core/error.hpp"

namespace cvm::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'V', 'M', 'P', 'A', 'R', 'A', 'M'};

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamStore::uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor& ParamStore::normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = stddev * rng.normal();
  return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor& ParamStore::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::save(const std::filesystem::path& path) const {
  std::vector<CheckpointEntry> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_)
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  write_checkpoint(path, out);
}

void ParamStore::load(const std::filesystem::path& path) {
  const auto in = read_checkpoint(path);
  if (in.size() != entries_.size())
    throw LoadError("checkpoint " + path.string() + " has " + std::to_string(in.size()) +
                    " parameters, model expects " + std::to_string(entries_.size()));
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto& [name, t] = entries_[i];
    if (in[i].name != name) throw LoadError("checkpoint parameter '" + in[i].name + "' where '" + name + "' expected");
    if (in[i].shape != t.shape())
      throw LoadError("checkpoint parameter '" + name + "' has shape " + shape_str(in[i].shape) + ", model expects " +
                      shape_str(t.shape()));
    auto dst = t.mutable_data();
    std::copy(in[i].values.begin(), in[i].values.end(), dst.begin());
  }
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint8_t>(os, ParamStore::kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(e.values.data()),
             static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw LoadError("not a checkpoint file: " + path.string());
  const auto version = take<std::uint8_t>(is, path);
  if (version != ParamStore::kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  const auto count = take<std::uint32_t>(is, path);
  std::vector<CheckpointEntry> out(count);
  for (auto& e : out) {
    const auto len = take<std::uint32_t>(is, path);
    if (len > (1u << 16)) throw LoadError("implausible parameter name length in " + path.string());
    e.name.resize(len);
    is.read(e.name.data(), len);
    const auto rank = take<std::uint32_t>(is, path);
    if (rank > 16) throw LoadError("implausible rank in " + path.string());
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      d = take<std::int64_t>(is, path);
      if (d < 0) throw LoadError("negative extent in " + path.string());
    }
    e.values.resize(static_cast<std::size_t>(numel(e.shape)));
    is.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path.string());
  }
  return out;
}

}  // namespace cvm::ad
