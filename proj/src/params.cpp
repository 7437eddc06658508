#include "stripflow/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <random>
#include <stdexcept>

namespace stripflow {

TensorPtr ModelParams::add(const std::string& path, Shape shape) {
  if (has(path)) throw std::invalid_argument("duplicate parameter path: " + path);
  auto t = make_tensor(std::move(shape), 0.0f, /*requires_grad=*/true);
  entries.emplace_back(path, t);
  return t;
}

TensorPtr ModelParams::get(const std::string& path) const {
  ++access_count;
  for (const auto& [name, t] : entries) {
    if (name == path) return t;
  }
  throw std::invalid_argument("unknown parameter path: " + path);
}

bool ModelParams::has(const std::string& path) const {
  for (const auto& [name, t] : entries) {
    if (name == path) return true;
  }
  return false;
}

int64_t ModelParams::total_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries) n += t->size();
  return n;
}

void ModelParams::zero_grads() {
  for (auto& [name, t] : entries) t->zero_grad();
}

void ModelParams::ensure_grads() {
  for (auto& [name, t] : entries) t->ensure_grad();
}

void init_params(ModelParams& params, uint64_t seed) {
  std::mt19937_64 rng(seed);
  params.init_seed = seed;
  for (auto& [name, t] : params.entries) {
    const bool is_weight = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (!is_weight) {
      std::fill(t->data.begin(), t->data.end(), 0.0f);
      continue;
    }
    int64_t fan_in = 1;
    for (size_t i = 1; i < t->shape.size(); ++i) fan_in *= t->shape[i];
    const float bound = std::sqrt(3.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : t->data) v = dist(rng);
  }
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'I', 'P', 'F', 'L', 'O'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

void write_or_throw(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) throw std::runtime_error("checkpoint write failed: " + path);
}

void read_or_throw(std::FILE* f, void* p, size_t n, const std::string& path) {
  const long at = std::ftell(f);
  if (std::fread(p, 1, n, f) != n) {
    throw std::runtime_error("checkpoint truncated: " + path + " (wanted " + std::to_string(n) +
                             " bytes at offset " + std::to_string(at) + ")");
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  FileHandle f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_or_throw(f.get(), kMagic, sizeof(kMagic), path);
  write_or_throw(f.get(), &kVersion, 4, path);
  const uint32_t count = static_cast<uint32_t>(params.entries.size()) + 1;
  write_or_throw(f.get(), &count, 4, path);

  auto write_entry = [&](const std::string& name, const Shape& shape, const float* data, int64_t n) {
    const uint32_t plen = static_cast<uint32_t>(name.size());
    write_or_throw(f.get(), &plen, 4, path);
    write_or_throw(f.get(), name.data(), plen, path);
    const uint32_t rank = static_cast<uint32_t>(shape.size());
    write_or_throw(f.get(), &rank, 4, path);
    for (int d : shape) {
      const int32_t d32 = d;
      write_or_throw(f.get(), &d32, 4, path);
    }
    write_or_throw(f.get(), data, static_cast<size_t>(n) * 4, path);
  };

  float seed_bits[2];
  const uint64_t s = params.init_seed;
  std::memcpy(seed_bits, &s, 8);
  write_entry("meta.init_seed", {2}, seed_bits, 2);
  for (const auto& [name, t] : params.entries) write_entry(name, t->shape, t->data.data(), t->size());
}

ModelParams load_checkpoint(const std::string& path) {
  FileHandle f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  read_or_throw(f.get(), magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint has unknown magic: " + path);
  uint32_t version = 0, count = 0;
  read_or_throw(f.get(), &version, 4, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint version mismatch in " + path + ": found " +
                             std::to_string(version) + ", expected " + std::to_string(kVersion));
  }
  read_or_throw(f.get(), &count, 4, path);

  ModelParams params;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t plen = 0;
    read_or_throw(f.get(), &plen, 4, path);
    if (plen == 0 || plen > 4096) {
      throw std::runtime_error("checkpoint corrupt: bad path length " + std::to_string(plen) + " at offset " +
                               std::to_string(std::ftell(f.get()) - 4) + " in " + path);
    }
    std::string name(plen, '\0');
    read_or_throw(f.get(), name.data(), plen, path);
    uint32_t rank = 0;
    read_or_throw(f.get(), &rank, 4, path);
    if (rank > 8) {
      throw std::runtime_error("checkpoint corrupt: entry " + name + " has rank " + std::to_string(rank) +
                               " in " + path);
    }
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      int32_t d = 0;
      read_or_throw(f.get(), &d, 4, path);
      if (d <= 0) throw std::runtime_error("checkpoint corrupt: entry " + name + " has extent " + std::to_string(d));
      shape[i] = d;
      n *= d;
    }
    std::vector<float> data(static_cast<size_t>(n));
    read_or_throw(f.get(), data.data(), static_cast<size_t>(n) * 4, path);
    if (name == "meta.init_seed") {
      if (n != 2) throw std::runtime_error("checkpoint corrupt: meta.init_seed must hold 2 values");
      std::memcpy(&params.init_seed, data.data(), 8);
    } else {
      auto t = make_tensor(std::move(shape), std::move(data), /*requires_grad=*/true);
      params.entries.emplace_back(name, t);
    }
  }
  // Trailing bytes mean the writer and header disagree.
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1) {
    throw std::runtime_error("checkpoint has trailing bytes after " + std::to_string(count) +
                             " entries: " + path);
  }
  return params;
}

}  // namespace stripflow
