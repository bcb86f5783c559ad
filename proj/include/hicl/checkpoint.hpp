#pragma once

// Flat, versioned binary container mapping names to shaped f64 arrays or
// raw byte blobs. Little-endian throughout. Layout:
//
//   magic "HCPL" | u32 version | u64 taxonomy fingerprint | u32 entry count
//   entry: u32 name length | name bytes | u8 kind
//     kind 0 (tensor): u32 rank | u64 dim[rank] | f64 data (row major)
//     kind 1 (blob):   u64 size | bytes
//
// Entries are written in ascending name order, so equal contents produce
// equal files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hicl/common.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t taxonomy_fingerprint = 0;

  struct Tensor {
    std::vector<std::uint64_t> dims;
    Vector data;
  };

  void add_tensor(const std::string& name, std::vector<std::uint64_t> dims, Vector data) {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    require(n == data.size(), "checkpoint: dims/data mismatch for " + name);
    require(tensors_.emplace(name, Tensor{std::move(dims), std::move(data)}).second,
            "checkpoint: duplicate tensor " + name);
  }

  void add_blob(const std::string& name, std::string bytes) {
    require(blobs_.emplace(name, std::move(bytes)).second, "checkpoint: duplicate blob " + name);
  }

  bool has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }
  bool has_blob(const std::string& name) const { return blobs_.count(name) > 0; }

  const Tensor& tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "checkpoint: missing tensor " + name);
    return it->second;
  }

  const std::string& blob(const std::string& name) const {
    auto it = blobs_.find(name);
    require(it != blobs_.end(), "checkpoint: missing blob " + name);
    return it->second;
  }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& blobs() const { return blobs_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint for writing: " + path);
    f.write("HCPL", 4);
    write_u32(f, kVersion);
    write_u64(f, taxonomy_fingerprint);
    write_u32(f, static_cast<std::uint32_t>(tensors_.size() + blobs_.size()));

    // interleave in global name order for a canonical layout
    auto ti = tensors_.begin();
    auto bi = blobs_.begin();
    while (ti != tensors_.end() || bi != blobs_.end()) {
      bool take_tensor = bi == blobs_.end() || (ti != tensors_.end() && ti->first < bi->first);
      if (take_tensor) {
        write_name(f, ti->first);
        f.put('\0');
        write_u32(f, static_cast<std::uint32_t>(ti->second.dims.size()));
        for (auto d : ti->second.dims) write_u64(f, d);
        f.write(reinterpret_cast<const char*>(ti->second.data.data()),
                static_cast<std::streamsize>(ti->second.data.size() * sizeof(double)));
        ++ti;
      } else {
        write_name(f, bi->first);
        f.put('\1');
        write_u64(f, bi->second.size());
        f.write(bi->second.data(), static_cast<std::streamsize>(bi->second.size()));
        ++bi;
      }
    }
    require(f.good(), "checkpoint write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    require(f.gcount() == 4 && std::memcmp(magic, "HCPL", 4) == 0, "checkpoint: bad magic in " + path);
    Checkpoint ck;
    std::uint32_t version = read_u32(f, path);
    require(version == kVersion, "checkpoint: unsupported version " + std::to_string(version));
    ck.taxonomy_fingerprint = read_u64(f, path);
    std::uint32_t count = read_u32(f, path);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint32_t name_len = read_u32(f, path);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      int kind = f.get();
      require(f.good(), "checkpoint: truncated file " + path);
      if (kind == 0) {
        std::uint32_t rank = read_u32(f, path);
        std::vector<std::uint64_t> dims(rank);
        std::uint64_t n = 1;
        for (auto& d : dims) {
          d = read_u64(f, path);
          n *= d;
        }
        Vector data(n);
        f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
        require(f.good(), "checkpoint: truncated tensor " + name + " in " + path);
        ck.tensors_.emplace(std::move(name), Tensor{std::move(dims), std::move(data)});
      } else if (kind == 1) {
        std::uint64_t size = read_u64(f, path);
        std::string bytes(size, '\0');
        f.read(bytes.data(), static_cast<std::streamsize>(size));
        require(f.good(), "checkpoint: truncated blob " + name + " in " + path);
        ck.blobs_.emplace(std::move(name), std::move(bytes));
      } else {
        throw DataError("checkpoint: unknown entry kind in " + path);
      }
    }
    return ck;
  }

 private:
  static void write_u32(std::ostream& f, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
  }
  static void write_u64(std::ostream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
  }
  static void write_name(std::ostream& f, const std::string& name) {
    write_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  static std::uint32_t read_u32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    require(f.good(), "checkpoint: truncated file " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& f, const std::string& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    require(f.good(), "checkpoint: truncated file " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> blobs_;
};

}  // namespace hicl
