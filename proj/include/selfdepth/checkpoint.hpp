#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/networks.hpp"

namespace selfdepth {

/// Binary container: magic "SDEPTHCK", u32 version, string metadata, then
/// named tensors (u32 ndim, u64 dims, little-endian float32 values). All
/// integers little-endian; entries sorted by name.
struct Checkpoint {
  static constexpr char kMagic[8] = {'S', 'D', 'E', 'P', 'T', 'H', 'C', 'K'};
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    Shape shape;
    std::vector<float> values;
  };

  std::map<std::string, std::string> meta;
  std::map<std::string, Entry> tensors;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    tensors[name] = {t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
  }

  template <typename T>
  void put_all(const std::string& prefix, const ModelParameters<T>& params) {
    for (const auto& [name, t] : params) put(prefix + name, t);
  }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("checkpoint has no tensor '" + name + "'");
    }
    return Tensor<T>(it->second.shape,
                     std::vector<T>(it->second.values.begin(), it->second.values.end()));
  }

  /// Every tensor whose name starts with prefix, with the prefix removed.
  template <typename T>
  ModelParameters<T> get_all(const std::string& prefix) const {
    ModelParameters<T> out;
    for (const auto& [name, e] : tensors) {
      if (name.compare(0, prefix.size(), prefix) == 0) {
        out.emplace(name.substr(prefix.size()), get<T>(name));
      }
    }
    return out;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint has no metadata '" + key + "'");
    return it->second;
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    auto u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto u64 = [&](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto str = [&](const std::string& s) {
      u32(static_cast<std::uint32_t>(s.size()));
      out.insert(out.end(), s.begin(), s.end());
    };
    u32(kVersion);
    u32(static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      str(k);
      str(v);
    }
    u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, e] : tensors) {
      str(name);
      u32(static_cast<std::uint32_t>(e.shape.size()));
      for (std::size_t d : e.shape) u64(d);
      for (float f : e.values) u32(std::bit_cast<std::uint32_t>(f));
    }
    return out;
  }

  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes,
                                const std::string& source = "<memory>") {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (bytes.size() - pos < n) {
        throw std::runtime_error("checkpoint " + source + ": truncated at byte " +
                                 std::to_string(pos));
      }
    };
    auto u32 = [&] {
      need(4);
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[pos + i]} << (8 * i);
      pos += 4;
      return v;
    };
    auto u64 = [&] {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[pos + i]} << (8 * i);
      pos += 8;
      return v;
    };
    auto str = [&] {
      std::uint32_t n = u32();
      need(n);
      std::string s(bytes.begin() + pos, bytes.begin() + pos + n);
      pos += n;
      return s;
    };
    need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
      throw std::runtime_error("checkpoint " + source + ": bad magic");
    }
    pos = 8;
    std::uint32_t version = u32();
    if (version != kVersion) {
      throw std::runtime_error("checkpoint " + source + ": unsupported version " +
                               std::to_string(version));
    }
    Checkpoint ck;
    std::uint32_t nmeta = u32();
    for (std::uint32_t i = 0; i < nmeta; ++i) {
      std::string k = str();
      ck.meta[k] = str();
    }
    std::uint32_t ntensors = u32();
    for (std::uint32_t i = 0; i < ntensors; ++i) {
      std::string name = str();
      Entry e;
      std::uint32_t nd = u32();
      for (std::uint32_t d = 0; d < nd; ++d) e.shape.push_back(static_cast<std::size_t>(u64()));
      std::size_t n = shape_numel(e.shape);
      need(4 * n);
      e.values.resize(n);
      for (std::size_t j = 0; j < n; ++j) e.values[j] = std::bit_cast<float>(u32());
      ck.tensors[name] = std::move(e);
    }
    if (pos != bytes.size()) {
      throw std::runtime_error("checkpoint " + source + ": trailing bytes");
    }
    return ck;
  }

  void save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing checkpoint " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes, path);
  }
};

}  // namespace selfdepth
